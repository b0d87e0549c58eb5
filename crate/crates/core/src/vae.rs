//! Shared encoder/decoder producing invariant preferences.
//!
//! Widths run `d -> d/2 -> d/4 (mean, log-variance) -> d/2 -> d`:
//!
//! ```text
//! h      = relu(W1 p + b1)
//! mu     = W2 h + b2
//! logvar = clamp(W3 h + b3, -10, 10)
//! z      = mu + exp(logvar / 2) * eps
//! p~     = W5 relu(W4 z + b4) + b5
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::dot;

pub const LOGVAR_BOUND: f64 = 10.0;

/// Dense affine layer, `weight` row-major `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = (0..in_dim * out_dim).map(|_| rng.random_range(-limit..=limit)).collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    fn row(&self, o: usize) -> &[f64] {
        &self.weight[o * self.in_dim..(o + 1) * self.in_dim]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        (0..self.out_dim).map(|o| dot(self.row(o), x) + self.bias[o]).collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    fn backward(&self, x: &[f64], g_out: &[f64], grad: &mut Linear) -> Vec<f64> {
        let mut g_x = vec![0.0; self.in_dim];
        for (o, &g) in g_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let w = self.row(o);
            let gw = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for j in 0..self.in_dim {
                gw[j] += g * x[j];
                g_x[j] += g * w[j];
            }
        }
        g_x
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// The five layers of the encoder/decoder, shared across every user and
/// environment.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeParams {
    pub w1: Linear,
    pub w2: Linear,
    pub w3: Linear,
    pub w4: Linear,
    pub w5: Linear,
}

impl VaeParams {
    fn check_dim(d: usize) -> Result<()> {
        if d == 0 || d % 4 != 0 {
            return Err(Error::invalid(format!("embedding width {d} must be a positive multiple of 4")));
        }
        Ok(())
    }

    pub fn zeros(d: usize) -> Result<Self> {
        Self::check_dim(d)?;
        Ok(Self {
            w1: Linear::zeros(d, d / 2),
            w2: Linear::zeros(d / 2, d / 4),
            w3: Linear::zeros(d / 2, d / 4),
            w4: Linear::zeros(d / 4, d / 2),
            w5: Linear::zeros(d / 2, d),
        })
    }

    pub fn init<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Self> {
        Self::check_dim(d)?;
        Ok(Self {
            w1: Linear::glorot(d, d / 2, rng),
            w2: Linear::glorot(d / 2, d / 4, rng),
            w3: Linear::glorot(d / 2, d / 4, rng),
            w4: Linear::glorot(d / 4, d / 2, rng),
            w5: Linear::glorot(d / 2, d, rng),
        })
    }

    pub fn dim(&self) -> usize {
        self.w1.in_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.w2.out_dim
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dim()).expect("existing params have a valid width")
    }

    pub fn layers(&self) -> [(&'static str, &Linear); 5] {
        [("w1", &self.w1), ("w2", &self.w2), ("w3", &self.w3), ("w4", &self.w4), ("w5", &self.w5)]
    }

    pub fn layers_mut(&mut self) -> [(&'static str, &mut Linear); 5] {
        [
            ("w1", &mut self.w1),
            ("w2", &mut self.w2),
            ("w3", &mut self.w3),
            ("w4", &mut self.w4),
            ("w5", &mut self.w5),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|(_, l)| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameter count implied by width `d` alone.
    pub fn expected_num_params(d: usize) -> usize {
        let (h, z) = (d / 2, d / 4);
        (h * d + h) + 2 * (z * h + z) + (h * z + h) + (d * h + d)
    }

    pub fn is_finite(&self) -> bool {
        self.layers().iter().all(|(_, l)| l.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLatent {
    pub mu: Vec<f64>,
    /// Log-variance, clamped to `[-10, 10]`.
    pub logvar: Vec<f64>,
}

pub fn encode(p: &[f64], params: &VaeParams) -> Result<GaussianLatent> {
    if p.len() != params.dim() {
        return Err(Error::Shape(format!("input width {} vs encoder width {}", p.len(), params.dim())));
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("encoder input".into()));
    }
    let h = relu(params.w1.forward(p));
    Ok(GaussianLatent {
        mu: params.w2.forward(&h),
        logvar: params.w3.forward(&h).into_iter().map(clamp_logvar).collect(),
    })
}

pub fn reparameterize(latent: &GaussianLatent, eps: &[f64]) -> Vec<f64> {
    latent
        .mu
        .iter()
        .zip(&latent.logvar)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

pub fn decode(z: &[f64], params: &VaeParams) -> Vec<f64> {
    params.w5.forward(&relu(params.w4.forward(z)))
}

/// `p - p~`
pub fn behavior_specific(p: &[f64], p_tilde: &[f64]) -> Vec<f64> {
    p.iter().zip(p_tilde).map(|(a, b)| a - b).collect()
}

fn relu(mut v: Vec<f64>) -> Vec<f64> {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    v
}

fn clamp_logvar(x: f64) -> f64 {
    x.clamp(-LOGVAR_BOUND, LOGVAR_BOUND)
}

/// Intermediate values of one encode-sample-decode pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct VaeTrace {
    pub input: Vec<f64>,
    h_pre: Vec<f64>,
    h: Vec<f64>,
    pub mu: Vec<f64>,
    logvar_raw: Vec<f64>,
    pub logvar: Vec<f64>,
    eps: Vec<f64>,
    z: Vec<f64>,
    a_pre: Vec<f64>,
    a: Vec<f64>,
    pub output: Vec<f64>,
}

impl VaeTrace {
    pub fn latent(&self) -> GaussianLatent {
        GaussianLatent {
            mu: self.mu.clone(),
            logvar: self.logvar.clone(),
        }
    }
}

pub fn forward(p: &[f64], eps: &[f64], params: &VaeParams) -> VaeTrace {
    let h_pre = params.w1.forward(p);
    let h = relu(h_pre.clone());
    let mu = params.w2.forward(&h);
    let logvar_raw = params.w3.forward(&h);
    let logvar: Vec<f64> = logvar_raw.iter().copied().map(clamp_logvar).collect();
    let z: Vec<f64> = mu
        .iter()
        .zip(&logvar)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect();
    let a_pre = params.w4.forward(&z);
    let a = relu(a_pre.clone());
    let output = params.w5.forward(&a);
    VaeTrace {
        input: p.to_vec(),
        h_pre,
        h,
        mu,
        logvar_raw,
        logvar,
        eps: eps.to_vec(),
        z,
        a_pre,
        a,
        output,
    }
}

/// Backpropagates `dL/dp~` plus direct `dL/dmu` and `dL/dlogvar` terms
/// (from the KL penalty) through one trace. Returns `dL/dp`.
pub fn backward(
    trace: &VaeTrace,
    g_output: &[f64],
    g_mu_extra: &[f64],
    g_logvar_extra: &[f64],
    params: &VaeParams,
    grads: &mut VaeParams,
) -> Vec<f64> {
    let g_a = params.w5.backward(&trace.a, g_output, &mut grads.w5);
    let g_a_pre = relu_grad(&trace.a_pre, g_a);
    let g_z = params.w4.backward(&trace.z, &g_a_pre, &mut grads.w4);

    let g_mu: Vec<f64> = g_z.iter().zip(g_mu_extra).map(|(a, b)| a + b).collect();
    let g_logvar_raw: Vec<f64> = (0..g_z.len())
        .map(|j| {
            let through_z = g_z[j] * 0.5 * (0.5 * trace.logvar[j]).exp() * trace.eps[j];
            let inside = trace.logvar_raw[j] > -LOGVAR_BOUND && trace.logvar_raw[j] < LOGVAR_BOUND;
            if inside {
                through_z + g_logvar_extra[j]
            } else {
                0.0
            }
        })
        .collect();

    let g_h_mu = params.w2.backward(&trace.h, &g_mu, &mut grads.w2);
    let g_h_lv = params.w3.backward(&trace.h, &g_logvar_raw, &mut grads.w3);
    let g_h: Vec<f64> = g_h_mu.iter().zip(&g_h_lv).map(|(a, b)| a + b).collect();
    let g_h_pre = relu_grad(&trace.h_pre, g_h);
    params.w1.backward(&trace.input, &g_h_pre, &mut grads.w1)
}

fn relu_grad(pre: &[f64], mut g: Vec<f64>) -> Vec<f64> {
    for (gi, &x) in g.iter_mut().zip(pre) {
        if x <= 0.0 {
            *gi = 0.0;
        }
    }
    g
}
