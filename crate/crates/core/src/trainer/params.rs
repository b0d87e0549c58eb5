//! Trainable parameters and the Adam optimizer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::EmbeddingTable;
use crate::vae::VaeParams;

/// Base user/item embeddings plus encoder/decoder weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub users: EmbeddingTable,
    pub items: EmbeddingTable,
    pub vae: VaeParams,
}

impl Params {
    pub fn init(num_users: usize, num_items: usize, dim: usize, init_std: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let users = EmbeddingTable::random_normal(num_users, dim, init_std, &mut rng);
        let items = EmbeddingTable::random_normal(num_items, dim, init_std, &mut rng);
        let vae = VaeParams::init(dim, &mut rng)?;
        Ok(Self { users, items, vae })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            users: EmbeddingTable::zeros(self.users.rows(), self.users.dim()),
            items: EmbeddingTable::zeros(self.items.rows(), self.items.dim()),
            vae: self.vae.zeros_like(),
        }
    }

    pub fn dim(&self) -> usize {
        self.users.dim()
    }

    /// Named flat views in a fixed order.
    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = vec![
            ("users".to_string(), self.users.as_slice()),
            ("items".to_string(), self.items.as_slice()),
        ];
        for (name, layer) in self.vae.layers() {
            out.push((format!("vae.{name}.weight"), layer.weight.as_slice()));
            out.push((format!("vae.{name}.bias"), layer.bias.as_slice()));
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = vec![
            ("users".to_string(), self.users.as_mut_slice()),
            ("items".to_string(), self.items.as_mut_slice()),
        ];
        for (name, layer) in self.vae.layers_mut() {
            out.push((format!("vae.{name}.weight"), layer.weight.as_mut_slice()));
            out.push((format!("vae.{name}.bias"), layer.bias.as_mut_slice()));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    /// `(U + I) d` embedding entries plus the encoder/decoder widths.
    pub fn expected_num_params(num_users: usize, num_items: usize, dim: usize) -> usize {
        (num_users + num_items) * dim + VaeParams::expected_num_params(dim)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        let a = self.blocks();
        let b = other.blocks();
        a.len() == b.len() && a.iter().zip(&b).all(|((na, xa), (nb, xb))| na == nb && xa.len() == xb.len())
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments shaped exactly like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Fails before touching anything if a
/// gradient entry is non-finite.
pub fn adam_step(params: &mut Params, grads: &Params, adam: &mut AdamState, lr: f64, cfg: AdamConfig) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&adam.m) || !params.same_shape(&adam.v) {
        return Err(Error::Shape("adam: parameter, gradient and moment shapes differ".into()));
    }
    for (name, g) in grads.blocks() {
        if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{name}` at index {pos}")));
        }
    }
    adam.step += 1;
    let t = adam.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let g_blocks = grads.blocks();
    let m_blocks = adam.m.blocks_mut();
    let v_blocks = adam.v.blocks_mut();
    for ((((_, p), (_, g)), (_, m)), (_, v)) in params.blocks_mut().into_iter().zip(g_blocks).zip(m_blocks).zip(v_blocks) {
        for k in 0..p.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
