//! Loss terms of the joint objective and their gradients.
//!
//! Every term is a batch mean so that weight grids carry over between
//! dataset sizes:
//!
//! * `irm`: BCE of `p~_u^m . q^_i` against environment-`n` labels, averaged
//!   over active `(m, n)` pairs and the samples drawn for `n`.
//! * `ort`: mean over `(u, m)` of `(p^_u^m . p~_u^m)^2`, where `p^ = p - p~`.
//! * `con`: InfoNCE with positives `(p~^m, p~^n)`, `m != n`, and negatives
//!   `(p~^m, p^^j)` over all `j`, averaged over `(u, m, n)`.
//! * `kl`: mean over latents of `KL(N(mu, sigma^2) || N(0, I))`.
//! * `rec`: BPR, mean over triples.

use crate::error::{Error, Result};
use crate::tensor::{axpy, dot, log_sum_exp, sigmoid, softplus, EmbeddingTable};
use crate::vae::GaussianLatent;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            alpha: 1e-3,
            beta: 0.1,
            gamma: 0.1,
            tau: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::config("tau", format!("must be > 0, got {}", self.tau)));
        }
        Ok(())
    }

    /// Coefficients `(1, lambda, alpha, beta, gamma)` applied to
    /// `(rec, irm, ort, con, kl)`.
    pub fn coefficients(&self) -> Coefficients {
        Coefficients {
            rec: 1.0,
            irm: self.lambda,
            ort: self.alpha,
            con: self.beta,
            kl: self.gamma,
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        match ablation {
            Ablation::Full => {}
            Ablation::NoKl => self.gamma = 0.0,
            Ablation::NoIrm => self.lambda = 0.0,
            Ablation::NoOrt => self.alpha = 0.0,
            Ablation::NoCon => self.beta = 0.0,
            Ablation::RecOnly => {
                self.lambda = 0.0;
                self.alpha = 0.0;
                self.beta = 0.0;
                self.gamma = 0.0;
            }
        }
        self
    }
}

/// Loss-term ablations, each a pure weight configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Full,
    NoKl,
    NoIrm,
    NoOrt,
    NoCon,
    RecOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Full,
        Ablation::NoKl,
        Ablation::NoIrm,
        Ablation::NoOrt,
        Ablation::NoCon,
        Ablation::RecOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoKl => "w/o kl",
            Ablation::NoIrm => "w/o irm",
            Ablation::NoOrt => "w/o ort",
            Ablation::NoCon => "w/o con",
            Ablation::RecOnly => "rec only",
        }
    }
}

/// Per-term multipliers. [`LossWeights::coefficients`] fixes `rec` at 1;
/// gradient checks isolate single terms with unit vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub rec: f64,
    pub irm: f64,
    pub ort: f64,
    pub con: f64,
    pub kl: f64,
}

impl Coefficients {
    pub fn only(term: Term) -> Self {
        let mut c = Self {
            rec: 0.0,
            irm: 0.0,
            ort: 0.0,
            con: 0.0,
            kl: 0.0,
        };
        match term {
            Term::Rec => c.rec = 1.0,
            Term::Irm => c.irm = 1.0,
            Term::Ort => c.ort = 1.0,
            Term::Con => c.con = 1.0,
            Term::Kl => c.kl = 1.0,
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Rec,
    Irm,
    Ort,
    Con,
    Kl,
}

impl Term {
    pub const ALL: [Term; 5] = [Term::Rec, Term::Irm, Term::Ort, Term::Con, Term::Kl];

    pub fn name(self) -> &'static str {
        match self {
            Term::Rec => "rec",
            Term::Irm => "irm",
            Term::Ort => "ort",
            Term::Con => "con",
            Term::Kl => "kl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct LossReport {
    pub rec: f64,
    pub irm: f64,
    pub ort: f64,
    pub con: f64,
    pub kl: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(rec: f64, irm: f64, ort: f64, con: f64, kl: f64, coef: &Coefficients) -> Self {
        let total = coef.rec * rec + coef.irm * irm + coef.ort * ort + coef.con * con + coef.kl * kl;
        Self {
            rec,
            irm,
            ort,
            con,
            kl,
            total,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.rec, self.irm, self.ort, self.con, self.kl, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn component(&self, term: Term) -> f64 {
        match term {
            Term::Rec => self.rec,
            Term::Irm => self.irm,
            Term::Ort => self.ort,
            Term::Con => self.con,
            Term::Kl => self.kl,
        }
    }
}

/// `rec + lambda irm + alpha ort + beta con + gamma kl`.
pub fn total_loss(report: &LossReport, weights: &LossWeights) -> Result<f64> {
    for term in Term::ALL {
        let v = report.component(term);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{} loss ({v})", term.name())));
        }
    }
    let c = weights.coefficients();
    Ok(report.rec + c.irm * report.irm + c.ort * report.ort + c.con * report.con + c.kl * report.kl)
}

/// Per-user input, invariant and behavior-specific vectors for every
/// environment, in environment order.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceBundle {
    pub input: Vec<Vec<f64>>,
    pub invariant: Vec<Vec<f64>>,
    pub specific: Vec<Vec<f64>>,
}

impl PreferenceBundle {
    pub fn new(input: Vec<Vec<f64>>, invariant: Vec<Vec<f64>>) -> Self {
        let specific = input
            .iter()
            .zip(&invariant)
            .map(|(p, pt)| crate::vae::behavior_specific(p, pt))
            .collect();
        Self {
            input,
            invariant,
            specific,
        }
    }

    pub fn num_envs(&self) -> usize {
        self.invariant.len()
    }
}

/// One IRM observation: batch slot, item and its label in the environment
/// it was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IrmSample {
    pub slot: usize,
    pub item: usize,
    pub positive: bool,
}

/// IRM samples grouped by the environment `n` that labelled them, plus the
/// `(m, n)` environment pairs that take part in the loss.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IrmBatch {
    pub by_env: Vec<Vec<IrmSample>>,
    pub pairs: Vec<(usize, usize)>,
}

impl IrmBatch {
    /// All `M^2` pairs, `m = n` included.
    pub fn all_pairs(num_envs: usize) -> Vec<(usize, usize)> {
        (0..num_envs).flat_map(|m| (0..num_envs).map(move |n| (m, n))).collect()
    }

    fn num_terms(&self) -> usize {
        self.pairs.iter().map(|&(_, n)| self.by_env[n].len()).sum()
    }
}

/// Gradient accumulators for everything the losses touch.
#[derive(Debug, Clone)]
pub struct BundleGrads {
    /// `[slot][m]` gradient w.r.t. `p~_u^m`.
    pub invariant: Vec<Vec<Vec<f64>>>,
    /// `[slot][m]` gradient w.r.t. `p^_u^m`.
    pub specific: Vec<Vec<Vec<f64>>>,
    pub mu: Vec<Vec<Vec<f64>>>,
    pub logvar: Vec<Vec<Vec<f64>>>,
    /// Gradient w.r.t. the aggregated item table.
    pub items: EmbeddingTable,
}

impl BundleGrads {
    pub fn zeros(slots: usize, envs: usize, dim: usize, latent: usize, items: usize) -> Self {
        let block = |w: usize| vec![vec![vec![0.0; w]; envs]; slots];
        Self {
            invariant: block(dim),
            specific: block(dim),
            mu: block(latent),
            logvar: block(latent),
            items: EmbeddingTable::zeros(items, dim),
        }
    }
}

/// `-[r ln s(x) + (1-r) ln(1 - s(x))]`
pub fn bce_with_logit(logit: f64, positive: bool) -> f64 {
    if positive {
        softplus(-logit)
    } else {
        softplus(logit)
    }
}

pub fn irm_loss(bundles: &[PreferenceBundle], q_hat: &EmbeddingTable, batch: &IrmBatch) -> Result<f64> {
    irm_impl(bundles, q_hat, batch, None)
}

pub(crate) fn irm_impl(
    bundles: &[PreferenceBundle],
    q_hat: &EmbeddingTable,
    batch: &IrmBatch,
    mut grads: Option<(&mut BundleGrads, f64)>,
) -> Result<f64> {
    let n_terms = batch.num_terms();
    if n_terms == 0 {
        return Err(Error::invalid("IRM loss needs at least one sample"));
    }
    let scale = 1.0 / n_terms as f64;
    let mut total = 0.0;
    for &(m, n) in &batch.pairs {
        for s in &batch.by_env[n] {
            let p = &bundles[s.slot].invariant[m];
            let q = q_hat.row(s.item);
            let logit = dot(p, q);
            total += bce_with_logit(logit, s.positive);
            if let Some((g, coef)) = grads.as_mut() {
                let coef = *coef;
                let d = coef * scale * (sigmoid(logit) - if s.positive { 1.0 } else { 0.0 });
                axpy(d, q, &mut g.invariant[s.slot][m]);
                axpy(d, p, g.items.row_mut(s.item));
            }
        }
    }
    Ok(total * scale)
}

pub fn orthogonal_loss(bundles: &[PreferenceBundle]) -> Result<f64> {
    orthogonal_impl(bundles, None)
}

pub(crate) fn orthogonal_impl(bundles: &[PreferenceBundle], mut grads: Option<(&mut BundleGrads, f64)>) -> Result<f64> {
    let envs = bundles.first().map_or(0, PreferenceBundle::num_envs);
    if envs == 0 {
        return Err(Error::invalid("orthogonal loss needs a non-empty batch"));
    }
    let scale = 1.0 / (bundles.len() * envs) as f64;
    let mut total = 0.0;
    for (slot, b) in bundles.iter().enumerate() {
        for m in 0..envs {
            let c = dot(&b.specific[m], &b.invariant[m]);
            total += c * c;
            if let Some((g, coef)) = grads.as_mut() {
                let coef = *coef;
                let d = coef * scale * 2.0 * c;
                axpy(d, &b.invariant[m], &mut g.specific[slot][m]);
                axpy(d, &b.specific[m], &mut g.invariant[slot][m]);
            }
        }
    }
    Ok(total * scale)
}

/// `-ln( e^pos / (e^pos + sum_j e^neg_j) )` evaluated with log-sum-exp.
pub fn info_nce_term(positive: f64, negatives: &[f64]) -> f64 {
    let mut logits = Vec::with_capacity(negatives.len() + 1);
    logits.push(positive);
    logits.extend_from_slice(negatives);
    log_sum_exp(&logits) - positive
}

pub fn contrastive_loss(bundles: &[PreferenceBundle], tau: f64) -> Result<f64> {
    contrastive_impl(bundles, tau, None)
}

pub(crate) fn contrastive_impl(
    bundles: &[PreferenceBundle],
    tau: f64,
    mut grads: Option<(&mut BundleGrads, f64)>,
) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be > 0, got {tau}")));
    }
    let envs = bundles.first().map_or(0, PreferenceBundle::num_envs);
    if bundles.is_empty() || envs < 2 {
        return Err(Error::invalid("contrastive loss needs a non-empty batch and at least 2 environments"));
    }
    let scale = 1.0 / (bundles.len() * envs * (envs - 1)) as f64;
    let mut total = 0.0;
    let mut logits = vec![0.0; envs + 1];
    for (slot, b) in bundles.iter().enumerate() {
        for m in 0..envs {
            let anchor = &b.invariant[m];
            // negatives depend only on the anchor
            for j in 0..envs {
                logits[j + 1] = dot(anchor, &b.specific[j]) / tau;
            }
            for n in (0..envs).filter(|&n| n != m) {
                logits[0] = dot(anchor, &b.invariant[n]) / tau;
                let lse = log_sum_exp(&logits);
                total += lse - logits[0];
                if let Some((g, coef)) = grads.as_mut() {
                    let coef = *coef;
                    let k = coef * scale / tau;
                    // d/d logit_0 = softmax_0 - 1; d/d logit_j = softmax_j
                    let d_pos = (logits[0] - lse).exp() - 1.0;
                    axpy(k * d_pos, &b.invariant[n], &mut g.invariant[slot][m]);
                    axpy(k * d_pos, anchor, &mut g.invariant[slot][n]);
                    for j in 0..envs {
                        let w = (logits[j + 1] - lse).exp();
                        axpy(k * w, &b.specific[j], &mut g.invariant[slot][m]);
                        axpy(k * w, anchor, &mut g.specific[slot][j]);
                    }
                }
            }
        }
    }
    Ok(total * scale)
}

/// Mean over latents of `sum_dim 0.5 (mu^2 + sigma^2 - 1 - ln sigma^2)`.
/// An empty list yields 0.
pub fn kl_loss(latents: &[GaussianLatent]) -> f64 {
    if latents.is_empty() {
        return 0.0;
    }
    latents.iter().map(kl_single).sum::<f64>() / latents.len() as f64
}

fn kl_single(l: &GaussianLatent) -> f64 {
    l.mu
        .iter()
        .zip(&l.logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

/// `latents[slot][m]`
pub(crate) fn kl_impl(latents: &[Vec<GaussianLatent>], mut grads: Option<(&mut BundleGrads, f64)>) -> f64 {
    let count: usize = latents.iter().map(Vec::len).sum();
    if count == 0 {
        return 0.0;
    }
    let scale = 1.0 / count as f64;
    let mut total = 0.0;
    for (slot, per_env) in latents.iter().enumerate() {
        for (m, l) in per_env.iter().enumerate() {
            total += kl_single(l);
            if let Some((g, coef)) = grads.as_mut() {
                let coef = *coef;
                let k = coef * scale;
                for (d, (mu, lv)) in l.mu.iter().zip(&l.logvar).enumerate() {
                    g.mu[slot][m][d] += k * mu;
                    g.logvar[slot][m][d] += k * 0.5 * (lv.exp() - 1.0);
                }
            }
        }
    }
    total * scale
}

/// Mean of `-ln s(y_ui - y_uj)` over `(y_ui, y_uj)` pairs.
pub fn bpr_loss(scores: &[(f64, f64)]) -> Result<f64> {
    Ok(bpr_with_grad(scores)?.0)
}

/// Loss plus `dL/d(y_ui - y_uj)` per pair (already divided by batch size).
pub fn bpr_with_grad(scores: &[(f64, f64)]) -> Result<(f64, Vec<f64>)> {
    if scores.is_empty() {
        return Err(Error::invalid("BPR loss needs at least one triple"));
    }
    let scale = 1.0 / scores.len() as f64;
    let mut total = 0.0;
    let grads = scores
        .iter()
        .map(|&(pos, neg)| {
            let diff = pos - neg;
            total += softplus(-diff);
            -sigmoid(-diff) * scale
        })
        .collect();
    Ok((total * scale, grads))
}
