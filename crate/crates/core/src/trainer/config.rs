use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::ExclusionPolicy;
use crate::losses::LossWeights;
use crate::recommender::ScoreTerms;
use crate::trainer::params::AdamConfig;

/// Which scoring model the trainer optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Variant {
    /// Environment propagation, encoder/decoder and every loss term.
    #[default]
    Uipl,
    /// Dot product of the union-graph layer sums, BPR only. With zero layers
    /// this is plain matrix factorization.
    LightGcn,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Uipl => "uipl",
            Variant::LightGcn => "lightgcn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uipl" => Ok(Variant::Uipl),
            "lightgcn" => Ok(Variant::LightGcn),
            other => Err(Error::config("variant", format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub layers: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Negatives per positive, for both BPR triples and IRM samples.
    pub neg_k: usize,
    /// When set, draw this many `(m, n)` environment pairs per batch for the
    /// IRM term instead of using all `M^2`.
    pub env_pair_sample: Option<usize>,
    pub weights: LossWeights,
    pub variant: Variant,
    pub terms: ScoreTerms,
    /// Train `P`, `Q` alone with BPR on the all-behavior graph for this many
    /// epochs, then keep them fixed. Zero trains everything jointly.
    pub freeze_pretrain_epochs: usize,
    /// Early stopping patience on validation HR@10. `None` disables it.
    pub patience: Option<usize>,
    pub exclusion: ExclusionPolicy,
    pub init_std: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 2,
            lr: 1e-3,
            batch_size: 1024,
            epochs: 100,
            seed: 0,
            neg_k: 1,
            env_pair_sample: None,
            weights: LossWeights::default(),
            variant: Variant::Uipl,
            terms: ScoreTerms::default(),
            freeze_pretrain_epochs: 0,
            patience: Some(10),
            exclusion: ExclusionPolicy::TargetOnly,
            init_std: 0.01,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % 4 != 0 {
            return Err(Error::config("dim", format!("must be a positive multiple of 4, got {}", self.dim)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", format!("must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.neg_k == 0 {
            return Err(Error::config("neg_k", "must be >= 1"));
        }
        if self.env_pair_sample == Some(0) {
            return Err(Error::config("env_pair_sample", "must be >= 1 when set"));
        }
        if self.patience == Some(0) {
            return Err(Error::config("patience", "must be >= 1 when set"));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::config("init_std", "must be finite and >= 0"));
        }
        if !self.terms.invariant && !self.terms.specific {
            return Err(Error::config("score_terms", "at least one score term must be enabled"));
        }
        let a = self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::config("adam", "betas must lie in [0, 1) and eps must be > 0"));
        }
        self.weights.validate()
    }
}

/// Candidate values for each loss weight, swept one parameter at a time or
/// as a cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grids {
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub tau: Vec<f64>,
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            lambda: vec![0.01, 0.1, 0.5, 1.0],
            alpha: vec![1e-4, 1e-3, 1e-2, 0.1, 1.0],
            beta: vec![1e-3, 1e-2, 0.1, 0.5, 1.0],
            gamma: vec![0.1, 0.3, 0.5, 0.7, 1.0],
            tau: vec![0.1, 0.3, 0.5, 0.7, 0.9],
        }
    }
}

impl Grids {
    pub const NAMES: [&'static str; 5] = ["lambda", "alpha", "beta", "gamma", "tau"];

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        match name {
            "lambda" => Some(&self.lambda),
            "alpha" => Some(&self.alpha),
            "beta" => Some(&self.beta),
            "gamma" => Some(&self.gamma),
            "tau" => Some(&self.tau),
            _ => None,
        }
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        match name {
            "lambda" => Some(&mut self.lambda),
            "alpha" => Some(&mut self.alpha),
            "beta" => Some(&mut self.beta),
            "gamma" => Some(&mut self.gamma),
            "tau" => Some(&mut self.tau),
            _ => None,
        }
    }

    /// Cartesian product over the named grids, first name varying slowest.
    /// Each point is a copy of `base` with the swept fields replaced.
    pub fn points(&self, names: &[&str], base: LossWeights) -> Result<Vec<LossWeights>> {
        let mut out = vec![base];
        for &name in names {
            let values = self
                .get(name)
                .ok_or_else(|| Error::config("sweep", format!("unknown grid `{name}`")))?;
            if values.is_empty() {
                return Err(Error::config(name, "grid is empty"));
            }
            out = out
                .into_iter()
                .flat_map(|w| values.iter().map(move |&v| set_weight(w, name, v)))
                .collect();
        }
        Ok(out)
    }
}

fn set_weight(mut w: LossWeights, name: &str, v: f64) -> LossWeights {
    match name {
        "lambda" => w.lambda = v,
        "alpha" => w.alpha = v,
        "beta" => w.beta = v,
        "gamma" => w.gamma = v,
        "tau" => w.tau = v,
        _ => unreachable!("grid names are checked by the caller"),
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_fields() {
        let cases: Vec<(&str, Box<dyn Fn(&mut TrainConfig)>)> = vec![
            ("dim", Box::new(|c| c.dim = 10)),
            ("lr", Box::new(|c| c.lr = 0.0)),
            ("batch_size", Box::new(|c| c.batch_size = 0)),
            ("neg_k", Box::new(|c| c.neg_k = 0)),
            ("tau", Box::new(|c| c.weights.tau = 0.0)),
        ];
        for (field, mutate) in cases {
            let mut c = TrainConfig::default();
            mutate(&mut c);
            let err = c.validate().unwrap_err();
            assert!(err.to_string().contains(field), "{field}: {err}");
        }
    }

    #[test]
    fn grid_points() {
        let g = Grids::default();
        let base = LossWeights::default();
        assert_eq!(g.points(&["lambda"], base).unwrap().len(), 4);
        let pts = g.points(&["lambda", "tau"], base).unwrap();
        assert_eq!(pts.len(), 20);
        assert_eq!(pts[0].lambda, 0.01);
        assert_eq!(pts[0].tau, 0.1);
        assert_eq!(pts[1].tau, 0.3);
        assert_eq!(pts[5].lambda, 0.1);
        assert_eq!(pts[0].alpha, base.alpha);
        assert!(g.points(&["nope"], base).is_err());
    }
}
