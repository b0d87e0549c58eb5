//! Flat `key = value` run configuration.
//!
//! Lists (behaviors, grids, per-behavior synthetic settings) are comma
//! separated. Optional counts accept `none`. Every key is written by
//! [`RunConfig::to_text`] in a fixed order, and parsing that text yields
//! an identical config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::dataset::SplitMode;
use crate::error::{Error, Result};
use crate::evaluator::ExclusionPolicy;
use crate::synthgen::SynthSpec;
use crate::trainer::{Grids, TrainConfig, Variant};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSettings {
    pub users: usize,
    pub items: usize,
    pub d_true: usize,
    pub rho: f64,
    /// One value per behavior, or a single value broadcast to all.
    pub noise: Vec<f64>,
    pub density: Vec<f64>,
    pub item_norm: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let base = SynthSpec::new(1000, 500, 1);
        Self {
            users: base.n_users,
            items: base.n_items,
            d_true: base.d_true,
            rho: base.rho,
            noise: base.noise,
            density: base.density,
            item_norm: base.item_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckSettings {
    pub tolerance: f64,
    pub max_coords: usize,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            max_coords: crate::trainer::DEFAULT_MAX_COORDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Raw interaction file for `ingest`.
    pub data: Option<PathBuf>,
    /// Directory holding `train.tsv` / `test.tsv`.
    pub split_dir: Option<PathBuf>,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    /// Ordered behavior labels; the last one is the target.
    pub behaviors: Vec<String>,
    pub split_mode: SplitMode,
    pub cold_users: usize,
    pub top_k: usize,
    pub train: TrainConfig,
    pub grids: Grids,
    /// Grid names swept by `sweep`, as a cartesian product.
    pub sweep: Vec<String>,
    pub synth: SynthSettings,
    pub gradcheck: GradcheckSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            split_dir: None,
            out: PathBuf::from("out"),
            checkpoint: None,
            behaviors: Vec::new(),
            split_mode: SplitMode::LeaveOneOut,
            cold_users: 0,
            top_k: 10,
            train: TrainConfig::default(),
            grids: Grids::default(),
            sweep: vec!["lambda".into()],
            synth: SynthSettings::default(),
            gradcheck: GradcheckSettings::default(),
        }
    }
}

/// Keys that only locate inputs and outputs; they are left out of the hash
/// so moving files around does not invalidate checkpoints.
const LOCATION_KEYS: [&str; 5] = ["data", "split_dir", "out", "checkpoint", "top_k"];

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), ToString::to_string)
}

fn path_opt(v: &Option<PathBuf>) -> String {
    v.as_ref().map_or_else(String::new, |p| p.display().to_string())
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse_num(key, x.trim())).collect()
}

fn parse_opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "none" {
        Ok(None)
    } else {
        parse_num(key, v).map(Some)
    }
}

fn parse_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{v}`"))),
    }
}

impl RunConfig {
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let w = &t.weights;
        let g = &self.grids;
        let s = &self.synth;
        vec![
            ("data", path_opt(&self.data)),
            ("split_dir", path_opt(&self.split_dir)),
            ("out", self.out.display().to_string()),
            ("checkpoint", path_opt(&self.checkpoint)),
            ("top_k", self.top_k.to_string()),
            ("behaviors", self.behaviors.join(",")),
            ("split_mode", self.split_mode.as_str().into()),
            ("cold_users", self.cold_users.to_string()),
            ("seed", t.seed.to_string()),
            ("variant", t.variant.as_str().into()),
            ("dim", t.dim.to_string()),
            ("layers", t.layers.to_string()),
            ("lr", t.lr.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("epochs", t.epochs.to_string()),
            ("neg_k", t.neg_k.to_string()),
            ("env_pair_sample", opt(&t.env_pair_sample)),
            ("lambda", w.lambda.to_string()),
            ("alpha", w.alpha.to_string()),
            ("beta", w.beta.to_string()),
            ("gamma", w.gamma.to_string()),
            ("tau", w.tau.to_string()),
            ("score_invariant", t.terms.invariant.to_string()),
            ("score_specific", t.terms.specific.to_string()),
            ("freeze_pretrain_epochs", t.freeze_pretrain_epochs.to_string()),
            ("patience", opt(&t.patience)),
            ("exclusion", t.exclusion.as_str().into()),
            ("init_std", t.init_std.to_string()),
            ("adam_beta1", t.adam.beta1.to_string()),
            ("adam_beta2", t.adam.beta2.to_string()),
            ("adam_eps", t.adam.eps.to_string()),
            ("grid.lambda", list(&g.lambda)),
            ("grid.alpha", list(&g.alpha)),
            ("grid.beta", list(&g.beta)),
            ("grid.gamma", list(&g.gamma)),
            ("grid.tau", list(&g.tau)),
            ("sweep", self.sweep.join(",")),
            ("synth.users", s.users.to_string()),
            ("synth.items", s.items.to_string()),
            ("synth.d_true", s.d_true.to_string()),
            ("synth.rho", s.rho.to_string()),
            ("synth.noise", list(&s.noise)),
            ("synth.density", list(&s.density)),
            ("synth.item_norm", s.item_norm.to_string()),
            ("gradcheck.tolerance", self.gradcheck.tolerance.to_string()),
            ("gradcheck.max_coords", self.gradcheck.max_coords.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Sets one key. Errors name the key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "data" => self.data = parse_path(v),
            "split_dir" => self.split_dir = parse_path(v),
            "out" => self.out = PathBuf::from(v),
            "checkpoint" => self.checkpoint = parse_path(v),
            "top_k" => self.top_k = parse_num(key, v)?,
            "behaviors" => {
                self.behaviors = if v.is_empty() { Vec::new() } else { v.split(',').map(|b| b.trim().to_string()).collect() }
            }
            "split_mode" => {
                self.split_mode = SplitMode::parse(v).ok_or_else(|| Error::config(key, format!("unknown split mode `{v}`")))?
            }
            "cold_users" => self.cold_users = parse_num(key, v)?,
            "seed" => t.seed = parse_num(key, v)?,
            "variant" => t.variant = Variant::parse(v)?,
            "dim" => t.dim = parse_num(key, v)?,
            "layers" => t.layers = parse_num(key, v)?,
            "lr" => t.lr = parse_num(key, v)?,
            "batch_size" => t.batch_size = parse_num(key, v)?,
            "epochs" => t.epochs = parse_num(key, v)?,
            "neg_k" => t.neg_k = parse_num(key, v)?,
            "env_pair_sample" => t.env_pair_sample = parse_opt(key, v)?,
            "lambda" => t.weights.lambda = parse_num(key, v)?,
            "alpha" => t.weights.alpha = parse_num(key, v)?,
            "beta" => t.weights.beta = parse_num(key, v)?,
            "gamma" => t.weights.gamma = parse_num(key, v)?,
            "tau" => t.weights.tau = parse_num(key, v)?,
            "score_invariant" => t.terms.invariant = parse_bool(key, v)?,
            "score_specific" => t.terms.specific = parse_bool(key, v)?,
            "freeze_pretrain_epochs" => t.freeze_pretrain_epochs = parse_num(key, v)?,
            "patience" => t.patience = parse_opt(key, v)?,
            "exclusion" => {
                t.exclusion =
                    ExclusionPolicy::parse(v).ok_or_else(|| Error::config(key, format!("expected target or all, got `{v}`")))?
            }
            "init_std" => t.init_std = parse_num(key, v)?,
            "adam_beta1" => t.adam.beta1 = parse_num(key, v)?,
            "adam_beta2" => t.adam.beta2 = parse_num(key, v)?,
            "adam_eps" => t.adam.eps = parse_num(key, v)?,
            "sweep" => self.sweep = if v.is_empty() { Vec::new() } else { v.split(',').map(|x| x.trim().to_string()).collect() },
            "synth.users" => self.synth.users = parse_num(key, v)?,
            "synth.items" => self.synth.items = parse_num(key, v)?,
            "synth.d_true" => self.synth.d_true = parse_num(key, v)?,
            "synth.rho" => self.synth.rho = parse_num(key, v)?,
            "synth.noise" => self.synth.noise = parse_list(key, v)?,
            "synth.density" => self.synth.density = parse_list(key, v)?,
            "synth.item_norm" => self.synth.item_norm = parse_num(key, v)?,
            "gradcheck.tolerance" => self.gradcheck.tolerance = parse_num(key, v)?,
            "gradcheck.max_coords" => self.gradcheck.max_coords = parse_num(key, v)?,
            _ => match key.strip_prefix("grid.").and_then(|name| self.grids.get_mut(name)) {
                Some(grid) => *grid = parse_list(key, v)?,
                None => return Err(Error::config(key, "unknown key")),
            },
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the defaults. `#` starts a
    /// comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// SHA-256 over every key except the input/output locations.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if !LOCATION_KEYS.contains(&k) {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        for (n, b) in self.behaviors.iter().enumerate() {
            if b.is_empty() || b.contains(char::is_whitespace) {
                return Err(Error::config("behaviors", format!("label `{b}` must be non-empty without whitespace")));
            }
            if self.behaviors[..n].contains(b) {
                return Err(Error::config("behaviors", format!("duplicate label `{b}`")));
            }
        }
        if self.top_k == 0 {
            return Err(Error::config("top_k", "must be >= 1"));
        }
        for name in &self.sweep {
            match self.grids.get(name) {
                None => return Err(Error::config("sweep", format!("unknown grid `{name}`"))),
                Some(g) if g.is_empty() => return Err(Error::config(format!("grid.{name}"), "grid is empty")),
                _ => {}
            }
        }
        if !(self.gradcheck.tolerance > 0.0) || self.gradcheck.max_coords == 0 {
            return Err(Error::config("gradcheck", "tolerance must be > 0 and max_coords >= 1"));
        }
        Ok(())
    }

    /// Synthetic spec for `num_behaviors` behaviors, broadcasting scalar
    /// noise/density lists.
    pub fn synth_spec(&self, num_behaviors: usize) -> Result<SynthSpec> {
        let s = &self.synth;
        let widen = |key: &str, v: &[f64]| -> Result<Vec<f64>> {
            match v.len() {
                1 => Ok(vec![v[0]; num_behaviors]),
                n if n == num_behaviors => Ok(v.to_vec()),
                n => Err(Error::config(key, format!("expected 1 or {num_behaviors} values, got {n}"))),
            }
        };
        Ok(SynthSpec {
            n_users: s.users,
            n_items: s.items,
            num_behaviors,
            d_true: s.d_true,
            rho: s.rho,
            noise: widen("synth.noise", &s.noise)?,
            density: widen("synth.density", &s.density)?,
            item_norm: s.item_norm,
            seed: self.train.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.behaviors = vec!["view".into(), "buy".into()];
        c.train.lr = 0.1 + 0.2;
        c.train.patience = None;
        c.train.env_pair_sample = Some(5);
        c.grids.tau = vec![1e-7, 0.3];
        c.synth.density = vec![0.05, 0.01];
        c.checkpoint = Some("run/ck.bin".into());
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), c.to_text());
        assert_eq!(RunConfig::parse(&RunConfig::default().to_text()).unwrap(), RunConfig::default());
    }

    #[test]
    fn hash_ignores_locations_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out = "elsewhere".into();
        b.checkpoint = Some("x.bin".into());
        assert_eq!(a.hash(), b.hash());
        b.train.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn errors_name_the_key() {
        let err = RunConfig::parse("lr = fast").unwrap_err();
        assert!(matches!(&err, Error::Config { field, .. } if field == "lr"), "{err}");
        let err = RunConfig::parse("no_such = 1").unwrap_err();
        assert!(err.to_string().contains("no_such"));
        let err = RunConfig::parse("lambda 1").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert_eq!(RunConfig::parse("# c\n\ngrid.lambda = 1,2\n").unwrap().grids.lambda, vec![1.0, 2.0]);
    }

    #[test]
    fn synth_lists_broadcast() {
        let c = RunConfig::parse("synth.density = 0.1\nsynth.noise = 0.1,0.2,0.3").unwrap();
        let s = c.synth_spec(3).unwrap();
        assert_eq!(s.density, vec![0.1; 3]);
        assert_eq!(s.noise, vec![0.1, 0.2, 0.3]);
        assert!(c.synth_spec(2).is_err());
    }
}
