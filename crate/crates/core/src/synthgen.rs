//! Synthetic multi-behavior logs with planted shared and behavior-specific
//! user vectors.
//!
//! For user `u`, behavior `k` and item `i` the interaction logit is
//! `(rho v_u + (1 - rho) s_u^k) . w_i + noise_k * n + b_k`, with `v`, `s`, `n`
//! standard normal. Item vectors are random directions of one fixed norm,
//! so the marginal interaction rate does not depend on the item. Each bias
//! `b_k` is found by bisection so the expected density hits its target.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::atomic::write_atomic;
use crate::binio::{Reader, Section, Writer};
use crate::dataset::{Interaction, InteractionLog};
use crate::environments::MAX_BEHAVIORS;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::{dot, sigmoid, EmbeddingTable};

const TRUTH_MAGIC: &[u8; 8] = b"MBTRUTH\0";
pub const TRUTH_VERSION: u32 = 1;

const LANE_ITEMS: u64 = 0;
const LANE_USERS: u64 = 1;
const LANE_DRAWS: u64 = 2;

const BIAS_RANGE: f64 = 60.0;
const BISECTION_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub num_behaviors: usize,
    pub d_true: usize,
    /// Weight of the shared vector; `1 - rho` goes to the specific one.
    pub rho: f64,
    /// Per-behavior standard deviation of the logit noise.
    pub noise: Vec<f64>,
    /// Per-behavior fraction of `(user, item)` cells with an interaction.
    pub density: Vec<f64>,
    /// Norm of every item vector.
    pub item_norm: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Defaults: `rho = 0.8`, noise 0.5, density 0.02, 16 latent
    /// dimensions, item norm 3.
    pub fn new(n_users: usize, n_items: usize, num_behaviors: usize) -> Self {
        Self {
            n_users,
            n_items,
            num_behaviors,
            d_true: 16,
            rho: 0.8,
            noise: vec![0.5; num_behaviors],
            density: vec![0.02; num_behaviors],
            item_norm: 3.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_items == 0 {
            return Err(Error::invalid("synthetic data needs at least one user and one item"));
        }
        if self.num_behaviors == 0 || self.num_behaviors > MAX_BEHAVIORS {
            return Err(Error::invalid(format!(
                "behavior count must be in 1..={MAX_BEHAVIORS}, got {}",
                self.num_behaviors
            )));
        }
        if self.d_true == 0 {
            return Err(Error::invalid("d_true must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::invalid(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if !(self.item_norm > 0.0 && self.item_norm.is_finite()) {
            return Err(Error::invalid("item_norm must be finite and > 0"));
        }
        if self.noise.len() != self.num_behaviors || self.density.len() != self.num_behaviors {
            return Err(Error::invalid(format!(
                "need {} noise and density values, got {} and {}",
                self.num_behaviors,
                self.noise.len(),
                self.density.len()
            )));
        }
        if let Some(n) = self.noise.iter().find(|n| !(n.is_finite() && **n >= 0.0)) {
            return Err(Error::invalid(format!("noise scale must be finite and >= 0, got {n}")));
        }
        let cells = (self.n_users * self.n_items) as f64;
        for (behavior, &target) in self.density.iter().enumerate() {
            // At least one expected interaction, and room for non-interactions.
            if !(target > 0.0 && target < 1.0) || target * cells < 1.0 || (1.0 - target) * cells < 1.0 {
                return Err(Error::Density { behavior, target });
            }
        }
        Ok(())
    }
}

/// Planted vectors and fitted biases, indexed like the generated log.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub invariant: EmbeddingTable,
    /// One `n_users x d_true` table per behavior.
    pub specific: Vec<EmbeddingTable>,
    pub items: EmbeddingTable,
    pub bias: Vec<f64>,
}

struct UserDraw {
    v: Vec<f64>,
    s: Vec<Vec<f64>>,
    /// `[k * n_items + i]` logit without bias.
    logits: Vec<f64>,
}

pub fn generate(spec: &SynthSpec) -> Result<(InteractionLog, SynthTruth)> {
    spec.validate()?;
    let (nu, ni, nk, d) = (spec.n_users, spec.n_items, spec.num_behaviors, spec.d_true);

    let mut rng = stream(spec.seed, 0, 0, LANE_ITEMS);
    let mut items = EmbeddingTable::zeros(ni, d);
    for i in 0..ni {
        let row = items.row_mut(i);
        loop {
            row.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
            let norm = dot(row, row).sqrt();
            if norm > 1e-12 {
                row.iter_mut().for_each(|x| *x *= spec.item_norm / norm);
                break;
            }
        }
    }

    let users: Vec<UserDraw> = (0..nu)
        .into_par_iter()
        .map(|u| {
            let mut rng = stream(spec.seed, u as u64, 0, LANE_USERS);
            let normal_vec = |rng: &mut rand_chacha::ChaCha8Rng| (0..d).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>();
            let v = normal_vec(&mut rng);
            let s: Vec<Vec<f64>> = (0..nk).map(|_| normal_vec(&mut rng)).collect();
            let mut logits = Vec::with_capacity(nk * ni);
            for (k, sk) in s.iter().enumerate() {
                let x: Vec<f64> = v.iter().zip(sk).map(|(a, b)| spec.rho * a + (1.0 - spec.rho) * b).collect();
                for i in 0..ni {
                    let n: f64 = rng.sample(StandardNormal);
                    logits.push(dot(&x, items.row(i)) + spec.noise[k] * n);
                }
            }
            UserDraw { v, s, logits }
        })
        .collect();

    let bias = (0..nk)
        .map(|k| fit_bias(&users, k, ni, spec.density[k]).ok_or(Error::Density { behavior: k, target: spec.density[k] }))
        .collect::<Result<Vec<f64>>>()?;

    let per_user: Vec<Vec<(usize, usize)>> = users
        .par_iter()
        .enumerate()
        .map(|(u, draw)| {
            let mut rng = stream(spec.seed, u as u64, 0, LANE_DRAWS);
            let mut recs = Vec::new();
            for (k, &b) in bias.iter().enumerate() {
                for i in 0..ni {
                    if rng.random::<f64>() < sigmoid(draw.logits[k * ni + i] + b) {
                        recs.push((i, k));
                    }
                }
            }
            recs.shuffle(&mut rng);
            recs
        })
        .collect();

    let mut records = Vec::with_capacity(per_user.iter().map(Vec::len).sum());
    for (user, recs) in per_user.into_iter().enumerate() {
        for (item, behavior) in recs {
            let order = records.len() as u64;
            records.push(Interaction { user, item, behavior, order });
        }
    }
    let log = InteractionLog {
        records,
        num_users: nu,
        num_items: ni,
        num_behaviors: nk,
    };
    log.validate()?;

    let invariant = EmbeddingTable::from_vec(nu, d, users.iter().flat_map(|u| u.v.iter().copied()).collect())?;
    let specific = (0..nk)
        .map(|k| EmbeddingTable::from_vec(nu, d, users.iter().flat_map(|u| u.s[k].iter().copied()).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok((log, SynthTruth { invariant, specific, items, bias }))
}

/// Expected density of behavior `k` under bias `b`. Per-user partial sums
/// are reduced sequentially so the result does not depend on threading.
fn expected_density(users: &[UserDraw], k: usize, ni: usize, b: f64) -> f64 {
    let partial: Vec<f64> = users
        .par_iter()
        .map(|u| u.logits[k * ni..(k + 1) * ni].iter().map(|&l| sigmoid(l + b)).sum())
        .collect();
    partial.iter().sum::<f64>() / (users.len() * ni) as f64
}

fn fit_bias(users: &[UserDraw], k: usize, ni: usize, target: f64) -> Option<f64> {
    let (mut lo, mut hi) = (-BIAS_RANGE, BIAS_RANGE);
    if expected_density(users, k, ni, lo) > target || expected_density(users, k, ni, hi) < target {
        return None;
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if expected_density(users, k, ni, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let b = 0.5 * (lo + hi);
    let rel = (expected_density(users, k, ni, b) - target).abs() / target;
    (rel < 1e-6).then_some(b)
}

/// Fraction of `(user, item)` cells with an interaction, per behavior.
pub fn empirical_density(log: &InteractionLog) -> Vec<f64> {
    let mut counts = vec![0usize; log.num_behaviors];
    for r in &log.records {
        counts[r.behavior] += 1;
    }
    let cells = (log.num_users * log.num_items) as f64;
    counts.into_iter().map(|c| c as f64 / cells).collect()
}

pub fn write_truth(path: &Path, truth: &SynthTruth, seed: u64) -> Result<()> {
    let mut w = Writer::default();
    w.bytes(TRUTH_MAGIC);
    w.u32(TRUTH_VERSION);
    w.u64(seed);
    let table = |name: String, t: &EmbeddingTable| Section::new(name, vec![t.rows(), t.dim()], t.as_slice().to_vec());
    let mut sections = vec![table("invariant".into(), &truth.invariant), table("items".into(), &truth.items)];
    for (k, t) in truth.specific.iter().enumerate() {
        sections.push(table(format!("specific.{k}"), t));
    }
    sections.push(Section::new("bias", vec![truth.bias.len()], truth.bias.clone()));
    w.u32(sections.len() as u32);
    for s in &sections {
        w.section(s);
    }
    write_atomic(path, &w.finish())
}

/// Returns the truth and the seed it was generated with.
pub fn read_truth(path: &Path) -> Result<(SynthTruth, u64)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes, path);
    if r.bytes(8)? != TRUTH_MAGIC {
        return Err(r.corrupt("not a truth file"));
    }
    let version = r.u32()?;
    if version != TRUTH_VERSION {
        return Err(Error::Version { found: version, expected: TRUTH_VERSION });
    }
    let seed = r.u64()?;
    let n = r.u32()? as usize;
    let sections = (0..n).map(|_| r.section()).collect::<Result<Vec<_>>>()?;
    r.expect_end()?;
    let as_table = |s: &Section| -> Result<EmbeddingTable> {
        match s.shape[..] {
            [rows, dim] => EmbeddingTable::from_vec(rows, dim, s.data.clone()),
            _ => Err(r.corrupt(format!("section `{}` is not a matrix", s.name))),
        }
    };
    let find = |name: &str| sections.iter().find(|s| s.name == name).ok_or_else(|| r.corrupt(format!("missing section `{name}`")));
    let invariant = as_table(find("invariant")?)?;
    let items = as_table(find("items")?)?;
    let bias = find("bias")?.data.clone();
    let specific = (0..bias.len())
        .map(|k| as_table(find(&format!("specific.{k}"))?))
        .collect::<Result<Vec<_>>>()?;
    Ok((SynthTruth { invariant, specific, items, bias }, seed))
}
