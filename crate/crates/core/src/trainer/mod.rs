//! Joint optimization of the base embeddings and the encoder/decoder.

mod config;
mod gradcheck;
mod objective;
mod params;
mod sampling;

pub use config::{Grids, TrainConfig, Variant};
pub use gradcheck::{check_gradient, gradient_check, BlockError, GradCheckReport, DEFAULT_MAX_COORDS, FD_STEP};
pub use params::{adam_step, AdamConfig, AdamState, Params};
pub use sampling::{bpr_triples, irm_samples, noise, sample_negative, stream, BatchPlan, BprTriple};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dataset::{build_matrix, BehaviorMatrix, InteractionLog, SplitBundle};
use crate::environments::{enumerate_environments, EnvironmentGraphs, EnvironmentSet};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, EvalResult};
use crate::graph::PropagationGraph;
use crate::losses::{Coefficients, LossReport, Term};
use crate::recommender::{aggregate_singleton_items, ScoringState};
use crate::tensor::{cosine, EmbeddingTable};
use crate::vae;
use sampling::{LANE_BATCH, LANE_INIT, LANE_NOISE, LANE_SHUFFLE};

/// Cutoff for per-epoch monitoring and early stopping.
pub const MONITOR_K: usize = 10;

/// Parameters, optimizer moments and the number of completed epochs. The
/// seed plus the epoch counter is the whole RNG state: every stream is
/// derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub params: Params,
    pub adam: Option<AdamState>,
    pub epoch: usize,
    pub seed: u64,
}

/// Cached graphs and sampling structures for one training log.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    set: EnvironmentSet,
    graphs: EnvironmentGraphs,
    target: usize,
    target_env: usize,
    num_users: usize,
    num_items: usize,
}

impl Trainer {
    pub fn new(train: &InteractionLog, target_behavior: usize, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        train.validate()?;
        if target_behavior >= train.num_behaviors {
            return Err(Error::invalid(format!(
                "target behavior {target_behavior} out of range for {} behaviors",
                train.num_behaviors
            )));
        }
        let set = enumerate_environments(train.num_behaviors)?;
        let matrices = (0..train.num_behaviors)
            .map(|k| build_matrix(train, &[k]))
            .collect::<Result<Vec<_>>>()?;
        let graphs = EnvironmentGraphs::build(&set, &matrices)?;
        let target_env = set
            .singleton_index(target_behavior)
            .ok_or_else(|| Error::invalid("target behavior has no singleton environment"))?;
        Ok(Self {
            cfg,
            set,
            graphs,
            target: target_behavior,
            target_env,
            num_users: train.num_users,
            num_items: train.num_items,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn environments(&self) -> &EnvironmentSet {
        &self.set
    }

    pub fn environment_graphs(&self) -> &EnvironmentGraphs {
        &self.graphs
    }

    /// The all-behavior environment is last in canonical order.
    pub fn union_graph(&self) -> &PropagationGraph {
        self.graphs.graph(self.set.len() - 1)
    }

    fn union_matrix(&self) -> &BehaviorMatrix {
        self.graphs.matrix(self.set.len() - 1)
    }

    fn target_matrix(&self) -> &BehaviorMatrix {
        self.graphs.matrix(self.target_env)
    }

    pub fn target_behavior(&self) -> usize {
        self.target
    }

    pub fn target_environment(&self) -> usize {
        self.target_env
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// Fresh parameters drawn from the configured seed.
    pub fn init_state(&self) -> Result<ModelState> {
        let seed = self.cfg.seed;
        let init_seed = rand::Rng::random(&mut stream(seed, u64::MAX, 0, LANE_INIT));
        let params = Params::init(self.num_users, self.num_items, self.cfg.dim, self.cfg.init_std, init_seed)?;
        self.check_state(&ModelState { params: params.clone(), adam: None, epoch: 0, seed })?;
        Ok(ModelState { params, adam: None, epoch: 0, seed })
    }

    /// Shape and parameter-count checks for externally supplied state.
    pub fn check_state(&self, state: &ModelState) -> Result<()> {
        let p = &state.params;
        let expected = Params::expected_num_params(self.num_users, self.num_items, self.cfg.dim);
        if p.users.rows() != self.num_users || p.items.rows() != self.num_items || p.dim() != self.cfg.dim {
            return Err(Error::Shape(format!(
                "state is {}x{} users, {}x{} items; trainer expects {}x{d}, {}x{d}",
                p.users.rows(),
                p.users.dim(),
                p.items.rows(),
                p.items.dim(),
                self.num_users,
                self.num_items,
                d = self.cfg.dim
            )));
        }
        if p.num_params() != expected {
            return Err(Error::Shape(format!("{} parameters, expected {expected}", p.num_params())));
        }
        if let Some(adam) = &state.adam {
            if !p.same_shape(&adam.m) || !p.same_shape(&adam.v) {
                return Err(Error::Shape("optimizer moments do not mirror parameter shapes".into()));
            }
        }
        Ok(())
    }

    fn pretraining(&self, epoch: usize) -> bool {
        epoch < self.cfg.freeze_pretrain_epochs
    }

    /// Loss weights in effect for `epoch`.
    pub fn coefficients(&self, epoch: usize) -> Coefficients {
        if self.pretraining(epoch) || self.cfg.variant == Variant::LightGcn {
            Coefficients::only(Term::Rec)
        } else {
            self.cfg.weights.coefficients()
        }
    }

    /// Draws the sampling plan for batch `batch` of `epoch`.
    pub fn plan_batch(&self, users: Vec<usize>, epoch: usize, batch: usize) -> BatchPlan {
        let pretrain = self.pretraining(epoch) || self.cfg.variant == Variant::LightGcn;
        let seed = self.cfg.seed;
        let mut rng = stream(seed, epoch as u64, batch as u64, LANE_BATCH);
        let bpr_matrix = if self.pretraining(epoch) { self.union_matrix() } else { self.target_matrix() };
        let bpr = bpr_triples(bpr_matrix, &users, self.num_items, self.cfg.neg_k, &mut rng);
        if pretrain {
            return BatchPlan {
                users,
                bpr,
                irm: crate::losses::IrmBatch { by_env: Vec::new(), pairs: Vec::new() },
                eps: Vec::new(),
                pretrain: true,
            };
        }
        let env_matrices: Vec<&BehaviorMatrix> = (0..self.set.len()).map(|m| self.graphs.matrix(m)).collect();
        let irm = irm_samples(&env_matrices, &users, self.num_items, self.cfg.neg_k, self.cfg.env_pair_sample, &mut rng);
        let mut noise_rng = stream(seed, epoch as u64, batch as u64, LANE_NOISE);
        let eps = noise(users.len(), self.set.len(), self.cfg.dim / 4, &mut noise_rng);
        BatchPlan { users, bpr, irm, eps, pretrain: false }
    }

    /// One pass over all users in a seeded shuffled order. Returns the mean
    /// of the per-batch loss reports.
    pub fn train_epoch(&self, state: &mut ModelState) -> Result<LossReport> {
        self.check_state(state)?;
        if state.seed != self.cfg.seed {
            return Err(Error::config("seed", format!("state seed {} differs from config seed {}", state.seed, self.cfg.seed)));
        }
        let epoch = state.epoch;
        let coef = self.coefficients(epoch);
        let frozen = !self.pretraining(epoch) && self.cfg.freeze_pretrain_epochs > 0;
        let mut order: Vec<usize> = (0..self.num_users).collect();
        order.shuffle(&mut stream(self.cfg.seed, epoch as u64, 0, LANE_SHUFFLE));

        let adam = state.adam.get_or_insert_with(|| AdamState::new(&state.params));
        let mut sum = [0.0f64; 6];
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let plan = self.plan_batch(chunk.to_vec(), epoch, b);
            let (report, grads) = self.objective(&state.params, &plan, &coef, true)?;
            if !report.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}, batch {b}: {report:?}")));
            }
            let grads = grads.expect("gradient requested");
            let kept = frozen.then(|| (state.params.users.clone(), state.params.items.clone()));
            adam_step(&mut state.params, &grads, adam, self.cfg.lr, self.cfg.adam)?;
            if let Some((u, i)) = kept {
                state.params.users = u;
                state.params.items = i;
            }
            for (s, v) in sum.iter_mut().zip([report.rec, report.irm, report.ort, report.con, report.kl, report.total]) {
                *s += v;
            }
            batches += 1;
        }
        state.epoch += 1;
        let n = batches.max(1) as f64;
        Ok(LossReport {
            rec: sum[0] / n,
            irm: sum[1] / n,
            ort: sum[2] / n,
            con: sum[3] / n,
            kl: sum[4] / n,
            total: sum[5] / n,
        })
    }

    /// Trains until `cfg.epochs` epochs are complete or validation stops
    /// improving. `monitor` is evaluated after every epoch; when patience is
    /// configured it also drives early stopping and the best parameters are
    /// restored at the end. `on_epoch` sees every record and the state right
    /// after that epoch.
    pub fn fit<F>(&self, state: &mut ModelState, monitor: Option<&SplitBundle>, mut on_epoch: F) -> Result<FitOutcome>
    where
        F: FnMut(&EpochRecord, &ModelState) -> Result<()>,
    {
        let mut history = Vec::new();
        let mut best: Option<(f64, usize, Params)> = None;
        let mut stopped_early = false;
        while state.epoch < self.cfg.epochs {
            let epoch = state.epoch;
            let loss = self.train_epoch(state)?;
            let eval = match monitor {
                Some(split) => Some(evaluate(split, &self.scoring_state(&state.params)?, MONITOR_K, self.cfg.exclusion)?),
                None => None,
            };
            let record = EpochRecord { epoch, loss, eval };
            on_epoch(&record, state)?;
            history.push(record);
            if let (Some(patience), Some(e)) = (self.cfg.patience, eval) {
                match &best {
                    Some((hr, _, _)) if e.hr <= *hr => {}
                    _ => best = Some((e.hr, epoch, state.params.clone())),
                }
                let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
                if epoch - best_epoch >= patience {
                    stopped_early = true;
                    break;
                }
            }
        }
        let best_epoch = best.map(|(_, epoch, params)| {
            state.params = params;
            epoch
        });
        Ok(FitOutcome { history, best_epoch, stopped_early })
    }

    /// Per-environment invariant preferences `p~^m` for every user, using
    /// the latent mean (no sampling noise).
    pub fn invariant_preferences(&self, params: &Params) -> Result<Vec<EmbeddingTable>> {
        Ok(self.inference(params)?.1)
    }

    fn inference(&self, params: &Params) -> Result<(crate::environments::EnvironmentRepresentations, Vec<EmbeddingTable>)> {
        let layers = self.cfg.layers;
        let (ppt, qpt) = self.union_graph().layer_sum(&params.users, &params.items, layers)?;
        let reps = self.graphs.representations(&ppt, &qpt, layers)?;
        let zero = vec![0.0; params.vae.latent_dim()];
        let invariant = reps
            .users
            .par_iter()
            .map(|table| {
                let rows: Vec<f64> = (0..table.rows())
                    .flat_map(|u| vae::forward(table.row(u), &zero, &params.vae).output)
                    .collect();
                EmbeddingTable::from_vec(table.rows(), table.dim(), rows)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((reps, invariant))
    }

    /// Noise-free scoring snapshot for evaluation and recommendation.
    pub fn scoring_state(&self, params: &Params) -> Result<ScoringState> {
        if self.cfg.variant == Variant::LightGcn {
            let (ppt, qpt) = self.union_graph().layer_sum(&params.users, &params.items, self.cfg.layers)?;
            return ScoringState::dot_product(ppt, qpt);
        }
        let (reps, invariant) = self.inference(params)?;
        let q_hat = aggregate_singleton_items(&self.set, &reps.items)?;
        let mut agg = invariant[0].clone();
        for t in &invariant[1..] {
            agg.add_assign(t)?;
        }
        let mut specific = reps.users[self.target_env].clone();
        let mut neg = invariant[self.target_env].clone();
        neg.scale(-1.0);
        specific.add_assign(&neg)?;
        Ok(ScoringState::new(agg, specific, q_hat)?.with_terms(self.cfg.terms))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossReport,
    pub eval: Option<EvalResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were restored, when early stopping was active.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Mean over users of the mean pairwise cosine between their
/// per-environment vectors. Users whose vectors are all zero are skipped.
pub fn cross_environment_cosine(tables: &[EmbeddingTable]) -> Result<f64> {
    let first = tables.first().ok_or_else(|| Error::invalid("no environment tables"))?;
    if tables.len() < 2 {
        return Err(Error::invalid("need at least two environments"));
    }
    if tables.iter().any(|t| !t.same_shape(first)) {
        return Err(Error::Shape("environment tables differ in shape".into()));
    }
    let mut total = 0.0;
    let mut users = 0usize;
    for u in 0..first.rows() {
        if tables.iter().all(|t| t.row(u).iter().all(|&v| v == 0.0)) {
            continue;
        }
        let mut s = 0.0;
        let mut n = 0usize;
        for a in 0..tables.len() {
            for b in a + 1..tables.len() {
                s += cosine(tables[a].row(u), tables[b].row(u));
                n += 1;
            }
        }
        total += s / n as f64;
        users += 1;
    }
    if users == 0 {
        return Err(Error::invalid("every user vector is zero"));
    }
    Ok(total / users as f64)
}
