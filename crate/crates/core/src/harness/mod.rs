//! Runnable commands over the library: configuration, checkpoints and
//! metrics output.

mod checkpoint;
mod config;
mod metrics;

pub use checkpoint::{
    check_hash, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointMeta,
    CHECKPOINT_VERSION,
};
pub use config::{GradcheckSettings, RunConfig, SynthSettings};
pub use metrics::{epoch_line, header, MetricsSink, METRICS_VERSION};

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::atomic::write_atomic;
use crate::dataset::{
    cold_start_split, deduplicate, leave_one_out_split, load_interactions, read_split, write_interactions, write_split,
    IdMap, Schema, SplitBundle, SplitMode,
};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, EvalResult};
use crate::losses::{Coefficients, Term};
use crate::recommender::top_k;
use crate::synthgen::{empirical_density, generate, write_truth};
use crate::trainer::{gradient_check, FitOutcome, ModelState, TrainConfig, Trainer, MONITOR_K};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Ingest,
    Train,
    Eval,
    Recommend,
    Synth,
    Gradcheck,
    Sweep,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Ingest,
        Command::Train,
        Command::Eval,
        Command::Recommend,
        Command::Synth,
        Command::Gradcheck,
        Command::Sweep,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Recommend => "recommend",
            Command::Synth => "synth",
            Command::Gradcheck => "gradcheck",
            Command::Sweep => "sweep",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::config("command", format!("unknown command `{s}`")))
    }
}

/// Runs one command. Machine-readable lines go to `out`; artifacts go under
/// `cfg.out`. `force` accepts checkpoints written under another config.
pub fn run(command: Command, cfg: &RunConfig, force: bool, out: &mut dyn Write) -> Result<()> {
    cfg.validate()?;
    match command {
        Command::Ingest => ingest(cfg, out),
        Command::Train => train(cfg, force, out),
        Command::Eval => eval(cfg, force, out),
        Command::Recommend => recommend(cfg, force, out),
        Command::Synth => synth(cfg, out),
        Command::Gradcheck => gradcheck(cfg, out),
        Command::Sweep => sweep(cfg, out),
    }
}

fn emit(out: &mut dyn Write, value: &Value) -> Result<()> {
    writeln!(out, "{value}").map_err(|e| Error::io("<stdout>", e))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    write_atomic(path, format!("{value}\n").as_bytes())
}

fn schema(cfg: &RunConfig) -> Result<Schema> {
    if cfg.behaviors.is_empty() {
        return Err(Error::config("behaviors", "required for this command"));
    }
    Schema::new(cfg.behaviors.iter().cloned())
}

fn load_split(cfg: &RunConfig) -> Result<(SplitBundle, IdMap, Schema)> {
    let dir = cfg.split_dir.as_ref().ok_or_else(|| Error::config("split_dir", "required for this command"))?;
    let (split, ids, schema) = read_split(dir)?;
    if !cfg.behaviors.is_empty() && cfg.behaviors != schema.behaviors {
        return Err(Error::config(
            "behaviors",
            format!("config lists {:?} but the split was written with {:?}", cfg.behaviors, schema.behaviors),
        ));
    }
    Ok((split, ids, schema))
}

fn restore(cfg: &RunConfig, path: &Path, trainer: &Trainer, force: bool) -> Result<ModelState> {
    let (state, meta) = load_checkpoint(path)?;
    check_hash(&meta, &cfg.hash(), force)?;
    trainer.check_state(&state)?;
    Ok(state)
}

fn eval_json(e: &EvalResult) -> Value {
    json!({ "hr": e.hr, "ndcg": e.ndcg, "k": e.k, "n_users": e.n_users })
}

fn ingest(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let path = cfg.data.as_ref().ok_or_else(|| Error::config("data", "required for ingest"))?;
    let schema = schema(cfg)?;
    let (log, ids) = load_interactions(path, &schema)?;
    let log = deduplicate(&log);
    let target = schema.target();
    let split = match cfg.split_mode {
        SplitMode::LeaveOneOut => leave_one_out_split(&log, target)?,
        SplitMode::ColdStart => cold_start_split(&log, target, cfg.cold_users, cfg.train.seed)?,
    };
    write_split(&cfg.out, &split, &ids, &schema)?;
    emit(
        out,
        &json!({
            "command": "ingest",
            "config_hash": cfg.hash(),
            "users": log.num_users,
            "items": log.num_items,
            "records": log.records.len(),
            "train_records": split.train.records.len(),
            "test_pairs": split.test.len(),
            "mode": split.mode.as_str(),
        }),
    )
}

/// What a single training run produced.
struct TrainRun {
    state: ModelState,
    fit: FitOutcome,
    test: EvalResult,
}

/// Trains on `split.train` (minus a validation carve-out when patience is
/// set) and evaluates the final parameters on `split.test`.
fn train_once<F>(cfg: &TrainConfig, split: &SplitBundle, start: Option<ModelState>, on_epoch: F) -> Result<TrainRun>
where
    F: FnMut(&crate::trainer::EpochRecord, &ModelState) -> Result<()>,
{
    let target = split.target_behavior;
    let validation = match cfg.patience {
        Some(_) => {
            let v = leave_one_out_split(&split.train, target)?;
            if v.test.is_empty() {
                return Err(Error::config("patience", "no user has two target interactions to validate on; set patience = none"));
            }
            Some(v)
        }
        None => None,
    };
    let fit_log = validation.as_ref().map_or(&split.train, |v| &v.train);
    let trainer = Trainer::new(fit_log, target, cfg.clone())?;
    let mut state = match start {
        Some(s) => {
            trainer.check_state(&s)?;
            s
        }
        None => trainer.init_state()?,
    };
    let monitor = validation.as_ref().or(Some(split)).filter(|s| !s.test.is_empty());
    let fit = trainer.fit(&mut state, monitor, on_epoch)?;

    let full = if validation.is_some() { Trainer::new(&split.train, target, cfg.clone())? } else { trainer };
    let test = evaluate(split, &full.scoring_state(&state.params)?, MONITOR_K, cfg.exclusion)?;
    Ok(TrainRun { state, fit, test })
}

fn train(cfg: &RunConfig, force: bool, out: &mut dyn Write) -> Result<()> {
    let (split, _, _) = load_split(cfg)?;
    let hash = cfg.hash();
    let start = match &cfg.checkpoint {
        Some(path) => {
            let (state, meta) = load_checkpoint(path)?;
            check_hash(&meta, &hash, force)?;
            Some(state)
        }
        None => None,
    };
    let ckpt_path = cfg.out.join("checkpoint.bin");
    let mut sink = MetricsSink::new(Some(cfg.out.join("metrics.jsonl")), out);
    let mut head = header("train", &hash, cfg.train.seed);
    head["monitor"] = json!(if cfg.train.patience.is_some() { "validation" } else { "test" });
    head["start_epoch"] = json!(start.as_ref().map_or(0, |s| s.epoch));
    sink.emit(&head)?;
    let run = train_once(&cfg.train, &split, start, |record, state| {
        sink.emit(&epoch_line(record))?;
        save_checkpoint(&ckpt_path, state, &hash)
    })?;
    drop(sink);

    let model = ModelState { adam: None, ..run.state };
    save_checkpoint(&cfg.out.join("model.bin"), &model, &hash)?;
    let summary = json!({
        "command": "train",
        "config_hash": hash,
        "seed": cfg.train.seed,
        "epochs_completed": model.epoch,
        "best_epoch": run.fit.best_epoch,
        "stopped_early": run.fit.stopped_early,
        "test": eval_json(&run.test),
    });
    write_json(&cfg.out.join("result.json"), &summary)?;
    emit(out, &summary)
}

fn eval(cfg: &RunConfig, force: bool, out: &mut dyn Write) -> Result<()> {
    let (split, _, _) = load_split(cfg)?;
    let trainer = Trainer::new(&split.train, split.target_behavior, cfg.train.clone())?;
    let state = match &cfg.checkpoint {
        Some(path) => restore(cfg, path, &trainer, force)?,
        None => trainer.init_state()?,
    };
    let result = evaluate(&split, &trainer.scoring_state(&state.params)?, cfg.top_k, cfg.train.exclusion)?;
    let line = json!({
        "command": "eval",
        "format_version": METRICS_VERSION,
        "config_hash": cfg.hash(),
        "seed": cfg.train.seed,
        "epoch": state.epoch,
        "mode": split.mode.as_str(),
        "hr": result.hr,
        "ndcg": result.ndcg,
        "k": result.k,
        "n_users": result.n_users,
    });
    write_json(&cfg.out.join("eval.json"), &line)?;
    emit(out, &line)
}

fn recommend(cfg: &RunConfig, force: bool, out: &mut dyn Write) -> Result<()> {
    let (split, ids, _) = load_split(cfg)?;
    let path = cfg.checkpoint.as_ref().ok_or_else(|| Error::config("checkpoint", "required for recommend"))?;
    let trainer = Trainer::new(&split.train, split.target_behavior, cfg.train.clone())?;
    let state = restore(cfg, path, &trainer, force)?;
    let scoring = trainer.scoring_state(&state.params)?;
    let excl = cfg.train.exclusion.matrix(&split.train, split.target_behavior)?;
    let lists = (0..split.train.num_users)
        .into_par_iter()
        .map(|u| top_k(u, cfg.top_k, excl.user_items(u), &scoring))
        .collect::<Result<Vec<_>>>()?;
    let hash = cfg.hash();
    let mut text = format!("# format_version={METRICS_VERSION} config_hash={hash} seed={}\n", cfg.train.seed);
    for (u, list) in lists.iter().enumerate() {
        for (rank, &(item, score)) in list.iter().enumerate() {
            let _ = writeln!(text, "{}\t{}\t{}\t{}", ids.users[u], rank + 1, ids.items[item], score);
        }
    }
    let file = cfg.out.join("recommendations.tsv");
    write_atomic(&file, text.as_bytes())?;
    emit(
        out,
        &json!({
            "command": "recommend",
            "config_hash": hash,
            "users": lists.len(),
            "k": cfg.top_k,
            "path": file.display().to_string(),
        }),
    )
}

fn synth(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let schema = schema(cfg)?;
    let spec = cfg.synth_spec(schema.behaviors.len())?;
    let (log, truth) = generate(&spec)?;
    let hash = cfg.hash();
    let meta = [
        ("format_version", METRICS_VERSION.to_string()),
        ("config_hash", hash.clone()),
        ("seed", spec.seed.to_string()),
    ];
    let ids = IdMap::identity(log.num_users, log.num_items);
    write_interactions(&cfg.out.join("interactions.tsv"), &log, &ids, &schema, &meta)?;
    write_truth(&cfg.out.join("truth.bin"), &truth, spec.seed)?;
    emit(
        out,
        &json!({
            "command": "synth",
            "config_hash": hash,
            "seed": spec.seed,
            "records": log.records.len(),
            "density": empirical_density(&log),
            "bias": truth.bias,
        }),
    )
}

/// Checks every loss term and the weighted total. Without a split, runs on
/// a generated problem with 4 users, 6 items and width 8.
fn gradcheck(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let (log, target, train_cfg) = match &cfg.split_dir {
        Some(_) => {
            let (split, _, _) = load_split(cfg)?;
            let target = split.target_behavior;
            (split.train, target, cfg.train.clone())
        }
        None => {
            let k = cfg.behaviors.len().max(2);
            let spec = crate::synthgen::SynthSpec {
                density: vec![0.5; k],
                d_true: 2,
                seed: cfg.train.seed,
                ..crate::synthgen::SynthSpec::new(4, 6, k)
            };
            let tc = TrainConfig { dim: 8, batch_size: 4, init_std: 0.3, ..cfg.train.clone() };
            (generate(&spec)?.0, k - 1, tc)
        }
    };
    let trainer = Trainer::new(&log, target, train_cfg)?;
    let state = trainer.init_state()?;
    let users: Vec<usize> = (0..log.num_users.min(trainer.config().batch_size)).collect();
    let plan = trainer.plan_batch(users, 0, 0);
    let mut checks: Vec<(&str, Coefficients)> = Term::ALL.iter().map(|&t| (t.name(), Coefficients::only(t))).collect();
    checks.push(("total", trainer.coefficients(0)));
    let mut first_failure = None;
    for (name, coef) in checks {
        let report = gradient_check(&trainer, &state.params, &plan, &coef, cfg.gradcheck.tolerance, cfg.gradcheck.max_coords)?;
        emit(
            out,
            &json!({
                "command": "gradcheck",
                "term": name,
                "passed": report.passed(),
                "max_rel_error": report.max_error(),
                "tolerance": report.tolerance,
                "blocks": report.blocks,
            }),
        )?;
        if let Err(e) = report.verify() {
            first_failure.get_or_insert(e);
        }
    }
    first_failure.map_or(Ok(()), Err)
}

fn sweep(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let (split, _, _) = load_split(cfg)?;
    let names: Vec<&str> = cfg.sweep.iter().map(String::as_str).collect();
    let points = cfg.grids.points(&names, cfg.train.weights)?;
    let hash = cfg.hash();
    let dir = cfg.out.join("sweep");
    let mut table = format!(
        "# format_version={METRICS_VERSION} config_hash={hash} seed={}\nrun\tlambda\talpha\tbeta\tgamma\ttau\tbest_epoch\thr10\tndcg10\n",
        cfg.train.seed
    );
    for (n, weights) in points.iter().enumerate() {
        let train_cfg = TrainConfig { weights: *weights, ..cfg.train.clone() };
        let mut sink_buf: Vec<u8> = Vec::new();
        let mut sink = MetricsSink::new(Some(dir.join(format!("run{n}.jsonl"))), &mut sink_buf);
        sink.emit(&header("sweep", &hash, cfg.train.seed))?;
        let run = train_once(&train_cfg, &split, None, |record, _| sink.emit(&epoch_line(record)))?;
        drop(sink);
        let best = run.fit.best_epoch.map_or_else(|| "none".to_string(), |e| e.to_string());
        let _ = writeln!(
            table,
            "{n}\t{}\t{}\t{}\t{}\t{}\t{best}\t{}\t{}",
            weights.lambda, weights.alpha, weights.beta, weights.gamma, weights.tau, run.test.hr, run.test.ndcg
        );
        emit(
            out,
            &json!({
                "command": "sweep",
                "run": n,
                "lambda": weights.lambda,
                "alpha": weights.alpha,
                "beta": weights.beta,
                "gamma": weights.gamma,
                "tau": weights.tau,
                "best_epoch": run.fit.best_epoch,
                "hr10": run.test.hr,
                "ndcg10": run.test.ndcg,
            }),
        )?;
    }
    write_atomic(&cfg.out.join("sweep.tsv"), table.as_bytes())
}
