use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use mbrec::harness::{run, Command, RunConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Ingest,
    Train,
    Eval,
    Recommend,
    Synth,
    Gradcheck,
    Sweep,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Ingest => Command::Ingest,
            Cmd::Train => Command::Train,
            Cmd::Eval => Command::Eval,
            Cmd::Recommend => Command::Recommend,
            Cmd::Synth => Command::Synth,
            Cmd::Gradcheck => Command::Gradcheck,
            Cmd::Sweep => Command::Sweep,
        }
    }
}

/// Multi-behavior recommender: ingest, train, evaluate, recommend.
///
/// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
/// failure (non-finite loss or gradient, failed gradient check).
#[derive(Debug, Parser)]
#[command(name = "mbrec", version)]
struct Cli {
    command: Cmd,
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint to resume from (train) or to load (eval, recommend).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Cutoff for eval and list length for recommend.
    #[arg(long)]
    k: Option<usize>,
    /// Accept a checkpoint written under a different config.
    #[arg(long)]
    force: bool,
    /// Override a config key, e.g. `--set lambda=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn build_config(cli: &Cli) -> mbrec::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| mbrec::Error::Config { field: kv.clone(), message: "expected KEY=VALUE".into() })?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(ck) = &cli.checkpoint {
        cfg.checkpoint = Some(ck.clone());
    }
    if let Some(k) = cli.k {
        cfg.top_k = k;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build_config(&cli).and_then(|cfg| run(cli.command.into(), &cfg, cli.force, &mut std::io::stdout().lock()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
