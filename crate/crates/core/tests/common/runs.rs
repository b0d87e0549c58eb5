//! In-process harness runs over a small generated dataset.

use std::path::Path;

use mbrec::harness::{run, Command, RunConfig};

/// Generates a dataset under `root/synth` and writes its split to
/// `root/split`. The returned config points at the split.
pub fn prepared(root: &Path, extra: &str) -> RunConfig {
    let text = format!(
        "behaviors = view,cart,buy\nsplit_dir = {}\ndim = 16\nbatch_size = 32\nepochs = 3\npatience = none\nlr = 0.01\ninit_std = 0.1\nseed = 5\nsynth.users = 80\nsynth.items = 40\nsynth.density = 0.12,0.08,0.08\n{extra}",
        root.join("split").display()
    );
    let mut cfg = RunConfig::parse(&text).unwrap();
    cfg.out = root.join("synth");
    exec(Command::Synth, &cfg);
    let mut ingest = cfg.clone();
    ingest.data = Some(root.join("synth/interactions.tsv"));
    ingest.out = root.join("split");
    exec(Command::Ingest, &ingest);
    cfg
}

/// Runs `command` with the given output directory and returns stdout.
pub fn exec_in(command: Command, cfg: &RunConfig, out: &Path) -> String {
    let cfg = RunConfig { out: out.to_path_buf(), ..cfg.clone() };
    exec(command, &cfg)
}

pub fn exec(command: Command, cfg: &RunConfig) -> String {
    let mut buf = Vec::new();
    run(command, cfg, false, &mut buf).unwrap_or_else(|e| panic!("{} failed: {e}", command.as_str()));
    String::from_utf8(buf).unwrap()
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
