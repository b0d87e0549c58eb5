//! JSON-lines metrics, echoed to a writer and mirrored to a file.

use std::io::Write;
use std::path::PathBuf;

use serde_json::{json, Value};

use crate::atomic::write_atomic;
use crate::error::{Error, Result};
use crate::trainer::EpochRecord;

pub const METRICS_VERSION: u32 = 1;

pub struct MetricsSink<'a> {
    path: Option<PathBuf>,
    lines: Vec<String>,
    out: &'a mut dyn Write,
}

impl<'a> MetricsSink<'a> {
    pub fn new(path: Option<PathBuf>, out: &'a mut dyn Write) -> Self {
        Self { path, lines: Vec::new(), out }
    }

    /// Prints one line and rewrites the mirror file with everything so far.
    pub fn emit(&mut self, value: &Value) -> Result<()> {
        let line = value.to_string();
        writeln!(self.out, "{line}").map_err(|e| Error::io("<stdout>", e))?;
        self.lines.push(line);
        if let Some(path) = &self.path {
            write_atomic(path, (self.lines.join("\n") + "\n").as_bytes())?;
        }
        Ok(())
    }
}

pub fn header(command: &str, config_hash: &str, seed: u64) -> Value {
    json!({
        "format_version": METRICS_VERSION,
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
    })
}

/// Fixed keys; `hr10`/`ndcg10` are null for epochs without evaluation.
pub fn epoch_line(r: &EpochRecord) -> Value {
    json!({
        "epoch": r.epoch,
        "hr10": r.eval.map(|e| e.hr),
        "ndcg10": r.eval.map(|e| e.ndcg),
        "rec": r.loss.rec,
        "irm": r.loss.irm,
        "ort": r.loss.ort,
        "con": r.loss.con,
        "kl": r.loss.kl,
        "total": r.loss.total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::EvalResult;
    use crate::losses::LossReport;

    #[test]
    fn epoch_lines_have_fixed_keys() {
        let r = EpochRecord {
            epoch: 3,
            loss: LossReport { rec: 0.5, irm: 0.1, ort: 0.0, con: 1.0, kl: 0.2, total: 0.9 },
            eval: Some(EvalResult { hr: 0.25, ndcg: 0.125, k: 10, n_users: 4 }),
        };
        let v = epoch_line(&r);
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["con", "epoch", "hr10", "irm", "kl", "ndcg10", "ort", "rec", "total"]);
        let line = v.to_string();
        assert!(!line.contains('\n'));
        let back: Value = serde_json::from_str(&line).unwrap();
        assert_eq!(back["hr10"], 0.25);
    }

    #[test]
    fn sink_mirrors_to_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut buf = Vec::new();
        {
            let mut sink = MetricsSink::new(Some(path.clone()), &mut buf);
            sink.emit(&header("train", "h", 1)).unwrap();
            sink.emit(&json!({"epoch": 0})).unwrap();
        }
        assert_eq!(std::fs::read(&path).unwrap(), buf);
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
    }
}
