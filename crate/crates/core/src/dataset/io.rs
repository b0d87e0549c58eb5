//! TSV ingestion and split materialization.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Interaction, InteractionLog, SplitBundle, SplitMode};
use crate::atomic::write_atomic;
use crate::error::{Error, Result};

const SPLIT_VERSION: u32 = 1;

/// Ordered behavior labels; the last entry is the target behavior.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub behaviors: Vec<String>,
}

impl Schema {
    pub fn new<S: Into<String>>(behaviors: impl IntoIterator<Item = S>) -> Result<Self> {
        let behaviors: Vec<String> = behaviors.into_iter().map(Into::into).collect();
        if behaviors.is_empty() {
            return Err(Error::Schema("behavior list is empty".into()));
        }
        for (n, b) in behaviors.iter().enumerate() {
            if behaviors[..n].contains(b) {
                return Err(Error::Schema(format!("duplicate behavior `{b}`")));
            }
        }
        Ok(Self { behaviors })
    }

    pub fn target(&self) -> usize {
        self.behaviors.len() - 1
    }

    pub fn behavior_index(&self, label: &str) -> Option<usize> {
        self.behaviors.iter().position(|b| b == label)
    }
}

/// Dense index to original identifier, for users and items.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    pub users: Vec<String>,
    pub items: Vec<String>,
}

impl IdMap {
    /// Ids that are their own decimal index.
    pub fn identity(users: usize, items: usize) -> Self {
        Self {
            users: (0..users).map(|u| u.to_string()).collect(),
            items: (0..items).map(|i| i.to_string()).collect(),
        }
    }
}

struct Interner {
    index: HashMap<String, usize>,
    names: Vec<String>,
}

impl Interner {
    fn new() -> Self {
        Self {
            index: HashMap::new(),
            names: Vec::new(),
        }
    }

    fn intern(&mut self, key: &str) -> usize {
        if let Some(&id) = self.index.get(key) {
            return id;
        }
        let id = self.names.len();
        self.index.insert(key.to_owned(), id);
        self.names.push(key.to_owned());
        id
    }
}

/// Reads `user <tab> item <tab> behavior [<tab> order]` rows.
///
/// Ids are re-indexed densely in order of first appearance. When the order
/// column is present, records are sorted by it (file position breaks ties)
/// before order indices are assigned. Blank lines and `#` lines are skipped.
pub fn load_interactions(path: &Path, schema: &Schema) -> Result<(InteractionLog, IdMap)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&text, schema)
}

pub(crate) fn parse_interactions(text: &str, schema: &Schema) -> Result<(InteractionLog, IdMap)> {
    let mut users = Interner::new();
    let mut items = Interner::new();
    let mut rows: Vec<(u64, Interaction)> = Vec::new();
    let mut has_order: Option<bool> = None;

    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 or 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let with_order = fields.len() == 4;
        match has_order {
            None => has_order = Some(with_order),
            Some(prev) if prev != with_order => {
                return Err(Error::Parse {
                    line: line_no,
                    message: "order column present on some rows but not others".into(),
                })
            }
            _ => {}
        }
        if fields[..3].iter().any(|f| f.trim().is_empty()) {
            return Err(Error::Parse {
                line: line_no,
                message: "empty field".into(),
            });
        }
        let behavior = schema.behavior_index(fields[2].trim()).ok_or_else(|| {
            Error::Schema(format!("line {line_no}: unknown behavior `{}`", fields[2].trim()))
        })?;
        let order_key = if with_order {
            fields[3].trim().parse::<u64>().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad order value `{}`: {e}", fields[3]),
            })?
        } else {
            0
        };
        let user = users.intern(fields[0].trim());
        let item = items.intern(fields[1].trim());
        rows.push((
            order_key,
            Interaction {
                user,
                item,
                behavior,
                order: 0,
            },
        ));
    }

    if has_order == Some(true) {
        rows.sort_by_key(|(k, _)| *k);
    }
    let records = rows
        .into_iter()
        .enumerate()
        .map(|(n, (_, mut r))| {
            r.order = n as u64;
            r
        })
        .collect();
    let log = InteractionLog {
        records,
        num_users: users.names.len(),
        num_items: items.names.len(),
        num_behaviors: if users.names.is_empty() { 0 } else { schema.behaviors.len() },
    };
    Ok((
        log,
        IdMap {
            users: users.names,
            items: items.names,
        },
    ))
}

fn header(fields: &[(&str, String)]) -> String {
    let mut s = String::from("#");
    for (k, v) in fields {
        let _ = write!(s, " {k}={v}");
    }
    s.push('\n');
    s
}

fn parse_header(line: &str, path: &Path) -> Result<HashMap<String, String>> {
    let body = line.strip_prefix('#').ok_or_else(|| Error::Corrupt {
        path: path.to_owned(),
        message: "missing header line".into(),
    })?;
    Ok(body
        .split_whitespace()
        .filter_map(|tok| tok.split_once('='))
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .collect())
}

fn header_field<T: std::str::FromStr>(h: &HashMap<String, String>, key: &str, path: &Path) -> Result<T> {
    h.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Corrupt {
            path: path.to_owned(),
            message: format!("header field `{key}` missing or malformed"),
        })
}

/// Writes a log in the ingestion format, original ids and behavior labels,
/// with the order column. `meta` goes into a leading `#` line.
pub fn write_interactions(path: &Path, log: &InteractionLog, ids: &IdMap, schema: &Schema, meta: &[(&str, String)]) -> Result<()> {
    if schema.behaviors.len() != log.num_behaviors {
        return Err(Error::Schema(format!(
            "schema has {} behaviors, log has {}",
            schema.behaviors.len(),
            log.num_behaviors
        )));
    }
    if ids.users.len() < log.num_users || ids.items.len() < log.num_items {
        return Err(Error::invalid("id map is smaller than the log"));
    }
    let mut out = header(meta);
    for r in &log.records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            ids.users[r.user], ids.items[r.item], schema.behaviors[r.behavior], r.order
        );
    }
    write_atomic(path, out.as_bytes())
}

/// Writes `train.tsv`, `test.tsv`, `users.map` and `items.map` into `dir`.
pub fn write_split(dir: &Path, split: &SplitBundle, ids: &IdMap, schema: &Schema) -> Result<()> {
    let train = &split.train;
    let common = vec![
        ("version", SPLIT_VERSION.to_string()),
        ("users", train.num_users.to_string()),
        ("items", train.num_items.to_string()),
        ("behaviors", schema.behaviors.join(",")),
        ("target", split.target_behavior.to_string()),
        ("mode", split.mode.as_str().to_string()),
    ];

    let mut fields = common.clone();
    fields.push(("records", train.records.len().to_string()));
    let mut out = header(&fields);
    for r in &train.records {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", r.user, r.item, schema.behaviors[r.behavior], r.order);
    }
    write_atomic(&dir.join("train.tsv"), out.as_bytes())?;

    let mut fields = common;
    fields.push(("pairs", split.test.len().to_string()));
    let mut out = header(&fields);
    for &(u, i) in &split.test {
        let _ = writeln!(out, "{u}\t{i}");
    }
    write_atomic(&dir.join("test.tsv"), out.as_bytes())?;

    write_atomic(&dir.join("users.map"), (ids.users.join("\n") + "\n").as_bytes())?;
    write_atomic(&dir.join("items.map"), (ids.items.join("\n") + "\n").as_bytes())?;
    Ok(())
}

/// Reads a split written by [`write_split`]. Id maps are optional.
pub fn read_split(dir: &Path) -> Result<(SplitBundle, IdMap, Schema)> {
    let train_path = dir.join("train.tsv");
    let text = fs::read_to_string(&train_path).map_err(|e| Error::io(&train_path, e))?;
    let mut lines = text.lines();
    let h = parse_header(lines.next().unwrap_or(""), &train_path)?;
    let version: u32 = header_field(&h, "version", &train_path)?;
    if version != SPLIT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: SPLIT_VERSION,
        });
    }
    let num_users: usize = header_field(&h, "users", &train_path)?;
    let num_items: usize = header_field(&h, "items", &train_path)?;
    let behaviors: String = header_field(&h, "behaviors", &train_path)?;
    let schema = Schema::new(behaviors.split(','))?;
    let target: usize = header_field(&h, "target", &train_path)?;
    let mode_s: String = header_field(&h, "mode", &train_path)?;
    let mode = SplitMode::parse(&mode_s).ok_or_else(|| Error::Corrupt {
        path: train_path.clone(),
        message: format!("unknown split mode `{mode_s}`"),
    })?;
    let expected: usize = header_field(&h, "records", &train_path)?;

    let mut records = Vec::with_capacity(expected);
    for (n, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse { line: n + 2, message };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", f.len())));
        }
        let user = f[0].parse().map_err(|_| bad(format!("bad user `{}`", f[0])))?;
        let item = f[1].parse().map_err(|_| bad(format!("bad item `{}`", f[1])))?;
        let behavior = schema
            .behavior_index(f[2])
            .ok_or_else(|| Error::Schema(format!("unknown behavior `{}`", f[2])))?;
        let order = f[3].parse().map_err(|_| bad(format!("bad order `{}`", f[3])))?;
        records.push(Interaction { user, item, behavior, order });
    }
    if records.len() != expected {
        return Err(Error::Corrupt {
            path: train_path,
            message: format!("header declares {expected} records, found {}", records.len()),
        });
    }
    let train = InteractionLog {
        records,
        num_users,
        num_items,
        num_behaviors: schema.behaviors.len(),
    };
    train.validate()?;

    let test_path = dir.join("test.tsv");
    let text = fs::read_to_string(&test_path).map_err(|e| Error::io(&test_path, e))?;
    let mut lines = text.lines();
    let h = parse_header(lines.next().unwrap_or(""), &test_path)?;
    let expected: usize = header_field(&h, "pairs", &test_path)?;
    let mut test = Vec::with_capacity(expected);
    for (n, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parsed = line
            .split_once('\t')
            .and_then(|(u, i)| Some((u.parse::<usize>().ok()?, i.parse::<usize>().ok()?)));
        match parsed {
            Some((u, i)) if u < num_users && i < num_items => test.push((u, i)),
            _ => {
                return Err(Error::Parse {
                    line: n + 2,
                    message: format!("bad test pair `{line}`"),
                })
            }
        }
    }
    if test.len() != expected {
        return Err(Error::Corrupt {
            path: test_path,
            message: format!("header declares {expected} pairs, found {}", test.len()),
        });
    }

    let read_map = |name: &str| -> Result<Vec<String>> {
        let p = dir.join(name);
        match fs::read_to_string(&p) {
            Ok(t) => Ok(t.lines().map(str::to_owned).collect()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(Error::io(p, e)),
        }
    };
    let ids = IdMap {
        users: read_map("users.map")?,
        items: read_map("items.map")?,
    };

    Ok((
        SplitBundle {
            train,
            test,
            target_behavior: target,
            mode,
        },
        ids,
        schema,
    ))
}
