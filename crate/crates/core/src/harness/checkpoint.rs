//! Versioned binary checkpoints.
//!
//! Layout (little-endian): magic `MBRECCKP`, format version `u32`, config
//! hash string, epoch `u64`, seed `u64`, Adam flag `u8` and step `u64`,
//! section count `u32`, then named `f64` sections. Adam moments are stored
//! as `adam.m.*` / `adam.v.*` and may be absent.

use std::path::Path;

use crate::atomic::write_atomic;
use crate::binio::{Reader, Section, Writer};
use crate::error::{Error, Result};
use crate::tensor::EmbeddingTable;
use crate::trainer::{AdamState, ModelState, Params};
use crate::vae::VaeParams;

const MAGIC: &[u8; 8] = b"MBRECCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub version: u32,
    pub config_hash: String,
    pub epoch: usize,
    pub seed: u64,
}

fn param_sections(prefix: &str, p: &Params) -> Vec<Section> {
    let mut out = Vec::new();
    out.push(Section::new(format!("{prefix}users"), vec![p.users.rows(), p.users.dim()], p.users.as_slice().to_vec()));
    out.push(Section::new(format!("{prefix}items"), vec![p.items.rows(), p.items.dim()], p.items.as_slice().to_vec()));
    for (name, layer) in p.vae.layers() {
        out.push(Section::new(
            format!("{prefix}vae.{name}.weight"),
            vec![layer.out_dim, layer.in_dim],
            layer.weight.clone(),
        ));
        out.push(Section::new(format!("{prefix}vae.{name}.bias"), vec![layer.out_dim], layer.bias.clone()));
    }
    out
}

pub fn encode_checkpoint(state: &ModelState, config_hash: &str) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.str(config_hash);
    w.u64(state.epoch as u64);
    w.u64(state.seed);
    let mut sections = param_sections("", &state.params);
    match &state.adam {
        Some(adam) => {
            w.bytes(&[1]);
            w.u64(adam.step);
            sections.extend(param_sections("adam.m.", &adam.m));
            sections.extend(param_sections("adam.v.", &adam.v));
        }
        None => {
            w.bytes(&[0]);
            w.u64(0);
        }
    }
    w.u32(sections.len() as u32);
    for s in &sections {
        w.section(s);
    }
    w.finish()
}

pub fn save_checkpoint(path: &Path, state: &ModelState, config_hash: &str) -> Result<()> {
    write_atomic(path, &encode_checkpoint(state, config_hash))
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<(ModelState, CheckpointMeta)> {
    let mut r = Reader::new(bytes, path);
    if r.bytes(MAGIC.len()).map_err(|_| r.corrupt("file too short for a checkpoint header"))? != MAGIC {
        return Err(r.corrupt("bad magic, not a checkpoint"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let config_hash = r.str()?;
    let epoch = r.u64()? as usize;
    let seed = r.u64()?;
    let has_adam = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(r.corrupt(format!("bad optimizer flag {other}"))),
    };
    let step = r.u64()?;
    let n = r.u32()? as usize;
    let sections = (0..n).map(|_| r.section()).collect::<Result<Vec<_>>>()?;
    r.expect_end()?;

    let params = rebuild("", &sections, &r)?;
    let adam = if has_adam {
        let m = rebuild("adam.m.", &sections, &r)?;
        let v = rebuild("adam.v.", &sections, &r)?;
        if !params.same_shape(&m) || !params.same_shape(&v) {
            return Err(r.corrupt("optimizer moments do not match parameter shapes"));
        }
        Some(AdamState { m, v, step })
    } else {
        None
    };
    let meta = CheckpointMeta { version, config_hash, epoch, seed };
    Ok((ModelState { params, adam, epoch, seed }, meta))
}

fn rebuild(prefix: &str, sections: &[Section], r: &Reader<'_>) -> Result<Params> {
    let find = |name: &str| {
        let full = format!("{prefix}{name}");
        sections.iter().find(|s| s.name == full).ok_or_else(|| r.corrupt(format!("missing section `{full}`")))
    };
    let table = |name: &str| -> Result<EmbeddingTable> {
        let s = find(name)?;
        match s.shape[..] {
            [rows, dim] => EmbeddingTable::from_vec(rows, dim, s.data.clone()),
            _ => Err(r.corrupt(format!("section `{prefix}{name}` is not a matrix"))),
        }
    };
    let users = table("users")?;
    let items = table("items")?;
    if users.dim() != items.dim() {
        return Err(r.corrupt("user and item widths differ"));
    }
    let vae = VaeParams::zeros(users.dim()).map_err(|e| r.corrupt(e.to_string()))?;
    let mut params = Params { users, items, vae };
    let skeleton = params.vae.clone();
    for (name, layer) in params.vae.layers_mut() {
        let w = find(&format!("vae.{name}.weight"))?;
        let b = find(&format!("vae.{name}.bias"))?;
        let (_, expect) = skeleton.layers().into_iter().find(|(n, _)| *n == name).expect("same layer names");
        if w.shape != [expect.out_dim, expect.in_dim] || b.shape != [expect.out_dim] {
            return Err(r.corrupt(format!("section `{prefix}vae.{name}` has the wrong shape")));
        }
        layer.weight.copy_from_slice(&w.data);
        layer.bias.copy_from_slice(&b.data);
    }
    Ok(params)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelState, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Refuses a checkpoint written under a different config unless forced.
pub fn check_hash(meta: &CheckpointMeta, expected: &str, force: bool) -> Result<()> {
    if meta.config_hash != expected && !force {
        return Err(Error::ConfigHash { found: meta.config_hash.clone(), expected: expected.to_string() });
    }
    Ok(())
}
