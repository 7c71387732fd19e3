//! Model checkpoints: a text manifest (`P.manifest`) describing the
//! configuration and parameter order, and a blob (`P.bin`) of little-endian
//! 32-bit floats in manifest order.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ctxnmt_core::model::param_layout;
use ctxnmt_core::params::ParamSet;
use ctxnmt_core::{Model, ModelConfig, Tensor, Variant};

use crate::error::{io_err, Error, Result};
use crate::formats::{read_text, side_path, write_text};

const MAGIC: &str = "ctxnmt-checkpoint 1";

/// Strips a trailing `.manifest` or `.bin` so either file names the pair.
pub fn checkpoint_prefix(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("manifest") | Some("bin") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

pub fn manifest_path(prefix: &Path) -> PathBuf {
    side_path(prefix, "manifest")
}

pub fn blob_path(prefix: &Path) -> PathBuf {
    side_path(prefix, "bin")
}

pub fn format_manifest(model: &Model<f32>) -> String {
    let c = &model.config;
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "variant {}", c.variant);
    let _ = writeln!(out, "emb {}", c.emb);
    let _ = writeln!(out, "hidden {}", c.hidden);
    let _ = writeln!(out, "layers {}", c.layers);
    let _ = writeln!(out, "dropout {}", c.dropout);
    let _ = writeln!(out, "src_vocab {}", c.src_vocab);
    let _ = writeln!(out, "trg_vocab {}", c.trg_vocab);
    for (name, t) in model.params.iter() {
        let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "param {name} {}", dims.join("x"));
    }
    out
}

pub fn encode_blob(model: &Model<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(model.param_count() * 4);
    for t in model.params.tensors() {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(prefix: &Path, model: &Model<f32>) -> Result<()> {
    write_text(&manifest_path(prefix), &format_manifest(model))?;
    let blob = blob_path(prefix);
    fs::write(&blob, encode_blob(model)).map_err(io_err(&blob))
}

fn bad(path: &Path, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.into(),
        msg: msg.into(),
    }
}

/// Configuration and parameter list declared by a manifest.
pub fn parse_manifest(text: &str, path: &Path) -> Result<(ModelConfig, Vec<(String, Vec<usize>)>)> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad(path, "not a checkpoint manifest"));
    }
    let mut fields = std::collections::BTreeMap::new();
    let mut params = Vec::new();
    for line in lines {
        let mut it = line.split_whitespace();
        match (it.next(), it.next(), it.next()) {
            (Some("param"), Some(name), Some(dims)) => {
                let shape = dims
                    .split('x')
                    .map(|d| d.parse::<usize>().map_err(|_| bad(path, format!("bad shape {dims}"))))
                    .collect::<Result<Vec<_>>>()?;
                params.push((name.to_string(), shape));
            }
            (Some(k), Some(v), None) => {
                fields.insert(k.to_string(), v.to_string());
            }
            (None, _, _) => {}
            _ => return Err(bad(path, format!("unreadable line `{line}`"))),
        }
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| bad(path, format!("missing {k}")));
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(path, format!("bad {k}"))) };
    let config = ModelConfig {
        variant: Variant::parse(get("variant")?)?,
        emb: num("emb")?,
        hidden: num("hidden")?,
        layers: num("layers")?,
        dropout: get("dropout")?.parse().map_err(|_| bad(path, "bad dropout"))?,
        src_vocab: num("src_vocab")?,
        trg_vocab: num("trg_vocab")?,
    };
    Ok((config, params))
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    let prefix = checkpoint_prefix(path);
    let mpath = manifest_path(&prefix);
    let (config, declared) = parse_manifest(&read_text(&mpath)?, &mpath)?;
    config.validate()?;
    if declared != param_layout(&config) {
        return Err(bad(&mpath, format!("parameter list does not match a {} model", config.variant)));
    }
    let bpath = blob_path(&prefix);
    let blob = fs::read(&bpath).map_err(io_err(&bpath))?;
    let total: usize = declared.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if blob.len() != total * 4 {
        return Err(bad(&bpath, format!("{} bytes for {total} parameters", blob.len())));
    }
    let mut floats = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let mut params = ParamSet::new();
    for (name, shape) in declared {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = floats.by_ref().take(n).collect();
        params.push(&name, Tensor::new(&shape, data)?);
    }
    Ok(Model::from_params(config, params)?)
}
