//! Checkpoint files: a magic tag, a JSON manifest, then every named parameter
//! and batch-norm buffer in the tensor serialization format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::layers::assign_params;
use crate::models::{build_model, Model, ModelConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"DDLCKPT1";

/// Everything needed to rebuild the model and trace where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub seed: u64,
    pub epoch: usize,
    pub dataset_sha256: Option<String>,
    pub val_combined: Option<f64>,
}

pub fn write_checkpoint<T: Scalar, W: Write>(w: &mut W, model: &Model<T>, meta: &CheckpointMeta) -> std::io::Result<()> {
    let json = serde_json::to_vec(meta).map_err(std::io::Error::other)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let params = model.params();
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for (name, value) in params.names().iter().zip(params.values()) {
        write_name(w, name)?;
        value.write_to(w)?;
    }
    let norms = model.norms();
    w.write_all(&(norms.states().len() as u64).to_le_bytes())?;
    for (name, state) in norms.names().iter().zip(norms.states()) {
        write_name(w, name)?;
        state.running_mean.write_to(w)?;
        state.running_var.write_to(w)?;
    }
    Ok(())
}

/// Reads a checkpoint, rebuilds the architecture from its manifest and loads
/// the stored tensors, checking every name and shape.
pub fn read_checkpoint<T: Scalar, R: Read>(r: &mut R) -> Result<(CheckpointMeta, Model<T>)> {
    let mut magic = [0u8; 8];
    read_exact(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let len = read_u64(r)? as usize;
    let mut json = vec![0u8; len];
    read_exact(r, &mut json)?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&json).map_err(|e| Error::Format(format!("checkpoint manifest: {}", e)))?;
    let mut model: Model<T> = build_model(&meta.config, meta.seed)?;

    let count = read_u64(r)? as usize;
    if count != model.params().len() {
        return Err(Error::Format(format!(
            "checkpoint has {} parameters, architecture needs {}",
            count,
            model.params().len()
        )));
    }
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        named.push((read_name(r)?, Tensor::read_from(r)?));
    }
    assign_params(model.params_mut(), named).map_err(|e| Error::Format(e.to_string()))?;

    let count = read_u64(r)? as usize;
    if count != model.norms().states().len() {
        return Err(Error::Format(format!(
            "checkpoint has {} norm buffers, architecture needs {}",
            count,
            model.norms().states().len()
        )));
    }
    for k in 0..count {
        let name = read_name(r)?;
        let mean = Tensor::read_from(r)?;
        let var = Tensor::read_from(r)?;
        let expected = &model.norms().names()[k];
        let channels = model.norms().states()[k].channels();
        if &name != expected || mean.shape() != [channels] || var.shape() != [channels] {
            return Err(Error::Format(format!("norm buffer {} does not match {}", name, expected)));
        }
        let state = &mut model.norms_mut().states_mut()[k];
        state.running_mean = mean;
        state.running_var = var;
    }
    Ok((meta, model))
}

pub fn save_checkpoint<T: Scalar>(path: &Path, model: &Model<T>, meta: &CheckpointMeta) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, model, meta)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(CheckpointMeta, Model<T>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file))
}

fn write_name<W: Write>(w: &mut W, name: &str) -> std::io::Result<()> {
    w.write_all(&(name.len() as u16).to_le_bytes())?;
    w.write_all(name.as_bytes())
}

fn read_name<R: Read>(r: &mut R) -> Result<String> {
    let mut len = [0u8; 2];
    read_exact(r, &mut len)?;
    let mut raw = vec![0u8; u16::from_le_bytes(len) as usize];
    read_exact(r, &mut raw)?;
    String::from_utf8(raw).map_err(|_| Error::Format("parameter name is not UTF-8".into()))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {}", e)))
}
