//! Checkpoint files.
//!
//! Layout: the 8-byte magic `CDNSCKPT`, a little-endian `u64` header length,
//! a JSON header, then raw little-endian `f32` tensor data in manifest order.
//! Byte offsets in the manifest are relative to the start of the data block.
//! Optimizer moments, when present, follow the parameters with kinds
//! `adam_m` and `adam_v`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParamLayout, Parameters};
use crate::ndmath::Matrix;
use crate::optim::AdamState;

pub const MAGIC: &[u8; 8] = b"CDNSCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Param,
    AdamM,
    AdamV,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub role: TensorRole,
    pub shape: [usize; 2],
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model: ModelConfig,
    pub num_entities: usize,
    pub num_relations: usize,
    pub epoch: usize,
    pub adam_step: Option<u64>,
    /// Free-form run metadata (resolved run config, seed, ...).
    pub metadata: serde_json::Value,
    pub tensors: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Parameters,
    pub adam: Option<AdamState>,
}

fn build_header(
    params: &Parameters,
    adam: Option<&AdamState>,
    epoch: usize,
    metadata: serde_json::Value,
) -> CheckpointHeader {
    let layout = params.layout();
    let mut tensors = Vec::new();
    let mut offset = 0u64;
    let roles: &[TensorRole] = if adam.is_some() {
        &[TensorRole::Param, TensorRole::AdamM, TensorRole::AdamV]
    } else {
        &[TensorRole::Param]
    };
    for &role in roles {
        for spec in layout.specs() {
            tensors.push(ManifestEntry {
                name: spec.name.clone(),
                role,
                shape: [spec.rows, spec.cols],
                offset,
            });
            offset += (spec.len() * 4) as u64;
        }
    }
    CheckpointHeader {
        format_version: FORMAT_VERSION,
        model: layout.config().clone(),
        num_entities: layout.num_entities(),
        num_relations: layout.num_relations(),
        epoch,
        adam_step: adam.map(|a| a.step),
        metadata,
        tensors,
    }
}

fn write_f32s<W: Write>(out: &mut W, values: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn write_checkpoint<W: Write>(
    out: &mut W,
    params: &Parameters,
    adam: Option<&AdamState>,
    epoch: usize,
    metadata: serde_json::Value,
) -> Result<()> {
    if let Some(a) = adam {
        if !a.matches(params) {
            return Err(Error::Checkpoint(
                "optimizer state does not match parameters".into(),
            ));
        }
    }
    let header = build_header(params, adam, epoch, metadata);
    let json = serde_json::to_vec(&header)?;
    let io = |e| Error::Checkpoint(format!("write failed: {e}"));
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&(json.len() as u64).to_le_bytes())
        .map_err(io)?;
    out.write_all(&json).map_err(io)?;
    for t in params.tensors() {
        write_f32s(out, t.data()).map_err(io)?;
    }
    if let Some(a) = adam {
        for m in &a.m {
            write_f32s(out, m).map_err(io)?;
        }
        for v in &a.v {
            write_f32s(out, v).map_err(io)?;
        }
    }
    Ok(())
}

pub fn save(
    path: impl AsRef<Path>,
    params: &Parameters,
    adam: Option<&AdamState>,
    epoch: usize,
    metadata: serde_json::Value,
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params, adam, epoch, metadata)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<Checkpoint> {
    let io = |e| Error::Checkpoint(format!("read failed: {e}"));
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len).map_err(io)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json).map_err(io)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let mut data = Vec::new();
    input.read_to_end(&mut data).map_err(io)?;

    let layout = ParamLayout::new(&header.model, header.num_entities, header.num_relations)?;
    let n = layout.len();
    let expected_entries = if header.adam_step.is_some() { 3 * n } else { n };
    if header.tensors.len() != expected_entries {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, layout needs {expected_entries}",
            header.tensors.len()
        )));
    }
    let read_entry = |entry: &ManifestEntry,
                      expect_name: &str,
                      rows: usize,
                      cols: usize|
     -> Result<Vec<f64>> {
        if entry.name != expect_name || entry.shape != [rows, cols] {
            return Err(Error::Checkpoint(format!(
                "manifest entry {} {:?} does not match layout tensor {expect_name} [{rows}, {cols}]",
                entry.name, entry.shape
            )));
        }
        let start = entry.offset as usize;
        let end = start + rows * cols * 4;
        let bytes = data
            .get(start..end)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {} truncated", entry.name)))?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    };

    let mut tensors = Vec::with_capacity(n);
    let mut m = Vec::new();
    let mut v = Vec::new();
    for (i, entry) in header.tensors.iter().enumerate() {
        let spec = &layout.specs()[i % n];
        let values = read_entry(entry, &spec.name, spec.rows, spec.cols)?;
        let role = match i / n {
            0 => TensorRole::Param,
            1 => TensorRole::AdamM,
            _ => TensorRole::AdamV,
        };
        if entry.role != role {
            return Err(Error::Checkpoint(format!(
                "tensor {} has unexpected role",
                entry.name
            )));
        }
        match role {
            TensorRole::Param => tensors.push(Matrix::from_vec(spec.rows, spec.cols, values)?),
            TensorRole::AdamM => m.push(values),
            TensorRole::AdamV => v.push(values),
        }
    }
    let params = Parameters::from_tensors(layout, tensors)?;
    let adam = header.adam_step.map(|step| AdamState { step, m, v });
    Ok(Checkpoint {
        header,
        params,
        adam,
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut bytes.as_slice())
}

impl Checkpoint {
    /// Confirm the checkpoint was trained against a vocabulary of this size.
    pub fn check_vocab(&self, num_entities: usize, num_relations: usize) -> Result<()> {
        let h = &self.header;
        if h.num_entities != num_entities || h.num_relations != num_relations {
            return Err(Error::shape(
                "checkpoint vs dataset",
                format!("{num_entities} entities, {num_relations} relations"),
                format!("{} entities, {} relations", h.num_entities, h.num_relations),
            ));
        }
        Ok(())
    }
}
