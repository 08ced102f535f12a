//! Checkpoint directories: `header.json` plus little-endian f32 `params.bin`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GraderModel, ModelConfig, Vocabulary};
use crate::scalar::Scalar;
use crate::tensor::{AdamW, AdamWConfig, Moments, ParamGroup, ParamStore, Tensor};

pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_FILE: &str = "header.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub regime: String,
    pub stage: String,
    pub aspect: String,
    pub modality: String,
    pub epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    /// Offset into `params.bin`, in f32 elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MomentEntry {
    pub name: String,
    pub m_offset: usize,
    pub v_offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHeader {
    pub step: u64,
    pub config: AdamWConfig,
    pub moments: Vec<MomentEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Epochs completed; the next epoch's shuffle derives from `(seed, epoch)`.
    pub epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub config_hash: String,
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub provenance: Provenance,
    pub lora_merged: bool,
    pub arrays: Vec<ArrayEntry>,
    pub optimizer: Option<OptimizerHeader>,
    pub rng: RngState,
}

/// A model snapshot with optional optimizer state.
#[derive(Clone, Debug)]
pub struct Checkpoint<T: Scalar> {
    pub model: GraderModel<T>,
    pub optimizer: Option<AdamW<T>>,
    pub provenance: Provenance,
    pub rng: RngState,
}

fn push_f32<T: Scalar>(buf: &mut Vec<u8>, data: &[T]) {
    for v in data {
        buf.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
    }
}

/// Serializes to `(header.json bytes, params.bin bytes)`.
pub fn encode_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<(Vec<u8>, Vec<u8>)> {
    let model = &ckpt.model;
    let mut bin = Vec::new();
    let mut offset = 0;
    let mut arrays = Vec::new();
    for (_, p) in model.params.iter() {
        arrays.push(ArrayEntry {
            name: p.name.clone(),
            group: p.group,
            shape: p.tensor.shape().to_vec(),
            offset,
        });
        push_f32(&mut bin, p.tensor.data());
        offset += p.tensor.numel();
    }
    let optimizer = ckpt.optimizer.as_ref().map(|opt| {
        let moments = opt
            .moments()
            .iter()
            .map(|(name, m)| {
                let len = m.m.numel();
                let entry = MomentEntry {
                    name: name.clone(),
                    m_offset: offset,
                    v_offset: offset + len,
                    len,
                };
                push_f32(&mut bin, m.m.data());
                push_f32(&mut bin, m.v.data());
                offset += 2 * len;
                entry
            })
            .collect();
        OptimizerHeader {
            step: opt.step_count(),
            config: opt.config,
            moments,
        }
    });
    let header = Header {
        format_version: FORMAT_VERSION,
        config_hash: model.config.hash(),
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        provenance: ckpt.provenance.clone(),
        lora_merged: model.lora_merged(),
        arrays,
        optimizer,
        rng: ckpt.rng,
    };
    let mut json = serde_json::to_vec_pretty(&header)?;
    json.push(b'\n');
    Ok((json, bin))
}

pub fn save_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let (json, bin) = encode_checkpoint(ckpt)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let h = dir.join(HEADER_FILE);
    fs::write(&h, json).map_err(|e| Error::io(&h, e))?;
    let p = dir.join(PARAMS_FILE);
    fs::write(&p, bin).map_err(|e| Error::io(&p, e))
}

pub fn read_header(dir: impl AsRef<Path>) -> Result<Header> {
    let h = dir.as_ref().join(HEADER_FILE);
    let text = fs::read(&h).map_err(|e| Error::io(&h, e))?;
    Ok(serde_json::from_slice(&text)?)
}

fn slice<T: Scalar>(floats: &[f32], offset: usize, len: usize) -> Result<Vec<T>> {
    floats
        .get(offset..offset + len)
        .map(|s| s.iter().map(|&v| T::of(f64::from(v))).collect())
        .ok_or_else(|| Error::format("params", format!("range {offset}..{} beyond file", offset + len)))
}

/// Loads a checkpoint, requiring its config to hash identically to `expected`
/// when one is given.
pub fn load_checkpoint<T: Scalar>(dir: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<Checkpoint<T>> {
    let dir = dir.as_ref();
    let header = read_header(dir)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::format(
            "format_version",
            format!(
                "checkpoint version {} but this build reads {FORMAT_VERSION}",
                header.format_version
            ),
        ));
    }
    if header.config.hash() != header.config_hash {
        return Err(Error::format(
            "config_hash",
            "header config does not match its recorded hash",
        ));
    }
    if let Some(cfg) = expected {
        if cfg.hash() != header.config_hash {
            return Err(Error::format(
                "config_hash",
                format!("checkpoint {} vs expected {}", header.config_hash, cfg.hash()),
            ));
        }
    }
    let p = dir.join(PARAMS_FILE);
    let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format("params", "length is not a multiple of 4"));
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let mut store = ParamStore::new();
    for a in &header.arrays {
        let n: usize = a.shape.iter().product();
        let t = Tensor::new(a.shape.clone(), slice(&floats, a.offset, n)?)?;
        store.add(a.name.clone(), a.group, t)?;
    }
    let model = GraderModel::from_parts(header.config.clone(), header.vocab.clone(), store, header.lora_merged)?;
    let optimizer = match &header.optimizer {
        Some(o) => {
            let mut moments = BTreeMap::new();
            for e in &o.moments {
                let shape = model
                    .params
                    .by_name(&e.name)
                    .map(|p| p.tensor.shape().to_vec())
                    .ok_or_else(|| Error::format("optimizer", format!("moments for unknown parameter '{}'", e.name)))?;
                moments.insert(
                    e.name.clone(),
                    Moments {
                        m: Tensor::new(shape.clone(), slice(&floats, e.m_offset, e.len)?)?,
                        v: Tensor::new(shape, slice(&floats, e.v_offset, e.len)?)?,
                    },
                );
            }
            Some(AdamW::from_parts(o.config, o.step, moments))
        }
        None => None,
    };
    Ok(Checkpoint {
        model,
        optimizer,
        provenance: header.provenance,
        rng: header.rng,
    })
}
