//! Single-file checkpoints: one JSON header line, a newline, then every
//! parameter as little-endian `f64` in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::data::{LabelSets, Vocab};
use crate::error::{Error, Result};
use crate::model::{CabertSlu, ModelConfig};
use crate::tensor::{ParamStore, Tensor};

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: CabertSlu,
    pub vocab: Vocab,
    pub labels: LabelSets,
    /// Zero-based epoch after which the parameters were taken.
    pub epoch: usize,
    pub valid_id_acc: f64,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: RunConfig,
    model: ModelConfig,
    vocab: Vec<String>,
    labels: LabelSets,
    epoch: usize,
    valid_id_acc: f64,
    params: Vec<ParamEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            model: self.model.config.clone(),
            vocab: self.vocab.tokens().to_vec(),
            labels: self.labels.clone(),
            epoch: self.epoch,
            valid_id_acc: self.valid_id_acc,
            params: self
                .model
                .params
                .iter()
                .map(|(_, p)| ParamEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                })
                .collect(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        for (_, p) in self.model.params.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::contract("checkpoint has no header line"))?;
        let header: Header = serde_json::from_slice(&bytes[..split])?;
        let mut payload = &bytes[split + 1..];
        let expected: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
        if payload.len() != expected * 8 {
            return Err(Error::contract(format!(
                "checkpoint payload holds {} bytes, header describes {}",
                payload.len(),
                expected * 8
            )));
        }
        let mut store = ParamStore::new();
        for entry in header.params {
            let n: usize = entry.shape.iter().product();
            let (chunk, rest) = payload.split_at(n * 8);
            payload = rest;
            let data = chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            store.insert(entry.name, Tensor::new(entry.shape, data)?);
        }
        let labels = header.labels;
        let mut model = CabertSlu::new(header.model, labels.n_acts(), labels.n_tags(), 0)?;
        model.params.copy_values_from(&store)?;
        Ok(Checkpoint {
            config: header.config,
            model,
            vocab: Vocab::from_tokens(header.vocab)?,
            labels,
            epoch: header.epoch,
            valid_id_acc: header.valid_id_acc,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}
