//! Binary checkpoint: `AWCK`, u32 version, u64 header length, JSON header,
//! then a little-endian f32 payload laid out by the header manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, History};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::{ParameterSet, RunningStats, Tensor};
use crate::trajectory::DEFAULT_SPACING;
use crate::vocab::Vocabulary;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AWCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const PARAM: &str = "param:";
const BN_MEAN: &str = "bn_mean:";
const BN_VAR: &str = "bn_var:";
const ADAM_M: &str = "adam_m:";
const ADAM_V: &str = "adam_v:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epoch: usize,
    pub seed: u64,
    pub history: History,
    /// Resampling spacing the model was trained with.
    pub spacing: f64,
    pub model_version: String,
}

impl Default for TrainingMetadata {
    fn default() -> Self {
        Self {
            epoch: 0,
            seed: 0,
            history: History::default(),
            spacing: DEFAULT_SPACING,
            model_version: "untrained".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    path: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocabulary: Vocabulary,
    metadata: TrainingMetadata,
    optimizer_step: Option<u64>,
    manifest: Vec<ManifestEntry>,
    payload_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Vocabulary,
    pub metadata: TrainingMetadata,
    pub optimizer: Option<AdamState>,
}

struct PayloadWriter {
    manifest: Vec<ManifestEntry>,
    payload: Vec<u8>,
}

impl PayloadWriter {
    fn push(&mut self, path: String, shape: &[usize], data: &[f64]) {
        self.manifest.push(ManifestEntry {
            path,
            shape: shape.to_vec(),
            offset: self.payload.len() as u64,
        });
        for v in data {
            self.payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
}

fn integrity(msg: impl Into<String>) -> Error {
    Error::Integrity(msg.into())
}

impl Checkpoint {
    pub fn new(model: Model, vocab: Vocabulary, metadata: TrainingMetadata) -> Self {
        Self {
            model,
            vocab,
            metadata,
            optimizer: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = PayloadWriter {
            manifest: Vec::new(),
            payload: Vec::new(),
        };
        for (path, t) in self.model.params().iter() {
            w.push(format!("{PARAM}{path}"), t.shape(), t.data());
        }
        for (path, rs) in self.model.running_stats() {
            w.push(format!("{BN_MEAN}{path}"), &[rs.channels()], &rs.mean);
            w.push(format!("{BN_VAR}{path}"), &[rs.channels()], &rs.var);
        }
        if let Some(adam) = &self.optimizer {
            for (prefix, moments) in [(ADAM_M, &adam.m), (ADAM_V, &adam.v)] {
                for (path, values) in moments {
                    w.push(format!("{prefix}{path}"), &[values.len()], values);
                }
            }
        }
        let header = Header {
            config: self.model.config().clone(),
            vocabulary: self.vocab.clone(),
            metadata: self.metadata.clone(),
            optimizer_step: self.optimizer.as_ref().map(|a| a.step),
            payload_bytes: w.payload.len() as u64,
            manifest: w.manifest,
        };
        let json = serde_json::to_vec(&header).map_err(|e| integrity(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + w.payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&w.payload);
        Ok(out)
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("awck.tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(integrity(format!(
                "file is {} bytes, shorter than the fixed prefix",
                bytes.len()
            )));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(integrity("bad magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let body = &bytes[16..];
        if header_len > body.len() as u64 {
            return Err(integrity("header extends past end of file"));
        }
        let (json, payload) = body.split_at(header_len as usize);
        let header: Header =
            serde_json::from_slice(json).map_err(|e| integrity(format!("header: {e}")))?;
        if header.payload_bytes != payload.len() as u64 {
            return Err(integrity(format!(
                "payload is {} bytes, header declares {}",
                payload.len(),
                header.payload_bytes
            )));
        }
        let tensors = read_manifest(&header.manifest, payload)?;
        let mut params = ParameterSet::new();
        let mut means = BTreeMap::new();
        let mut vars = BTreeMap::new();
        let mut adam = AdamState::new();
        for (path, shape, data) in tensors {
            if let Some(p) = path.strip_prefix(PARAM) {
                params.insert(
                    p,
                    Tensor::new(&shape, data).map_err(|e| integrity(e.to_string()))?,
                );
            } else if let Some(p) = path.strip_prefix(BN_MEAN) {
                means.insert(p.to_string(), data);
            } else if let Some(p) = path.strip_prefix(BN_VAR) {
                vars.insert(p.to_string(), data);
            } else if let Some(p) = path.strip_prefix(ADAM_M) {
                adam.m.insert(p.to_string(), data);
            } else if let Some(p) = path.strip_prefix(ADAM_V) {
                adam.v.insert(p.to_string(), data);
            } else {
                return Err(integrity(format!("unknown manifest entry `{path}`")));
            }
        }
        let mut running = BTreeMap::new();
        for (path, mean) in means {
            let var = vars
                .remove(&path)
                .ok_or_else(|| integrity(format!("running variance missing for `{path}`")))?;
            running.insert(path, RunningStats { mean, var });
        }
        if let Some(path) = vars.keys().next() {
            return Err(integrity(format!("running mean missing for `{path}`")));
        }
        let model = Model::from_parts(header.config, params, running)?;
        let optimizer = header.optimizer_step.map(|step| AdamState { step, ..adam });
        Ok(Self {
            model,
            vocab: header.vocabulary.rebuild()?,
            metadata: header.metadata,
            optimizer,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads and requires the stored model config to equal `expected`.
    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if ckpt.model.config() != expected {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint has fusion {:?} / {} channels, run expects fusion {:?} / {} channels",
                ckpt.model.config().fusion,
                ckpt.model.config().channels,
                expected.fusion,
                expected.channels
            )));
        }
        Ok(ckpt)
    }
}

/// Path, shape and values of one payload entry.
type DecodedEntry = (String, Vec<usize>, Vec<f64>);

/// Checks that entries tile the payload exactly and decodes them.
fn read_manifest(manifest: &[ManifestEntry], payload: &[u8]) -> Result<Vec<DecodedEntry>> {
    let mut order: Vec<&ManifestEntry> = manifest.iter().collect();
    order.sort_by_key(|e| e.offset);
    let mut cursor = 0u64;
    let mut out = Vec::with_capacity(order.len());
    for e in order {
        if e.offset != cursor {
            return Err(integrity(format!(
                "entry `{}` starts at byte {}, expected {cursor}",
                e.path, e.offset
            )));
        }
        let n: usize = e.shape.iter().product();
        let end = cursor + 4 * n as u64;
        if end > payload.len() as u64 {
            return Err(integrity(format!(
                "entry `{}` runs past the payload",
                e.path
            )));
        }
        let data = payload[cursor as usize..end as usize]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        out.push((e.path.clone(), e.shape.clone(), data));
        cursor = end;
    }
    if cursor != payload.len() as u64 {
        return Err(integrity(format!(
            "manifest covers {cursor} of {} payload bytes",
            payload.len()
        )));
    }
    Ok(out)
}
