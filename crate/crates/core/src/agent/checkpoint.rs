//! JSON checkpoints: `{"version", "config", "step", "rng", "params"}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::network::{Network, NetworkSpec};
use super::policy::Policy;
use crate::config::RLConfig;
use crate::rng::{decode_state, encode_state, Rng};

pub const CHECKPOINT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint is not valid JSON at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: String, expected: u64 },
    #[error("checkpoint inconsistent at byte {offset}: {message}")]
    Inconsistent { offset: usize, message: String },
    #[error("cannot save checkpoint: {0}")]
    Unsavable(String),
}

/// Everything needed to resume sampling exactly where training stopped.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RLConfig,
    pub step: u64,
    pub rng: Rng,
    pub policy: Policy,
}

#[derive(Serialize, Deserialize)]
struct ConfigSection {
    rl: RLConfig,
    network: NetworkSpec,
}

#[derive(Serialize, Deserialize)]
struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Document {
    version: u64,
    config: ConfigSection,
    step: u64,
    rng: String,
    params: BTreeMap<String, Tensor>,
}

/// Byte offset of a 1-based line/column position.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

fn syntax(text: &str, e: &serde_json::Error) -> CheckpointError {
    CheckpointError::Syntax {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    }
}

pub fn to_json(ckpt: &Checkpoint) -> Result<String, CheckpointError> {
    let layout = ckpt.policy.layout();
    let p = ckpt.policy.params();
    if let Some(i) = p.iter().position(|v| !v.is_finite()) {
        return Err(CheckpointError::Unsavable(format!(
            "parameter coordinate {i} is not finite"
        )));
    }
    let params = layout
        .entries()
        .iter()
        .map(|e| {
            (
                e.name.clone(),
                Tensor {
                    shape: e.shape.clone(),
                    data: p[e.range()].to_vec(),
                },
            )
        })
        .collect();
    let doc = Document {
        version: CHECKPOINT_VERSION,
        config: ConfigSection {
            rl: ckpt.config.clone(),
            network: ckpt.policy.spec().clone(),
        },
        step: ckpt.step,
        rng: encode_state(&ckpt.rng),
        params,
    };
    serde_json::to_string_pretty(&doc).map_err(|e| CheckpointError::Unsavable(e.to_string()))
}

pub fn from_json(text: &str) -> Result<Checkpoint, CheckpointError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| syntax(text, &e))?;
    match value.get("version") {
        Some(v) if v.as_u64() == Some(CHECKPOINT_VERSION) => {}
        Some(v) => {
            return Err(CheckpointError::Version {
                found: v.to_string(),
                expected: CHECKPOINT_VERSION,
            })
        }
        None => {
            return Err(CheckpointError::Version {
                found: "none".into(),
                expected: CHECKPOINT_VERSION,
            })
        }
    }
    let doc: Document = serde_json::from_str(text).map_err(|e| {
        let offset = byte_offset(text, e.line(), e.column());
        CheckpointError::Inconsistent {
            offset,
            message: e.to_string(),
        }
    })?;
    let locate = |needle: &str| text.find(&format!("\"{needle}\"")).unwrap_or(0);
    let rng = decode_state(&doc.rng).ok_or_else(|| CheckpointError::Inconsistent {
        offset: locate("rng"),
        message: "rng state is not a 56-byte hex string".into(),
    })?;
    let spec = doc.config.network;
    super::policy::validate_spec(&spec).map_err(|e| CheckpointError::Inconsistent {
        offset: locate("network"),
        message: e.to_string(),
    })?;
    let layout = Network::new(spec.clone()).layout().clone();
    let mut params = vec![0.0; layout.total()];
    for entry in layout.entries() {
        let tensor = doc
            .params
            .get(&entry.name)
            .ok_or_else(|| CheckpointError::Inconsistent {
                offset: locate("params"),
                message: format!("parameter {} is missing", entry.name),
            })?;
        if tensor.shape != entry.shape {
            return Err(CheckpointError::Inconsistent {
                offset: locate(&entry.name),
                message: format!(
                    "parameter {} has shape {:?}, the network needs {:?}",
                    entry.name, tensor.shape, entry.shape
                ),
            });
        }
        if tensor.data.len() != entry.len() {
            return Err(CheckpointError::Inconsistent {
                offset: locate(&entry.name),
                message: format!(
                    "parameter {} holds {} values, its shape needs {}",
                    entry.name,
                    tensor.data.len(),
                    entry.len()
                ),
            });
        }
        params[entry.range()].copy_from_slice(&tensor.data);
    }
    if let Some(extra) = doc.params.keys().find(|k| layout.get(k).is_none()) {
        return Err(CheckpointError::Inconsistent {
            offset: locate(extra),
            message: format!("unexpected parameter {extra}"),
        });
    }
    let policy = Policy::from_params(spec, params).map_err(|e| CheckpointError::Inconsistent {
        offset: 0,
        message: e.to_string(),
    })?;
    Ok(Checkpoint {
        config: doc.config.rl,
        step: doc.step,
        rng,
        policy,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let text = to_json(ckpt)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let text = fs::read_to_string(path)?;
    from_json(&text)
}
