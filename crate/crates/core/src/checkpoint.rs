//! Single-file JSON checkpoints.
//!
//! Tensors are stored as base64 of their little-endian `f64` bytes next to an
//! explicit shape, so a save/load round trip is bit-exact. Scalars that live
//! in plain JSON (preprocessor statistics, horizons) rely on serde_json's
//! round-trip float parsing.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Preprocessor;
use crate::error::{Error, Result};
use crate::hazard::BaselineHazards;
use crate::loss::RiskWeights;
use crate::metrics::EvalHorizons;
use crate::model::{Architecture, BatchNorm, Dense, FeatureNet, Layer, ModelParams};
use crate::pipeline::FittedModel;

pub const FORMAT: &str = "crisp-nam-checkpoint";
pub const VERSION: u32 = 1;

/// Hex SHA-256 of the compact JSON form of `config`. Object keys are sorted,
/// so logically equal configs share a fingerprint.
pub fn fingerprint(config: &impl Serialize) -> Result<String> {
    let canonical = serde_json::to_value(config)?.to_string();
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tensor {
    pub shape: Vec<usize>,
    /// Base64 of little-endian `f64` values in row-major order.
    pub data: String,
}

impl Tensor {
    pub fn encode<'a>(shape: &[usize], values: impl IntoIterator<Item = &'a f64>) -> Self {
        let bytes: Vec<u8> = values.into_iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            shape: shape.to_vec(),
            data: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self, name: &str) -> Result<Vec<f64>> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::validation(format!("tensor '{name}': bad base64: {e}")))?;
        let expected: usize = self.shape.iter().product();
        if bytes.len() != expected * 8 {
            return Err(Error::validation(format!(
                "tensor '{name}': {} bytes for shape {:?}",
                bytes.len(),
                self.shape
            )));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

/// On-disk layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format: String,
    version: u32,
    fingerprint: String,
    config: serde_json::Value,
    preprocessor: Preprocessor,
    architecture: Architecture,
    num_risks: usize,
    epsilon: f64,
    horizons: EvalHorizons,
    risk_weights: Vec<f64>,
    tensors: BTreeMap<String, Tensor>,
}

/// A fitted model plus the config that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub config: serde_json::Value,
    pub model: FittedModel,
}

impl Checkpoint {
    pub fn new(model: FittedModel, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            fingerprint: fingerprint(config)?,
            config: serde_json::to_value(config)?,
            model,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let m = &self.model;
        let mut tensors = BTreeMap::new();
        for (i, net) in m.params.nets.iter().enumerate() {
            for (l, layer) in net.layers.iter().enumerate() {
                let key = |what: &str| format!("net.{i}.layer.{l}.{what}");
                let w = &layer.dense.weight;
                tensors.insert(key("weight"), Tensor::encode(w.shape(), w.iter()));
                tensors.insert(key("bias"), vector(&layer.dense.bias));
                if let Some(bn) = &layer.norm {
                    tensors.insert(key("norm_scale"), vector(&bn.scale));
                    tensors.insert(key("norm_shift"), vector(&bn.shift));
                    tensors.insert(key("running_mean"), vector(&bn.running_mean));
                    tensors.insert(key("running_var"), vector(&bn.running_var));
                }
            }
        }
        let proj = &m.params.projections;
        tensors.insert("projections".into(), Tensor::encode(proj.shape(), proj.iter()));
        tensors.insert(
            "baseline.times".into(),
            Tensor::encode(&[m.baseline.times.len()], &m.baseline.times),
        );
        let inc = &m.baseline.increments;
        tensors.insert("baseline.increments".into(), Tensor::encode(inc.shape(), inc.iter()));

        let doc = Document {
            format: FORMAT.into(),
            version: VERSION,
            fingerprint: self.fingerprint.clone(),
            config: self.config.clone(),
            preprocessor: m.preprocessor.clone(),
            architecture: m.params.arch.clone(),
            num_risks: m.params.num_risks,
            epsilon: m.params.epsilon,
            horizons: m.horizons.clone(),
            risk_weights: m.risk_weights.0.clone(),
            tensors,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Document = serde_json::from_str(text)?;
        if doc.format != FORMAT {
            return Err(Error::validation(format!(
                "not a checkpoint: format is '{}'",
                doc.format
            )));
        }
        if doc.version != VERSION {
            return Err(Error::validation(format!(
                "unsupported checkpoint version {} (this build reads {VERSION})",
                doc.version
            )));
        }
        doc.architecture.validate()?;
        let mut tensors = doc.tensors;
        let m = tensors
            .get("baseline.times")
            .and_then(|t| t.shape.first().copied())
            .unwrap_or(0);
        let mut take = |name: String, shape: &[usize]| -> Result<Vec<f64>> {
            let t = tensors
                .remove(&name)
                .ok_or_else(|| Error::validation(format!("checkpoint lacks tensor '{name}'")))?;
            if t.shape != shape {
                return Err(Error::validation(format!(
                    "tensor '{name}' has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
            t.decode(&name)
        };

        let p = doc.preprocessor.output_columns().len();
        let k_risks = doc.num_risks;
        let arch = &doc.architecture;
        let mut nets = Vec::with_capacity(p);
        for i in 0..p {
            let mut layers = Vec::with_capacity(arch.hidden.len());
            let mut fan_in = 1;
            for (l, &width) in arch.hidden.iter().enumerate() {
                let key = |what: &str| format!("net.{i}.layer.{l}.{what}");
                let weight = Array2::from_shape_vec((width, fan_in), take(key("weight"), &[width, fan_in])?)
                    .map_err(|e| Error::Internal(e.to_string()))?;
                let bias = Array1::from(take(key("bias"), &[width])?);
                let norm = if arch.batch_norm {
                    let bn = BatchNorm {
                        scale: Array1::from(take(key("norm_scale"), &[width])?),
                        shift: Array1::from(take(key("norm_shift"), &[width])?),
                        running_mean: Array1::from(take(key("running_mean"), &[width])?),
                        running_var: Array1::from(take(key("running_var"), &[width])?),
                    };
                    if bn.running_var.iter().any(|&v| v.is_nan() || v <= 0.0) {
                        return Err(Error::validation(format!(
                            "net {i} layer {l}: running variance must be positive"
                        )));
                    }
                    Some(bn)
                } else {
                    None
                };
                layers.push(Layer {
                    dense: Dense { weight, bias },
                    norm,
                });
                fan_in = width;
            }
            nets.push(FeatureNet { layers });
        }
        let d = arch.output_dim();
        let projections = Array3::from_shape_vec((p, k_risks, d), take("projections".into(), &[p, k_risks, d])?)
            .map_err(|e| Error::Internal(e.to_string()))?;

        let times = take("baseline.times".into(), &[m])?;
        if times
            .windows(2)
            .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
        {
            return Err(Error::validation("baseline times must be strictly increasing"));
        }
        let increments = Array2::from_shape_vec((k_risks, m), take("baseline.increments".into(), &[k_risks, m])?)
            .map_err(|e| Error::Internal(e.to_string()))?;
        if let Some(name) = tensors.keys().next() {
            return Err(Error::validation(format!("unexpected tensor '{name}' in checkpoint")));
        }
        if doc.risk_weights.len() != k_risks || doc.horizons.per_risk.len() != k_risks {
            return Err(Error::validation(
                "risk weights and horizons must have one entry per risk",
            ));
        }

        let params = ModelParams {
            arch: doc.architecture,
            num_risks: k_risks,
            nets,
            projections,
            epsilon: doc.epsilon,
        };
        Ok(Self {
            fingerprint: doc.fingerprint,
            config: doc.config,
            model: FittedModel {
                preprocessor: doc.preprocessor,
                params,
                baseline: BaselineHazards { times, increments },
                horizons: doc.horizons,
                risk_weights: RiskWeights(doc.risk_weights),
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

fn vector(v: &Array1<f64>) -> Tensor {
    Tensor::encode(&[v.len()], v.iter())
}
