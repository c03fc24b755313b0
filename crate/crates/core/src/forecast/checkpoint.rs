use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::deterministic::MlpForecaster;
use super::nn::Activation;
use super::stripe::{StripeConfig, StripeModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "dilate-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    Mlp {
        input_len: usize,
        horizon: usize,
        dim: usize,
        hidden: usize,
        activation: Activation,
    },
    Stripe {
        input_len: usize,
        horizon: usize,
        hidden: usize,
        latent: usize,
        n_shape: usize,
        n_time: usize,
        activation: Activation,
    },
    /// Predicts the reference future itself; used to validate evaluation.
    Oracle,
}

impl Architecture {
    pub fn n_params(&self) -> Option<usize> {
        let checked = |sizes: &[&[usize]]| -> Option<usize> {
            sizes.iter().try_fold(0usize, |acc, s| {
                s.windows(2)
                    .try_fold(0usize, |a, w| a.checked_add(w[0].checked_add(1)?.checked_mul(w[1])?))
                    .and_then(|p| acc.checked_add(p))
            })
        };
        match *self {
            Architecture::Mlp {
                input_len,
                horizon,
                dim,
                hidden,
                ..
            } => checked(&[&[input_len.checked_mul(dim)?, hidden, horizon.checked_mul(dim)?]]),
            Architecture::Stripe {
                input_len,
                horizon,
                hidden,
                latent,
                n_shape,
                n_time,
                ..
            } => checked(&[
                &[input_len, hidden],
                &[input_len.checked_add(horizon)?, hidden, latent.checked_mul(4)?],
                &[hidden.checked_add(latent.checked_mul(2)?)?, hidden, horizon],
                &[hidden, hidden, n_shape.checked_mul(latent)?],
                &[hidden, hidden, n_time.checked_mul(latent)?],
            ]),
            Architecture::Oracle => Some(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointSidecar {
    pub format: String,
    pub architecture: Architecture,
    pub config: serde_json::Value,
    pub seed: u64,
    pub epoch: usize,
    pub n_params: usize,
}

/// Sidecar plus flat weights, in the models' `weights()` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub sidecar: CheckpointSidecar,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Mlp(MlpForecaster),
    Stripe(StripeModel),
    Oracle,
}

impl Checkpoint {
    pub fn new(architecture: Architecture, config: serde_json::Value, seed: u64, epoch: usize, weights: Vec<f64>) -> Result<Self> {
        if architecture.n_params() != Some(weights.len()) {
            return Err(Error::Format(format!(
                "{} weights do not fit the architecture",
                weights.len()
            )));
        }
        Ok(Self {
            sidecar: CheckpointSidecar {
                format: CHECKPOINT_FORMAT.to_string(),
                architecture,
                config,
                seed,
                epoch,
                n_params: weights.len(),
            },
            weights,
        })
    }

    pub fn from_mlp(model: &MlpForecaster, config: serde_json::Value, epoch: usize) -> Result<Self> {
        let arch = Architecture::Mlp {
            input_len: model.input_len,
            horizon: model.horizon,
            dim: model.dim,
            hidden: model.hidden(),
            activation: model.net.activation,
        };
        Self::new(arch, config, model.seed, epoch, model.weights())
    }

    pub fn from_stripe(model: &StripeModel, config: serde_json::Value, epoch: usize) -> Result<Self> {
        let arch = Architecture::Stripe {
            input_len: model.input_len,
            horizon: model.horizon,
            hidden: model.hidden(),
            latent: model.latent,
            n_shape: model.n_shape,
            n_time: model.n_time,
            activation: model.encoder.activation,
        };
        Self::new(arch, config, model.seed, epoch, model.weights())
    }

    pub fn oracle() -> Self {
        Self::new(Architecture::Oracle, serde_json::Value::Null, 0, 0, Vec::new()).expect("oracle has no weights")
    }

    /// Rebuilds the model the checkpoint describes.
    pub fn model(&self) -> Result<Model> {
        match self.sidecar.architecture {
            Architecture::Mlp {
                input_len,
                horizon,
                dim,
                hidden,
                activation,
            } => {
                let mut m = MlpForecaster::new(input_len, horizon, dim, hidden, activation, self.sidecar.seed);
                m.set_weights(&self.weights)?;
                Ok(Model::Mlp(m))
            }
            Architecture::Stripe {
                input_len,
                horizon,
                hidden,
                latent,
                n_shape,
                n_time,
                activation,
            } => {
                let cfg = StripeConfig {
                    hidden,
                    latent,
                    n_shape,
                    n_time,
                    activation,
                    seed: self.sidecar.seed,
                    ..StripeConfig::default()
                };
                let mut m = StripeModel::new(input_len, horizon, &cfg);
                m.set_weights(&self.weights)?;
                Ok(Model::Stripe(m))
            }
            Architecture::Oracle => Ok(Model::Oracle),
        }
    }

    pub fn encode(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let bin = self.weights.iter().flat_map(|w| w.to_le_bytes()).collect();
        Ok((serde_json::to_vec_pretty(&self.sidecar)?, bin))
    }

    pub fn decode(sidecar: &[u8], bin: &[u8]) -> Result<Self> {
        let meta: CheckpointSidecar = serde_json::from_slice(sidecar)?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unexpected checkpoint format {:?}", meta.format)));
        }
        let expected = meta
            .architecture
            .n_params()
            .ok_or_else(|| Error::Format("architecture size overflows".into()))?;
        if meta.n_params != expected {
            return Err(Error::Format(format!(
                "sidecar declares {} parameters, architecture has {expected}",
                meta.n_params
            )));
        }
        if bin.len() != expected.checked_mul(8).ok_or_else(|| Error::Format("size overflows".into()))? {
            return Err(Error::Format(format!(
                "weights file has {} bytes, expected {}",
                bin.len(),
                expected * 8
            )));
        }
        let weights: Vec<f64> = bin
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite(format!("checkpoint weight {i}")));
        }
        Ok(Self { sidecar: meta, weights })
    }

    /// Writes `<stem>.bin` and `<stem>.json`; returns the `.bin` path.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (json, bin) = self.encode()?;
        let bin_path = dir.join(format!("{stem}.bin"));
        let json_path = dir.join(format!("{stem}.json"));
        std::fs::write(&bin_path, bin).map_err(|e| Error::io(&bin_path, e))?;
        std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
        Ok(bin_path)
    }

    /// Reads a checkpoint from its `.bin` path or its `.json` sidecar path.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bin_path = path.with_extension("bin");
        let json_path = path.with_extension("json");
        let json = std::fs::read(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let bin = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        Self::decode(&json, &bin)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::Mlp;

    #[test]
    fn mlp_roundtrip() {
        let m = MlpForecaster::new(20, 20, 1, 16, Activation::Relu, 3);
        let ck = Checkpoint::from_mlp(&m, serde_json::json!({"loss": "mse"}), 7).unwrap();
        let (j, b) = ck.encode().unwrap();
        let back = Checkpoint::decode(&j, &b).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.model().unwrap(), Model::Mlp(m));
    }

    #[test]
    fn stripe_roundtrip_and_counts() {
        let cfg = StripeConfig {
            hidden: 6,
            latent: 2,
            n_shape: 3,
            n_time: 2,
            seed: 4,
            ..StripeConfig::default()
        };
        let m = StripeModel::new(5, 4, &cfg);
        let ck = Checkpoint::from_stripe(&m, serde_json::Value::Null, 0).unwrap();
        let params: usize = [&m.encoder, &m.posterior, &m.decoder, &m.proposal_shape, &m.proposal_time]
            .iter()
            .map(|n| Mlp::count_params(&n.sizes()))
            .sum();
        assert_eq!(ck.weights.len(), params);
        let (j, b) = ck.encode().unwrap();
        assert_eq!(Checkpoint::decode(&j, &b).unwrap().model().unwrap(), Model::Stripe(m));
    }

    #[test]
    fn rejects_mismatches() {
        let m = MlpForecaster::new(4, 2, 1, 3, Activation::Tanh, 0);
        let (j, b) = Checkpoint::from_mlp(&m, serde_json::Value::Null, 0).unwrap().encode().unwrap();
        assert!(Checkpoint::decode(&j, &b[8..]).is_err());
        let text = String::from_utf8(j.clone()).unwrap().replace("\"hidden\": 3", "\"hidden\": 4");
        assert!(Checkpoint::decode(text.as_bytes(), &b).is_err());
        let mut bad = b.clone();
        bad[..8].copy_from_slice(&f64::INFINITY.to_le_bytes());
        assert!(matches!(Checkpoint::decode(&j, &bad), Err(Error::NonFinite(_))));
        let huge = r#"{"format":"dilate-checkpoint","architecture":{"kind":"mlp","input_len":18446744073709551615,"horizon":2,"dim":2,"hidden":3,"activation":"tanh"},"config":null,"seed":0,"epoch":0,"n_params":0}"#;
        assert!(Checkpoint::decode(huge.as_bytes(), &[]).is_err());
        assert!(Checkpoint::new(Architecture::Oracle, serde_json::Value::Null, 0, 0, vec![1.0]).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ck = Checkpoint::oracle();
        let p = ck.write(dir.path(), "oracle").unwrap();
        assert_eq!(Checkpoint::read(&p).unwrap(), ck);
        assert_eq!(Checkpoint::read(p.with_extension("json")).unwrap(), ck);
    }
}
