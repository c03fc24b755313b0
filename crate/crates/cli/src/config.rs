use std::path::{Path, PathBuf};

use dilate::data::{gen_synthetic_det, gen_synthetic_prob, load_csv_windows, read_split, Dataset, Normalization};
use dilate::forecast::{StripeConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsvOptions {
    pub context: usize,
    pub horizon: usize,
    pub stride: usize,
    pub normalization: Normalization,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            context: 20,
            horizon: 20,
            stride: 1,
            normalization: Normalization::Zscore,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepOptions {
    pub param: Option<String>,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchOptions {
    pub lengths: Vec<usize>,
    pub repeats: usize,
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            lengths: vec![20, 40, 80],
            repeats: 3,
            alpha: 0.5,
            gamma: 1e-2,
        }
    }
}

/// Everything a command needs; a JSON config file deserializes into this
/// and flags override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// `synthetic-det`, `synthetic-prob`, a directory written by `gen`, or a CSV file.
    pub dataset: Option<String>,
    /// Seed of generated datasets; each run seed is used when unset.
    pub data_seed: Option<u64>,
    pub seeds: Vec<u64>,
    pub csv: CsvOptions,
    pub train: TrainConfig,
    pub stripe: StripeConfig,
    pub metrics: Vec<String>,
    pub checkpoints: Vec<PathBuf>,
    pub sweep: SweepOptions,
    pub bench: BenchOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            data_seed: None,
            seeds: vec![0],
            csv: CsvOptions::default(),
            train: TrainConfig::default(),
            stripe: StripeConfig::default(),
            metrics: Vec::new(),
            checkpoints: Vec::new(),
            sweep: SweepOptions::default(),
            bench: BenchOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        format!("{:x}", Sha256::digest(bytes))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CliError::usage("at least one seed is required"));
        }
        self.train.validate().map_err(config_err)?;
        self.stripe.validate().map_err(config_err)?;
        Ok(())
    }

    pub fn dataset_name(&self) -> Result<&str> {
        self.dataset
            .as_deref()
            .ok_or_else(|| CliError::usage("no dataset given (--dataset or \"dataset\" in the config)"))
    }

    pub fn data_seed_for(&self, run_seed: u64) -> u64 {
        self.data_seed.unwrap_or(run_seed)
    }
}

/// Parses `3`, `0,1,2` or the half-open range `0..10`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || CliError::usage(format!("invalid seed list {text:?} (expected N, N,M,... or A..B)"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b <= a {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    let seeds = parse_list::<u64>(text).map_err(|_| bad())?;
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

pub fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| CliError::usage(format!("cannot parse {s:?} in list {text:?}"))))
        .collect()
}

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    SyntheticDet,
    SyntheticProb,
    /// Directory holding `<name>_{train,valid,test}.bin` with sidecars.
    Cache(PathBuf),
    Csv(PathBuf),
}

impl DatasetSource {
    pub fn resolve(spec: &str) -> Result<Self> {
        match spec {
            "synthetic-det" => return Ok(Self::SyntheticDet),
            "synthetic-prob" => return Ok(Self::SyntheticProb),
            _ => {}
        }
        let path = PathBuf::from(spec);
        if path.is_dir() {
            return Ok(Self::Cache(path));
        }
        if path.is_file() {
            return Ok(Self::Csv(path));
        }
        if path.components().count() > 1 || path.extension().is_some() {
            Err(CliError::usage(format!("dataset path {spec:?} does not exist")))
        } else {
            Err(CliError::usage(format!(
                "unknown dataset {spec:?} (synthetic-det, synthetic-prob, a cache directory or a CSV file)"
            )))
        }
    }

    pub fn load(&self, seed: u64, csv: &CsvOptions) -> Result<Dataset> {
        Ok(match self {
            Self::SyntheticDet => gen_synthetic_det(seed),
            Self::SyntheticProb => gen_synthetic_prob(seed),
            Self::Cache(dir) => load_cache_dir(dir)?,
            Self::Csv(path) => load_csv_windows(path, csv.context, csv.horizon, csv.stride, csv.normalization)
                .map_err(config_err)?
                .data,
        })
    }
}

fn load_cache_dir(dir: &Path) -> Result<Dataset> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut stems: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_suffix("_train.bin").map(str::to_string)
        })
        .collect();
    stems.sort();
    let stem = match stems.as_slice() {
        [one] => one.clone(),
        [] => return Err(CliError::usage(format!("{} holds no *_train.bin dataset cache", dir.display()))),
        many => {
            return Err(CliError::usage(format!(
                "{} holds several datasets ({}); point --dataset at a directory with one",
                dir.display(),
                many.join(", ")
            )))
        }
    };
    let read = |split: &str| read_split(dir.join(format!("{stem}_{split}.bin")));
    Ok(Dataset {
        train: read("train")?,
        valid: read("valid")?,
        test: read("test")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("4").unwrap(), vec![4]);
        assert_eq!(parse_seeds("0, 2,5").unwrap(), vec![0, 2, 5]);
        assert_eq!(parse_seeds("3..6").unwrap(), vec![3, 4, 5]);
        assert!(parse_seeds("").is_err());
        assert!(parse_seeds("5..5").is_err());
        assert!(parse_seeds("a,b").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"seeds":[1,2]}"#).is_ok());
        assert!(matches!(ExperimentConfig::from_json(r#"{"sedes":[1]}"#), Err(CliError::Usage(_))));
        assert!(ExperimentConfig::from_json(r#"{"train":{"lr":0.1}}"#).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.train.alpha = 0.25;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn dataset_resolution() {
        assert_eq!(DatasetSource::resolve("synthetic-det").unwrap(), DatasetSource::SyntheticDet);
        assert!(matches!(DatasetSource::resolve("imagenet"), Err(CliError::Usage(_))));
        assert!(matches!(DatasetSource::resolve("/no/such/file.csv"), Err(CliError::Usage(_))));
    }

    #[test]
    fn invalid_hyperparameters_are_usage_errors() {
        let mut cfg = ExperimentConfig::default();
        cfg.train.alpha = 2.0;
        assert!(matches!(cfg.validate(), Err(CliError::Usage(_))));
    }
}
