use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// One aggregated metric; the JSON schema of every metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricRow {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
    pub config_hash: String,
}

impl MetricRow {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn from_values(metric: &str, values: &[f64], config_hash: &str) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n.max(1) as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            metric: metric.to_string(),
            mean,
            std,
            n_seeds: n,
            config_hash: config_hash.to_string(),
        }
    }
}

/// Readability multiplier for reported tables; raw values are written too.
pub fn scale_for(metric: &str) -> f64 {
    let base = metric.split('@').next().unwrap_or(metric);
    match base {
        "mse" | "crps" => 1000.0,
        "dtw" | "tdi" | "ramp" | "soft_dtw" => 10.0,
        "dilate" | "dilate_ref" | "h_quality" | "h_diversity" | "f1" => 100.0,
        _ => 1.0,
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("metric,scale,mean,std,scaled_mean,scaled_std,n_seeds,config_hash\n");
    for r in rows {
        let s = scale_for(&r.metric);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.metric,
            s,
            r.mean,
            r.std,
            r.mean * s,
            r.std * s,
            r.n_seeds,
            r.config_hash
        )
        .expect("string write");
    }
    out
}

/// Human-readable table with scaled values.
pub fn metrics_table(rows: &[MetricRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let s = scale_for(&r.metric);
        let label = if s == 1.0 {
            r.metric.clone()
        } else {
            format!("{} (x{s})", r.metric)
        };
        writeln!(out, "{label:<28} {:>12.4} ± {:<10.4} n={}", r.mean * s, r.std * s, r.n_seeds).expect("string write");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    command: String,
    version: String,
    config_hash: String,
    config: serde_json::Value,
    files: Vec<String>,
}

/// Output directory that records every file it writes for `manifest.json`.
#[derive(Debug)]
pub struct OutDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    /// Records a file something else already wrote below the root.
    pub fn record(&mut self, path: &Path) {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        let rel = rel.to_string_lossy().into_owned();
        if !self.files.contains(&rel) {
            self.files.push(rel);
        }
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.root.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.record(&path);
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    /// One JSON document per line.
    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> Result<PathBuf> {
        let mut text = String::new();
        for it in items {
            text.push_str(&serde_json::to_string(it)?);
            text.push('\n');
        }
        self.write(name, text)
    }

    pub fn finish<T: Serialize>(mut self, command: &str, config: &T, config_hash: &str) -> Result<PathBuf> {
        self.files.sort();
        let manifest = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            config: serde_json::to_value(config)?,
            files: self.files.clone(),
        };
        let path = self.root.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
