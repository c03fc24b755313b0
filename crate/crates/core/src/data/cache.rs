use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetSplit, Sample, SplitKind, GENERATOR_VERSION};
use crate::error::{Error, Result};
use crate::series::TimeSeries;

pub const CACHE_FORMAT: &str = "dilate-dataset";

/// JSON metadata stored next to a flat little-endian `f64` array whose rows
/// are `input ‖ future_1 ‖ … ‖ future_F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheSidecar {
    pub format: String,
    pub generator_version: u32,
    pub dataset: String,
    pub split: SplitKind,
    pub seed: u64,
    pub shape: [usize; 2],
    pub dim: usize,
    pub input_len: usize,
    pub horizon: usize,
    pub futures_per_input: usize,
}

pub fn encode_split(split: &DatasetSplit) -> Result<(Vec<u8>, Vec<u8>)> {
    let futures = split
        .futures_per_input()
        .ok_or_else(|| Error::Format("cache requires the same number of futures for every input".into()))?;
    let dim = split.samples[0].input.dim();
    let cols = (split.input_len + futures * split.horizon) * dim;
    let mut bin = Vec::with_capacity(split.samples.len() * cols * 8);
    for s in &split.samples {
        for v in s.input.values().iter().chain(s.futures.iter().flat_map(|f| f.values())) {
            bin.extend_from_slice(&v.to_le_bytes());
        }
    }
    if bin.len() != split.samples.len() * cols * 8 {
        return Err(Error::Format("samples do not match the declared window lengths".into()));
    }
    let sidecar = CacheSidecar {
        format: CACHE_FORMAT.to_string(),
        generator_version: GENERATOR_VERSION,
        dataset: split.name.clone(),
        split: split.split,
        seed: split.seed,
        shape: [split.samples.len(), cols],
        dim,
        input_len: split.input_len,
        horizon: split.horizon,
        futures_per_input: futures,
    };
    Ok((serde_json::to_vec_pretty(&sidecar)?, bin))
}

/// Inverse of [`encode_split`]; synthetic metadata is not cached.
pub fn decode_split(sidecar: &[u8], bin: &[u8]) -> Result<DatasetSplit> {
    let meta: CacheSidecar = serde_json::from_slice(sidecar)?;
    if meta.format != CACHE_FORMAT {
        return Err(Error::Format(format!("unexpected cache format {:?}", meta.format)));
    }
    if meta.dim == 0 || meta.input_len == 0 || meta.horizon == 0 || meta.futures_per_input == 0 {
        return Err(Error::Format("sidecar lengths must be positive".into()));
    }
    let cols = meta
        .futures_per_input
        .checked_mul(meta.horizon)
        .and_then(|f| f.checked_add(meta.input_len))
        .and_then(|c| c.checked_mul(meta.dim))
        .ok_or_else(|| Error::Format("sidecar lengths overflow".into()))?;
    if meta.shape[1] != cols {
        return Err(Error::Format(format!(
            "sidecar shape has {} columns, lengths imply {cols}",
            meta.shape[1]
        )));
    }
    let expected = meta
        .shape[0]
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format("sidecar shape overflows".into()))?;
    if bin.len() != expected {
        return Err(Error::Format(format!("binary has {} bytes, sidecar implies {expected}", bin.len())));
    }
    let values: Vec<f64> = bin
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let inp = meta.input_len * meta.dim;
    let fut = meta.horizon * meta.dim;
    let samples = values
        .chunks_exact(cols)
        .map(|row| {
            Ok(Sample {
                input: TimeSeries::new(meta.dim, row[..inp].to_vec())?,
                futures: row[inp..]
                    .chunks_exact(fut)
                    .map(|f| TimeSeries::new(meta.dim, f.to_vec()))
                    .collect::<Result<_>>()?,
                meta: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if meta.generator_version != GENERATOR_VERSION {
        log::warn!(
            "cache written by generator version {}, current is {GENERATOR_VERSION}",
            meta.generator_version
        );
    }
    Ok(DatasetSplit::new(meta.dataset, meta.split, meta.seed, meta.input_len, meta.horizon, samples))
}

fn stem(split: &DatasetSplit) -> String {
    format!("{}_{}", split.name, split.split.name())
}

/// Writes `<name>_<split>.bin` and `<name>_<split>.json` under `dir`.
pub fn write_split(dir: impl AsRef<Path>, split: &DatasetSplit) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (sidecar, bin) = encode_split(split)?;
    let bin_path = dir.join(format!("{}.bin", stem(split)));
    let json_path = dir.join(format!("{}.json", stem(split)));
    std::fs::write(&bin_path, bin).map_err(|e| Error::io(&bin_path, e))?;
    std::fs::write(&json_path, sidecar).map_err(|e| Error::io(&json_path, e))?;
    Ok((bin_path, json_path))
}

/// Reads a split from its `.bin` path; the sidecar is the sibling `.json`.
pub fn read_split(bin_path: impl AsRef<Path>) -> Result<DatasetSplit> {
    let bin_path = bin_path.as_ref();
    let json_path = bin_path.with_extension("json");
    let bin = std::fs::read(bin_path).map_err(|e| Error::io(bin_path, e))?;
    let sidecar = std::fs::read(&json_path).map_err(|e| Error::io(&json_path, e))?;
    decode_split(&sidecar, &bin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_det, gen_synthetic_prob};

    fn strip(split: &DatasetSplit) -> DatasetSplit {
        let mut s = split.clone();
        s.samples.iter_mut().for_each(|x| x.meta = None);
        s
    }

    #[test]
    fn roundtrip_det_and_prob() {
        let det = gen_synthetic_det(0).train;
        let (j, b) = encode_split(&det).unwrap();
        assert_eq!(b.len(), 500 * 40 * 8);
        assert_eq!(decode_split(&j, &b).unwrap(), strip(&det));
        let prob = gen_synthetic_prob(0).valid;
        let (j, b) = encode_split(&prob).unwrap();
        assert_eq!(decode_split(&j, &b).unwrap(), strip(&prob));
    }

    #[test]
    fn rejects_corrupt_inputs() {
        let det = gen_synthetic_det(0).test;
        let (j, b) = encode_split(&det).unwrap();
        assert!(decode_split(&j, &b[..b.len() - 8]).is_err());
        assert!(decode_split(b"{}", &b).is_err());
        let mut nan = b.clone();
        nan[..8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode_split(&j, &nan), Err(Error::NonFinite(_))));
        let text = String::from_utf8(j).unwrap().replace("\"horizon\": 20", "\"horizon\": 19");
        assert!(decode_split(text.as_bytes(), &b).is_err());
    }

    #[test]
    fn files_roundtrip_and_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_split(dir.path().join("a"), &gen_synthetic_det(2).train).unwrap();
        let b = write_split(dir.path().join("b"), &gen_synthetic_det(2).train).unwrap();
        assert_eq!(std::fs::read(&a.0).unwrap(), std::fs::read(&b.0).unwrap());
        assert_eq!(read_split(&a.0).unwrap(), strip(&gen_synthetic_det(2).train));
    }
}
