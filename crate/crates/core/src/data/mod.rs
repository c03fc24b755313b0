//! Synthetic step benchmarks, a windowed CSV loader and a binary cache.

mod cache;
mod csv;
mod synthetic;

use serde::{Deserialize, Serialize};

pub use cache::{decode_split, encode_split, read_split, write_split, CacheSidecar};
pub use csv::{load_csv_windows, parse_csv_series, window_series, Normalization, Normalizer, WindowedDataset};
pub use synthetic::{
    gen_synthetic_det, gen_synthetic_prob, SyntheticMeta, DET_SPLIT_SIZE, GENERATOR_VERSION, HORIZON, INPUT_LEN,
    NOISE_STD, PROB_AMPLITUDE_STD, PROB_FUTURES, PROB_INPUTS, PROB_SHIFT, STEP_MAX, STEP_MIN,
};

use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Train = 0,
    Valid = 1,
    Test = 2,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Valid => "valid",
            SplitKind::Test => "test",
        }
    }
}

/// One input window with its admissible futures (a single one for
/// deterministic data).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: TimeSeries,
    pub futures: Vec<TimeSeries>,
    pub meta: Option<SyntheticMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub name: String,
    pub split: SplitKind,
    pub seed: u64,
    pub input_len: usize,
    pub horizon: usize,
    pub samples: Vec<Sample>,
}

impl DatasetSplit {
    pub fn new(
        name: impl Into<String>,
        split: SplitKind,
        seed: u64,
        input_len: usize,
        horizon: usize,
        samples: Vec<Sample>,
    ) -> Self {
        Self {
            name: name.into(),
            split,
            seed,
            input_len,
            horizon,
            samples,
        }
    }

    /// Number of (input, future) pairs.
    pub fn n_pairs(&self) -> usize {
        self.samples.iter().map(|s| s.futures.len()).sum()
    }

    /// Every (input, future) pair, futures of one input adjacent.
    pub fn pairs(&self) -> impl Iterator<Item = (&TimeSeries, &TimeSeries)> {
        self.samples
            .iter()
            .flat_map(|s| s.futures.iter().map(move |f| (&s.input, f)))
    }

    /// Futures per input, if constant across the split.
    pub fn futures_per_input(&self) -> Option<usize> {
        let n = self.samples.first()?.futures.len();
        self.samples.iter().all(|s| s.futures.len() == n).then_some(n)
    }

    /// Inputs stacked row-wise, one row per pair.
    pub fn pair_inputs(&self) -> Vec<f64> {
        self.pairs().flat_map(|(x, _)| x.values().iter().copied()).collect()
    }

    pub fn pair_targets(&self) -> Vec<f64> {
        self.pairs().flat_map(|(_, y)| y.values().iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: DatasetSplit,
    pub valid: DatasetSplit,
    pub test: DatasetSplit,
}

impl Dataset {
    pub fn splits(&self) -> [&DatasetSplit; 3] {
        [&self.train, &self.valid, &self.test]
    }
}
