use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetSplit, Sample, SplitKind};
use crate::series::TimeSeries;

/// Bumped whenever the sampling procedure changes; recorded in cache sidecars.
pub const GENERATOR_VERSION: u32 = 1;

pub const INPUT_LEN: usize = 20;
pub const HORIZON: usize = 20;
pub const NOISE_STD: f64 = 0.1;
/// Planted step indices (1-based over the 40-step series) are kept in
/// `[STEP_MIN, STEP_MAX]` so both levels are visible in the target window.
pub const STEP_MIN: usize = INPUT_LEN + 2;
pub const STEP_MAX: usize = INPUT_LEN + HORIZON;

pub const DET_SPLIT_SIZE: usize = 500;
pub const PROB_INPUTS: usize = 100;
pub const PROB_FUTURES: usize = 10;
pub const PROB_AMPLITUDE_STD: f64 = 0.05;
pub const PROB_SHIFT: i64 = 2;

/// Planted structure of one synthetic series. Time indices are 1-based over
/// the full input+target series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMeta {
    pub i1: usize,
    pub i2: usize,
    pub j1: f64,
    pub j2: f64,
    /// One entry per future.
    pub step_index: Vec<usize>,
    pub step_amplitude: Vec<f64>,
    pub input_noise: Vec<f64>,
    pub target_noise: Vec<Vec<f64>>,
}

impl SyntheticMeta {
    pub fn clean_input(&self) -> Vec<f64> {
        let mut x = vec![0.0; INPUT_LEN];
        x[self.i1 - 1] = self.j1;
        x[self.i2 - 1] = self.j2;
        x
    }

    /// Noiseless target of future `f`.
    pub fn clean_target(&self, f: usize) -> Vec<f64> {
        step_target(self.step_index[f], self.step_amplitude[f])
    }

    /// 1-based index within the target window where the step starts.
    pub fn target_step(&self, f: usize) -> usize {
        self.step_index[f] - INPUT_LEN
    }
}

fn step_target(step_index: usize, amplitude: f64) -> Vec<f64> {
    (INPUT_LEN + 1..=INPUT_LEN + HORIZON)
        .map(|t| if t >= step_index { amplitude } else { 0.0 })
        .collect()
}

struct Base {
    i1: usize,
    i2: usize,
    j1: f64,
    j2: f64,
    step: usize,
}

fn draw_base(rng: &mut ChaCha8Rng) -> Base {
    loop {
        let i1 = rng.random_range(1..=12usize);
        let i2 = rng.random_range(i1 + 2..=15);
        let j1 = rng.random::<f64>();
        let j2 = rng.random::<f64>();
        let step = (2 * i2 - i1) as i64 + rng.random_range(-3..=3i64);
        if (STEP_MIN as i64..=STEP_MAX as i64).contains(&step) {
            return Base { i1, i2, j1, j2, step: step as usize };
        }
    }
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, NOISE_STD).expect("valid normal");
    (0..n).map(|_| normal.sample(rng)).collect()
}

fn add(a: &[f64], b: &[f64]) -> TimeSeries {
    TimeSeries::univariate(a.iter().zip(b).map(|(x, y)| x + y).collect()).expect("finite synthetic series")
}

fn split_rng(seed: u64, split: SplitKind) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split as u64);
    rng
}

fn det_split(seed: u64, split: SplitKind) -> DatasetSplit {
    let mut rng = split_rng(seed, split);
    let samples = (0..DET_SPLIT_SIZE)
        .map(|_| {
            let b = draw_base(&mut rng);
            let input_noise = noise(&mut rng, INPUT_LEN);
            let target_noise = noise(&mut rng, HORIZON);
            let meta = SyntheticMeta {
                i1: b.i1,
                i2: b.i2,
                j1: b.j1,
                j2: b.j2,
                step_index: vec![b.step],
                step_amplitude: vec![b.j2 - b.j1],
                input_noise,
                target_noise: vec![target_noise],
            };
            Sample {
                input: add(&meta.clean_input(), &meta.input_noise),
                futures: vec![add(&meta.clean_target(0), &meta.target_noise[0])],
                meta: Some(meta),
            }
        })
        .collect();
    DatasetSplit::new("synthetic-det", split, seed, INPUT_LEN, HORIZON, samples)
}

fn prob_split(seed: u64, split: SplitKind) -> DatasetSplit {
    let mut rng = split_rng(seed, split);
    let jitter = Normal::new(0.0, PROB_AMPLITUDE_STD).expect("valid normal");
    let samples = (0..PROB_INPUTS)
        .map(|_| {
            let b = draw_base(&mut rng);
            let input_noise = noise(&mut rng, INPUT_LEN);
            let mut step_index = Vec::with_capacity(PROB_FUTURES);
            let mut step_amplitude = Vec::with_capacity(PROB_FUTURES);
            let mut target_noise = Vec::with_capacity(PROB_FUTURES);
            for _ in 0..PROB_FUTURES {
                let shift = rng.random_range(-PROB_SHIFT..=PROB_SHIFT);
                let s = (b.step as i64 + shift).clamp(STEP_MIN as i64, STEP_MAX as i64);
                step_index.push(s as usize);
                step_amplitude.push(b.j2 - b.j1 + jitter.sample(&mut rng));
                target_noise.push(noise(&mut rng, HORIZON));
            }
            let meta = SyntheticMeta {
                i1: b.i1,
                i2: b.i2,
                j1: b.j1,
                j2: b.j2,
                step_index,
                step_amplitude,
                input_noise,
                target_noise,
            };
            let futures = (0..PROB_FUTURES)
                .map(|f| add(&meta.clean_target(f), &meta.target_noise[f]))
                .collect();
            Sample {
                input: add(&meta.clean_input(), &meta.input_noise),
                futures,
                meta: Some(meta),
            }
        })
        .collect();
    DatasetSplit::new("synthetic-prob", split, seed, INPUT_LEN, HORIZON, samples)
}

/// Two-peak inputs followed by a step target; 500 series per split.
pub fn gen_synthetic_det(seed: u64) -> Dataset {
    Dataset {
        train: det_split(seed, SplitKind::Train),
        valid: det_split(seed, SplitKind::Valid),
        test: det_split(seed, SplitKind::Test),
    }
}

/// 100 inputs per split, each with 10 futures whose step amplitude and
/// position are jittered around the deterministic variant's step.
pub fn gen_synthetic_prob(seed: u64) -> Dataset {
    Dataset {
        train: prob_split(seed, SplitKind::Train),
        valid: prob_split(seed, SplitKind::Valid),
        test: prob_split(seed, SplitKind::Test),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::detect_step_changepoint;

    #[test]
    fn det_shapes_and_meta() {
        let d = gen_synthetic_det(0);
        for s in d.splits() {
            assert_eq!(s.samples.len(), 500);
            assert_eq!(s.n_pairs(), 500);
            for sample in &s.samples {
                assert_eq!(sample.input.len(), 20);
                assert_eq!(sample.futures.len(), 1);
                assert_eq!(sample.futures[0].len(), 20);
                let m = sample.meta.as_ref().unwrap();
                assert!(m.i1 < m.i2 && m.i2 <= INPUT_LEN);
                assert!((0.0..=1.0).contains(&m.j1) && (0.0..=1.0).contains(&m.j2));
                assert!((STEP_MIN..=STEP_MAX).contains(&m.step_index[0]));
                let target = sample.futures[0].values();
                let clean = m.clean_target(0);
                for t in 0..HORIZON {
                    assert!((target[t] - m.target_noise[0][t] - clean[t]).abs() < 1e-12);
                }
                let mut levels: Vec<f64> = clean.clone();
                levels.dedup();
                assert_eq!(levels, vec![0.0, m.j2 - m.j1]);
            }
        }
    }

    #[test]
    fn generators_are_deterministic_per_seed() {
        assert_eq!(gen_synthetic_det(3), gen_synthetic_det(3));
        assert_ne!(gen_synthetic_det(3).train, gen_synthetic_det(4).train);
        assert_ne!(gen_synthetic_det(3).train.samples, gen_synthetic_det(3).valid.samples);
        assert_eq!(gen_synthetic_prob(5), gen_synthetic_prob(5));
    }

    #[test]
    fn prob_futures_share_input_and_vary_step() {
        let d = gen_synthetic_prob(1);
        let mut spread = 0;
        for s in d.splits() {
            assert_eq!(s.samples.len(), 100);
            assert_eq!(s.n_pairs(), 1000);
            for sample in &s.samples {
                assert_eq!(sample.futures.len(), 10);
                let m = sample.meta.as_ref().unwrap();
                let mut idx = m.step_index.clone();
                idx.sort_unstable();
                idx.dedup();
                if idx.len() >= 2 {
                    spread += 1;
                }
            }
            let pairs: Vec<_> = s.pairs().collect();
            assert!(pairs[..10].iter().all(|(x, _)| x.values() == pairs[0].0.values()));
        }
        assert!(spread as f64 >= 0.9 * 300.0, "{spread}");
    }

    #[test]
    fn noiseless_step_recovered_exactly() {
        let d = gen_synthetic_det(7);
        for sample in &d.test.samples {
            let m = sample.meta.as_ref().unwrap();
            let clean = TimeSeries::univariate(m.clean_target(0)).unwrap();
            let det = detect_step_changepoint(&clean).unwrap();
            assert_eq!(det.points.indices(), &[m.target_step(0)]);
        }
    }

    #[test]
    fn noisy_step_detected_within_one() {
        let (mut hit, mut total, mut hit_all, mut all) = (0, 0, 0, 0);
        for seed in 0..2 {
            for split in gen_synthetic_det(seed).splits() {
                for sample in &split.samples {
                    let m = sample.meta.as_ref().unwrap();
                    let det = detect_step_changepoint(&sample.futures[0]).unwrap();
                    let ok = det.points.indices()[0].abs_diff(m.target_step(0)) <= 1;
                    all += 1;
                    hit_all += ok as usize;
                    // smaller steps are buried in the σ = 0.1 noise
                    if (m.j2 - m.j1).abs() >= 0.3 {
                        total += 1;
                        hit += ok as usize;
                    }
                }
            }
        }
        let rate = hit as f64 / total as f64;
        eprintln!("within ±1: {rate:.3} of {total} with |j2−j1| ≥ 0.3, {:.3} of {all} overall", hit_all as f64 / all as f64);
        assert!(rate >= 0.95, "{rate}");
    }
}
