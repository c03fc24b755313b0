use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::nn::{flatten, unflatten_into, Activation, Mlp};
use super::optim::{Adam, AdamConfig};
use crate::autodiff::{Tape, Tensor};
use crate::data::{Dataset, DatasetSplit};
use crate::error::{dim_err, param_err, Error, Result};
use crate::losses::{DilateConfig, SeriesLoss, SeriesLossOp};
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    SoftDtw,
    #[default]
    Dilate,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Self::Mse),
            "soft_dtw" | "soft-dtw" => Ok(Self::SoftDtw),
            "dilate" => Ok(Self::Dilate),
            other => param_err(format!("unknown loss {other:?} (mse|soft_dtw|dilate)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub alpha: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub hidden: usize,
    pub activation: Activation,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Dilate,
            alpha: 0.5,
            gamma: 1e-2,
            learning_rate: 1e-3,
            epochs: 1000,
            batch_size: 100,
            patience: 50,
            seed: 0,
            hidden: 128,
            activation: Activation::Relu,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn series_loss(&self) -> Result<SeriesLoss> {
        let loss = match self.loss {
            LossKind::Mse => SeriesLoss::Mse,
            LossKind::SoftDtw => SeriesLoss::SoftDtw { gamma: self.gamma },
            LossKind::Dilate => SeriesLoss::Dilate(DilateConfig::new(self.alpha, self.gamma)?),
        };
        loss.validate()?;
        Ok(loss)
    }

    pub fn validate(&self) -> Result<()> {
        self.series_loss()?;
        self.adam.validate()?;
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return param_err(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return param_err("batch size and hidden width must be positive");
        }
        Ok(())
    }
}

/// One hidden layer mapping `input_len·dim` inputs to `horizon·dim` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpForecaster {
    pub input_len: usize,
    pub horizon: usize,
    pub dim: usize,
    pub net: Mlp,
    pub seed: u64,
}

impl MlpForecaster {
    pub fn new(input_len: usize, horizon: usize, dim: usize, hidden: usize, activation: Activation, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&mut rng, &[input_len * dim, hidden, horizon * dim], activation, false);
        Self {
            input_len,
            horizon,
            dim,
            net,
            seed,
        }
    }

    pub fn hidden(&self) -> usize {
        self.net.layers[0].fan_out()
    }

    pub fn weights(&self) -> Vec<f64> {
        flatten(&self.net.params())
    }

    pub fn set_weights(&mut self, w: &[f64]) -> Result<()> {
        unflatten_into(&mut self.net.params_mut(), w)
    }

    pub fn predict_batch(&self, inputs: &[&TimeSeries]) -> Result<Vec<TimeSeries>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let cols = self.input_len * self.dim;
        for x in inputs {
            if x.dim() != self.dim || x.len() != self.input_len {
                return dim_err(format!(
                    "model expects {}×{} inputs, got {}×{}",
                    self.input_len,
                    self.dim,
                    x.len(),
                    x.dim()
                ));
            }
        }
        let x = stack(inputs.iter().map(|s| s.values()), cols)?;
        let out = self.net.forward(&x)?;
        (0..inputs.len())
            .map(|i| TimeSeries::new(self.dim, out.row(i).to_vec()))
            .collect()
    }

    pub fn predict(&self, x: &TimeSeries) -> Result<TimeSeries> {
        Ok(self.predict_batch(&[x])?.remove(0))
    }
}

pub(crate) fn stack<'a>(rows: impl Iterator<Item = &'a [f64]>, cols: usize) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        data.extend_from_slice(r);
        n += 1;
    }
    Tensor::matrix(n, cols, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept; 0 means the initialization.
    pub best_epoch: usize,
    pub best_valid: f64,
    pub stopped_early: bool,
    /// Epochs where the moving average (window 10) of the training loss rose.
    pub instabilities: Vec<usize>,
}

const SMOOTHING_WINDOW: usize = 10;

fn smoothed_rises(trace: &[f64]) -> Vec<usize> {
    if trace.len() <= SMOOTHING_WINDOW {
        return Vec::new();
    }
    let ma: Vec<f64> = trace
        .windows(SMOOTHING_WINDOW)
        .map(|w| w.iter().sum::<f64>() / SMOOTHING_WINDOW as f64)
        .collect();
    ma.windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] > w[0])
        .map(|(i, _)| i + SMOOTHING_WINDOW + 1)
        .collect()
}

/// Mean per-pair loss of the model on a split.
pub fn evaluate_split_loss(model: &MlpForecaster, split: &DatasetSplit, loss: &SeriesLoss) -> Result<f64> {
    let pairs: Vec<_> = split.pairs().collect();
    if pairs.is_empty() {
        return dim_err("cannot evaluate on an empty split");
    }
    let inputs: Vec<&TimeSeries> = pairs.iter().map(|(x, _)| *x).collect();
    let preds = model.predict_batch(&inputs)?;
    let values: Vec<f64> = preds
        .par_iter()
        .zip(pairs.par_iter())
        .map(|(p, (_, y))| loss.value(p, y))
        .collect::<Result<_>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

fn locate_non_finite(loss: &SeriesLoss, pred: &Tensor, targets: &Tensor, rows: &[usize], dim: usize) -> String {
    for (i, &pair) in rows.iter().enumerate() {
        let p = pred.row(i);
        if p.iter().any(|v| !v.is_finite()) {
            return format!("prediction for training pair {pair} is non-finite");
        }
        let eval = TimeSeries::new(dim, p.to_vec())
            .and_then(|p| Ok((p, TimeSeries::new(dim, targets.row(i).to_vec())?)))
            .and_then(|(p, t)| loss.eval(&p, &t));
        match eval {
            Ok((v, g)) if v.is_finite() && g.iter().all(|x| x.is_finite()) => {}
            Ok((v, _)) => return format!("{} loss on training pair {pair} is {v}", loss.name()),
            Err(e) => return format!("training pair {pair}: {e}"),
        }
    }
    "no single pair reproduces the failure".to_string()
}

/// Minimizes the configured loss with Adam, keeping the weights of the best
/// validation epoch and stopping after `patience` epochs without improvement.
pub fn train_deterministic(data: &Dataset, cfg: &TrainConfig) -> Result<(MlpForecaster, TrainLog)> {
    cfg.validate()?;
    let train = &data.train;
    let first = train
        .samples
        .first()
        .ok_or_else(|| Error::Parameter("empty training split".into()))?;
    let dim = first.input.dim();
    let (t_in, tau) = (train.input_len, train.horizon);
    let loss = cfg.series_loss()?;
    let op = SeriesLossOp::register(loss, dim);
    let mut model = MlpForecaster::new(t_in, tau, dim, cfg.hidden, cfg.activation, cfg.seed);
    let mut log = TrainLog {
        best_valid: f64::INFINITY,
        ..TrainLog::default()
    };
    if cfg.epochs == 0 {
        log.best_valid = evaluate_split_loss(&model, &data.valid, &loss)?;
        return Ok((model, log));
    }

    let xs = train.pair_inputs();
    let ys = train.pair_targets();
    let (xc, yc) = (t_in * dim, tau * dim);
    let n = train.n_pairs();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(cfg.adam, cfg.learning_rate, &model.net.params());
    let mut order: Vec<usize> = (0..n).collect();
    let mut best_weights = model.weights();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let x = stack(rows.iter().map(|&r| &xs[r * xc..(r + 1) * xc]), xc)?;
            let y = stack(rows.iter().map(|&r| &ys[r * yc..(r + 1) * yc]), yc)?;
            let mut tape = Tape::new();
            let bound = model.net.bind(&mut tape, true);
            let xv = tape.constant(x);
            let yv = tape.constant(y.clone());
            let pred = bound.forward(&mut tape, xv)?;
            let step = tape
                .custom(&op, &[pred, yv])
                .and_then(|l| Ok((l, tape.backward(l)?)));
            let (l, grads) = match step {
                Ok(v) => v,
                Err(Error::NonFinite(msg)) => {
                    let where_ = locate_non_finite(&loss, tape.value(pred), &y, rows, dim);
                    return Err(Error::NonFinite(format!("epoch {epoch}, batch {b}: {where_} ({msg})")));
                }
                Err(e) => return Err(e),
            };
            total += tape.value(l).item() * rows.len() as f64;
            let g: Vec<Tensor> = bound
                .vars()
                .iter()
                .zip(model.net.params())
                .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
                .collect();
            adam.step(&mut model.net.params_mut(), &g)?;
        }
        for p in model.net.params() {
            p.check_finite(&format!("weights after epoch {epoch}"))?;
        }
        let valid = evaluate_split_loss(&model, &data.valid, &loss)?;
        let train_loss = total / n as f64;
        log::debug!("epoch {epoch}: train {train_loss:.6} valid {valid:.6}");
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            valid_loss: valid,
        });
        if valid < log.best_valid {
            log.best_valid = valid;
            log.best_epoch = epoch;
            best_weights = model.weights();
        } else if epoch - log.best_epoch >= cfg.patience {
            log.stopped_early = true;
            break;
        }
    }
    model.set_weights(&best_weights)?;
    let trace: Vec<f64> = log.epochs.iter().map(|e| e.train_loss).collect();
    log.instabilities = smoothed_rises(&trace);
    if !log.instabilities.is_empty() {
        log::info!(
            "smoothed training loss rose at {} epochs (first at {})",
            log.instabilities.len(),
            log.instabilities[0]
        );
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Sample, SplitKind};
    use rand::Rng;

    fn linear_split(seed: u64, split: SplitKind, n: usize) -> DatasetSplit {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|_| {
                let a: f64 = rng.random_range(-0.5..0.5);
                let b: f64 = rng.random_range(-0.05..0.05);
                let line = |t: usize| a + b * t as f64;
                Sample {
                    input: TimeSeries::univariate((0..10).map(line).collect()).unwrap(),
                    futures: vec![TimeSeries::univariate((10..15).map(line).collect()).unwrap()],
                    meta: None,
                }
            })
            .collect();
        DatasetSplit::new("linear", split, seed, 10, 5, samples)
    }

    fn linear_data() -> Dataset {
        Dataset {
            train: linear_split(0, SplitKind::Train, 200),
            valid: linear_split(1, SplitKind::Valid, 100),
            test: linear_split(2, SplitKind::Test, 100),
        }
    }

    #[test]
    fn mse_fits_linear_continuation() {
        let cfg = TrainConfig {
            loss: LossKind::Mse,
            epochs: 200,
            batch_size: 20,
            hidden: 32,
            ..TrainConfig::default()
        };
        let (model, log) = train_deterministic(&linear_data(), &cfg).unwrap();
        assert!(log.best_valid < 1e-3, "{}", log.best_valid);
        let v = evaluate_split_loss(&model, &linear_data().valid, &SeriesLoss::Mse).unwrap();
        assert_eq!(v, log.best_valid);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = TrainConfig {
            epochs: 0,
            hidden: 8,
            seed: 4,
            ..TrainConfig::default()
        };
        let (model, log) = train_deterministic(&linear_data(), &cfg).unwrap();
        assert_eq!(model, MlpForecaster::new(10, 5, 1, 8, Activation::Relu, 4));
        assert!(log.epochs.is_empty());
    }

    #[test]
    fn identical_seeds_identical_weights() {
        let cfg = TrainConfig {
            epochs: 3,
            hidden: 16,
            batch_size: 16,
            seed: 9,
            ..TrainConfig::default()
        };
        let (a, la) = train_deterministic(&linear_data(), &cfg).unwrap();
        let (b, lb) = train_deterministic(&linear_data(), &cfg).unwrap();
        assert_eq!(a.weights(), b.weights());
        assert_eq!(la, lb);
        let (c, _) = train_deterministic(&linear_data(), &TrainConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.weights(), c.weights());
    }

    #[test]
    fn divergence_is_reported_with_location() {
        let cfg = TrainConfig {
            loss: LossKind::Mse,
            learning_rate: 1e300,
            epochs: 5,
            hidden: 4,
            ..TrainConfig::default()
        };
        match train_deterministic(&linear_data(), &cfg) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains("epoch"), "{msg}"),
            other => panic!("expected a non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn smoothing_flags_rises() {
        let mut trace: Vec<f64> = (0..30).map(|i| 1.0 / (1.0 + i as f64)).collect();
        assert!(smoothed_rises(&trace).is_empty());
        trace[25] = 10.0;
        assert_eq!(smoothed_rises(&trace), vec![26]);
    }

    #[test]
    fn config_parsing() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"loss":"soft_dtw","gamma":0.1}"#).unwrap();
        assert_eq!(cfg.series_loss().unwrap(), SeriesLoss::SoftDtw { gamma: 0.1 });
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lossy":"mse"}"#).is_err());
        assert!(TrainConfig { alpha: 1.5, ..TrainConfig::default() }.validate().is_err());
        assert_eq!("soft-dtw".parse::<LossKind>().unwrap(), LossKind::SoftDtw);
    }
}
