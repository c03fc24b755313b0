use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::deterministic::{stack, EpochRecord, TrainLog};
use super::nn::{flatten, unflatten_into, Activation, Mlp};
use super::optim::{Adam, AdamConfig};
use crate::autodiff::{OpHandle, Tape, Tensor, Var};
use crate::data::{Dataset, DatasetSplit};
use crate::error::{dim_err, param_err, Error, Result};
use crate::kernels::{DiversityLossOp, KernelKind, KernelParams, QualitySpec};
use crate::losses::{DilateConfig, SeriesLoss, SeriesLossOp};
use crate::metrics::{cross_loss, f1, h_diversity_from_matrix, h_quality_from_matrix, EvalLoss};
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StripeConfig {
    pub hidden: usize,
    /// Dimension `k` of each latent code.
    pub latent: usize,
    pub n_shape: usize,
    pub n_time: usize,
    pub activation: Activation,
    /// DILATE used as the reconstruction term and for proposal quality.
    pub dilate: DilateConfig,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub proposal_epochs: usize,
    pub proposal_learning_rate: f64,
    /// Keep the proposal weights of the epoch with the lowest validation F1.
    pub select_proposals: bool,
    pub mu_quality: f64,
    pub kernel: KernelParams,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for StripeConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            latent: 8,
            n_shape: 10,
            n_time: 10,
            activation: Activation::Relu,
            dilate: DilateConfig::default(),
            learning_rate: 1e-3,
            epochs: 1000,
            batch_size: 100,
            patience: 50,
            proposal_epochs: 100,
            proposal_learning_rate: 1e-3,
            select_proposals: false,
            mu_quality: 20.0,
            kernel: KernelParams::default(),
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl StripeConfig {
    pub fn validate(&self) -> Result<()> {
        self.dilate.validate()?;
        self.adam.validate()?;
        if self.hidden == 0 || self.latent == 0 || self.n_shape == 0 || self.n_time == 0 || self.batch_size == 0 {
            return param_err("widths, code sizes, proposal counts and batch size must be positive");
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("proposal_learning_rate", self.proposal_learning_rate),
            ("mu_quality", self.mu_quality),
            ("kernel.gamma", self.kernel.gamma),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return param_err(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// `KL(N(μ, σ²) ‖ N(0, I))` for one code with `log σ` given.
pub fn kl_standard_normal(mu: &[f64], log_sigma: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(log_sigma)
        .map(|(m, l)| (2.0 * l).exp() + m * m - 1.0 - 2.0 * l)
        .sum::<f64>()
}

/// Context encoder, posterior network, decoder and the two proposal
/// networks of the latent-code forecaster. Univariate series only.
#[derive(Debug, Clone, PartialEq)]
pub struct StripeModel {
    pub input_len: usize,
    pub horizon: usize,
    pub latent: usize,
    pub n_shape: usize,
    pub n_time: usize,
    pub encoder: Mlp,
    pub posterior: Mlp,
    pub decoder: Mlp,
    pub proposal_shape: Mlp,
    pub proposal_time: Mlp,
    pub seed: u64,
}

/// One batch of the prediction objective with its reparameterization noise.
#[derive(Debug, Clone)]
pub struct PredictorBatch {
    pub x: Tensor,
    pub y: Tensor,
    pub eps_shape: Tensor,
    pub eps_time: Tensor,
}

impl StripeModel {
    pub fn new(input_len: usize, horizon: usize, cfg: &StripeConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (h, k, act) = (cfg.hidden, cfg.latent, cfg.activation);
        Self {
            input_len,
            horizon,
            latent: k,
            n_shape: cfg.n_shape,
            n_time: cfg.n_time,
            encoder: Mlp::new(&mut rng, &[input_len, h], act, true),
            posterior: Mlp::new(&mut rng, &[input_len + horizon, h, 4 * k], act, false),
            decoder: Mlp::new(&mut rng, &[h + 2 * k, h, horizon], act, false),
            proposal_shape: Mlp::new(&mut rng, &[h, h, cfg.n_shape * k], act, false),
            proposal_time: Mlp::new(&mut rng, &[h, h, cfg.n_time * k], act, false),
            seed: cfg.seed,
        }
    }

    pub fn hidden(&self) -> usize {
        self.encoder.layers[0].fan_out()
    }

    /// Encoder, posterior and decoder weights.
    pub fn predictor_params(&self) -> Vec<&Tensor> {
        let mut p = self.encoder.params();
        p.extend(self.posterior.params());
        p.extend(self.decoder.params());
        p
    }

    pub fn predictor_params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.extend(self.posterior.params_mut());
        p.extend(self.decoder.params_mut());
        p
    }

    fn all_params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        for net in [&mut self.posterior, &mut self.decoder, &mut self.proposal_shape, &mut self.proposal_time] {
            p.extend(net.params_mut());
        }
        p
    }

    pub fn proposal_params(&self) -> Vec<&Tensor> {
        let mut p = self.proposal_shape.params();
        p.extend(self.proposal_time.params());
        p
    }

    pub fn weights(&self) -> Vec<f64> {
        let mut w = flatten(&self.predictor_params());
        w.extend(flatten(&self.proposal_params()));
        w
    }

    pub fn set_weights(&mut self, w: &[f64]) -> Result<()> {
        unflatten_into(&mut self.all_params_mut(), w)
    }

    fn check_inputs(&self, x: &Tensor) -> Result<()> {
        let (_, c) = x.dims2();
        if c != self.input_len {
            return dim_err(format!("model expects inputs of length {}, got {c}", self.input_len));
        }
        Ok(())
    }

    /// Context codes `h` for a batch of inputs `[B, T]`.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check_inputs(x)?;
        self.encoder.forward(x)
    }

    /// Posterior heads `[B, 4k]` = `(μ_s, log σ_s, μ_t, log σ_t)`.
    pub fn posterior_heads(&self, x: &Tensor, y: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let xy = tape.concat_cols(&[xv, yv])?;
        let out = self.posterior.bind(&mut tape, false).forward(&mut tape, xy)?;
        Ok(tape.value(out).clone())
    }

    /// Decodes rows of `h ‖ z_s ‖ z_t`.
    pub fn decode(&self, h: &Tensor, z_shape: &Tensor, z_time: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let parts = [h, z_shape, z_time].map(|t| tape.constant(t.clone()));
        let input = tape.concat_cols(&parts)?;
        let out = self.decoder.bind(&mut tape, false).forward(&mut tape, input)?;
        Ok(tape.value(out).clone())
    }

    fn prediction_graph(&self, tape: &mut Tape, batch: &PredictorBatch, op: &OpHandle) -> Result<(Var, Vec<Var>)> {
        self.check_inputs(&batch.x)?;
        let k = self.latent;
        let b = batch.x.dims2().0 as f64;
        let enc = self.encoder.bind(tape, true);
        let post = self.posterior.bind(tape, true);
        let dec = self.decoder.bind(tape, true);
        let xv = tape.constant(batch.x.clone());
        let yv = tape.constant(batch.y.clone());
        let es = tape.constant(batch.eps_shape.clone());
        let et = tape.constant(batch.eps_time.clone());

        let h = enc.forward(tape, xv)?;
        let xy = tape.concat_cols(&[xv, yv])?;
        let heads = post.forward(tape, xy)?;
        let mut codes = Vec::with_capacity(2);
        let mut kl_terms = Vec::with_capacity(2);
        for (c, eps) in [(0, es), (1, et)] {
            let mu = tape.slice_cols(heads, 2 * c * k, (2 * c + 1) * k)?;
            let log_sigma = tape.slice_cols(heads, (2 * c + 1) * k, (2 * c + 2) * k)?;
            let sigma = tape.exp(log_sigma);
            let noise = tape.mul(sigma, eps)?;
            codes.push(tape.add(mu, noise)?);
            let two_l = tape.scale(log_sigma, 2.0);
            let var = tape.exp(two_l);
            let mu2 = tape.mul(mu, mu)?;
            let s = tape.add(var, mu2)?;
            let s = tape.sub(s, two_l)?;
            let s = tape.add_scalar(s, -1.0);
            let total = tape.sum(s);
            kl_terms.push(tape.scale(total, 0.5 / b));
        }
        let dec_in = tape.concat_cols(&[h, codes[0], codes[1]])?;
        let pred = dec.forward(tape, dec_in)?;
        let recon = tape.custom(op, &[pred, yv])?;
        let kl = tape.add(kl_terms[0], kl_terms[1])?;
        let loss = tape.add(recon, kl)?;
        let mut vars = enc.vars();
        vars.extend(post.vars());
        vars.extend(dec.vars());
        Ok((loss, vars))
    }

    /// Batch-mean `DILATE(ŷ, y) + KL_s + KL_t` and its gradient w.r.t.
    /// [`Self::predictor_params`].
    pub fn prediction_loss(&self, batch: &PredictorBatch, dilate: &DilateConfig) -> Result<(f64, Vec<Tensor>)> {
        let op = SeriesLossOp::register(SeriesLoss::Dilate(*dilate), 1);
        self.prediction_loss_with(batch, &op)
    }

    fn prediction_loss_with(&self, batch: &PredictorBatch, op: &OpHandle) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let (loss, vars) = self.prediction_graph(&mut tape, batch, op)?;
        let grads = tape.backward(loss)?;
        let g = vars
            .iter()
            .zip(self.predictor_params())
            .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
            .collect();
        Ok((tape.value(loss).item(), g))
    }

    /// Shape codes `[N_s, k]` and time codes `[N_t, k]` proposed for one context code row.
    fn proposals(&self, h: &Tensor) -> Result<(Tensor, Tensor)> {
        let zs = self.proposal_shape.forward(h)?;
        let zt = self.proposal_time.forward(h)?;
        Ok((
            Tensor::matrix(self.n_shape, self.latent, zs.into_data())?,
            Tensor::matrix(self.n_time, self.latent, zt.into_data())?,
        ))
    }

    /// `N_s × N_t` trajectories `Decoder(h, z_sⁱ, z_tʲ)`, index `i·N_t + j`.
    pub fn sample_futures(&self, x: &TimeSeries) -> Result<Vec<TimeSeries>> {
        let xt = Tensor::matrix(1, x.len(), x.values().to_vec())?;
        let h = self.encode(&xt)?;
        let (zs, zt) = self.proposals(&h)?;
        let n = self.n_shape * self.n_time;
        let mut hs = Vec::with_capacity(n * h.len());
        let mut s = Vec::with_capacity(n * self.latent);
        let mut t = Vec::with_capacity(n * self.latent);
        for i in 0..self.n_shape {
            for j in 0..self.n_time {
                hs.extend_from_slice(h.data());
                s.extend_from_slice(zs.row(i));
                t.extend_from_slice(zt.row(j));
            }
        }
        let out = self.decode(
            &Tensor::matrix(n, h.len(), hs)?,
            &Tensor::matrix(n, self.latent, s)?,
            &Tensor::matrix(n, self.latent, t)?,
        )?;
        rows(&out)
    }

    /// `n` trajectories with both codes drawn from the standard normal prior.
    pub fn sample_prior(&self, x: &TimeSeries, n: usize, rng: &mut impl Rng) -> Result<Vec<TimeSeries>> {
        let xt = Tensor::matrix(1, x.len(), x.values().to_vec())?;
        let h = self.encode(&xt)?;
        let hs: Vec<f64> = (0..n).flat_map(|_| h.data().iter().copied()).collect();
        let k = self.latent;
        let mut normal = |len: usize| (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>();
        let zs = Tensor::matrix(n, k, normal(n * k))?;
        let zt = Tensor::matrix(n, k, normal(n * k))?;
        rows(&self.decode(&Tensor::matrix(n, h.len(), hs)?, &zs, &zt)?)
    }

    /// Debugging variant of diversification: gradient descent directly on
    /// `n` shape codes for one input (time code fixed at the prior mean),
    /// with the unweighted shape-kernel DPP loss and no proposal network.
    pub fn optimize_shape_codes(
        &self,
        x: &TimeSeries,
        n: usize,
        steps: usize,
        learning_rate: f64,
        kernel: &KernelParams,
        seed: u64,
    ) -> Result<(Tensor, Vec<TimeSeries>)> {
        if n == 0 {
            return param_err("need at least one code");
        }
        let xt = Tensor::matrix(1, x.len(), x.values().to_vec())?;
        let h = self.encode(&xt)?;
        let k = self.latent;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut codes = Tensor::matrix(n, k, (0..n * k).map(|_| rng.sample(StandardNormal)).collect())?;
        let op = DiversityLossOp {
            kind: KernelKind::Shape,
            params: *kernel,
            quality: None,
            group: n,
        }
        .register();
        let reference = Tensor::zeros(&[1, self.horizon]);
        let mut adam = Adam::new(AdamConfig::default(), learning_rate, &[&codes]);
        for _ in 0..steps {
            let mut tape = Tape::new();
            let hv = tape.constant(h.clone());
            let hr = tape.repeat_rows(hv, n)?;
            let zs = tape.leaf(codes.clone());
            let zt = tape.constant(Tensor::zeros(&[n, k]));
            let input = tape.concat_cols(&[hr, zs, zt])?;
            let traj = self.decoder.bind(&mut tape, false).forward(&mut tape, input)?;
            let r = tape.constant(reference.clone());
            let loss = tape.custom(&op, &[traj, r])?;
            let g = tape.backward(loss)?.get_or_zeros(zs, &[n, k]);
            adam.step(&mut [&mut codes], &[g])?;
        }
        let hs: Vec<f64> = (0..n).flat_map(|_| h.data().iter().copied()).collect();
        let out = self.decode(&Tensor::matrix(n, h.len(), hs)?, &codes, &Tensor::zeros(&[n, k]))?;
        Ok((codes.clone(), rows(&out)?))
    }
}

fn rows(t: &Tensor) -> Result<Vec<TimeSeries>> {
    (0..t.dims2().0)
        .map(|i| TimeSeries::univariate(t.row(i).to_vec()))
        .collect()
}

fn check_univariate_split(split: &DatasetSplit) -> Result<()> {
    if split.samples.iter().any(|s| s.input.dim() != 1) {
        return dim_err("the latent-code forecaster handles univariate series only");
    }
    if split.n_pairs() == 0 {
        return param_err(format!("{} split is empty", split.split.name()));
    }
    Ok(())
}

fn normal_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect())
        .expect("shape matches data")
}

struct PairTable {
    xs: Vec<f64>,
    ys: Vec<f64>,
    n: usize,
    xc: usize,
    yc: usize,
}

impl PairTable {
    fn new(split: &DatasetSplit) -> Self {
        Self {
            xs: split.pair_inputs(),
            ys: split.pair_targets(),
            n: split.n_pairs(),
            xc: split.input_len,
            yc: split.horizon,
        }
    }

    fn batch(&self, rows: &[usize]) -> Result<(Tensor, Tensor)> {
        let (xc, yc) = (self.xc, self.yc);
        Ok((
            stack(rows.iter().map(|&r| &self.xs[r * xc..(r + 1) * xc]), xc)?,
            stack(rows.iter().map(|&r| &self.ys[r * yc..(r + 1) * yc]), yc)?,
        ))
    }
}

fn validation_loss(model: &StripeModel, table: &PairTable, op: &OpHandle, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let rows: Vec<usize> = (0..table.n).collect();
    let (x, y) = table.batch(&rows)?;
    let k = model.latent;
    let batch = PredictorBatch {
        x,
        y,
        eps_shape: normal_tensor(&mut rng, table.n, k),
        eps_time: normal_tensor(&mut rng, table.n, k),
    };
    let mut tape = Tape::new();
    let (loss, _) = model.prediction_graph(&mut tape, &batch, op)?;
    Ok(tape.value(loss).item())
}

/// Fits encoder, posterior and decoder on the ELBO-style objective, every
/// (input, future) pair being a separate example. Validation uses one fixed
/// draw of the reparameterization noise.
pub fn train_stripe_predictor(data: &Dataset, cfg: &StripeConfig) -> Result<(StripeModel, TrainLog)> {
    cfg.validate()?;
    check_univariate_split(&data.train)?;
    check_univariate_split(&data.valid)?;
    let mut model = StripeModel::new(data.train.input_len, data.train.horizon, cfg);
    let op = SeriesLossOp::register(SeriesLoss::Dilate(cfg.dilate), 1);
    let train = PairTable::new(&data.train);
    let valid = PairTable::new(&data.valid);
    let mut log = TrainLog {
        best_valid: f64::INFINITY,
        ..TrainLog::default()
    };
    if cfg.epochs == 0 {
        log.best_valid = validation_loss(&model, &valid, &op, cfg.seed)?;
        return Ok((model, log));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(cfg.adam, cfg.learning_rate, &model.predictor_params());
    let mut order: Vec<usize> = (0..train.n).collect();
    let mut best = model.weights();
    for epoch in 1..=cfg.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut total = 0.0;
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = train.batch(rows)?;
            let batch = PredictorBatch {
                x,
                y,
                eps_shape: normal_tensor(&mut rng, rows.len(), model.latent),
                eps_time: normal_tensor(&mut rng, rows.len(), model.latent),
            };
            let (value, grads) = model
                .prediction_loss_with(&batch, &op)
                .map_err(|e| match e {
                    Error::NonFinite(msg) => Error::NonFinite(format!("predictor epoch {epoch}, batch {b}: {msg}")),
                    e => e,
                })?;
            total += value * rows.len() as f64;
            adam.step(&mut model.predictor_params_mut(), &grads)?;
        }
        for p in model.predictor_params() {
            p.check_finite(&format!("predictor weights after epoch {epoch}"))?;
        }
        let v = validation_loss(&model, &valid, &op, cfg.seed)?;
        let train_loss = total / train.n as f64;
        log::debug!("predictor epoch {epoch}: train {train_loss:.6} valid {v:.6}");
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            valid_loss: v,
        });
        if v < log.best_valid {
            log.best_valid = v;
            log.best_epoch = epoch;
            best = model.weights();
        } else if epoch - log.best_epoch >= cfg.patience {
            log.stopped_early = true;
            break;
        }
    }
    model.set_weights(&best)?;
    Ok((model, log))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SetScores {
    pub h_quality: f64,
    pub h_diversity: f64,
    pub f1: f64,
}

impl SetScores {
    /// Split means of the set scores under `loss`, one prediction set per input.
    pub fn evaluate<F>(split: &DatasetSplit, loss: &EvalLoss, mut predict: F) -> Result<Self>
    where
        F: FnMut(&TimeSeries) -> Result<Vec<TimeSeries>>,
    {
        if split.samples.is_empty() {
            return dim_err("set scores over an empty split");
        }
        let sets: Vec<_> = split
            .samples
            .iter()
            .map(|s| Ok((predict(&s.input)?, &s.futures)))
            .collect::<Result<_>>()?;
        let per: Vec<(f64, f64)> = sets
            .par_iter()
            .map(|(preds, futures)| {
                let c = cross_loss(preds, futures, loss)?;
                Ok((h_quality_from_matrix(&c), h_diversity_from_matrix(&c)))
            })
            .collect::<Result<_>>()?;
        let n = per.len() as f64;
        let h_quality = per.iter().map(|p| p.0).sum::<f64>() / n;
        let h_diversity = per.iter().map(|p| p.1).sum::<f64>() / n;
        Ok(Self {
            h_quality,
            h_diversity,
            f1: f1(h_quality, h_diversity),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProposalEpoch {
    pub epoch: usize,
    pub shape_loss: f64,
    pub time_loss: f64,
    /// Validation set scores under DILATE, present when selection is on.
    pub valid: Option<SetScores>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProposalLog {
    pub epochs: Vec<ProposalEpoch>,
    /// Epoch whose proposal weights were kept (0 = untrained proposals).
    pub best_epoch: usize,
}

enum Branch {
    Shape,
    Time,
}

/// Loss of one proposal branch on a batch; gradients reach only the
/// branch's proposal network.
fn proposal_step(
    model: &StripeModel,
    branch: &Branch,
    h: &Tensor,
    heads: &Tensor,
    y: &Tensor,
    op: &OpHandle,
) -> Result<(f64, Vec<Tensor>)> {
    let k = model.latent;
    let (net, n) = match branch {
        Branch::Shape => (&model.proposal_shape, model.n_shape),
        Branch::Time => (&model.proposal_time, model.n_time),
    };
    let b = h.dims2().0;
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape, true);
    let hv = tape.constant(h.clone());
    let hd = tape.constant(heads.clone());
    let yv = tape.constant(y.clone());
    let codes = bound.forward(&mut tape, hv)?;
    let codes = tape.reshape(codes, &[b * n, k])?;
    let hr = tape.repeat_rows(hv, n)?;
    let input = match branch {
        Branch::Shape => {
            let mu_t = tape.slice_cols(hd, 2 * k, 3 * k)?;
            let mr = tape.repeat_rows(mu_t, n)?;
            tape.concat_cols(&[hr, codes, mr])?
        }
        Branch::Time => {
            let mu_s = tape.slice_cols(hd, 0, k)?;
            let mr = tape.repeat_rows(mu_s, n)?;
            tape.concat_cols(&[hr, mr, codes])?
        }
    };
    let traj = model.decoder.bind(&mut tape, false).forward(&mut tape, input)?;
    let loss = tape.custom(op, &[traj, yv])?;
    let grads = tape.backward(loss)?;
    let g = bound
        .vars()
        .iter()
        .zip(net.params())
        .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
        .collect();
    Ok((tape.value(loss).item(), g))
}

/// Trains the shape and time proposal networks with quality-weighted DPP
/// diversity losses, the rest of the model frozen. Shape proposals are
/// decoded with the posterior time mean `μ_t*`, time proposals with `μ_s*`.
pub fn train_stripe_proposals(model: &mut StripeModel, data: &Dataset, cfg: &StripeConfig) -> Result<ProposalLog> {
    cfg.validate()?;
    check_univariate_split(&data.train)?;
    if cfg.n_shape != model.n_shape || cfg.n_time != model.n_time || cfg.latent != model.latent {
        return param_err("proposal config does not match the model's code layout");
    }
    let quality = Some(QualitySpec {
        mu: cfg.mu_quality,
        dilate: cfg.dilate,
    });
    let shape_op = DiversityLossOp {
        kind: KernelKind::ShapeQuality,
        params: cfg.kernel,
        quality,
        group: model.n_shape,
    }
    .register();
    let time_op = DiversityLossOp {
        kind: KernelKind::TimeQuality,
        params: cfg.kernel,
        quality,
        group: model.n_time,
    }
    .register();
    let table = PairTable::new(&data.train);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    let mut adam_s = Adam::new(cfg.adam, cfg.proposal_learning_rate, &model.proposal_shape.params());
    let mut adam_t = Adam::new(cfg.adam, cfg.proposal_learning_rate, &model.proposal_time.params());
    let mut order: Vec<usize> = (0..table.n).collect();
    let mut log = ProposalLog::default();
    let eval_loss = EvalLoss::Dilate(cfg.dilate);
    let score = |m: &StripeModel| SetScores::evaluate(&data.valid, &eval_loss, |x| m.sample_futures(x));
    let mut best = None;
    if cfg.select_proposals {
        check_univariate_split(&data.valid)?;
        let s = score(model)?;
        best = Some((s.f1, model.proposal_shape.clone(), model.proposal_time.clone()));
    }
    for epoch in 1..=cfg.proposal_epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let (mut ls, mut lt) = (0.0, 0.0);
        for rows in order.chunks(cfg.batch_size) {
            let (x, y) = table.batch(rows)?;
            let h = model.encode(&x)?;
            let heads = model.posterior_heads(&x, &y)?;
            let (vs, gs) = proposal_step(model, &Branch::Shape, &h, &heads, &y, &shape_op)?;
            adam_s.step(&mut model.proposal_shape.params_mut(), &gs)?;
            let (vt, gt) = proposal_step(model, &Branch::Time, &h, &heads, &y, &time_op)?;
            adam_t.step(&mut model.proposal_time.params_mut(), &gt)?;
            ls += vs * rows.len() as f64;
            lt += vt * rows.len() as f64;
        }
        for p in model.proposal_params() {
            p.check_finite(&format!("proposal weights after epoch {epoch}"))?;
        }
        let mut rec = ProposalEpoch {
            epoch,
            shape_loss: ls / table.n as f64,
            time_loss: lt / table.n as f64,
            valid: None,
        };
        if let Some((best_f1, shape, time)) = best.as_mut() {
            let s = score(model)?;
            rec.valid = Some(s);
            if s.f1 < *best_f1 {
                *best_f1 = s.f1;
                *shape = model.proposal_shape.clone();
                *time = model.proposal_time.clone();
                log.best_epoch = epoch;
            }
        } else {
            log.best_epoch = epoch;
        }
        log::debug!("proposal epoch {epoch}: shape {:.6} time {:.6} valid {:?}", rec.shape_loss, rec.time_loss, rec.valid);
        log.epochs.push(rec);
    }
    if let Some((_, shape, time)) = best {
        model.proposal_shape = shape;
        model.proposal_time = time;
    }
    Ok(log)
}
