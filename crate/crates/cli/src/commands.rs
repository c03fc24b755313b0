use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dilate::data::write_split;
use dilate::forecast::{
    train_deterministic, train_stripe_predictor, train_stripe_proposals, Checkpoint, LossKind, Model, ProposalLog,
    StripeModel, TrainLog,
};
use dilate::losses::DilateConfig;
use dilate::metrics::{dtw_metric, tdi_metric};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bench::bench_backward;
use crate::config::{parse_list, parse_seeds, DatasetSource, ExperimentConfig};
use crate::error::{config_err, CliError, Result};
use crate::eval::{evaluate, parse_metrics, set_metrics, Metric, POINT_DEFAULTS, SET_DEFAULTS};
use crate::report::{metrics_csv, metrics_table, scale_for, MetricRow, OutDir};

#[derive(Debug, Parser)]
#[command(name = "dilate", version, about = "Shape and time aware forecasting experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand; each overrides the matching config field.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON experiment config; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed, comma list or half-open range `A..B`.
    #[arg(long)]
    pub seed: Option<String>,
    /// Output directory (created if needed).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Training loss: mse, soft_dtw or dilate.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// synthetic-det, synthetic-prob, a `gen` output directory or a CSV file.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Comma-separated metric names.
    #[arg(long)]
    pub metrics: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and write its cache files.
    Gen {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the MLP forecaster, one checkpoint per seed.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate checkpoints on the test split.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long = "checkpoint", value_delimiter = ',')]
        checkpoints: Vec<PathBuf>,
    },
    /// Train and evaluate over a grid of alpha or gamma values.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        param: Option<String>,
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Time the DP backward pass against the finite-difference backward.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        lengths: Option<String>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Train the latent-code forecaster and its proposal networks.
    StripeTrain {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        proposal_epochs: Option<usize>,
    },
    /// Compare proposal sampling with prior sampling; emits scatter data.
    StripeEval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long = "checkpoint", value_delimiter = ',')]
        checkpoints: Vec<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Sweep { .. } => "sweep",
            Command::Bench { .. } => "bench",
            Command::StripeTrain { .. } => "stripe-train",
            Command::StripeEval { .. } => "stripe-eval",
        }
    }

    fn common(&self) -> &CommonArgs {
        match self {
            Command::Gen { common }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Sweep { common, .. }
            | Command::Bench { common, .. }
            | Command::StripeTrain { common, .. }
            | Command::StripeEval { common, .. } => common,
        }
    }
}

/// Builds the effective config: file first, then flag overrides, then validation.
pub fn resolve_config(command: &Command) -> Result<ExperimentConfig> {
    let common = command.common();
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = &common.seed {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(l) = &common.loss {
        cfg.train.loss = l.parse::<LossKind>().map_err(config_err)?;
    }
    if let Some(a) = common.alpha {
        cfg.train.alpha = a;
        cfg.stripe.dilate.alpha = a;
        cfg.bench.alpha = a;
    }
    if let Some(g) = common.gamma {
        cfg.train.gamma = g;
        cfg.stripe.dilate.gamma = g;
        cfg.bench.gamma = g;
    }
    if let Some(d) = &common.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(m) = &common.metrics {
        cfg.metrics = parse_list(m)?;
    }
    match command {
        Command::Train { epochs: Some(e), .. } => cfg.train.epochs = *e,
        Command::StripeTrain { epochs, proposal_epochs, .. } => {
            if let Some(e) = epochs {
                cfg.stripe.epochs = *e;
            }
            if let Some(e) = proposal_epochs {
                cfg.stripe.proposal_epochs = *e;
            }
        }
        Command::Eval { checkpoints, .. } | Command::StripeEval { checkpoints, .. } if !checkpoints.is_empty() => {
            cfg.checkpoints = checkpoints.clone();
        }
        Command::Sweep { param, grid, epochs, .. } => {
            if let Some(p) = param {
                cfg.sweep.param = Some(p.clone());
            }
            if let Some(g) = grid {
                cfg.sweep.grid = parse_list(g)?;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
        }
        Command::Bench { lengths, repeats, .. } => {
            if let Some(l) = lengths {
                cfg.bench.lengths = parse_list(l)?;
            }
            if let Some(r) = repeats {
                cfg.bench.repeats = *r;
            }
        }
        _ => {}
    }
    parse_metrics(&cfg.metrics)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one command and returns the path of its manifest.
pub fn run(cli: &Cli) -> Result<PathBuf> {
    let cfg = resolve_config(&cli.command)?;
    let out = &cli.command.common().out;
    match &cli.command {
        Command::Gen { .. } => cmd_gen(&cfg, out),
        Command::Train { .. } => cmd_train(&cfg, out),
        Command::Eval { .. } => cmd_eval(&cfg, out),
        Command::Sweep { .. } => cmd_sweep(&cfg, out),
        Command::Bench { .. } => cmd_bench(&cfg, out),
        Command::StripeTrain { .. } => cmd_stripe_train(&cfg, out),
        Command::StripeEval { .. } => cmd_stripe_eval(&cfg, out),
    }
}

fn source(cfg: &ExperimentConfig) -> Result<DatasetSource> {
    DatasetSource::resolve(cfg.dataset_name()?)
}

pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let src = source(cfg)?;
    let hash = cfg.hash();
    let mut dir = OutDir::create(out)?;
    for &seed in &cfg.seeds {
        let data = src.load(cfg.data_seed_for(seed), &cfg.csv)?;
        let target = if cfg.seeds.len() == 1 {
            dir.path().to_path_buf()
        } else {
            dir.path().join(format!("seed_{seed}"))
        };
        for split in data.splits() {
            let (bin, json) = write_split(&target, split)?;
            dir.record(&bin);
            dir.record(&json);
        }
        log::info!("dataset seed {seed} written to {}", target.display());
    }
    dir.finish("gen", cfg, &hash)
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    seed: u64,
    best_epoch: usize,
    best_valid: f64,
    epochs_run: usize,
    stopped_early: bool,
    instabilities: usize,
    checkpoint: String,
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let src = source(cfg)?;
    let hash = cfg.hash();
    let mut dir = OutDir::create(out)?;
    let runs: Vec<(u64, Checkpoint, TrainLog)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<_> {
            let data = src.load(cfg.data_seed_for(seed), &cfg.csv)?;
            let tc = dilate::forecast::TrainConfig { seed, ..cfg.train };
            let (model, log) = train_deterministic(&data, &tc)?;
            let ckpt = Checkpoint::from_mlp(&model, serde_json::to_value(tc)?, log.best_epoch)?;
            Ok((seed, ckpt, log))
        })
        .collect::<Result<_>>()?;
    let mut summary = Vec::with_capacity(runs.len());
    for (seed, ckpt, log) in runs {
        let stem = format!("model_seed{seed}");
        let bin = ckpt.write(dir.path(), &stem)?;
        dir.record(&bin);
        dir.record(&bin.with_extension("json"));
        dir.write_jsonl(&format!("train_log_seed{seed}.jsonl"), &log.epochs)?;
        summary.push(TrainSummary {
            seed,
            best_epoch: log.best_epoch,
            best_valid: log.best_valid,
            epochs_run: log.epochs.len(),
            stopped_early: log.stopped_early,
            instabilities: log.instabilities.len(),
            checkpoint: format!("{stem}.bin"),
        });
    }
    dir.write_json("summary.json", &summary)?;
    dir.finish("train", cfg, &hash)
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    for ext in ["bin", "json"] {
        let p = path.with_extension(ext);
        if !p.is_file() {
            return Err(CliError::usage(format!("checkpoint file {} does not exist", p.display())));
        }
    }
    Ok(Checkpoint::read(path)?)
}

fn eval_dilate(cfg: &ExperimentConfig) -> Result<DilateConfig> {
    DilateConfig::new(cfg.train.alpha, cfg.train.gamma).map_err(config_err)
}

fn write_metric_outputs(dir: &mut OutDir, rows: &[MetricRow]) -> Result<()> {
    dir.write_json("metrics.json", &rows)?;
    dir.write("metrics.csv", metrics_csv(rows))?;
    print!("{}", metrics_table(rows));
    Ok(())
}

pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    if cfg.checkpoints.is_empty() {
        return Err(CliError::usage("eval needs at least one --checkpoint"));
    }
    let src = source(cfg)?;
    let dilate = eval_dilate(cfg)?;
    let hash = cfg.hash();
    let ckpts: Vec<Checkpoint> = cfg.checkpoints.iter().map(|p| read_checkpoint(p)).collect::<Result<_>>()?;
    let metrics = if cfg.metrics.is_empty() {
        match ckpts[0].model()? {
            Model::Stripe(_) => SET_DEFAULTS.to_vec(),
            _ => POINT_DEFAULTS.to_vec(),
        }
    } else {
        parse_metrics(&cfg.metrics)?
    };
    let per: Vec<(u64, Vec<(Metric, f64)>)> = ckpts
        .par_iter()
        .map(|ck| -> Result<_> {
            let seed = ck.sidecar.seed;
            let data = src.load(cfg.data_seed_for(seed), &cfg.csv)?;
            Ok((seed, evaluate(&ck.model()?, &data.test, &metrics, &dilate)?))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<MetricRow> = metrics
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let vals: Vec<f64> = per.iter().map(|(_, v)| v[k].1).collect();
            MetricRow::from_values(m.name(), &vals, &hash)
        })
        .collect();
    let mut dir = OutDir::create(out)?;
    let mut raw = String::from("checkpoint,seed,metric,value\n");
    for ((seed, vals), path) in per.iter().zip(&cfg.checkpoints) {
        for (m, v) in vals {
            raw.push_str(&format!("{},{seed},{},{v}\n", path.display(), m.name()));
        }
    }
    dir.write("per_checkpoint.csv", raw)?;
    write_metric_outputs(&mut dir, &rows)?;
    dir.finish("eval", cfg, &hash)
}

#[derive(Debug, Serialize)]
struct SweepRow {
    param: String,
    value: f64,
    metrics: Vec<MetricRow>,
}

pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let param = match cfg.sweep.param.as_deref() {
        Some(p @ ("alpha" | "gamma")) => p.to_string(),
        Some(p) => return Err(CliError::usage(format!("cannot sweep {p:?} (alpha or gamma)"))),
        None => return Err(CliError::usage("sweep needs --param alpha|gamma")),
    };
    if cfg.sweep.grid.is_empty() {
        return Err(CliError::usage("sweep grid is empty"));
    }
    let src = source(cfg)?;
    let hash = cfg.hash();
    let mut jobs = Vec::new();
    for &value in &cfg.sweep.grid {
        for &seed in &cfg.seeds {
            let mut tc = dilate::forecast::TrainConfig {
                loss: LossKind::Dilate,
                seed,
                ..cfg.train
            };
            match param.as_str() {
                "alpha" => tc.alpha = value,
                _ => tc.gamma = value,
            }
            tc.validate().map_err(config_err)?;
            jobs.push((value, seed, tc));
        }
    }
    let reference = DilateConfig::default();
    let metrics = [Metric::Mse, Metric::Dtw, Metric::Tdi, Metric::SoftDtw, Metric::Dilate];
    let results: Vec<Vec<(Metric, f64)>> = jobs
        .par_iter()
        .map(|(_, seed, tc)| -> Result<_> {
            let data = src.load(cfg.data_seed_for(*seed), &cfg.csv)?;
            let (model, _) = train_deterministic(&data, tc)?;
            let model = Model::Mlp(model);
            let own = DilateConfig::new(tc.alpha, tc.gamma).map_err(config_err)?;
            let mut v = evaluate(&model, &data.test, &metrics, &own)?;
            let ref_value = evaluate(&model, &data.test, &[Metric::Dilate], &reference)?[0].1;
            v.push((Metric::Dilate, ref_value));
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let names = ["mse", "dtw", "tdi", "soft_dtw", "dilate", "dilate_ref"];
    let mut rows = Vec::new();
    let mut csv = String::from("param,value,metric,scale,mean,std,scaled_mean,scaled_std,n_seeds,config_hash\n");
    for &value in &cfg.sweep.grid {
        let idx: Vec<usize> = jobs.iter().enumerate().filter(|(_, j)| j.0 == value).map(|(i, _)| i).collect();
        let metrics: Vec<MetricRow> = names
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let vals: Vec<f64> = idx.iter().map(|&i| results[i][k].1).collect();
                MetricRow::from_values(name, &vals, &hash)
            })
            .collect();
        for r in &metrics {
            let s = scale_for(&r.metric);
            csv.push_str(&format!(
                "{param},{value},{},{s},{},{},{},{},{},{}\n",
                r.metric,
                r.mean,
                r.std,
                r.mean * s,
                r.std * s,
                r.n_seeds,
                r.config_hash
            ));
        }
        println!("{param} = {value}");
        print!("{}", metrics_table(&metrics));
        rows.push(SweepRow {
            param: param.clone(),
            value,
            metrics,
        });
    }
    let mut dir = OutDir::create(out)?;
    dir.write_json("sweep.json", &rows)?;
    dir.write("sweep.csv", csv)?;
    dir.finish("sweep", cfg, &hash)
}

pub fn cmd_bench(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let hash = cfg.hash();
    let b = &cfg.bench;
    let rows = bench_backward(&b.lengths, b.repeats, b.alpha, b.gamma, cfg.seeds[0])?;
    let mut csv = String::from("tau,repeats,custom_seconds,naive_seconds,speedup,max_gradient_gap\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.tau, r.repeats, r.custom_seconds, r.naive_seconds, r.speedup, r.max_gradient_gap
        ));
        println!(
            "tau {:>4}: custom {:.3e} s  naive {:.3e} s  speedup {:.1}x",
            r.tau, r.custom_seconds, r.naive_seconds, r.speedup
        );
    }
    let mut dir = OutDir::create(out)?;
    dir.write_json("bench.json", &rows)?;
    dir.write("bench.csv", csv)?;
    dir.finish("bench", cfg, &hash)
}

#[derive(Debug, Serialize)]
struct StripeSummary {
    seed: u64,
    predictor_best_epoch: usize,
    predictor_best_valid: f64,
    proposal_best_epoch: usize,
    checkpoint: String,
}

pub fn cmd_stripe_train(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let src = source(cfg)?;
    let hash = cfg.hash();
    let mut dir = OutDir::create(out)?;
    let runs: Vec<(u64, Checkpoint, TrainLog, ProposalLog)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<_> {
            let data = src.load(cfg.data_seed_for(seed), &cfg.csv)?;
            let sc = dilate::forecast::StripeConfig { seed, ..cfg.stripe };
            let (mut model, log) = train_stripe_predictor(&data, &sc)?;
            let plog = train_stripe_proposals(&mut model, &data, &sc)?;
            let ckpt = Checkpoint::from_stripe(&model, serde_json::to_value(sc)?, log.best_epoch)?;
            Ok((seed, ckpt, log, plog))
        })
        .collect::<Result<_>>()?;
    let mut summary = Vec::with_capacity(runs.len());
    for (seed, ckpt, log, plog) in runs {
        let stem = format!("stripe_seed{seed}");
        let bin = ckpt.write(dir.path(), &stem)?;
        dir.record(&bin);
        dir.record(&bin.with_extension("json"));
        dir.write_jsonl(&format!("predictor_log_seed{seed}.jsonl"), &log.epochs)?;
        dir.write_jsonl(&format!("proposal_log_seed{seed}.jsonl"), &plog.epochs)?;
        summary.push(StripeSummary {
            seed,
            predictor_best_epoch: log.best_epoch,
            predictor_best_valid: log.best_valid,
            proposal_best_epoch: plog.best_epoch,
            checkpoint: format!("{stem}.bin"),
        });
    }
    dir.write_json("summary.json", &summary)?;
    dir.finish("stripe-train", cfg, &hash)
}

/// Test inputs whose trajectories go into the scatter file.
const SCATTER_INPUTS: usize = 5;

pub fn cmd_stripe_eval(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    if cfg.checkpoints.is_empty() {
        return Err(CliError::usage("stripe-eval needs at least one --checkpoint"));
    }
    let src = source(cfg)?;
    let dilate = DilateConfig::new(cfg.stripe.dilate.alpha, cfg.stripe.dilate.gamma).map_err(config_err)?;
    let hash = cfg.hash();
    let metrics = if cfg.metrics.is_empty() {
        SET_DEFAULTS.to_vec()
    } else {
        let m = parse_metrics(&cfg.metrics)?;
        if let Some(p) = m.iter().find(|m| m.is_point()) {
            return Err(CliError::usage(format!("stripe-eval reports set metrics only, got {}", p.name())));
        }
        m
    };
    let models: Vec<StripeModel> = cfg
        .checkpoints
        .iter()
        .map(|p| match read_checkpoint(p)?.model()? {
            Model::Stripe(m) => Ok(m),
            _ => Err(CliError::usage(format!("{} is not a latent-code checkpoint", p.display()))),
        })
        .collect::<Result<_>>()?;
    let mut scatter = String::from("seed,input,source,trajectory,dtw,tdi,dilate\n");
    let mut per = Vec::with_capacity(models.len());
    for model in &models {
        let data = src.load(cfg.data_seed_for(model.seed), &cfg.csv)?;
        let test = &data.test;
        let n = model.n_shape * model.n_time;
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
        rng.set_stream(4);
        let prior: Vec<_> = test
            .samples
            .iter()
            .map(|s| model.sample_prior(&s.input, n, &mut rng))
            .collect::<dilate::Result<_>>()?;
        let proposals: Vec<_> = test
            .samples
            .par_iter()
            .map(|s| model.sample_futures(&s.input))
            .collect::<dilate::Result<_>>()?;
        let p0 = set_metrics(&prior, test, &metrics, &dilate)?;
        let p1 = set_metrics(&proposals, test, &metrics, &dilate)?;
        for (label, sets) in [("prior", &prior), ("stripe", &proposals)] {
            for (i, (set, s)) in sets.iter().zip(&test.samples).take(SCATTER_INPUTS).enumerate() {
                for (j, traj) in set.iter().enumerate() {
                    // score against the closest admissible future
                    let mut best = (f64::INFINITY, 0);
                    for (k, f) in s.futures.iter().enumerate() {
                        let v = dilate::losses::dilate_value(traj, f, &dilate)?.0;
                        if v < best.0 {
                            best = (v, k);
                        }
                    }
                    let f = &s.futures[best.1];
                    scatter.push_str(&format!(
                        "{},{i},{label},{j},{},{},{}\n",
                        model.seed,
                        dtw_metric(traj, f)?,
                        tdi_metric(traj, f)?,
                        best.0
                    ));
                }
            }
        }
        per.push((p0, p1));
    }
    let mut rows = Vec::new();
    for (k, m) in metrics.iter().enumerate() {
        let prior: Vec<f64> = per.iter().map(|(p0, _)| p0[k].1).collect();
        let stripe: Vec<f64> = per.iter().map(|(_, p1)| p1[k].1).collect();
        rows.push(MetricRow::from_values(&format!("{}@prior", m.name()), &prior, &hash));
        rows.push(MetricRow::from_values(&format!("{}@stripe", m.name()), &stripe, &hash));
    }
    let mut dir = OutDir::create(out)?;
    dir.write("scatter.csv", scatter)?;
    write_metric_outputs(&mut dir, &rows)?;
    dir.finish("stripe-eval", cfg, &hash)
}
