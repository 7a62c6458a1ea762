//! Command-line entry point.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::augment::{build_key_bundles, AugmentConfig};
use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, RunConfig};
use crate::dataset::{write_trajectory_file, ColumnOrder};
use crate::error::{Error, Result};
use crate::gradcheck::{input_grad_check, model_grad_check, GradCheckReport, ProbeOptions};
use crate::loss::{contrastive_term, DenominatorMode, NceConfig};
use crate::metrics::{evaluate, CollisionMode};
use crate::model::{LossWeights, Model, ModelConfig};
use crate::rng::stream;
use crate::scene::{slice_samples, Scene};
use crate::sim::{generate_scene, generate_scenes, interaction_stats, split_scenes, ScenarioConfig};
use crate::sweep::{run_sweep, Objective, SearchSpace, SweepOptions};
use crate::train::{jsonl_sink, train_with};

#[derive(Debug, Parser)]
#[command(
    name = "snce",
    version,
    about = "Trajectory forecasting with a social contrastive loss",
    long_about = "Trajectory forecasting with a social contrastive loss.\n\n\
        Collision rate (COL) counts a case when the predicted primary trajectory comes \
        strictly closer than the collision threshold (default 0.2 m) to a neighbor at any \
        predicted step; neighbors are ground truth unless --mode joint is given."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and write it as trajectory text files.
    Simulate(SimulateArgs),
    /// Train a forecaster; writes checkpoints, the training log and the resolved config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on validation data.
    Eval(EvalArgs),
    /// Hyperparameter search; one JSON line per trial.
    Sweep(SweepArgs),
    /// Check every analytic gradient against central finite differences.
    Gradcheck(GradcheckArgs),
}

/// Configuration sources and overrides shared by several subcommands.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named configuration used when --config is absent (default, tuned).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Contrastive weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Sampling horizon.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Threads for per-sample gradient evaluation.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Number of synthetic scenes.
    #[arg(long)]
    pub n_scenes: Option<usize>,
    /// Keep every k-th frame of trajectory files.
    #[arg(long)]
    pub subsample: Option<usize>,
    /// Column layout of trajectory files.
    #[arg(long, value_enum)]
    pub columns: Option<Columns>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Columns {
    /// `frame agent x y`
    Fxy,
    /// `frame agent y x`
    Fyx,
}

impl ConfigArgs {
    pub fn resolve(&self, seed: Option<u64>) -> Result<RunConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(name)) => RunConfig::preset(name)?,
            (None, None) => RunConfig::default(),
        };
        if let Some(v) = seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lambda {
            cfg.nce.contrastive_weight = v;
        }
        if let Some(v) = self.temperature {
            cfg.nce.temperature = v;
        }
        if let Some(v) = self.horizon {
            cfg.nce.horizon = v;
        }
        if let Some(v) = self.lr {
            cfg.optimizer.adam.lr = v;
        }
        if let Some(v) = self.batch_size {
            cfg.optimizer.batch_size = v;
        }
        if let Some(v) = self.hidden {
            cfg.model.hidden = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        match &mut cfg.data {
            DataSource::Synthetic { scenario, .. } => {
                if let Some(v) = self.n_scenes {
                    scenario.n_scenes = v;
                }
            }
            DataSource::Files { parse, .. } => {
                if let Some(v) = self.subsample {
                    parse.subsample = v;
                }
                match self.columns {
                    Some(Columns::Fxy) => parse.column_order = ColumnOrder::FrameAgentXy,
                    Some(Columns::Fyx) => parse.column_order = ColumnOrder::FrameAgentYx,
                    None => {}
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Simulator seed; defaults to the configured one.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; receives train/ and val/ subdirectories and stats.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Master seed for initialization, shuffling and augmentation.
    #[arg(long)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    GroundTruth,
    Joint,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Data configuration; defaults to the one stored in the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Collision threshold in meters.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub seed: u64,
    /// Search space preset (loss, augmentation).
    #[arg(long, default_value = "loss")]
    pub space: String,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub search_seed: u64,
    /// `lex` ranks by COL then FDE; `weighted:<alpha>` ranks by FDE + alpha * COL.
    #[arg(long, default_value = "lex")]
    pub objective: String,
    /// Sample every trial instead of running the base config as trial 0.
    #[arg(long)]
    pub no_base: bool,
    /// Trial log, one JSON object per line.
    #[arg(long, default_value = "sweep.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Probes per network.
    #[arg(long, default_value_t = 100)]
    pub probes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::file(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::file(path, e))
}

fn file_name(scene: &Scene) -> String {
    format!("{}.txt", scene.id().replace('/', "_"))
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = args.config.resolve(None)?;
    let DataSource::Synthetic { mut scenario, split } = cfg.data else {
        return Err(Error::InvalidConfig("simulate needs a synthetic data source".into()));
    };
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let scenes = generate_scenes(&scenario)?;
    let (train, val) = split_scenes(&scenes, &split)?;
    for (dir, set) in [("train", &train), ("val", &val)] {
        let dir = args.out.join(dir);
        create_dir(&dir)?;
        for s in set.iter() {
            write_trajectory_file(s, dir.join(file_name(s)))?;
        }
    }
    let stats = interaction_stats(&scenes, 0.4)?;
    write_file(&args.out.join("stats.json"), &serde_json::to_string_pretty(&stats)?)?;
    println!(
        "wrote {} train / {} val scenes to {}; near-miss (< {} m) fraction {:.3}, median closest approach {:.3} m",
        train.len(),
        val.len(),
        args.out.display(),
        stats.near_miss_distance,
        stats.near_miss_fraction,
        stats.min_distance_quantiles[1]
    );
    Ok(())
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let cfg = args.config.resolve(Some(args.seed))?;
    let (train, val) = cfg.load_samples()?;
    create_dir(&args.out)?;
    cfg.save(args.out.join("config.json"))?;
    let log_path = args.out.join("train_log.jsonl");
    let log_file = fs::File::create(&log_path).map_err(|e| Error::file(&log_path, e))?;
    eprintln!(
        "training on {} samples, validating on {} ({} epochs)",
        train.len(),
        val.len(),
        cfg.epochs
    );
    let outcome = train_with(&train, &val, &cfg, jsonl_sink(std::io::BufWriter::new(log_file)))?;
    let last_epoch = cfg.epochs.saturating_sub(1);
    Checkpoint::new(&outcome.best, &cfg, outcome.best_epoch).save(args.out.join("checkpoint.json"))?;
    Checkpoint::new(&outcome.last, &cfg, last_epoch).save(args.out.join("last.json"))?;
    let report = evaluate(&outcome.best, &val, &cfg.eval)?;
    println!("best epoch {}", outcome.best_epoch);
    print!("{}", report.table());
    Ok(())
}

fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let model = ck.model()?;
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => ck.config.clone(),
    };
    if cfg.pred_len != model.pred_len() {
        return Err(Error::PredLenMismatch {
            checkpoint: model.pred_len(),
            data: cfg.pred_len,
        });
    }
    if cfg.obs_len != model.obs_len() {
        return Err(Error::InvalidConfig(format!(
            "obs_len mismatch: checkpoint has {}, data configuration has {}",
            model.obs_len(),
            cfg.obs_len
        )));
    }
    if let Some(t) = args.threshold {
        cfg.eval.threshold = t;
    }
    if let Some(m) = args.mode {
        cfg.eval.mode = match m {
            ModeArg::GroundTruth => CollisionMode::GroundTruth,
            ModeArg::Joint => CollisionMode::Joint,
        };
    }
    let (_, val) = cfg.load_samples()?;
    let report = evaluate(&model, &val, &cfg.eval)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.table());
    }
    Ok(())
}

fn sweep_cmd(args: &SweepArgs) -> Result<()> {
    let base = args.config.resolve(Some(args.seed))?;
    let mut space = SearchSpace::preset(&args.space)?;
    space.trials = args.trials;
    space.seed = args.search_seed;
    let objective: Objective = args.objective.parse()?;
    let (train, val) = base.load_samples()?;
    let log = fs::File::create(&args.out).map_err(|e| Error::file(&args.out, e))?;
    let mut log = std::io::BufWriter::new(log);
    let mut write_error = None;
    let outcome = run_sweep(
        &space,
        &base,
        SweepOptions {
            objective,
            include_base: !args.no_base,
        },
        |cfg| {
            let out = train_with(&train, &val, cfg, |_| {})?;
            evaluate(&out.best, &val, &cfg.eval)
        },
        |record| {
            let line = serde_json::to_string(record).expect("trial record serializes");
            if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
                write_error.get_or_insert(e);
            }
            match (&record.report, &record.error) {
                (Some(r), _) => eprintln!(
                    "trial {:>3}: tau {:.4} horizon {} lambda {:.3} rho [{:.3}, {:.3}] noise {:.3} -> COL {:.2} FDE {:.4}",
                    record.trial,
                    record.config.nce.temperature,
                    record.config.nce.horizon,
                    record.config.nce.contrastive_weight,
                    record.config.augment.rho_min,
                    record.config.augment.rho_max,
                    record.config.augment.noise_weight,
                    r.col_rate,
                    r.fde_mean
                ),
                (None, Some(e)) => eprintln!("trial {:>3}: failed: {e}", record.trial),
                _ => {}
            }
        },
    )?;
    if let Some(e) = write_error {
        return Err(Error::file(&args.out, e));
    }
    let b = &outcome.best;
    println!(
        "best trial {} (objective {objective}): {}",
        b.trial,
        serde_json::to_string(&b.config.nce)?
    );
    println!("{}", serde_json::to_string(&b.config.augment)?);
    if let Some(r) = &b.report {
        print!("{}", r.table());
    }
    Ok(())
}

/// Fixed scene for the gradient suites: five agents crossing near the origin.
fn gradcheck_scene() -> Result<Arc<Scene>> {
    let cfg = ScenarioConfig {
        steps: 8,
        ..Default::default()
    };
    Ok(Arc::new(generate_scene(&cfg, 0)?.with_id("gradcheck/0")))
}

/// Every finite-difference suite; returns the reports in a stable order.
pub fn gradcheck_suites(probes: usize, seed: u64, tolerance: f64) -> Result<Vec<GradCheckReport>> {
    let mut reports = Vec::new();
    let scene = gradcheck_scene()?;
    let samples = slice_samples(&scene, 3, 5, 1)?;
    let sample = &samples[samples.len() / 2];
    let model = Model::new(&ModelConfig { hidden: 16 }, 3, 5, &mut stream(seed, &[1]));
    let opts = ProbeOptions {
        probes_per_net: probes,
        tolerance,
        seed,
        ..Default::default()
    };
    for mode in [DenominatorMode::PerHorizon, DenominatorMode::Joint] {
        let nce = NceConfig {
            horizon: 3,
            denominator_mode: mode,
            ..Default::default()
        };
        let bundles = build_key_bundles(sample, nce.horizon, &AugmentConfig::default(), &mut stream(seed, &[2]))?;
        let weights = LossWeights {
            task: 1.0,
            contrastive: nce.contrastive_weight,
        };
        for mut r in model_grad_check(&model, sample, &bundles, &nce, weights, &opts)? {
            r.label = format!("combined[{mode:?}] {}", r.label);
            reports.push(r);
        }
    }

    // contrastive term alone, with respect to the query and one key
    let q: Vec<f64> = (0..8).map(|i| 0.3 * ((i as f64) * 0.7).sin()).collect();
    let keys: Vec<Vec<f64>> = (0..9)
        .map(|k| (0..8).map(|i| 0.5 * ((k * 8 + i) as f64 * 0.37).cos()).collect())
        .collect();
    let net = crate::nn::Mlp::from_layers(
        "identity",
        vec![crate::nn::Dense::new(
            8,
            8,
            (0..64).map(|i| if i % 9 == 0 { 1.0 } else { 0.0 }).collect(),
            vec![0.0; 8],
            crate::nn::Activation::Identity,
        )?],
    )?;
    let query_loss = |out: &[f64]| {
        let kr: Vec<&[f64]> = keys.iter().map(|k| k.as_slice()).collect();
        let t = contrastive_term(out, &kr, &[0], 0.1).expect("finite logits");
        (t.loss, t.grad_query)
    };
    let mut r = input_grad_check(&net, &q, query_loss, tolerance)?;
    r.label = "infonce query".into();
    reports.push(r);
    for which in [0usize, 4] {
        let key_loss = |out: &[f64]| {
            let mut ks = keys.clone();
            ks[which] = out.to_vec();
            let kr: Vec<&[f64]> = ks.iter().map(|k| k.as_slice()).collect();
            let t = contrastive_term(&q, &kr, &[0], 0.1).expect("finite logits");
            (t.loss, t.grad_keys[which].clone())
        };
        let mut r = input_grad_check(&net, &keys[which], key_loss, tolerance)?;
        r.label = format!("infonce key {which}");
        reports.push(r);
    }
    Ok(reports)
}

fn gradcheck_cmd(args: &GradcheckArgs) -> Result<bool> {
    let reports = gradcheck_suites(args.probes, args.seed, args.tolerance)?;
    let mut ok = true;
    for r in &reports {
        println!("{}", r.summary());
        ok &= r.passed;
    }
    let worst = reports.iter().map(|r| r.max_relative_error).fold(0.0, f64::max);
    let probes: usize = reports.iter().map(|r| r.probes).sum();
    println!(
        "overall {}: max relative error {worst:.3e} over {probes} probes",
        if ok { "PASS" } else { "FAIL" }
    );
    Ok(ok)
}

/// Run the parsed command; `Ok(false)` means a check ran and failed.
pub fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Train(a) => train_cmd(a).map(|_| true),
        Command::Eval(a) => eval_cmd(a).map(|_| true),
        Command::Sweep(a) => sweep_cmd(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    }
}

/// Render an error and its sources on one line.
pub fn describe(err: &Error) -> String {
    let mut msg = err.to_string();
    let mut src = std::error::Error::source(err);
    while let Some(s) = src {
        let s_text = s.to_string();
        if !msg.contains(&s_text) {
            msg.push_str(": ");
            msg.push_str(&s_text);
        }
        src = s.source();
    }
    msg
}
