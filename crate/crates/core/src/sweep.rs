//! Random and grid hyperparameter search over loss and augmentation settings.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::rng::stream;

const SWEEP_STREAM: u64 = 0x5ee9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Temperature,
    Horizon,
    ContrastiveWeight,
    RhoMin,
    RhoMax,
    NoiseWeight,
}

impl Param {
    fn apply(&self, cfg: &mut RunConfig, v: f64) {
        match self {
            Param::Temperature => cfg.nce.temperature = v,
            Param::Horizon => cfg.nce.horizon = v.round() as usize,
            Param::ContrastiveWeight => cfg.nce.contrastive_weight = v,
            Param::RhoMin => cfg.augment.rho_min = v,
            Param::RhoMax => cfg.augment.rho_max = v,
            Param::NoiseWeight => cfg.augment.noise_weight = v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Trial `i` takes `values[i % values.len()]`.
    Grid {
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub param: Param,
    pub distribution: Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub params: Vec<ParamSpec>,
    pub trials: usize,
    pub seed: u64,
}

pub const SPACE_PRESETS: [&str; 2] = ["loss", "augmentation"];

impl SearchSpace {
    /// Temperature and weight drawn at random, sampling horizon on a grid.
    pub fn loss() -> Self {
        Self {
            params: vec![
                ParamSpec {
                    param: Param::Temperature,
                    distribution: Distribution::Uniform { lo: 0.1, hi: 0.5 },
                },
                ParamSpec {
                    param: Param::Horizon,
                    distribution: Distribution::Grid {
                        values: vec![1.0, 2.0, 3.0, 4.0, 5.0],
                    },
                },
                ParamSpec {
                    param: Param::ContrastiveWeight,
                    distribution: Distribution::Uniform { lo: 0.0, hi: 50.0 },
                },
            ],
            trials: 20,
            seed: 0,
        }
    }

    /// Ring radii and noise drawn at random.
    pub fn augmentation() -> Self {
        Self {
            params: vec![
                ParamSpec {
                    param: Param::RhoMin,
                    distribution: Distribution::Uniform { lo: 0.1, hi: 0.5 },
                },
                ParamSpec {
                    param: Param::RhoMax,
                    distribution: Distribution::Uniform { lo: 2.2, hi: 2.8 },
                },
                ParamSpec {
                    param: Param::NoiseWeight,
                    distribution: Distribution::Uniform { lo: 0.0, hi: 0.5 },
                },
            ],
            trials: 20,
            seed: 0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "loss" => Ok(Self::loss()),
            "augmentation" => Ok(Self::augmentation()),
            other => Err(Error::InvalidConfig(format!(
                "unknown search space '{other}' (available: {})",
                SPACE_PRESETS.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("a sweep needs at least one trial".into()));
        }
        for spec in &self.params {
            match &spec.distribution {
                Distribution::Uniform { lo, hi } => {
                    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                        return Err(Error::InvalidConfig(format!(
                            "{:?}: uniform range needs lo < hi, got [{lo}, {hi}]",
                            spec.param
                        )));
                    }
                }
                Distribution::Grid { values } => {
                    if values.is_empty() {
                        return Err(Error::InvalidConfig(format!("{:?}: empty grid", spec.param)));
                    }
                    let mut sorted = values.clone();
                    sorted.sort_by(f64::total_cmp);
                    if sorted.windows(2).any(|w| w[0] == w[1]) {
                        return Err(Error::InvalidConfig(format!(
                            "{:?}: grid values must be distinct",
                            spec.param
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `base` with every searched parameter replaced by its draw for `trial`.
pub fn sample_config(space: &SearchSpace, base: &RunConfig, trial: usize) -> RunConfig {
    let mut cfg = base.clone();
    let mut rng = stream(space.seed, &[SWEEP_STREAM, trial as u64]);
    for spec in &space.params {
        let v = match &spec.distribution {
            Distribution::Uniform { lo, hi } => rng.random_range(*lo..*hi),
            Distribution::Grid { values } => values[trial % values.len()],
        };
        spec.param.apply(&mut cfg, v);
    }
    cfg
}

/// Scalar ranking of an evaluation; lower is better.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// COL first, FDE breaking ties.
    #[default]
    Lexicographic,
    /// `FDE + alpha * COL`.
    Weighted { alpha: f64 },
}

impl Objective {
    /// Sort key; compared lexicographically.
    pub fn key(&self, report: &EvalReport) -> [f64; 2] {
        match *self {
            Objective::Lexicographic => [report.col_rate, report.fde_mean],
            Objective::Weighted { alpha } => [report.fde_mean + alpha * report.col_rate, 0.0],
        }
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "lex" {
            return Ok(Objective::Lexicographic);
        }
        if let Some(a) = s.strip_prefix("weighted:") {
            let alpha: f64 = a
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad weighted objective alpha '{a}'")))?;
            if alpha.is_finite() && alpha >= 0.0 {
                return Ok(Objective::Weighted { alpha });
            }
        }
        Err(Error::InvalidConfig(format!(
            "objective must be 'lex' or 'weighted:<alpha>', got '{s}'"
        )))
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::Lexicographic => write!(f, "lex"),
            Objective::Weighted { alpha } => write!(f, "weighted:{alpha}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub config: RunConfig,
    pub report: Option<EvalReport>,
    pub objective: Option<[f64; 2]>,
    pub error: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub best: TrialRecord,
    pub trials: Vec<TrialRecord>,
}

/// Minimal objective among successful trials; ties go to the lower trial index.
pub fn best_trial(records: &[TrialRecord]) -> Option<&TrialRecord> {
    records
        .iter()
        .filter_map(|r| r.objective.map(|o| (o, r)))
        .min_by(|(a, ra), (b, rb)| {
            a[0].total_cmp(&b[0])
                .then(a[1].total_cmp(&b[1]))
                .then(ra.trial.cmp(&rb.trial))
        })
        .map(|(_, r)| r)
}

/// Sweep options besides the search space itself.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SweepOptions {
    pub objective: Objective,
    /// Run `base` unchanged as trial 0.
    pub include_base: bool,
}

/// Train and evaluate every trial config with `trainer`. A failed trial is
/// recorded and the sweep continues.
pub fn run_sweep<T, C>(
    space: &SearchSpace,
    base: &RunConfig,
    opts: SweepOptions,
    mut trainer: T,
    mut on_trial: C,
) -> Result<SweepOutcome>
where
    T: FnMut(&RunConfig) -> Result<EvalReport>,
    C: FnMut(&TrialRecord),
{
    space.validate()?;
    let mut trials = Vec::with_capacity(space.trials);
    for trial in 0..space.trials {
        let config = if opts.include_base && trial == 0 {
            base.clone()
        } else {
            sample_config(space, base, trial)
        };
        let started = Instant::now();
        let result = config.validate().and_then(|_| trainer(&config));
        let record = match result {
            Ok(report) => TrialRecord {
                trial,
                objective: Some(opts.objective.key(&report)),
                report: Some(report),
                error: None,
                config,
                seconds: started.elapsed().as_secs_f64(),
            },
            Err(e) => TrialRecord {
                trial,
                config,
                report: None,
                objective: None,
                error: Some(e.to_string()),
                seconds: started.elapsed().as_secs_f64(),
            },
        };
        on_trial(&record);
        trials.push(record);
    }
    let best = best_trial(&trials)
        .cloned()
        .ok_or(Error::AllTrialsFailed(trials.len()))?;
    Ok(SweepOutcome { best, trials })
}
