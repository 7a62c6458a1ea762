//! Final displacement error and collision rate.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::scene::{AgentState, Sample};

pub const DEFAULT_COLLISION_THRESHOLD: f64 = 0.2;

/// Which neighbor futures a predicted trajectory is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionMode {
    #[default]
    GroundTruth,
    /// Neighbors' own predictions where a sample exists for them, ground truth otherwise.
    Joint,
}

impl CollisionMode {
    pub fn describe(&self) -> &'static str {
        match self {
            CollisionMode::GroundTruth => "predicted primary vs ground-truth neighbors",
            CollisionMode::Joint => "predicted primary vs predicted neighbors",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Collision distance in meters; a pair collides when strictly closer.
    pub threshold: f64,
    pub mode: CollisionMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_COLLISION_THRESHOLD,
            mode: CollisionMode::GroundTruth,
        }
    }
}

/// Euclidean distance between the final points.
pub fn fde(predicted: &[AgentState], truth: &[AgentState]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    match (predicted.last(), truth.last()) {
        (Some(p), Some(t)) => Ok(p.distance(t)),
        _ => Err(Error::Empty("trajectory")),
    }
}

/// One evaluated case: a predicted primary trajectory and time-aligned neighbor tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionCase {
    pub predicted: Vec<AgentState>,
    /// `neighbors[j][k]`: neighbor `j` at step `k`; `None` when absent.
    pub neighbors: Vec<Vec<Option<AgentState>>>,
}

pub fn case_min_distance(case: &CollisionCase) -> f64 {
    let mut best = f64::INFINITY;
    for track in &case.neighbors {
        for (p, n) in case.predicted.iter().zip(track) {
            if let Some(n) = n {
                best = best.min(p.distance(n));
            }
        }
    }
    best
}

pub fn case_collides(case: &CollisionCase, threshold: f64) -> bool {
    case_min_distance(case) < threshold
}

/// Percentage of colliding cases.
pub fn collision_rate(cases: &[CollisionCase], threshold: f64) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::Empty("collision case list"));
    }
    let hits = cases.iter().filter(|c| case_collides(c, threshold)).count();
    Ok(100.0 * hits as f64 / cases.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEval {
    pub name: String,
    pub fde_mean: f64,
    pub col_rate: f64,
    pub n_cases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fde_mean: f64,
    pub col_rate: f64,
    pub n_cases: usize,
    pub threshold: f64,
    pub mode: CollisionMode,
    pub per_dataset: Vec<DatasetEval>,
}

impl EvalReport {
    /// Aligned plain-text table, one row per dataset plus the average.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let width = self
            .per_dataset
            .iter()
            .map(|d| d.name.len())
            .chain([7])
            .max()
            .unwrap_or(7);
        let _ = writeln!(
            out,
            "# collision threshold {:.3} m, {}",
            self.threshold,
            self.mode.describe()
        );
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>7}", "Dataset", "FDE", "COL", "Cases");
        for d in &self.per_dataset {
            let _ = writeln!(
                out,
                "{:<width$}  {:>8.4}  {:>8.2}  {:>7}",
                d.name, d.fde_mean, d.col_rate, d.n_cases
            );
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.4}  {:>8.2}  {:>7}",
            "Average", self.fde_mean, self.col_rate, self.n_cases
        );
        out
    }
}

type SampleKey = (usize, usize, usize);

fn sample_key(s: &Sample) -> SampleKey {
    (Arc::as_ptr(s.scene()) as usize, s.start_frame(), s.primary())
}

struct CaseResult {
    dataset: String,
    fde: f64,
    collided: bool,
}

/// Evaluate an arbitrary predictor over `samples`.
pub fn evaluate_with<P>(predict: P, samples: &[Sample], opts: &EvalOptions) -> Result<EvalReport>
where
    P: Fn(&Sample) -> Result<Vec<AgentState>> + Sync,
{
    if samples.is_empty() {
        return Err(Error::Empty("evaluation sample list"));
    }
    let predictions: Vec<Vec<AgentState>> = samples
        .par_iter()
        .map(|s| {
            let p = predict(s)?;
            if p.len() != s.pred_len() {
                return Err(Error::LengthMismatch {
                    left: p.len(),
                    right: s.pred_len(),
                });
            }
            Ok(p)
        })
        .collect::<Result<_>>()?;
    let index: HashMap<SampleKey, usize> = match opts.mode {
        CollisionMode::GroundTruth => HashMap::new(),
        CollisionMode::Joint => samples.iter().enumerate().map(|(i, s)| (sample_key(s), i)).collect(),
    };

    let mut results = Vec::with_capacity(samples.len());
    for (s, pred) in samples.iter().zip(&predictions) {
        let mut neighbors = s.neighbor_futures();
        if opts.mode == CollisionMode::Joint {
            let others = (0..s.scene().n_agents()).filter(|&j| j != s.primary());
            for (track, j) in neighbors.iter_mut().zip(others) {
                let key = (Arc::as_ptr(s.scene()) as usize, s.start_frame(), j);
                if let Some(&k) = index.get(&key) {
                    *track = predictions[k].iter().copied().map(Some).collect();
                }
            }
        }
        let case = CollisionCase {
            predicted: pred.clone(),
            neighbors,
        };
        results.push(CaseResult {
            dataset: s.scene().dataset().to_string(),
            fde: fde(pred, &s.future())?,
            collided: case_collides(&case, opts.threshold),
        });
    }

    let summarize = |name: String, rs: &[&CaseResult]| DatasetEval {
        name,
        fde_mean: rs.iter().map(|r| r.fde).sum::<f64>() / rs.len() as f64,
        col_rate: 100.0 * rs.iter().filter(|r| r.collided).count() as f64 / rs.len() as f64,
        n_cases: rs.len(),
    };
    let mut groups: BTreeMap<&str, Vec<&CaseResult>> = BTreeMap::new();
    for r in &results {
        groups.entry(r.dataset.as_str()).or_default().push(r);
    }
    let per_dataset: Vec<DatasetEval> = groups
        .into_iter()
        .map(|(name, rs)| summarize(name.to_string(), &rs))
        .collect();
    let all: Vec<&CaseResult> = results.iter().collect();
    let total = summarize(String::new(), &all);
    Ok(EvalReport {
        fde_mean: total.fde_mean,
        col_rate: total.col_rate,
        n_cases: total.n_cases,
        threshold: opts.threshold,
        mode: opts.mode,
        per_dataset,
    })
}

/// Evaluate `model` over `samples`.
pub fn evaluate(model: &Model, samples: &[Sample], opts: &EvalOptions) -> Result<EvalReport> {
    evaluate_with(|s| model.predict(s), samples, opts)
}
