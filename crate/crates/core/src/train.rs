//! Minibatch Adam training with per-epoch validation and best-model retention.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::build_key_bundles;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::model::{accumulate_loss_and_grad, LossValues, LossWeights, Model, ModelGrad, ModelOptimizer};
use crate::rng::{derive_seed, stream};
use crate::scene::Sample;

const INIT_STREAM: u64 = 0x1417;
const SHUFFLE_STREAM: u64 = 0x5f1e;
const AUGMENT_STREAM: u64 = 0xa06;

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task_loss: f64,
    pub nce_loss: f64,
    pub combined_loss: f64,
    pub val_fde: f64,
    pub val_col: f64,
    /// Wall-clock duration of the epoch; the only non-reproducible field.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let epochs = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { epochs })
    }

    /// Equality of everything except wall-clock timings, bit for bit.
    pub fn same_trajectory(&self, other: &TrainLog) -> bool {
        self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.task_loss.to_bits() == b.task_loss.to_bits()
                    && a.nce_loss.to_bits() == b.nce_loss.to_bits()
                    && a.combined_loss.to_bits() == b.combined_loss.to_bits()
                    && a.val_fde.to_bits() == b.val_fde.to_bits()
                    && a.val_col.to_bits() == b.val_col.to_bits()
            })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation COL, FDE breaking ties.
    pub best: Model,
    pub best_epoch: usize,
    /// Parameters after the final epoch.
    pub last: Model,
    pub log: TrainLog,
}

/// Fresh model initialized from the run seed.
pub fn init_model(run: &RunConfig) -> Model {
    Model::new(
        &run.model,
        run.obs_len,
        run.pred_len,
        &mut stream(run.seed, &[INIT_STREAM]),
    )
}

fn sample_gradient(
    model: &Model,
    sample: &Sample,
    run: &RunConfig,
    epoch: usize,
    index: usize,
    grad: &mut ModelGrad,
) -> Result<LossValues> {
    let mut rng = stream(
        derive_seed(run.seed, &[run.augment.rng_seed]),
        &[AUGMENT_STREAM, epoch as u64, index as u64],
    );
    let bundles = build_key_bundles(sample, run.nce.horizon, &run.augment, &mut rng)?;
    accumulate_loss_and_grad(
        model,
        sample,
        &bundles,
        &run.nce,
        LossWeights {
            task: 1.0,
            contrastive: run.nce.contrastive_weight,
        },
        grad,
    )
}

/// Train from a fresh initialization. `on_epoch` sees each record as it is produced.
pub fn train_with<F>(train: &[Sample], val: &[Sample], run: &RunConfig, mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord),
{
    run.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training sample list"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation sample list"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(run.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;

    let mut model = init_model(run);
    let mut optimizer = ModelOptimizer::new(&model, run.optimizer.adam);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, f64, usize, Model)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;

    for epoch in 0..run.epochs {
        let started = Instant::now();
        optimizer.set_learning_rate(run.optimizer.schedule.rate(run.optimizer.adam.lr, epoch, run.epochs));
        order.shuffle(&mut stream(run.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let (mut task_sum, mut nce_sum, mut combined_sum) = (0.0, 0.0, 0.0);

        for batch in order.chunks(run.optimizer.batch_size) {
            let mut grad = ModelGrad::zeros_like(&model);
            let mut values = Vec::with_capacity(batch.len());
            if run.workers > 1 {
                // per-sample gradients in parallel, summed in batch order
                let results: Vec<Result<(LossValues, ModelGrad)>> = pool.install(|| {
                    batch
                        .par_iter()
                        .map(|&i| {
                            let mut g = ModelGrad::zeros_like(&model);
                            sample_gradient(&model, &train[i], run, epoch, i, &mut g).map(|v| (v, g))
                        })
                        .collect()
                });
                for r in results {
                    let (v, g) = r?;
                    grad.add_assign(&g);
                    values.push(v);
                }
            } else {
                for &i in batch {
                    values.push(sample_gradient(&model, &train[i], run, epoch, i, &mut grad)?);
                }
            }
            for v in values {
                if !v.combined.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, step });
                }
                task_sum += v.task;
                nce_sum += v.nce;
                combined_sum += v.combined;
            }
            grad.scale(1.0 / batch.len() as f64);
            optimizer.step(&mut model, &grad)?;
            step += 1;
        }

        let report = pool.install(|| evaluate(&model, val, &run.eval))?;
        let n = train.len() as f64;
        let record = EpochRecord {
            epoch,
            task_loss: task_sum / n,
            nce_loss: nce_sum / n,
            combined_loss: combined_sum / n,
            val_fde: report.fde_mean,
            val_col: report.col_rate,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        let better = best
            .as_ref()
            .is_none_or(|(col, fde, _, _)| (report.col_rate, report.fde_mean) < (*col, *fde));
        if better {
            best = Some((report.col_rate, report.fde_mean, epoch, model.clone()));
        }
        log.epochs.push(record);
    }

    let (best_model, best_epoch) = match best {
        Some((_, _, e, m)) => (m, e),
        None => (model.clone(), 0),
    };
    Ok(TrainOutcome {
        best: best_model,
        best_epoch,
        last: model,
        log,
    })
}

pub fn train(train: &[Sample], val: &[Sample], run: &RunConfig) -> Result<TrainOutcome> {
    train_with(train, val, run, |_| {})
}

/// Stream each epoch record as one JSON line.
pub fn jsonl_sink<W: Write>(mut writer: W) -> impl FnMut(&EpochRecord) {
    move |r| {
        let _ = writeln!(writer, "{}", serde_json::to_string(r).expect("record serializes"));
        let _ = writer.flush();
    }
}
