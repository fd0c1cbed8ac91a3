use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{check_frame, decile, SurrogateSample};
use super::model::{Surrogate, Weights};
use crate::diff::{AdamConfig, Graph, Tensor};
use crate::dsp::nrmse;
use crate::error::{invalid, Error, Result};
use crate::link::{BIAS_RANGE, SWING_RANGE};

/// Epochs without a new lowest training loss before training is aborted.
pub const STALL_EPOCHS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateTrainConfig {
    pub epochs: usize,
    /// Initialise the linear path by least squares before training.
    pub init_linear: bool,
    pub batch: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr` (cosine schedule).
    pub lr_floor: f64,
    pub clip_norm: Option<f64>,
    /// Lower bound on the peak-to-peak power, in watts, used to normalise
    /// the training loss of a frame. Evaluation always uses the true range.
    pub loss_ptp_floor: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SurrogateTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            init_linear: true,
            batch: 4,
            lr: 2e-4,
            lr_floor: 0.05,
            clip_norm: Some(1.0),
            loss_ptp_floor: 2e-4,
            test_fraction: 0.2,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean optimised loss over the epoch's updates.
    pub train_loss: f64,
    pub train_nrmse: f64,
    pub test_nrmse: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateReport {
    pub epochs: Vec<EpochLog>,
    /// Held-out NRMSE before the first update.
    pub initial_test_nrmse: f64,
    /// `None` when no epoch improved on the initial weights.
    pub best_epoch: Option<usize>,
    pub best_test_nrmse: f64,
    pub train_nrmse_at_best: f64,
    pub train_frames: usize,
    pub test_frames: usize,
}

/// Train/test partition by frame: the last `test_fraction` of the frames are
/// held out.
pub fn split_frames(n: usize, test_fraction: f64) -> Result<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(invalid("test_fraction", "must lie in (0, 1)"));
    }
    let test = ((n as f64) * test_fraction).round() as usize;
    if test == 0 || test == n {
        return Err(invalid("frames", format!("{n} frames cannot be split {test_fraction}")));
    }
    Ok((0..n - test, n - test..n))
}

/// Mean per-frame NRMSE of the frozen model.
pub fn mean_nrmse(model: &Surrogate, frames: &[&SurrogateSample]) -> Result<f64> {
    let mut total = 0.0;
    for f in frames {
        total += nrmse(&model.predict(&f.input)?, &f.target)?;
    }
    Ok(total / frames.len().max(1) as f64)
}

fn cosine_lr(cfg: &SurrogateTrainConfig, epoch: usize) -> f64 {
    let t = if cfg.epochs > 1 {
        epoch as f64 / (cfg.epochs - 1) as f64
    } else {
        0.0
    };
    let floor = cfg.lr * cfg.lr_floor;
    floor + 0.5 * (cfg.lr - floor) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Minimises the mean per-frame NRMSE with Adam and returns the weights of
/// the epoch with the lowest held-out NRMSE.
pub fn train_surrogate(
    mut model: Surrogate,
    data: &[SurrogateSample],
    cfg: &SurrogateTrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(Surrogate, SurrogateReport)> {
    if cfg.epochs == 0 || cfg.batch == 0 {
        return Err(invalid("epochs", "epochs and batch must be positive"));
    }
    for f in data {
        check_frame(f)?;
    }
    let (train_idx, test_idx) = split_frames(data.len(), cfg.test_fraction)?;
    let test: Vec<&SurrogateSample> = data[test_idx.clone()].iter().collect();
    // Fixed training subset of test size for the per-epoch training figure.
    let monitor: Vec<&SurrogateSample> = data[train_idx.clone()].iter().take(test.len()).collect();
    if cfg.init_linear && model.config.skip_taps > 0 {
        let train: Vec<&SurrogateSample> = data[train_idx.clone()].iter().collect();
        let rms = model.fit_linear_path(&train, 4)?;
        log::info!("linear path initialised, rms residual {rms:.3e}");
    }
    let initial_test_nrmse = mean_nrmse(&model, &test)?;
    log::info!("held-out NRMSE before training {initial_test_nrmse:.4}");
    let mut order: Vec<usize> = train_idx.clone().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut best: (f64, Option<usize>, f64) = (f64::INFINITY, None, f64::NAN);
    let mut best_model = model.clone();
    // The starting point counts as a candidate so training never returns
    // something worse than its initialisation.
    if initial_test_nrmse.is_finite() {
        best = (initial_test_nrmse, None, mean_nrmse(&model, &monitor)?);
    }
    let mut best_train = f64::INFINITY;
    let mut best_train_epoch = 0;
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = cosine_lr(cfg, epoch);
        let adam = AdamConfig {
            lr,
            clip_norm: cfg.clip_norm,
            ..AdamConfig::default()
        };
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch) {
            let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
            for &i in batch {
                let frame = &data[i];
                let mut g = Graph::new();
                let x = g.constant(Tensor::column(frame.input.clone()));
                let y = model.forward(&mut g, x, Weights::Trainable)?;
                let loss = g.nrmse_loss_floored(y, &Tensor::column(frame.target.clone()), cfg.loss_ptp_floor)?;
                loss_sum += g.value(loss).item();
                let loss = g.scale_shift(loss, 1.0 / batch.len() as f64, 0.0);
                let grads = g.param_grads(&g.backward(loss)?);
                for (k, gr) in grads {
                    match acc.get_mut(&k) {
                        Some(a) => a.add_assign(&gr),
                        None => {
                            acc.insert(k, gr);
                        }
                    }
                }
            }
            model.params.adam_step(&acc, &adam)?;
        }
        let train_loss = loss_sum / order.len() as f64;
        let train_nrmse = mean_nrmse(&model, &monitor)?;
        let test_nrmse = mean_nrmse(&model, &test)?;
        if !(train_loss.is_finite() && train_nrmse.is_finite() && test_nrmse.is_finite()) {
            return Err(Error::TrainingDiverged(format!("non-finite NRMSE at epoch {epoch}")));
        }
        let log = EpochLog {
            epoch,
            train_loss,
            train_nrmse,
            test_nrmse,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        logs.push(log);
        if test_nrmse < best.0 {
            best = (test_nrmse, Some(epoch), train_nrmse);
            best_model = model.clone();
        }
        // The stall check follows the optimised loss, which averages every
        // training frame and so is far less noisy than the monitor subset.
        if train_loss < best_train {
            best_train = train_loss;
            best_train_epoch = epoch;
        } else if epoch - best_train_epoch >= STALL_EPOCHS {
            let history: Vec<String> = logs.iter().map(|l| format!("{:.4}", l.train_loss)).collect();
            return Err(Error::TrainingDiverged(format!(
                "training loss has not decreased for {STALL_EPOCHS} epochs: [{}]",
                history.join(", ")
            )));
        }
    }
    best_model.params = best_model.params.values_only();
    Ok((
        best_model,
        SurrogateReport {
            epochs: logs,
            initial_test_nrmse,
            best_epoch: best.1,
            best_test_nrmse: best.0,
            train_nrmse_at_best: best.2,
            train_frames: train_idx.len(),
            test_frames: test_idx.len(),
        },
    ))
}

/// NRMSE aggregated over a 10 x 10 grid of bias and swing deciles.
#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedNrmse {
    /// `[bias_decile][swing_decile]` frame counts.
    pub counts: [[usize; 10]; 10],
    /// Mean NRMSE per cell; NaN where a cell is empty.
    pub mean: [[f64; 10]; 10],
    pub per_frame: Vec<f64>,
    pub overall: f64,
}

impl StratifiedNrmse {
    pub fn covered_cells(&self) -> usize {
        self.counts.iter().flatten().filter(|&&c| c > 0).count()
    }
}

/// Per-frame NRMSE of `predict` against the frames' targets, binned by the
/// frames' drive settings.
pub fn stratify(
    frames: &[SurrogateSample],
    mut predict: impl FnMut(&SurrogateSample) -> Result<Vec<f64>>,
) -> Result<StratifiedNrmse> {
    let mut counts = [[0usize; 10]; 10];
    let mut sums = [[0.0f64; 10]; 10];
    let mut per_frame = Vec::with_capacity(frames.len());
    for f in frames {
        let e = nrmse(&predict(f)?, &f.target)?;
        let (b, s) = (decile(f.i_bias, BIAS_RANGE), decile(f.i_pp, SWING_RANGE));
        counts[b][s] += 1;
        sums[b][s] += e;
        per_frame.push(e);
    }
    let mut mean = [[f64::NAN; 10]; 10];
    for b in 0..10 {
        for s in 0..10 {
            if counts[b][s] > 0 {
                mean[b][s] = sums[b][s] / counts[b][s] as f64;
            }
        }
    }
    let overall = per_frame.iter().sum::<f64>() / per_frame.len().max(1) as f64;
    Ok(StratifiedNrmse {
        counts,
        mean,
        per_frame,
        overall,
    })
}

/// Stratified NRMSE of a trained surrogate on frames it has not seen.
pub fn evaluate_surrogate(model: &Surrogate, frames: &[SurrogateSample]) -> Result<StratifiedNrmse> {
    stratify(frames, |f| model.predict(&f.input))
}
