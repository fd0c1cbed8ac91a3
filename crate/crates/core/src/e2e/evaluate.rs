use super::autoencoder::{decode, frame_noise, frame_symbols, rx_normalize, scored_ce, SCORED_SYMBOLS};
use super::encoder::{encode_frame, learned_currents, tx_lowpass};
use crate::diff::{nats_to_bits, Graph, ParamStore, Tensor};
use crate::dsp::{
    compute_ser, measure_snr_db, mutual_information_from_ce, received_power_metric, LevelDetector, Metrics, PAM_ORDER,
};
use crate::error::{Error, Result};
use crate::laser::LaserParams;
use crate::link::{LinkConfig, ReferenceChannel, FRAME_LEN};
use crate::surrogate::{Surrogate, Weights};

/// Frame indices of evaluation frames start here so they never coincide
/// with training frames drawn from the same seed.
pub const EVAL_FRAME_OFFSET: u64 = 1 << 32;

/// Frames used to fit receiver statistics and to score a configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPlan {
    pub symbol_rate: f64,
    /// Receiver noise standard deviation, watts.
    pub sigma: f64,
    /// Frames for fitting detectors and equalizers.
    pub fit_frames: usize,
    /// Frames for the reported figures.
    pub test_frames: usize,
    pub seed: u64,
}

impl EvalPlan {
    pub fn fit_indices(&self) -> impl Iterator<Item = u64> {
        EVAL_FRAME_OFFSET..EVAL_FRAME_OFFSET + self.fit_frames as u64
    }

    pub fn test_indices(&self) -> impl Iterator<Item = u64> {
        let start = EVAL_FRAME_OFFSET + self.fit_frames as u64;
        start..start + self.test_frames as u64
    }
}

/// One frame after the channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedFrame {
    pub symbols: Vec<usize>,
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
}

/// Sends frames `indices` through the rate equations. Frames whose solver
/// run diverges are skipped and counted.
pub fn receive_frames(
    channel: &ReferenceChannel,
    i_bias: f64,
    plan: &EvalPlan,
    indices: impl Iterator<Item = u64>,
    mut drive: impl FnMut(&[usize]) -> Result<Vec<f64>>,
) -> Result<(Vec<ReceivedFrame>, usize)> {
    let mut out = Vec::new();
    let mut excluded = 0;
    for f in indices {
        let symbols = frame_symbols(plan.seed, f);
        let current = drive(&symbols)?;
        let clean = match channel.propagate(&current, i_bias) {
            Ok(p) => p,
            Err(e @ Error::SolverDiverged { .. }) => {
                log::warn!("evaluation frame {f} excluded: {e}");
                excluded += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let noise = frame_noise(plan.seed, f, plan.sigma, clean.len())?;
        let noisy = clean.iter().zip(&noise.data).map(|(a, b)| a + b).collect();
        out.push(ReceivedFrame { symbols, clean, noisy });
    }
    if out.is_empty() {
        return Err(Error::Degenerate("every evaluation frame diverged".into()));
    }
    Ok((out, excluded))
}

/// Figures for one evaluated configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOutcome {
    pub metrics: Metrics,
    pub ce_bits: f64,
    pub i_bias: f64,
    pub i_pp: f64,
    /// Frames dropped because the solver diverged.
    pub excluded_frames: usize,
}

/// Scored-symbol decision values of a set of frames.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Decisions {
    pub values: Vec<f64>,
    pub symbols: Vec<usize>,
}

impl Decisions {
    /// Collects `value(frame, k)` for the scored symbols `k` of each frame.
    pub fn collect(frames: &[ReceivedFrame], mut value: impl FnMut(&ReceivedFrame, usize) -> f64) -> Self {
        let mut d = Self::default();
        for f in frames {
            for k in SCORED_SYMBOLS {
                d.values.push(value(f, k));
                d.symbols.push(f.symbols[k]);
            }
        }
        d
    }
}

/// Fits a level detector on `fit` and returns SER and cross-entropy (bits)
/// on `test`.
pub fn detect(fit: &Decisions, test: &Decisions) -> Result<(f64, f64)> {
    let det = LevelDetector::fit(&fit.values, &fit.symbols, PAM_ORDER)?;
    let decided: Vec<usize> = test.values.iter().map(|&v| det.decide(v)).collect();
    let ser = compute_ser(&test.symbols, &decided)?;
    Ok((ser, det.cross_entropy_bits(&test.values, &test.symbols)))
}

/// Electrical SNR measured over all samples of `frames`.
pub fn measured_snr(frames: &[ReceivedFrame]) -> Result<f64> {
    let clean: Vec<f64> = frames.iter().flat_map(|f| f.clean.iter().copied()).collect();
    let noisy: Vec<f64> = frames.iter().flat_map(|f| f.noisy.iter().copied()).collect();
    measure_snr_db(&clean, &noisy)
}

pub(crate) fn outcome(
    p: &LaserParams,
    ser: f64,
    ce_bits: f64,
    (i_bias, i_pp): (f64, f64),
    snr_db: Option<f64>,
    excluded_frames: usize,
) -> Result<EvalOutcome> {
    Ok(EvalOutcome {
        metrics: Metrics {
            ser,
            mi_bits: mutual_information_from_ce(ce_bits, PAM_ORDER),
            nrmse: None,
            prec_dbm: received_power_metric(p, i_bias, i_pp)?,
            snr_db,
        },
        ce_bits,
        i_bias,
        i_pp,
        excluded_frames,
    })
}

/// Drive current of the learned transmitter for one frame.
pub fn ae_drive(store: &ParamStore, symbols: &[usize], lowpass: &Tensor) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let i = encode_frame(&mut g, store, symbols, lowpass, Weights::Frozen)?;
    Ok(g.value(i).data.clone())
}

/// Hard decisions and cross-entropy (nats) of the decoder on one received
/// frame.
fn ae_decide(store: &ParamStore, noisy: &[f64], symbols: &[usize], power_ref: f64) -> Result<(Vec<usize>, f64)> {
    let mut g = Graph::new();
    let rx = g.constant(Tensor::column(
        noisy.iter().map(|&v| rx_normalize(v, power_ref)).collect(),
    ));
    let logits = decode(&mut g, store, rx, Weights::Frozen)?;
    let loss = scored_ce(&mut g, logits, symbols)?;
    let probs = g.softmax_probs(loss).expect("softmax node");
    let decided = probs
        .data
        .chunks(PAM_ORDER)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (k, &v)| if v > b.1 { (k, v) } else { b })
                .0
        })
        .collect();
    Ok((decided, g.value(loss).item()))
}

fn score_ae(store: &ParamStore, frames: &[(Vec<usize>, Vec<f64>)], power_ref: f64) -> Result<(f64, f64)> {
    let mut tx = Vec::new();
    let mut rx = Vec::new();
    let mut ce = 0.0;
    for (symbols, noisy) in frames {
        let (d, c) = ae_decide(store, noisy, symbols, power_ref)?;
        tx.extend_from_slice(&symbols[SCORED_SYMBOLS]);
        rx.extend(d);
        ce += c;
    }
    Ok((compute_ser(&tx, &rx)?, nats_to_bits(ce / frames.len() as f64)))
}

/// The trained autoencoder with the rate equations in place of the
/// surrogate. Uses the test frames of `plan`; the decoder needs no fitting.
pub fn evaluate_autoencoder(
    store: &ParamStore,
    p: &LaserParams,
    power_ref: f64,
    plan: &EvalPlan,
) -> Result<EvalOutcome> {
    let (i_bias, i_pp) = learned_currents(store)?;
    let cfg = LinkConfig::at_rate(plan.symbol_rate);
    let channel = ReferenceChannel::new(*p, &cfg)?;
    let lowpass = tx_lowpass(plan.symbol_rate)?;
    let (frames, excluded) = receive_frames(&channel, i_bias, plan, plan.test_indices(), |s| {
        ae_drive(store, s, &lowpass)
    })?;
    let pairs: Vec<(Vec<usize>, Vec<f64>)> = frames.iter().map(|f| (f.symbols.clone(), f.noisy.clone())).collect();
    let (ser, ce) = score_ae(store, &pairs, power_ref)?;
    outcome(p, ser, ce, (i_bias, i_pp), Some(measured_snr(&frames)?), excluded)
}

/// The trained autoencoder on the surrogate it was trained through, on the
/// same frames and noise as [`evaluate_autoencoder`].
pub fn evaluate_autoencoder_on_surrogate(
    store: &ParamStore,
    p: &LaserParams,
    surrogate: &Surrogate,
    plan: &EvalPlan,
) -> Result<EvalOutcome> {
    let (i_bias, i_pp) = learned_currents(store)?;
    let lowpass = tx_lowpass(plan.symbol_rate)?;
    let mut pairs = Vec::with_capacity(plan.test_frames);
    for f in plan.test_indices() {
        let symbols = frame_symbols(plan.seed, f);
        let current = ae_drive(store, &symbols, &lowpass)?;
        let clean = surrogate.predict(&current)?;
        let noise = frame_noise(plan.seed, f, plan.sigma, FRAME_LEN)?;
        let noisy = clean.iter().zip(&noise.data).map(|(a, b)| a + b).collect();
        pairs.push((symbols, noisy));
    }
    let (ser, ce) = score_ae(store, &pairs, surrogate.config.power_ref)?;
    outcome(p, ser, ce, (i_bias, i_pp), None, 0)
}

/// Entry of `rows` whose received power is closest to `prec_dbm`.
pub fn nearest_prec<T>(rows: &[T], prec_dbm: f64, prec: impl Fn(&T) -> Option<f64>) -> Option<&T> {
    rows.iter()
        .filter_map(|r| prec(r).map(|p| (r, (p - prec_dbm).abs())))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(r, _)| r)
}
