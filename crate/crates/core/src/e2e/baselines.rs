use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::autoencoder::{frame_noise, frame_symbols, rx_normalize, SCORED_SYMBOLS};
use super::encoder::{tx_lowpass, weight};
use super::evaluate::{detect, measured_snr, outcome, receive_frames, Decisions, EvalOutcome, EvalPlan, ReceivedFrame};
use crate::diff::{volterra_apply, volterra_design, AdamConfig, Graph, ParamStore, Tensor, Var, VolterraKernel};
use crate::dsp::{equispaced_levels, CLIP_RANGE, LPF_TAPS, PAM_ORDER, SQUARE_PULSE};
use crate::error::{invalid, Error, Result};
use crate::laser::LaserParams;
use crate::linalg::{lstsq, Matrix};
use crate::link::{drive_current, LinkConfig, ReferenceChannel, FRAME_SYMBOLS};
use crate::surrogate::{Surrogate, Weights};

/// Linear and quadratic memory of the Volterra equalizer.
pub const VNLE_MEMORY: usize = 16;
pub const FFE_TAPS: usize = 21;
/// Bias current of every baseline.
pub const BASELINE_BIAS: f64 = 0.075;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BaselineKind {
    /// Square pulses, level detection, no equalization.
    Uncompensated,
    /// Least-squares linear equalizer.
    Ffe,
    /// Learned 2-tap pulse with a second-order Volterra equalizer.
    VnleLps,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [BaselineKind::Uncompensated, BaselineKind::Ffe, BaselineKind::VnleLps];

    pub fn label(self) -> &'static str {
        match self {
            BaselineKind::Uncompensated => "BL",
            BaselineKind::Ffe => "FFE",
            BaselineKind::VnleLps => "VNLE+LPS",
        }
    }

    /// Equalizer coefficients, excluding constant terms.
    pub fn tap_budget(self) -> usize {
        match self {
            BaselineKind::Uncompensated => 0,
            BaselineKind::Ffe => FFE_TAPS,
            BaselineKind::VnleLps => VNLE_MEMORY + VNLE_MEMORY * VNLE_MEMORY,
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Swing values of the baseline sweep: 8 to 80 mA in 8 mA steps.
pub fn swing_grid() -> Vec<f64> {
    (1..=10).map(|k| 0.008 * k as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub i_bias: f64,
    pub swings: Vec<f64>,
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind) -> Self {
        Self {
            kind,
            i_bias: BASELINE_BIAS,
            swings: swing_grid(),
        }
    }
}

fn link_at(symbol_rate: f64, i_bias: f64, i_pp: f64) -> Result<LinkConfig> {
    let cfg = LinkConfig {
        symbol_rate,
        i_bias,
        i_pp,
        ..LinkConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn normalized(frames: &[ReceivedFrame], power_ref: f64) -> Vec<Vec<f64>> {
    frames
        .iter()
        .map(|f| f.noisy.iter().map(|&v| rx_normalize(v, power_ref)).collect())
        .collect()
}

/// Uncompensated link: level detection on one sample per symbol, at whichever
/// of the two sampling phases detects better on the fit frames.
pub fn evaluate_uncompensated(
    p: &LaserParams,
    power_ref: f64,
    (i_bias, i_pp): (f64, f64),
    plan: &EvalPlan,
) -> Result<EvalOutcome> {
    let cfg = link_at(plan.symbol_rate, i_bias, i_pp)?;
    let channel = ReferenceChannel::new(*p, &cfg)?;
    let drive = |s: &[usize]| drive_current(&symbol_seq(s)?, &SQUARE_PULSE, &cfg);
    let (fit, ex_fit) = receive_frames(&channel, cfg.i_bias, plan, plan.fit_indices(), drive)?;
    let (test, ex_test) = receive_frames(&channel, cfg.i_bias, plan, plan.test_indices(), drive)?;
    let (fit_u, test_u) = (normalized(&fit, power_ref), normalized(&test, power_ref));
    let mut best: Option<(f64, usize)> = None;
    for phase in 0..2 {
        let d = at_phase(&fit, &fit_u, phase);
        let (ser, _) = detect(&d, &d)?;
        if best.is_none_or(|b| ser < b.0) {
            best = Some((ser, phase));
        }
    }
    let phase = best.expect("two phases").1;
    let (ser, ce) = detect(&at_phase(&fit, &fit_u, phase), &at_phase(&test, &test_u, phase))?;
    outcome(
        p,
        ser,
        ce,
        (cfg.i_bias, i_pp),
        Some(measured_snr(&test)?),
        ex_fit + ex_test,
    )
}

fn at_phase(frames: &[ReceivedFrame], u: &[Vec<f64>], phase: usize) -> Decisions {
    let mut d = Decisions::default();
    for (f, uf) in frames.iter().zip(u) {
        for k in SCORED_SYMBOLS {
            d.values.push(uf[2 * k + phase]);
            d.symbols.push(f.symbols[k]);
        }
    }
    d
}

fn symbol_seq(s: &[usize]) -> Result<crate::dsp::SymbolSequence> {
    crate::dsp::SymbolSequence::new(s.to_vec(), PAM_ORDER, 1.0)
}

/// Feed-forward equalizer: `taps` coefficients on the 2-sample-per-symbol
/// signal centred on each symbol's second sample, plus an offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Ffe {
    pub taps: Vec<f64>,
    pub offset: f64,
}

impl Ffe {
    fn row(u: &[f64], k: usize, taps: usize) -> impl Iterator<Item = f64> + '_ {
        let centre = 2 * k + 1 + taps / 2;
        (0..taps).map(move |j| {
            let s = centre as isize - j as isize;
            if s >= 0 && (s as usize) < u.len() {
                u[s as usize]
            } else {
                0.0
            }
        })
    }

    /// Least-squares fit mapping each received symbol to its transmitted
    /// level.
    pub fn fit(signals: &[Vec<f64>], symbols: &[Vec<usize>], taps: usize) -> Result<Self> {
        let levels = equispaced_levels(PAM_ORDER);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (u, s) in signals.iter().zip(symbols) {
            for k in SCORED_SYMBOLS {
                let mut r: Vec<f64> = Self::row(u, k, taps).collect();
                r.push(1.0);
                rows.push(r);
                y.push(levels[s[k]]);
            }
        }
        let sol = lstsq(&Matrix::from_rows(&rows), &y)?;
        let c = sol.coefficients;
        Ok(Self {
            taps: c[..taps].to_vec(),
            offset: c[taps],
        })
    }

    /// Equalized value of symbol `k`.
    pub fn apply(&self, u: &[f64], k: usize) -> f64 {
        Self::row(u, k, self.taps.len())
            .zip(&self.taps)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + self.offset
    }
}

pub fn evaluate_ffe(
    p: &LaserParams,
    power_ref: f64,
    (i_bias, i_pp): (f64, f64),
    plan: &EvalPlan,
) -> Result<EvalOutcome> {
    let cfg = link_at(plan.symbol_rate, i_bias, i_pp)?;
    let channel = ReferenceChannel::new(*p, &cfg)?;
    let drive = |s: &[usize]| drive_current(&symbol_seq(s)?, &SQUARE_PULSE, &cfg);
    let (fit, ex_fit) = receive_frames(&channel, cfg.i_bias, plan, plan.fit_indices(), drive)?;
    let (test, ex_test) = receive_frames(&channel, cfg.i_bias, plan, plan.test_indices(), drive)?;
    let (fit_u, test_u) = (normalized(&fit, power_ref), normalized(&test, power_ref));
    let fit_syms: Vec<Vec<usize>> = fit.iter().map(|f| f.symbols.clone()).collect();
    let ffe = Ffe::fit(&fit_u, &fit_syms, FFE_TAPS)?;
    let equalize = |frames: &[ReceivedFrame], u: &[Vec<f64>]| {
        let mut d = Decisions::default();
        for (f, uf) in frames.iter().zip(u) {
            for k in SCORED_SYMBOLS {
                d.values.push(ffe.apply(uf, k));
                d.symbols.push(f.symbols[k]);
            }
        }
        d
    };
    let (ser, ce) = detect(&equalize(&fit, &fit_u), &equalize(&test, &test_u))?;
    outcome(
        p,
        ser,
        ce,
        (cfg.i_bias, i_pp),
        Some(measured_snr(&test)?),
        ex_fit + ex_test,
    )
}

/// Parameter names of the learned-pulse Volterra baseline.
pub mod vnle_names {
    pub const PULSE: &str = "lps.taps";
    pub const H0: &str = "vnle.h0";
    pub const H1: &str = "vnle.h1";
    pub const H2: &str = "vnle.h2";
}

/// Transmit drive with learned 2-tap pulse `pulse` (`1 x 2`) for fixed
/// currents: pulse shaping, low-pass, clip and scaling.
fn lps_drive(g: &mut Graph, pulse: Var, symbols: &[usize], lowpass: &Tensor, i_bias: f64, i_pp: f64) -> Result<Var> {
    let levels = equispaced_levels(PAM_ORDER);
    let amps = g.constant(Tensor::column(symbols.iter().map(|&s| levels[s]).collect()));
    let pulses = g.matmul(amps, pulse)?;
    let serial = g.reshape(pulses, 2 * symbols.len(), 1)?;
    let taps = g.constant(lowpass.clone());
    let filtered = g.fir(serial, taps, LPF_TAPS / 2)?;
    let clipped = g.clip_straight_through(filtered, CLIP_RANGE.0, CLIP_RANGE.1);
    Ok(g.scale_shift(clipped, i_pp, i_bias))
}

/// Volterra output at each symbol's second sample (`n x 1`).
fn vnle_symbols(g: &mut Graph, store: &ParamStore, u: Var, weights: Weights) -> Result<Var> {
    let h0 = weight(g, store, vnle_names::H0, weights)?;
    let h1 = weight(g, store, vnle_names::H1, weights)?;
    let h2 = weight(g, store, vnle_names::H2, weights)?;
    let y = g.volterra(u, h0, h1, h2, VNLE_MEMORY / 2)?;
    let n = g.value(y).rows / 2;
    let pairs = g.reshape(y, n, 2)?;
    let pick = g.constant(Tensor::column(vec![0.0, 1.0]));
    g.matmul(pairs, pick)
}

fn kernel_of(store: &ParamStore) -> Result<VolterraKernel> {
    let get = |n: &str| {
        store
            .get(n)
            .cloned()
            .ok_or_else(|| Error::Config(format!("unknown parameter `{n}`")))
    };
    VolterraKernel::new(
        get(vnle_names::H0)?.item(),
        get(vnle_names::H1)?.data,
        get(vnle_names::H2)?.data,
        VNLE_MEMORY,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct VnleTrainConfig {
    pub epochs: usize,
    /// Training frames, reused every epoch with fresh noise.
    pub frames: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for VnleTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            frames: 16,
            lr: 3e-4,
            clip_norm: Some(1.0),
            seed: 1,
        }
    }
}

/// Per-epoch mean training MSE.
#[derive(Debug, Clone, PartialEq)]
pub struct VnleReport {
    pub initial_mse: f64,
    pub epoch_mse: Vec<f64>,
}

/// Learns the pulse and Volterra kernel jointly by gradient descent on the
/// symbol MSE through the frozen surrogate, at fixed bias and swing. The
/// kernel starts from a least-squares fit for the square pulse.
pub fn train_vnle_lps(
    surrogate: &Surrogate,
    symbol_rate: f64,
    (i_bias, i_pp): (f64, f64),
    sigma: f64,
    cfg: &VnleTrainConfig,
) -> Result<(ParamStore, VnleReport)> {
    if cfg.epochs == 0 || cfg.frames == 0 {
        return Err(invalid("epochs", "epochs and frames must be positive"));
    }
    let lowpass = tx_lowpass(symbol_rate)?;
    let p_ref = surrogate.config.power_ref;
    let levels = equispaced_levels(PAM_ORDER);
    let mut store = ParamStore::new();
    store.insert(vnle_names::PULSE, Tensor::row(SQUARE_PULSE.to_vec()))?;

    // Least-squares start on the surrogate's response to square pulses.
    let mut rows = Vec::new();
    let mut target = Vec::new();
    let pairs = VNLE_MEMORY * (VNLE_MEMORY + 1) / 2;
    for f in 0..cfg.frames as u64 {
        let symbols = frame_symbols(cfg.seed, f);
        let mut g = Graph::new();
        let pulse = g.frozen(&store, vnle_names::PULSE)?;
        let i = lps_drive(&mut g, pulse, &symbols, &lowpass, i_bias, i_pp)?;
        let power = surrogate.forward(&mut g, i, Weights::Frozen)?;
        let noise = frame_noise(cfg.seed, f, sigma, 2 * FRAME_SYMBOLS)?;
        let u: Vec<f64> = g
            .value(power)
            .data
            .iter()
            .zip(&noise.data)
            .map(|(a, b)| rx_normalize(a + b, p_ref))
            .collect();
        let design = volterra_design(&u, VNLE_MEMORY, VNLE_MEMORY, VNLE_MEMORY / 2, 0..u.len());
        for k in SCORED_SYMBOLS {
            let t = 2 * k + 1;
            rows.push(design.data[t * design.cols..(t + 1) * design.cols].to_vec());
            target.push(levels[symbols[k]]);
        }
    }
    let sol = lstsq(&Matrix::from_rows(&rows), &target)?;
    let c = &sol.coefficients;
    debug_assert_eq!(c.len(), 1 + VNLE_MEMORY + pairs);
    let mut h2 = vec![0.0; VNLE_MEMORY * VNLE_MEMORY];
    let mut i = 1 + VNLE_MEMORY;
    for a in 0..VNLE_MEMORY {
        for b in a..VNLE_MEMORY {
            let v = if a == b { c[i] } else { 0.5 * c[i] };
            h2[a * VNLE_MEMORY + b] = v;
            h2[b * VNLE_MEMORY + a] = v;
            i += 1;
        }
    }
    store.insert(vnle_names::H0, Tensor::scalar(c[0]))?;
    store.insert(vnle_names::H1, Tensor::column(c[1..1 + VNLE_MEMORY].to_vec()))?;
    store.insert(vnle_names::H2, Tensor::new(VNLE_MEMORY, VNLE_MEMORY, h2)?)?;

    let adam = AdamConfig {
        lr: cfg.lr,
        clip_norm: cfg.clip_norm,
        ..AdamConfig::default()
    };
    let scored = SCORED_SYMBOLS;
    let targets = |symbols: &[usize]| Tensor::column(symbols[scored.clone()].iter().map(|&s| levels[s]).collect());
    let mut order: Vec<u64> = (0..cfg.frames as u64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut epoch_mse = Vec::with_capacity(cfg.epochs);
    let mut initial_mse = f64::NAN;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &f in &order {
            let symbols = frame_symbols(cfg.seed, f);
            let noise_frame = f + (epoch as u64 + 1) * cfg.frames as u64;
            let noise = frame_noise(cfg.seed, noise_frame, sigma, 2 * FRAME_SYMBOLS)?;
            let mut g = Graph::new();
            let pulse = g.param(&store, vnle_names::PULSE)?;
            let i = lps_drive(&mut g, pulse, &symbols, &lowpass, i_bias, i_pp)?;
            let power = surrogate.forward(&mut g, i, Weights::Frozen)?;
            let noisy = g.add_const(power, &noise)?;
            let u = g.scale_shift(noisy, 2.0 / p_ref, -1.0);
            let y = vnle_symbols(&mut g, &store, u, Weights::Trainable)?;
            let y = g.slice_rows(y, scored.start, scored.len())?;
            let loss = g.mse_loss(y, &targets(&symbols))?;
            let l = g.value(loss).item();
            if !l.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "VNLE loss non-finite at epoch {epoch}"
                )));
            }
            total += l;
            let grads = g.param_grads(&g.backward(loss)?);
            store.adam_step(&grads, &adam)?;
        }
        let mse = total / cfg.frames as f64;
        if epoch == 0 {
            initial_mse = mse;
        }
        log::debug!("VNLE epoch {epoch} mse {mse:.5e}");
        epoch_mse.push(mse);
    }
    Ok((store.values_only(), VnleReport { initial_mse, epoch_mse }))
}

/// Learned-pulse Volterra baseline on the rate equations. The level detector
/// is fitted on the equalized fit frames.
pub fn evaluate_vnle_lps(
    store: &ParamStore,
    p: &LaserParams,
    power_ref: f64,
    (i_bias, i_pp): (f64, f64),
    plan: &EvalPlan,
) -> Result<EvalOutcome> {
    let cfg = link_at(plan.symbol_rate, i_bias, i_pp)?;
    let channel = ReferenceChannel::new(*p, &cfg)?;
    let pulse = store
        .get(vnle_names::PULSE)
        .ok_or_else(|| Error::Config("missing learned pulse".into()))?
        .data
        .clone();
    let kernel = kernel_of(store)?;
    let drive = |s: &[usize]| drive_current(&symbol_seq(s)?, &pulse, &cfg);
    let (fit, ex_fit) = receive_frames(&channel, cfg.i_bias, plan, plan.fit_indices(), drive)?;
    let (test, ex_test) = receive_frames(&channel, cfg.i_bias, plan, plan.test_indices(), drive)?;
    let equalize = |frames: &[ReceivedFrame]| {
        let u = normalized(frames, power_ref);
        let mut d = Decisions::default();
        for (f, uf) in frames.iter().zip(&u) {
            let y = volterra_apply(uf, &kernel, VNLE_MEMORY / 2);
            for k in SCORED_SYMBOLS {
                d.values.push(y[2 * k + 1]);
                d.symbols.push(f.symbols[k]);
            }
        }
        d
    };
    let (ser, ce) = detect(&equalize(&fit), &equalize(&test))?;
    outcome(
        p,
        ser,
        ce,
        (cfg.i_bias, i_pp),
        Some(measured_snr(&test)?),
        ex_fit + ex_test,
    )
}

/// Result at one swing of a baseline sweep; failures are kept per point.
#[derive(Debug)]
pub struct GridPoint {
    pub i_pp: f64,
    pub result: Result<EvalOutcome>,
}

/// Sweeps a baseline over its swing grid. `vnle` supplies the trained
/// parameters of the Volterra baseline for a swing; it is not called for the
/// other kinds.
pub fn run_baseline(
    cfg: &BaselineConfig,
    p: &LaserParams,
    power_ref: f64,
    plan: &EvalPlan,
    mut vnle: impl FnMut(f64) -> Result<ParamStore>,
) -> Vec<GridPoint> {
    cfg.swings
        .iter()
        .map(|&i_pp| {
            let drive = (cfg.i_bias, i_pp);
            let result = match cfg.kind {
                BaselineKind::Uncompensated => evaluate_uncompensated(p, power_ref, drive, plan),
                BaselineKind::Ffe => evaluate_ffe(p, power_ref, drive, plan),
                BaselineKind::VnleLps => vnle(i_pp).and_then(|s| evaluate_vnle_lps(&s, p, power_ref, drive, plan)),
            };
            if let Err(e) = &result {
                log::warn!("{} at {:.0} mA failed: {e}", cfg.kind, i_pp * 1e3);
            }
            GridPoint { i_pp, result }
        })
        .collect()
}
