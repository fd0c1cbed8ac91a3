//! Transmitter/receiver signal processing and link metrics.

mod metrics;

pub(crate) use metrics::variance;
pub use metrics::{
    compute_ser, eye_histogram, measure_snr_db, mutual_information_from_ce, nrmse, nrmse_batch, received_power_metric,
    EyeHistogram, LevelDetector, Metrics,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};

/// Modulation order used throughout (4PAM).
pub const PAM_ORDER: usize = 4;
/// Number of taps in every low-pass FIR.
pub const LPF_TAPS: usize = 65;
/// Drive waveform clip range before amplification.
pub const CLIP_RANGE: (f64, f64) = (-0.5, 0.5);

/// Symbol indices together with the modulation order and symbol rate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolSequence {
    pub indices: Vec<usize>,
    pub order: usize,
    pub symbol_rate_hz: u64,
}

impl SymbolSequence {
    pub fn new(indices: Vec<usize>, order: usize, symbol_rate: f64) -> Result<Self> {
        if let Some(i) = indices.iter().position(|&s| s >= order) {
            return Err(invalid(
                "indices",
                format!("symbol {} at {i} exceeds order {order}", indices[i]),
            ));
        }
        Ok(Self {
            indices,
            order,
            symbol_rate_hz: symbol_rate.round() as u64,
        })
    }

    /// Equiprobable random symbols.
    pub fn random(n: usize, order: usize, symbol_rate: f64, rng: &mut impl Rng) -> Self {
        Self {
            indices: (0..n).map(|_| rng.gen_range(0..order)).collect(),
            order,
            symbol_rate_hz: symbol_rate.round() as u64,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `order` equispaced levels spanning the clip range, e.g. `{-1/2, -1/6, 1/6, 1/2}`.
pub fn equispaced_levels(order: usize) -> Vec<f64> {
    let (lo, hi) = CLIP_RANGE;
    (0..order)
        .map(|k| lo + (hi - lo) * k as f64 / (order - 1) as f64)
        .collect()
}

pub fn map_pam(symbols: &SymbolSequence, levels: &[f64]) -> Result<Vec<f64>> {
    if levels.len() != symbols.order {
        return Err(invalid(
            "levels",
            format!("expected {} levels, got {}", symbols.order, levels.len()),
        ));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("levels", "must be strictly increasing"));
    }
    Ok(symbols.indices.iter().map(|&s| levels[s]).collect())
}

/// Zero-stuffs `amplitudes` to `sps` samples per symbol and convolves with
/// `taps`, keeping `amplitudes.len() * sps` samples.
pub fn shape_pulses(amplitudes: &[f64], taps: &[f64], sps: usize) -> Result<Vec<f64>> {
    if sps == 0 {
        return Err(invalid("sps", "must be at least 1"));
    }
    if taps.is_empty() {
        return Err(invalid("taps", "must not be empty"));
    }
    let n = amplitudes.len() * sps;
    let mut out = vec![0.0; n];
    for (k, &a) in amplitudes.iter().enumerate() {
        for (j, &t) in taps.iter().enumerate() {
            let idx = k * sps + j;
            if idx < n {
                out[idx] += a * t;
            }
        }
    }
    Ok(out)
}

/// Square pulse at 2 samples per symbol.
pub const SQUARE_PULSE: [f64; 2] = [1.0, 1.0];

/// Scales taps so the largest magnitude is 1. `None` if all taps are zero.
pub fn normalize_taps(taps: &[f64]) -> Option<Vec<f64>> {
    let m = taps.iter().fold(0.0f64, |a, t| a.max(t.abs()));
    (m > 0.0).then(|| taps.iter().map(|t| t / m).collect())
}

/// Two taps drawn from `U[-0.5, 0.5]`, normalised in amplitude. Redrawn if
/// both come out zero.
pub fn stochastic_pulse(rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let raw = [rng.gen_range(-0.5..=0.5), rng.gen_range(-0.5..=0.5)];
        if let Some(t) = normalize_taps(&raw) {
            return t;
        }
    }
}

/// 65-tap Hamming-windowed sinc low-pass with unity DC gain.
pub fn design_lowpass(cutoff: f64, sample_rate: f64) -> Result<Vec<f64>> {
    if !(cutoff > 0.0 && cutoff < 0.5 * sample_rate) {
        return Err(invalid(
            "cutoff",
            format!("must lie in (0, fs/2), got {cutoff:e} Hz at fs {sample_rate:e}"),
        ));
    }
    let fc = cutoff / sample_rate;
    let mid = (LPF_TAPS - 1) as f64 / 2.0;
    let mut taps: Vec<f64> = (0..LPF_TAPS)
        .map(|n| {
            let t = n as f64 - mid;
            let sinc = if t == 0.0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * t).sin() / (std::f64::consts::PI * t)
            };
            let w = 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (LPF_TAPS - 1) as f64).cos();
            sinc * w
        })
        .collect();
    for n in 0..LPF_TAPS / 2 {
        taps[LPF_TAPS - 1 - n] = taps[n];
    }
    let dc: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= dc;
    }
    Ok(taps)
}

/// How samples beyond the ends of a sequence are treated when filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeMode {
    Zero,
    /// Repeat the first/last sample.
    Hold,
}

/// Applies an odd-length linear-phase FIR with its group delay removed, so
/// output sample `n` is centred on input sample `n`.
pub fn filter_centered(x: &[f64], taps: &[f64], edges: EdgeMode) -> Vec<f64> {
    let n = x.len();
    let half = (taps.len() / 2) as isize;
    let at = |i: isize| -> f64 {
        if i >= 0 && (i as usize) < n {
            x[i as usize]
        } else {
            match edges {
                EdgeMode::Zero => 0.0,
                EdgeMode::Hold if n == 0 => 0.0,
                EdgeMode::Hold if i < 0 => x[0],
                EdgeMode::Hold => x[n - 1],
            }
        }
    };
    (0..n as isize)
        .map(|t| {
            taps.iter()
                .enumerate()
                .map(|(k, h)| h * at(t + half - k as isize))
                .sum()
        })
        .collect()
}

/// Repeats every sample `factor` times.
pub fn upsample_hold(x: &[f64], factor: usize) -> Vec<f64> {
    x.iter().flat_map(|&v| std::iter::repeat_n(v, factor)).collect()
}

/// Keeps samples `phase, phase + factor, ...`.
pub fn decimate(x: &[f64], factor: usize, phase: usize) -> Vec<f64> {
    x.iter().skip(phase).step_by(factor).copied().collect()
}

/// Clips a dimensionless drive to `[-0.5, 0.5]` and maps it to a current
/// `I_bias + I_pp x`.
pub fn apply_drive_scaling(x: &[f64], i_pp: f64, i_bias: f64) -> Vec<f64> {
    x.iter()
        .map(|v| v.clamp(CLIP_RANGE.0, CLIP_RANGE.1) * i_pp + i_bias)
        .collect()
}

/// Deterministic RNG for one frame and purpose, independent across frames.
pub fn frame_rng(seed: u64, frame: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame.wrapping_mul(16).wrapping_add(purpose));
    rng
}

/// Adds i.i.d. zero-mean Gaussian noise with standard deviation `sigma`.
pub fn add_awgn(x: &[f64], sigma: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid("sigma", format!("must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x.to_vec());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| invalid("sigma", e.to_string()))?;
    Ok(x.iter().map(|v| v + normal.sample(rng)).collect())
}

/// Seeded convenience wrapper around [`add_awgn`].
pub fn add_awgn_seeded(x: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    add_awgn(x, sigma, &mut ChaCha8Rng::seed_from_u64(seed))
}
