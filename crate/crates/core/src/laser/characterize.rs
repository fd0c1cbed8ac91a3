//! Static and dynamic laser characteristics: L-I curve, small-signal
//! response, damping fit and chirp.

use std::f64::consts::PI;

use super::solver::integrate_rate_equations;
use super::{steady_state, LaserParams, LaserState, ELECTRON_CHARGE};
use crate::error::{invalid, Error, Result};
use crate::linalg::{lstsq, Matrix};
use crate::waveform::{SampledWaveform, Unit};

#[derive(Debug, Clone)]
pub struct LiCurve {
    pub currents: Vec<f64>,
    pub powers: Vec<f64>,
    pub threshold_current: f64,
    pub slope_efficiency: f64,
}

/// Steady-state light-current characteristic with threshold and slope
/// extraction.
///
/// The threshold is the zero crossing of a straight line fitted to the
/// above-threshold part of the curve. A first fit over the upper half of the
/// grid gives an estimate; the final fit uses `[2 I_th_est, max]`.
pub fn simulate_li_curve(p: &LaserParams, currents: &[f64]) -> Result<LiCurve> {
    if currents.len() < 20 {
        return Err(invalid("currents", "need at least 20 grid points"));
    }
    if currents.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("currents", "grid must be strictly increasing"));
    }
    if currents[0] > 1e-3 || *currents.last().unwrap() < 0.1 - 1e-12 {
        return Err(invalid("currents", "grid must span [0, 100] mA"));
    }
    let mut powers = Vec::with_capacity(currents.len());
    let mut failures = Vec::new();
    let k = p.power_per_photon_density();
    for &i in currents {
        match steady_state(p, i) {
            Ok(s) => powers.push(s.photons * k),
            Err(e) => {
                failures.push(format!("{:.3} mA: {e}", i * 1e3));
                powers.push(f64::NAN);
            }
        }
    }
    if !failures.is_empty() {
        return Err(Error::Degenerate(format!(
            "steady state failed at {} grid points: {}",
            failures.len(),
            failures.join("; ")
        )));
    }
    let i_max = *currents.last().unwrap();
    let (slope0, icpt0) = line_fit(currents, &powers, 0.5 * i_max, i_max)?;
    let ith0 = -icpt0 / slope0;
    let (slope, icpt) = line_fit(currents, &powers, 2.0 * ith0, i_max)?;
    Ok(LiCurve {
        currents: currents.to_vec(),
        powers,
        threshold_current: -icpt / slope,
        slope_efficiency: slope,
    })
}

fn line_fit(x: &[f64], y: &[f64], lo: f64, hi: f64) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(xi, _)| **xi >= lo && **xi <= hi)
        .map(|(a, b)| (*a, *b))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Degenerate(format!(
            "fewer than two L-I points in [{lo:e}, {hi:e}] A"
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Magnitude response on a frequency grid, normalised to the first point.
#[derive(Debug, Clone)]
pub struct SmallSignalCurve {
    pub bias: f64,
    pub frequencies: Vec<f64>,
    pub magnitude: Vec<f64>,
    pub peak_frequency: f64,
    /// Modulation bandwidth: first frequency above the peak where the
    /// response magnitude falls to half its DC value (-3 dB on a
    /// `10 log10 |H|` scale, the optical-power convention).
    pub f3db: Option<f64>,
    /// Where `|H|` falls to `1/sqrt(2)` (-3 dB on a `20 log10 |H|` scale).
    pub f3db_electrical: Option<f64>,
    /// Natural resonance frequency of the fitted two-pole response, Hz.
    pub resonance_frequency: f64,
    /// Fitted damping rate, 1/s.
    pub damping: f64,
    /// `K` and `gamma0` when the curve was generated from them.
    pub k_factor: Option<f64>,
    pub damping_offset: Option<f64>,
}

impl SmallSignalCurve {
    fn from_magnitude(bias: f64, frequencies: Vec<f64>, magnitude: Vec<f64>) -> Result<Self> {
        let (peak_frequency, f3db, f3db_electrical) = peak_and_bandwidth(&frequencies, &magnitude);
        let fit = fit_resonance(&frequencies, &magnitude)?;
        Ok(Self {
            bias,
            frequencies,
            magnitude,
            peak_frequency,
            f3db,
            f3db_electrical,
            resonance_frequency: fit.resonance_frequency,
            damping: fit.damping,
            k_factor: None,
            damping_offset: None,
        })
    }
}

fn peak_and_bandwidth(f: &[f64], m: &[f64]) -> (f64, Option<f64>, Option<f64>) {
    let (imax, _) = m
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let mut peak = f[imax];
    if imax > 0 && imax + 1 < m.len() {
        // Parabola through the three points around the maximum.
        let (x0, x1, x2) = (f[imax - 1], f[imax], f[imax + 1]);
        let (y0, y1, y2) = (m[imax - 1], m[imax], m[imax + 1]);
        let denom = (x0 - x1) * (x0 - x2) * (x1 - x2);
        let a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom;
        let b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom;
        if a < 0.0 {
            let v = -b / (2.0 * a);
            if v > x0 && v < x2 {
                peak = v;
            }
        }
    }
    let f3db = crossing(f, m, imax, 0.5);
    let f3db_electrical = crossing(f, m, imax, 0.5f64.sqrt());
    (peak, f3db, f3db_electrical)
}

/// First frequency after `from` where the magnitude drops below `level`,
/// interpolated linearly in dB.
fn crossing(f: &[f64], m: &[f64], from: usize, level: f64) -> Option<f64> {
    (from..m.len().saturating_sub(1))
        .find(|&i| m[i] >= level && m[i + 1] < level)
        .map(|i| {
            let (d0, d1) = (m[i].log10(), m[i + 1].log10());
            let t = (level.log10() - d0) / (d1 - d0);
            f[i] + t * (f[i + 1] - f[i])
        })
}

#[derive(Debug, Clone, Copy)]
pub struct ResonanceFit {
    pub resonance_frequency: f64,
    pub damping: f64,
    /// Multiplicative gain of the fitted response relative to the data.
    pub scale: f64,
}

/// Fits `|H| = s w_R^2 / |w_R^2 - w^2 + j w gamma|` to a magnitude curve.
///
/// `1/|H|^2` is a quadratic in `u = w^2`, so the fit is linear least squares
/// on `c0 + c1 u + c2 u^2`, rows weighted by `|H|^2` and restricted to points
/// above -20 dB.
pub fn fit_resonance(frequencies: &[f64], magnitude: &[f64]) -> Result<ResonanceFit> {
    if frequencies.len() != magnitude.len() {
        return Err(Error::LengthMismatch {
            expected: frequencies.len(),
            actual: magnitude.len(),
        });
    }
    let u_scale = (2.0 * PI * frequencies.iter().cloned().fold(0.0, f64::max)).powi(2);
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for (&f, &m) in frequencies.iter().zip(magnitude) {
        if m < 0.1 || !m.is_finite() {
            continue;
        }
        let u = (2.0 * PI * f).powi(2) / u_scale;
        let w = m * m;
        rows.push(vec![w, w * u, w * u * u]);
        rhs.push(w / (m * m));
    }
    if rows.len() < 3 {
        return Err(Error::Degenerate("fewer than three usable response points".into()));
    }
    let sol = lstsq(&Matrix::from_rows(&rows), &rhs)?;
    let c0 = sol.coefficients[0];
    let c1 = sol.coefficients[1] / u_scale;
    let c2 = sol.coefficients[2] / (u_scale * u_scale);
    if !(c0 > 0.0 && c2 > 0.0) {
        return Err(Error::Degenerate(format!(
            "response is not a resonant two-pole shape (c0 = {c0:e}, c2 = {c2:e})"
        )));
    }
    let wr2 = (c0 / c2).sqrt();
    let gamma2 = (c1 / c0) * wr2 * wr2 + 2.0 * wr2;
    Ok(ResonanceFit {
        resonance_frequency: wr2.sqrt() / (2.0 * PI),
        damping: gamma2.max(0.0).sqrt(),
        scale: 1.0 / c0.sqrt(),
    })
}

/// Slowest decay rate of the linearised S/N dynamics at a steady state, 1/s.
fn slowest_decay(p: &LaserParams, s: &LaserState, current: f64) -> f64 {
    let hs = 1e-6 * s.photons.max(1e15);
    let hn = 1e-6 * s.carriers;
    let (fs_p, fn_p) = p.rate_sn(s.photons + hs, s.carriers, current);
    let (fs_m, fn_m) = p.rate_sn(s.photons - hs, s.carriers, current);
    let (gs_p, gn_p) = p.rate_sn(s.photons, s.carriers + hn, current);
    let (gs_m, gn_m) = p.rate_sn(s.photons, s.carriers - hn, current);
    let j11 = (fs_p - fs_m) / (2.0 * hs);
    let j21 = (fn_p - fn_m) / (2.0 * hs);
    let j12 = (gs_p - gs_m) / (2.0 * hn);
    let j22 = (gn_p - gn_m) / (2.0 * hn);
    let tr = j11 + j22;
    let det = j11 * j22 - j12 * j21;
    let disc = 0.25 * tr * tr - det;
    if disc < 0.0 {
        -0.5 * tr
    } else {
        // Both real; the slower one is closer to zero.
        -(0.5 * tr + disc.sqrt())
    }
}

/// Numerically probed modulation response.
///
/// Each frequency is driven with `I_bias (1 + m sin(2 pi f t))`. After twenty
/// time constants of the slowest linearised mode have elapsed, the output
/// power fundamental is measured by a single-bin DFT over an integer number
/// of periods. The capture is doubled (up to four times) if the fundamental
/// estimated on the second half of the window differs from the full-window
/// estimate by more than 5%.
pub fn probe_small_signal(p: &LaserParams, bias: f64, frequencies: &[f64], mod_depth: f64) -> Result<SmallSignalCurve> {
    if !(mod_depth > 0.0 && mod_depth <= 0.02) {
        return Err(invalid("mod_depth", "small-signal probing needs 0 < depth <= 0.02"));
    }
    let ith = p.analytic_threshold_current();
    if bias <= 2.0 * ith {
        return Err(invalid("bias", format!("must exceed 2 I_th = {:.2} mA", 2e3 * ith)));
    }
    if frequencies.is_empty() || frequencies.windows(2).any(|w| w[1] <= w[0]) || frequencies[0] <= 0.0 {
        return Err(invalid("frequencies", "must be positive and strictly increasing"));
    }
    let init = steady_state(p, bias)?;
    let decay = slowest_decay(p, &init, bias);
    let settle = 20.0 / decay;
    let mut raw = Vec::with_capacity(frequencies.len());
    for &f in frequencies {
        raw.push(probe_one(p, init, bias, f, mod_depth * bias, settle)?);
    }
    let norm = raw[0];
    let magnitude = raw.iter().map(|a| a / norm).collect();
    SmallSignalCurve::from_magnitude(bias, frequencies.to_vec(), magnitude)
}

fn probe_one(p: &LaserParams, init: LaserState, bias: f64, f: f64, amp: f64, settle: f64) -> Result<f64> {
    const MAX_STEP: f64 = 0.25e-12;
    let period = 1.0 / f;
    let per_period = ((period / 1e-12).ceil() as usize).max(32);
    let dt = period / per_period as f64;
    let substeps = ((dt / MAX_STEP).ceil() as usize).max(1);
    let settle_periods = (settle / period).ceil() as usize;
    let mut capture_periods = ((2e-9 / period).ceil() as usize).max(8);
    for _ in 0..3 {
        let total = (settle_periods + capture_periods) * per_period + 1;
        let w = 2.0 * PI * f;
        let drive: Vec<f64> = (0..total).map(|k| bias + amp * (w * k as f64 * dt).sin()).collect();
        let drive = SampledWaveform::new(drive, 1.0 / dt, Unit::Ampere)?;
        let traj = integrate_rate_equations(p, &drive, init, substeps)?;
        let start = settle_periods * per_period;
        let full = fundamental(&traj.photons[start..start + capture_periods * per_period], per_period);
        let half_start = start + (capture_periods / 2) * per_period;
        let half = fundamental(
            &traj.photons[half_start..start + capture_periods * per_period],
            per_period,
        );
        if (full - half).abs() <= 0.05 * full {
            return Ok(full * p.power_per_photon_density() / amp);
        }
        capture_periods *= 2;
    }
    Err(Error::Degenerate(format!(
        "unresolved fundamental at {:.3} GHz",
        f * 1e-9
    )))
}

/// Amplitude of the fundamental of `x`, which spans whole periods of
/// `per_period` samples.
fn fundamental(x: &[f64], per_period: usize) -> f64 {
    let n = x.len();
    let w = 2.0 * PI / per_period as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (k, v) in x.iter().enumerate() {
        let ph = w * (k % per_period) as f64;
        re += v * ph.cos();
        im -= v * ph.sin();
    }
    2.0 * (re * re + im * im).sqrt() / n as f64
}

/// Closed-form two-pole response with `f_R` from the bias current and
/// `gamma = K f_R^2 + gamma0`.
pub fn analytic_small_signal(
    p: &LaserParams,
    bias: f64,
    threshold: f64,
    k_factor: f64,
    damping_offset: f64,
    frequencies: &[f64],
) -> Result<SmallSignalCurve> {
    if bias <= threshold {
        return Err(invalid("bias", "must exceed the threshold current"));
    }
    let fr = analytic_resonance_frequency(p, bias, threshold);
    let gamma = k_factor * fr * fr + damping_offset;
    let wr2 = (2.0 * PI * fr).powi(2);
    let magnitude: Vec<f64> = frequencies
        .iter()
        .map(|&f| {
            let w = 2.0 * PI * f;
            wr2 / ((wr2 - w * w).powi(2) + (w * gamma).powi(2)).sqrt()
        })
        .collect();
    let (peak_frequency, f3db, f3db_electrical) = peak_and_bandwidth(frequencies, &magnitude);
    Ok(SmallSignalCurve {
        bias,
        frequencies: frequencies.to_vec(),
        magnitude,
        peak_frequency,
        f3db,
        f3db_electrical,
        resonance_frequency: fr,
        damping: gamma,
        k_factor: Some(k_factor),
        damping_offset: Some(damping_offset),
    })
}

/// `f_R = (1/2pi) sqrt(Gamma v_g a eta_i (I - I_th) / (q V))` with `v_g a = g0`.
pub fn analytic_resonance_frequency(p: &LaserParams, bias: f64, threshold: f64) -> f64 {
    let w2 = p.confinement * p.gain_slope * p.injection_eff * (bias - threshold) / (ELECTRON_CHARGE * p.active_volume);
    w2.max(0.0).sqrt() / (2.0 * PI)
}

/// Least-squares `(K, gamma0)` from `gamma_i = K f_R,i^2 + gamma0` over the
/// per-curve resonance fits.
pub fn fit_damping(curves: &[SmallSignalCurve]) -> Result<(f64, f64)> {
    if curves.len() < 3 {
        return Err(Error::RankDeficient(format!(
            "need at least 3 bias points, got {}",
            curves.len()
        )));
    }
    let x: Vec<f64> = curves.iter().map(|c| c.resonance_frequency.powi(2)).collect();
    let y: Vec<f64> = curves.iter().map(|c| c.damping).collect();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let spread = x.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    if !(spread > 1e-9 * mean.abs()) {
        return Err(Error::RankDeficient("all resonance frequencies coincide".into()));
    }
    let (k, g0) = line_fit(&x, &y, f64::MIN, f64::MAX)?;
    Ok((k, g0))
}

/// Power floor applied before the `1/P` chirp term, W.
pub const CHIRP_POWER_FLOOR: f64 = 1e-6;

/// Instantaneous frequency deviation `(alpha/4pi) [d ln P/dt + kappa P]`, Hz.
pub fn instantaneous_chirp(p: &LaserParams, power: &SampledWaveform) -> Result<SampledWaveform> {
    if power.unit != Unit::Watt {
        return Err(invalid("power", "expected a power waveform"));
    }
    let kappa = p.adiabatic_chirp_coefficient();
    let pw: Vec<f64> = power.samples.iter().map(|x| x.max(CHIRP_POWER_FLOOR)).collect();
    let n = pw.len();
    let dt = power.dt();
    let c = p.linewidth_factor / (4.0 * PI);
    let out = (0..n)
        .map(|k| {
            let dp = if n < 2 {
                0.0
            } else if k == 0 {
                (pw[1] - pw[0]) / dt
            } else if k == n - 1 {
                (pw[n - 1] - pw[n - 2]) / dt
            } else {
                (pw[k + 1] - pw[k - 1]) / (2.0 * dt)
            };
            c * (dp / pw[k] + kappa * pw[k])
        })
        .collect();
    SampledWaveform::new(out, power.sample_rate, Unit::Hertz)
}
