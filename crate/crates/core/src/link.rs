//! Link configuration and the rate-equation reference channel.
//!
//! The channel maps a drive current at 2 samples per symbol to received
//! optical power at the same rate: hold-upsample to 32 samples per symbol,
//! band-limit, solve the rate equations, anti-alias filter and decimate.

use crate::dsp::{
    apply_drive_scaling, decimate, design_lowpass, equispaced_levels, filter_centered, frame_rng, map_pam,
    shape_pulses, upsample_hold, EdgeMode, SymbolSequence, PAM_ORDER, SQUARE_PULSE,
};
use crate::error::{invalid, Error, Result};
use crate::laser::{integrate_rate_equations, steady_state, LaserParams, DEFAULT_SUBSTEPS};
use crate::waveform::{SampledWaveform, Unit};

/// Symbols per frame.
pub const FRAME_SYMBOLS: usize = 512;
/// Samples per frame at 2 samples per symbol.
pub const FRAME_LEN: usize = 1024;
/// Leading samples of every frame excluded from metrics.
pub const WARMUP_SAMPLES: usize = 64;

/// Bias and swing limits on the drive current, in amperes.
pub const BIAS_RANGE: (f64, f64) = (0.050, 0.100);
pub const SWING_RANGE: (f64, f64) = (0.0, 0.080);

/// Purpose tags for [`frame_rng`] streams.
pub(crate) mod stream {
    pub const SYMBOLS: u64 = 0;
    pub const PULSE: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const DRIVE: u64 = 3;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkConfig {
    pub symbol_rate: f64,
    pub sps: usize,
    pub oversample: usize,
    pub i_bias: f64,
    pub i_pp: f64,
    /// LPF cutoff as a fraction of the symbol rate.
    pub lpf_fraction: f64,
    pub snr_target_db: f64,
    pub seed: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            symbol_rate: 25e9,
            sps: 2,
            oversample: 32,
            i_bias: 0.075,
            i_pp: 0.080,
            lpf_fraction: 0.9,
            snr_target_db: 22.0,
            seed: 1,
        }
    }
}

impl LinkConfig {
    pub fn at_rate(symbol_rate: f64) -> Self {
        Self {
            symbol_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.symbol_rate > 0.0 && self.symbol_rate.is_finite()) {
            return Err(invalid("symbol_rate", "must be positive"));
        }
        if self.sps == 0 {
            return Err(invalid("sps", "must be at least 1"));
        }
        if self.oversample < self.sps || !self.oversample.is_multiple_of(self.sps) {
            return Err(invalid("oversample", "must be a multiple of sps"));
        }
        check_range("i_bias", self.i_bias, BIAS_RANGE, "[50, 100] mA")?;
        check_range("i_pp", self.i_pp, SWING_RANGE, "[0, 80] mA")?;
        if !(self.lpf_fraction > 0.0 && self.lpf_fraction < 0.5 * self.sps as f64) {
            return Err(invalid("lpf_fraction", "cutoff must lie below the Nyquist rate at sps"));
        }
        if !self.snr_target_db.is_finite() {
            return Err(invalid("snr_target_db", "must be finite"));
        }
        Ok(())
    }

    pub fn lpf_cutoff(&self) -> f64 {
        self.lpf_fraction * self.symbol_rate
    }

    pub fn sample_rate(&self) -> f64 {
        self.sps as f64 * self.symbol_rate
    }
}

pub(crate) fn check_range(name: &'static str, v: f64, (lo, hi): (f64, f64), label: &str) -> Result<()> {
    if !(v >= lo && v <= hi) {
        return Err(invalid(name, format!("{:.3} mA outside {label}", v * 1e3)));
    }
    Ok(())
}

/// Transmit drive for `symbols`: pulse shaping, band limiting at the
/// transmitter sample rate, clipping and scaling to amperes.
pub fn drive_current(symbols: &SymbolSequence, pulse: &[f64], cfg: &LinkConfig) -> Result<Vec<f64>> {
    let amplitudes = map_pam(symbols, &equispaced_levels(symbols.order))?;
    let shaped = shape_pulses(&amplitudes, pulse, cfg.sps)?;
    let taps = design_lowpass(cfg.lpf_cutoff(), cfg.sample_rate())?;
    let filtered = filter_centered(&shaped, &taps, EdgeMode::Zero);
    Ok(apply_drive_scaling(&filtered, cfg.i_pp, cfg.i_bias))
}

/// Rate-equation channel from drive current to received power, both at
/// `sps` samples per symbol.
#[derive(Debug, Clone)]
pub struct ReferenceChannel {
    pub params: LaserParams,
    pub symbol_rate: f64,
    pub sps: usize,
    pub oversample: usize,
    pub substeps: usize,
    taps: Vec<f64>,
}

impl ReferenceChannel {
    pub fn new(params: LaserParams, cfg: &LinkConfig) -> Result<Self> {
        if cfg.sps == 0 || cfg.oversample < cfg.sps || !cfg.oversample.is_multiple_of(cfg.sps) {
            return Err(invalid("oversample", "must be a positive multiple of sps"));
        }
        let taps = design_lowpass(cfg.lpf_cutoff(), cfg.oversample as f64 * cfg.symbol_rate)?;
        Ok(Self {
            params,
            symbol_rate: cfg.symbol_rate,
            sps: cfg.sps,
            oversample: cfg.oversample,
            substeps: DEFAULT_SUBSTEPS,
            taps,
        })
    }

    fn factor(&self) -> usize {
        self.oversample / self.sps
    }

    /// Optical power at the oversampled rate, before the receive filter.
    /// The laser starts in its steady state at `initial_current`.
    pub fn propagate_oversampled(&self, current: &[f64], initial_current: f64) -> Result<SampledWaveform> {
        let hi = upsample_hold(current, self.factor());
        let band_limited = filter_centered(&hi, &self.taps, EdgeMode::Hold);
        let rate = self.oversample as f64 * self.symbol_rate;
        let drive = SampledWaveform::new(band_limited, rate, Unit::Ampere)?;
        let init = steady_state(&self.params, initial_current)?;
        let traj = integrate_rate_equations(&self.params, &drive, init, self.substeps)?;
        if traj.clamp_flag {
            log::warn!("{} solver steps clamped at zero density", traj.clamped_steps);
        }
        crate::laser::photon_to_power(&self.params, &traj.photons, rate)
    }

    /// Received power at `sps`, sampled at the centre of each input sample's
    /// hold interval.
    pub fn propagate(&self, current: &[f64], initial_current: f64) -> Result<Vec<f64>> {
        let hi = self.propagate_oversampled(current, initial_current)?;
        let filtered = filter_centered(&hi.samples, &self.taps, EdgeMode::Hold);
        let f = self.factor();
        Ok(decimate(&filtered, f, f / 2))
    }
}

/// Frozen receiver noise level for one symbol rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseCalibration {
    /// Noise standard deviation in watts.
    pub sigma: f64,
    /// Variance of the clean reference power after warm-up, in W².
    pub signal_variance: f64,
}

/// Clean received power for `frames` square-pulse 4PAM frames at the drive
/// settings of `cfg`, concatenated after dropping each warm-up.
pub fn reference_power(p: &LaserParams, cfg: &LinkConfig, frames: usize, seed: u64) -> Result<Vec<f64>> {
    cfg.validate()?;
    let channel = ReferenceChannel::new(*p, cfg)?;
    let mut out = Vec::with_capacity(frames * (FRAME_LEN - WARMUP_SAMPLES));
    for f in 0..frames as u64 {
        let mut rng = frame_rng(seed, f, stream::SYMBOLS);
        let symbols = SymbolSequence::random(FRAME_SYMBOLS, PAM_ORDER, cfg.symbol_rate, &mut rng);
        let current = drive_current(&symbols, &SQUARE_PULSE, cfg)?;
        let power = channel.propagate(&current, cfg.i_bias)?;
        out.extend_from_slice(&power[WARMUP_SAMPLES..]);
    }
    Ok(out)
}

/// Sets the noise level so the square 4PAM reference at `cfg` (normally
/// `I_pp = 80 mA`, `I_bias = 75 mA`) has the target electrical SNR.
pub fn calibrate_noise(p: &LaserParams, cfg: &LinkConfig, frames: usize) -> Result<NoiseCalibration> {
    if frames == 0 {
        return Err(invalid("frames", "must be at least 1"));
    }
    let power = reference_power(p, cfg, frames, cfg.seed)?;
    let var = crate::dsp::variance(&power);
    if !(var > 0.0) {
        return Err(Error::Degenerate("reference power has zero variance".into()));
    }
    let sigma = (var / 10f64.powf(cfg.snr_target_db / 10.0)).sqrt();
    Ok(NoiseCalibration {
        sigma,
        signal_variance: var,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{add_awgn_seeded, measure_snr_db};

    #[test]
    fn config_validation() {
        assert!(LinkConfig::default().validate().is_ok());
        let bad = LinkConfig {
            i_pp: 0.09,
            ..LinkConfig::default()
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("[0, 80] mA"), "{msg}");
        let bad = LinkConfig {
            oversample: 33,
            ..LinkConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn drive_stays_in_envelope() {
        let cfg = LinkConfig::default();
        let mut rng = frame_rng(3, 0, 0);
        let s = SymbolSequence::random(FRAME_SYMBOLS, 4, cfg.symbol_rate, &mut rng);
        let i = drive_current(&s, &SQUARE_PULSE, &cfg).unwrap();
        assert_eq!(i.len(), FRAME_LEN);
        assert!(i.iter().all(|&v| (0.035 - 1e-12..=0.115 + 1e-12).contains(&v)));
    }

    #[test]
    fn constant_drive_gives_steady_power() {
        let p = LaserParams::default();
        let ch = ReferenceChannel::new(p, &LinkConfig::default()).unwrap();
        let out = ch.propagate(&[0.075; 256], 0.075).unwrap();
        let ss = steady_state(&p, 0.075).unwrap().photons * p.power_per_photon_density();
        assert_eq!(out.len(), 256);
        assert!(out.iter().all(|v| (v - ss).abs() < 1e-6 * ss));
    }

    #[test]
    fn calibration_hits_target_and_scales_with_swing() {
        let p = LaserParams::default();
        let cfg = LinkConfig::default();
        let cal = calibrate_noise(&p, &cfg, 8).unwrap();
        assert!(cal.sigma > 0.0);

        let clean = reference_power(&p, &cfg, 8, 99).unwrap();
        let noisy = add_awgn_seeded(&clean, cal.sigma, 5).unwrap();
        let snr = measure_snr_db(&clean, &noisy).unwrap();
        assert!((snr - 22.0).abs() < 0.25, "{snr}");

        let half = LinkConfig { i_pp: 0.04, ..cfg };
        let clean_half = reference_power(&p, &half, 8, 99).unwrap();
        let noisy_half = add_awgn_seeded(&clean_half, cal.sigma, 5).unwrap();
        let drop = snr - measure_snr_db(&clean_half, &noisy_half).unwrap();
        assert!((drop - 6.0).abs() < 1.0, "{drop}");
    }
}
