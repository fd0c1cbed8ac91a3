//! Single-mode semiconductor laser rate equations.
//!
//! The laser is described by photon density `S`, carrier density `N` and
//! optical phase `phi`, driven by the injected current `I(t)`. Gain is the
//! linear-in-carrier form `g0 (N - N0) / (1 + eps S)`.
//!
//! # Gain compression magnitude
//!
//! The published parameter table lists the gain compression factor as
//! `2.00e23 m^3`, which cannot be a compression volume (it would saturate the
//! gain at a fraction of a photon per cubic metre). [`RawLaserTable::derive`]
//! flips the exponent sign of any such entry and stores `2.00e-23 m^3`, which
//! gives `eps * S ~ 0.15` at a 75 mA bias. Entries that still exceed
//! [`EPS_SANITY_LIMIT`] after that reinterpretation are rejected.

mod characterize;
mod solver;

pub use characterize::{
    analytic_small_signal, fit_damping, fit_resonance, instantaneous_chirp, probe_small_signal, simulate_li_curve,
    LiCurve, ResonanceFit, SmallSignalCurve,
};
pub use solver::{integrate_rate_equations, Trajectory, DEFAULT_SUBSTEPS};

use crate::error::{invalid, Error, Result};
use crate::waveform::{SampledWaveform, Unit};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const ELECTRON_CHARGE: f64 = 1.602_176_634e-19;
pub const PLANCK: f64 = 6.626_070_15e-34;

/// Upper bound on a physically meaningful gain compression volume (m^3).
pub const EPS_SANITY_LIMIT: f64 = 1e-20;

/// Laser constants as printed in the source parameter table, plus the
/// quantities the table omits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawLaserTable {
    pub confinement: f64,
    pub photon_lifetime: f64,
    pub carrier_lifetime: f64,
    pub transparency_density: f64,
    pub gain_cross_section: f64,
    pub group_index: f64,
    pub active_volume: f64,
    /// As printed; see the module docs for how out-of-range magnitudes are handled.
    pub gain_compression: f64,
    pub spont_fraction: f64,
    pub diff_quantum_eff: f64,
    pub injection_eff: f64,
    pub linewidth_factor: f64,
    pub wavelength: f64,
}

impl Default for RawLaserTable {
    fn default() -> Self {
        Self {
            confinement: 0.24,
            photon_lifetime: 2.60e-12,
            carrier_lifetime: 3.17e-9,
            transparency_density: 2.00e24,
            gain_cross_section: 3.34e-20,
            group_index: 4.0,
            active_volume: 3.60e-17,
            gain_compression: 2.00e23,
            spont_fraction: 1.00e-3,
            diff_quantum_eff: 0.20,
            injection_eff: 1.0,
            linewidth_factor: 3.0,
            wavelength: 1500e-9,
        }
    }
}

impl RawLaserTable {
    pub fn derive(&self) -> Result<LaserParams> {
        let positive = [
            ("confinement", self.confinement),
            ("photon_lifetime", self.photon_lifetime),
            ("carrier_lifetime", self.carrier_lifetime),
            ("transparency_density", self.transparency_density),
            ("gain_cross_section", self.gain_cross_section),
            ("group_index", self.group_index),
            ("active_volume", self.active_volume),
            ("gain_compression", self.gain_compression),
            ("diff_quantum_eff", self.diff_quantum_eff),
            ("injection_eff", self.injection_eff),
            ("wavelength", self.wavelength),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be positive and finite, got {v}")));
            }
        }
        if self.confinement > 1.0 {
            return Err(invalid("confinement", "must not exceed 1"));
        }
        if self.diff_quantum_eff > 1.0 {
            return Err(invalid("diff_quantum_eff", "must not exceed 1"));
        }
        if self.injection_eff > 1.0 {
            return Err(invalid("injection_eff", "must not exceed 1"));
        }
        if !(0.0..=1.0).contains(&self.spont_fraction) {
            return Err(invalid("spont_fraction", "must lie in [0, 1]"));
        }
        if !self.linewidth_factor.is_finite() {
            return Err(invalid("linewidth_factor", "must be finite"));
        }

        let eps = reinterpret_compression(self.gain_compression);
        if eps >= EPS_SANITY_LIMIT {
            return Err(invalid(
                "gain_compression",
                format!("{eps:e} m^3 is not a plausible compression volume (limit {EPS_SANITY_LIMIT:e})"),
            ));
        }

        let group_velocity = SPEED_OF_LIGHT / self.group_index;
        Ok(LaserParams {
            confinement: self.confinement,
            photon_lifetime: self.photon_lifetime,
            carrier_lifetime: self.carrier_lifetime,
            transparency_density: self.transparency_density,
            gain_cross_section: self.gain_cross_section,
            group_index: self.group_index,
            active_volume: self.active_volume,
            gain_compression: eps,
            spont_fraction: self.spont_fraction,
            diff_quantum_eff: self.diff_quantum_eff,
            injection_eff: self.injection_eff,
            linewidth_factor: self.linewidth_factor,
            wavelength: self.wavelength,
            group_velocity,
            gain_slope: group_velocity * self.gain_cross_section,
            optical_frequency: SPEED_OF_LIGHT / self.wavelength,
        })
    }
}

/// Maps a compression entry printed with a positive exponent (`m * 10^e`,
/// `e >= 0`) to `m * 10^-e`. Values already below one are returned unchanged.
fn reinterpret_compression(eps: f64) -> f64 {
    if eps < 1.0 {
        return eps;
    }
    let exponent = eps.log10().floor();
    let mantissa = eps / 10f64.powf(exponent);
    mantissa * 10f64.powf(-exponent)
}

/// Validated laser constants with the derived quantities filled in. SI units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaserParams {
    pub confinement: f64,
    pub photon_lifetime: f64,
    pub carrier_lifetime: f64,
    pub transparency_density: f64,
    pub gain_cross_section: f64,
    pub group_index: f64,
    pub active_volume: f64,
    pub gain_compression: f64,
    pub spont_fraction: f64,
    pub diff_quantum_eff: f64,
    pub injection_eff: f64,
    pub linewidth_factor: f64,
    pub wavelength: f64,
    pub group_velocity: f64,
    /// `v_g * sigma_g`, m^3/s.
    pub gain_slope: f64,
    pub optical_frequency: f64,
}

impl Default for LaserParams {
    fn default() -> Self {
        RawLaserTable::default().derive().expect("default laser table is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaserState {
    pub photons: f64,
    pub carriers: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivatives {
    pub photons: f64,
    pub carriers: f64,
    pub phase: f64,
}

impl LaserParams {
    /// Stimulated-emission rate per photon, `g0 (N - N0) / (1 + eps S)`.
    #[inline]
    fn gain(&self, photons: f64, carriers: f64) -> f64 {
        self.gain_slope * (carriers - self.transparency_density) / (1.0 + self.gain_compression * photons)
    }

    /// Right-hand sides of the photon, carrier and phase equations.
    #[inline]
    pub fn rate_derivatives(&self, s: &LaserState, current: f64) -> Derivatives {
        let (ds, dn) = self.rate_sn(s.photons, s.carriers, current);
        let dphi = 0.5
            * self.linewidth_factor
            * (self.confinement * self.gain_slope * (s.carriers - self.transparency_density)
                - 1.0 / self.photon_lifetime);
        Derivatives {
            photons: ds,
            carriers: dn,
            phase: dphi,
        }
    }

    #[inline]
    pub(crate) fn rate_sn(&self, photons: f64, carriers: f64, current: f64) -> (f64, f64) {
        let stim = self.gain(photons, carriers) * photons;
        let ds = self.confinement * stim - photons / self.photon_lifetime
            + self.confinement * self.spont_fraction * carriers / self.carrier_lifetime;
        let dn = current / (ELECTRON_CHARGE * self.active_volume) - carriers / self.carrier_lifetime - stim;
        (ds, dn)
    }

    /// Largest term magnitude in each of the S and N equations, used to make
    /// residuals scale-free.
    fn term_scales(&self, photons: f64, carriers: f64, current: f64) -> (f64, f64) {
        let stim = (self.gain(photons, carriers) * photons).abs();
        let s_scale = (self.confinement * stim)
            .max(photons / self.photon_lifetime)
            .max(self.confinement * self.spont_fraction * carriers / self.carrier_lifetime);
        let n_scale = (current / (ELECTRON_CHARGE * self.active_volume))
            .abs()
            .max(carriers / self.carrier_lifetime)
            .max(stim);
        (s_scale, n_scale)
    }

    /// Relative residual of the S/N equations at a state.
    pub fn steady_residual(&self, s: &LaserState, current: f64) -> f64 {
        let (ds, dn) = self.rate_sn(s.photons, s.carriers, current);
        let (ss, ns) = self.term_scales(s.photons, s.carriers, current);
        let rs = if ss > 0.0 { ds.abs() / ss } else { ds.abs() };
        let rn = if ns > 0.0 { dn.abs() / ns } else { dn.abs() };
        rs.max(rn)
    }

    /// Carrier density at threshold with compression evaluated at `photons`.
    pub fn threshold_density(&self, photons: f64) -> f64 {
        self.transparency_density
            + (1.0 + self.gain_compression * photons) / (self.confinement * self.gain_slope * self.photon_lifetime)
    }

    /// Threshold current of the idealised (beta = 0) laser, `q V N_th / tau_n`.
    pub fn analytic_threshold_current(&self) -> f64 {
        ELECTRON_CHARGE * self.active_volume * self.threshold_density(0.0) / self.carrier_lifetime
    }

    /// `eta0 h nu / (2 q)`, W/A.
    pub fn analytic_slope_efficiency(&self) -> f64 {
        self.diff_quantum_eff * PLANCK * self.optical_frequency / (2.0 * ELECTRON_CHARGE)
    }

    /// Conversion from photon density (m^-3) to emitted power (W).
    pub fn power_per_photon_density(&self) -> f64 {
        self.active_volume * self.diff_quantum_eff * PLANCK * self.optical_frequency
            / (2.0 * self.confinement * self.photon_lifetime)
    }

    /// Adiabatic chirp coefficient `2 Gamma eps / (eta0 h nu V)`, 1/(W s).
    pub fn adiabatic_chirp_coefficient(&self) -> f64 {
        2.0 * self.confinement * self.gain_compression
            / (self.diff_quantum_eff * PLANCK * self.optical_frequency * self.active_volume)
    }

    /// Photon density reached at a 100 mA drive; the natural size of `S`.
    pub(crate) fn photon_scale(&self) -> f64 {
        self.confinement * self.photon_lifetime * 0.1 / (ELECTRON_CHARGE * self.active_volume)
    }
}

/// Free-function form of [`LaserParams::rate_derivatives`].
pub fn rate_derivatives(p: &LaserParams, s: &LaserState, current: f64) -> Derivatives {
    p.rate_derivatives(s, current)
}

const STEADY_TOL: f64 = 1e-9;
const STEADY_MAX_ITER: usize = 200;

/// Fixed point of the S/N equations at a constant drive current.
///
/// Eliminating the stimulated term between the two equations gives
/// `S = Gamma tau_p (I/(qV) - (1 - beta) N / tau_n)`, leaving a scalar
/// equation in `N` with a sign change on `[0, N_max]`. It is solved by
/// Newton iteration safeguarded by bisection, then checked against the full
/// two-equation residual. The phase is left at zero.
pub fn steady_state(p: &LaserParams, current: f64) -> Result<LaserState> {
    if !(current >= 0.0 && current.is_finite()) {
        return Err(invalid("current", format!("must be non-negative, got {current}")));
    }
    let pump = current / (ELECTRON_CHARGE * p.active_volume);
    if pump == 0.0 {
        return Ok(LaserState {
            photons: 0.0,
            carriers: 0.0,
            phase: 0.0,
        });
    }
    let tau_n = p.carrier_lifetime;
    let loss = 1.0 - p.spont_fraction;
    let photons_of = |n: f64| (p.confinement * p.photon_lifetime * (pump - loss * n / tau_n)).max(0.0);
    // f(N) = stimulated(N, S(N)) - (pump - N/tau_n); negative at N = 0, positive at N_max.
    let f = |n: f64| {
        let s = photons_of(n);
        p.gain(s, n) * s - (pump - n / tau_n)
    };
    let n_max = if loss > 0.0 {
        pump * tau_n / loss
    } else {
        f64::MAX.sqrt()
    };

    let mut lo = 0.0;
    let mut hi = n_max;
    let mut n = p.threshold_density(0.0).min(0.5 * n_max);
    let mut iterations = 0;
    let mut state = LaserState {
        photons: photons_of(n),
        carriers: n,
        phase: 0.0,
    };
    while iterations < STEADY_MAX_ITER {
        iterations += 1;
        let fn_ = f(n);
        if fn_ < 0.0 {
            lo = n;
        } else {
            hi = n;
        }
        let h = 1e-7 * n.abs().max(p.transparency_density * 1e-6);
        let slope = (f(n + h) - f(n - h)) / (2.0 * h);
        let mut next = n - fn_ / slope;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let converged = (next - n).abs() <= 1e-15 * n.abs().max(1.0);
        n = next;
        state = LaserState {
            photons: photons_of(n),
            carriers: n,
            phase: 0.0,
        };
        if converged || p.steady_residual(&state, current) < 1e-13 {
            break;
        }
    }
    let residual = p.steady_residual(&state, current);
    if residual < STEADY_TOL {
        Ok(state)
    } else {
        steady_state_by_integration(p, current, state).map_err(|_| Error::SteadyStateNotConverged {
            current_a: current,
            residual,
            iterations,
        })
    }
}

/// Fallback: integrate with constant drive until the state settles.
fn steady_state_by_integration(p: &LaserParams, current: f64, start: LaserState) -> Result<LaserState> {
    let dt = 0.25e-12;
    let mut s = start;
    for _ in 0..200 {
        for _ in 0..20_000 {
            s = solver::rk4_step(p, &s, current, current, dt);
            s.photons = s.photons.max(0.0);
            s.carriers = s.carriers.max(0.0);
        }
        if p.steady_residual(&s, current) < STEADY_TOL {
            s.phase = 0.0;
            return Ok(s);
        }
    }
    Err(Error::SteadyStateNotConverged {
        current_a: current,
        residual: p.steady_residual(&s, current),
        iterations: 200,
    })
}

/// Emitted optical power for a photon-density series, `P = S V eta0 h nu / (2 Gamma tau_p)`.
pub fn photon_to_power(p: &LaserParams, photons: &[f64], sample_rate: f64) -> Result<SampledWaveform> {
    let k = p.power_per_photon_density();
    SampledWaveform::new(photons.iter().map(|s| s * k).collect(), sample_rate, Unit::Watt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> LaserParams {
        LaserParams::default()
    }

    #[test]
    fn derived_quantities() {
        let p = params();
        assert!((p.group_velocity - 7.4948e7).abs() / 7.4948e7 < 1e-4);
        assert!((p.gain_slope - 2.5033e-12).abs() / 2.5033e-12 < 1e-4);
        assert_eq!(p.gain_slope, p.group_velocity * p.gain_cross_section);
        assert!((p.gain_compression - 2.0e-23).abs() < 1e-35);
        assert!((p.optical_frequency - 1.99862e14).abs() / 1.99862e14 < 1e-5);
    }

    #[test]
    fn rejects_bad_tables() {
        let t = RawLaserTable {
            photon_lifetime: 0.0,
            ..RawLaserTable::default()
        };
        assert!(t.derive().is_err());
        let t = RawLaserTable {
            confinement: 1.2,
            ..RawLaserTable::default()
        };
        assert!(t.derive().is_err());
        let t = RawLaserTable {
            gain_compression: 5e-19,
            ..RawLaserTable::default()
        };
        assert!(t.derive().is_err());
        let t = RawLaserTable {
            gain_compression: 3e-23,
            ..RawLaserTable::default()
        };
        assert_eq!(t.derive().unwrap().gain_compression, 3e-23);
    }

    #[test]
    fn zero_state_has_zero_photon_derivative() {
        let p = params();
        let z = LaserState {
            photons: 0.0,
            carriers: 0.0,
            phase: 0.0,
        };
        assert_eq!(p.rate_derivatives(&z, 0.0).photons, 0.0);
    }

    #[test]
    fn transparency_gives_pure_cavity_decay() {
        let mut p = params();
        p.gain_compression = 0.0;
        p.spont_fraction = 0.0;
        let s = LaserState {
            photons: 3e21,
            carriers: p.transparency_density,
            phase: 0.0,
        };
        let d = p.rate_derivatives(&s, 0.05);
        let expected = -s.photons / p.photon_lifetime;
        assert!((d.photons - expected).abs() <= 1e-12 * expected.abs());
    }

    #[test]
    fn steady_state_at_75ma() {
        let p = params();
        let s = steady_state(&p, 0.075).unwrap();
        assert!(p.steady_residual(&s, 0.075) < 1e-9);
        assert!((s.photons - 7.6e21).abs() < 0.2 * 7.6e21, "S = {:e}", s.photons);
        let d = p.rate_derivatives(&s, 0.075);
        assert!(d.photons.abs() < 1e-6 * s.photons / p.photon_lifetime);
        assert!(d.carriers.abs() < 1e-6 * s.carriers / p.carrier_lifetime);
        let power = s.photons * p.power_per_photon_density();
        assert!((power - 5.8e-3).abs() < 0.2 * 5.8e-3, "P = {power}");
    }

    #[test]
    fn steady_state_zero_and_subthreshold() {
        let p = params();
        let z = steady_state(&p, 0.0).unwrap();
        assert_eq!(z.photons, 0.0);
        let s = steady_state(&p, 1e-3).unwrap();
        let floor = p.confinement * p.spont_fraction * s.carriers * p.photon_lifetime / p.carrier_lifetime;
        assert!(
            s.photons > 0.0 && s.photons < 1.5 * floor,
            "S = {:e}, floor {floor:e}",
            s.photons
        );
        assert!(steady_state(&p, -1.0).is_err());
    }

    #[test]
    fn carrier_clamping_above_threshold() {
        let p = params();
        let i_th = p.analytic_threshold_current();
        for &i in &[2.5 * i_th, 0.05, 0.075, 0.1] {
            let s = steady_state(&p, i).unwrap();
            let n_th = p.threshold_density(s.photons);
            assert!((s.carriers - n_th).abs() < 0.01 * n_th, "I = {i}");
        }
    }

    #[test]
    fn integration_fallback_agrees_with_newton() {
        let p = params();
        let newton = steady_state(&p, 0.06).unwrap();
        let start = LaserState {
            photons: newton.photons * 0.9,
            carriers: newton.carriers * 1.01,
            phase: 0.0,
        };
        let integrated = steady_state_by_integration(&p, 0.06, start).unwrap();
        assert!((integrated.photons - newton.photons).abs() < 1e-6 * newton.photons);
    }

    #[test]
    fn power_is_linear() {
        let p = params();
        let s = [0.0, 1e21, 7e21];
        let a = photon_to_power(&p, &s, 1.0).unwrap();
        let doubled: Vec<f64> = s.iter().map(|x| 2.0 * x).collect();
        let b = photon_to_power(&p, &doubled, 1.0).unwrap();
        assert_eq!(a.samples[0], 0.0);
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!((2.0 * x - y).abs() <= 1e-15 * y.abs());
        }
    }
}
