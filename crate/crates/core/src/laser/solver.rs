//! Fixed-step classical Runge-Kutta integration of the rate equations.

use super::{LaserParams, LaserState};
use crate::error::{invalid, Error, Result};
use crate::waveform::{SampledWaveform, Unit};

/// Internal RK4 steps per drive sample.
pub const DEFAULT_SUBSTEPS: usize = 4;

/// Multiple of the natural state scale beyond which a run is declared divergent.
const DIVERGENCE_FACTOR: f64 = 1e6;
/// Fraction of clamped steps above which the trajectory is flagged.
const CLAMP_FLAG_FRACTION: f64 = 1e-4;

/// Solver output on the drive grid. Sample `k` is the state at `k / sample_rate`
/// after the start; sample 0 is the initial state.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub sample_rate: f64,
    pub photons: Vec<f64>,
    pub carriers: Vec<f64>,
    pub phase: Vec<f64>,
    pub current: Vec<f64>,
    /// Number of internal steps where S or N had to be clamped at zero.
    pub clamped_steps: usize,
    /// Set when clamping happened on more than 0.01% of internal steps.
    pub clamp_flag: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.photons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.photons.is_empty()
    }
}

/// One RK4 step of length `dt` with the drive linear between `i0` and `i1`.
#[inline]
pub(crate) fn rk4_step(p: &LaserParams, s: &LaserState, i0: f64, i1: f64, dt: f64) -> LaserState {
    let im = 0.5 * (i0 + i1);
    let dphi = |n: f64| {
        0.5 * p.linewidth_factor
            * (p.confinement * p.gain_slope * (n - p.transparency_density) - 1.0 / p.photon_lifetime)
    };
    let (s0, n0) = (s.photons, s.carriers);
    let (k1s, k1n) = p.rate_sn(s0, n0, i0);
    let k1p = dphi(n0);
    let (s1, n1) = (s0 + 0.5 * dt * k1s, n0 + 0.5 * dt * k1n);
    let (k2s, k2n) = p.rate_sn(s1, n1, im);
    let k2p = dphi(n1);
    let (s2, n2) = (s0 + 0.5 * dt * k2s, n0 + 0.5 * dt * k2n);
    let (k3s, k3n) = p.rate_sn(s2, n2, im);
    let k3p = dphi(n2);
    let (s3, n3) = (s0 + dt * k3s, n0 + dt * k3n);
    let (k4s, k4n) = p.rate_sn(s3, n3, i1);
    let k4p = dphi(n3);
    LaserState {
        photons: s0 + dt / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s),
        carriers: n0 + dt / 6.0 * (k1n + 2.0 * k2n + 2.0 * k3n + k4n),
        phase: s.phase + dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p),
    }
}

/// Solves the rate equations for a sampled drive current.
///
/// The drive is linearly interpolated between samples and each sample
/// interval is split into `substeps` RK4 steps.
pub fn integrate_rate_equations(
    p: &LaserParams,
    drive: &SampledWaveform,
    init: LaserState,
    substeps: usize,
) -> Result<Trajectory> {
    if drive.unit != Unit::Ampere {
        return Err(invalid("drive", "expected a current waveform"));
    }
    if substeps == 0 {
        return Err(invalid("substeps", "must be at least 1"));
    }
    if !(init.photons >= 0.0 && init.carriers >= 0.0) {
        return Err(invalid("init", "photon and carrier densities must be non-negative"));
    }
    let n = drive.len();
    let mut photons = Vec::with_capacity(n);
    let mut carriers = Vec::with_capacity(n);
    let mut phase = Vec::with_capacity(n);
    if n == 0 {
        return Ok(Trajectory {
            sample_rate: drive.sample_rate,
            photons,
            carriers,
            phase,
            current: Vec::new(),
            clamped_steps: 0,
            clamp_flag: false,
        });
    }

    let s_limit = DIVERGENCE_FACTOR * p.photon_scale().max(init.photons);
    let n_limit = DIVERGENCE_FACTOR * p.transparency_density.max(init.carriers);
    let dt = drive.dt() / substeps as f64;
    let mut state = init;
    let mut clamped = 0usize;
    photons.push(state.photons);
    carriers.push(state.carriers);
    phase.push(state.phase);

    let i = &drive.samples;
    for k in 0..n - 1 {
        let (ia, ib) = (i[k], i[k + 1]);
        for j in 0..substeps {
            let i0 = ia + (ib - ia) * (j as f64 / substeps as f64);
            let i1 = ia + (ib - ia) * ((j + 1) as f64 / substeps as f64);
            state = rk4_step(p, &state, i0, i1, dt);
            if !(state.photons.is_finite() && state.carriers.is_finite()) {
                return Err(Error::SolverDiverged {
                    step: k,
                    reason: "non-finite state".into(),
                });
            }
            if state.photons > s_limit || state.carriers > n_limit {
                return Err(Error::SolverDiverged {
                    step: k,
                    reason: format!(
                        "state exceeded divergence limit (S = {:e}, N = {:e})",
                        state.photons, state.carriers
                    ),
                });
            }
            if state.photons < 0.0 || state.carriers < 0.0 {
                clamped += 1;
                state.photons = state.photons.max(0.0);
                state.carriers = state.carriers.max(0.0);
            }
        }
        photons.push(state.photons);
        carriers.push(state.carriers);
        phase.push(state.phase);
    }
    let total_steps = (n - 1) * substeps;
    Ok(Trajectory {
        sample_rate: drive.sample_rate,
        photons,
        carriers,
        phase,
        current: drive.samples.clone(),
        clamped_steps: clamped,
        clamp_flag: total_steps > 0 && clamped as f64 > CLAMP_FLAG_FRACTION * total_steps as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{steady_state, LaserParams};
    use super::*;

    fn constant(current: f64, n: usize, rate: f64) -> SampledWaveform {
        SampledWaveform::new(vec![current; n], rate, Unit::Ampere).unwrap()
    }

    #[test]
    fn fixed_point_is_preserved() {
        let p = LaserParams::default();
        let init = steady_state(&p, 0.075).unwrap();
        // 5 ns at 800 GS/s
        let traj = integrate_rate_equations(&p, &constant(0.075, 4000, 800e9), init, 4).unwrap();
        for (s, n) in traj.photons.iter().zip(&traj.carriers) {
            assert!((s - init.photons).abs() < 1e-3 * init.photons);
            assert!((n - init.carriers).abs() < 1e-3 * init.carriers);
        }
        assert!(!traj.clamp_flag);
    }

    #[test]
    fn below_threshold_power_is_small() {
        let p = LaserParams::default();
        let init = steady_state(&p, 0.002).unwrap();
        let traj = integrate_rate_equations(&p, &constant(0.002, 2000, 800e9), init, 4).unwrap();
        let k = p.power_per_photon_density();
        assert!(traj.photons.iter().all(|s| s * k < 1e-4));
    }

    #[test]
    fn halving_the_step_changes_little() {
        let p = LaserParams::default();
        let rate = 800e9;
        let samples: Vec<f64> = (0..3000).map(|k| if (k / 200) % 2 == 0 { 0.05 } else { 0.1 }).collect();
        let drive = SampledWaveform::new(samples, rate, Unit::Ampere).unwrap();
        let init = steady_state(&p, 0.05).unwrap();
        let a = integrate_rate_equations(&p, &drive, init, 4).unwrap();
        let b = integrate_rate_equations(&p, &drive, init, 8).unwrap();
        let scale = a.photons.iter().cloned().fold(0.0, f64::max);
        for (x, y) in a.photons.iter().zip(&b.photons) {
            assert!((x - y).abs() < 1e-6 * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = LaserParams::default();
        let init = steady_state(&p, 0.05).unwrap();
        assert!(integrate_rate_equations(&p, &constant(0.05, 10, 1e12), init, 0).is_err());
        let w = SampledWaveform::new(vec![0.0; 4], 1e12, Unit::Watt).unwrap();
        assert!(integrate_rate_equations(&p, &w, init, 4).is_err());
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let p = LaserParams::default();
        let init = steady_state(&p, 0.05).unwrap();
        // A drive of 1 MA pushes the carriers past the divergence limit.
        let drive = constant(1e6, 100, 1e11);
        match integrate_rate_equations(&p, &drive, init, 1) {
            Err(Error::SolverDiverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
