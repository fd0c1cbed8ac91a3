use crate::error::{invalid, Error, Result};
use crate::laser::{steady_state, LaserParams};

/// Per-evaluation link figures of merit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub ser: f64,
    pub mi_bits: f64,
    pub nrmse: Option<f64>,
    pub prec_dbm: f64,
    pub snr_db: Option<f64>,
}

/// Fraction of positions where the two symbol sequences differ.
pub fn compute_ser(tx: &[usize], rx: &[usize]) -> Result<f64> {
    if tx.len() != rx.len() {
        return Err(Error::LengthMismatch {
            expected: tx.len(),
            actual: rx.len(),
        });
    }
    if tx.is_empty() {
        return Err(Error::Degenerate("no symbols to compare".into()));
    }
    let errors = tx.iter().zip(rx).filter(|(a, b)| a != b).count();
    Ok(errors as f64 / tx.len() as f64)
}

/// Lower bound `I(X;Y) >= H(X) - CE` for equiprobable symbols, floored at 0.
pub fn mutual_information_from_ce(ce_bits: f64, order: usize) -> f64 {
    ((order as f64).log2() - ce_bits.max(0.0)).max(0.0)
}

/// RMSE divided by the peak-to-peak amplitude of the target.
pub fn nrmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: target.len(),
            actual: pred.len(),
        });
    }
    let (lo, hi) = target
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let ptp = hi - lo;
    if !(ptp > 0.0) {
        return Err(Error::Degenerate(
            "constant target has no peak-to-peak amplitude".into(),
        ));
    }
    let mse = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / target.len() as f64;
    Ok(mse.sqrt() / ptp)
}

/// Mean of per-sequence NRMSE values.
pub fn nrmse_batch(preds: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::LengthMismatch {
            expected: targets.len(),
            actual: preds.len(),
        });
    }
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        total += nrmse(p, t)?;
    }
    Ok(total / preds.len() as f64)
}

/// `10 log10(Var(clean) / Var(noisy - clean))`.
pub fn measure_snr_db(clean: &[f64], noisy: &[f64]) -> Result<f64> {
    if clean.len() != noisy.len() || clean.len() < 2 {
        return Err(Error::LengthMismatch {
            expected: clean.len(),
            actual: noisy.len(),
        });
    }
    let noise: Vec<f64> = noisy.iter().zip(clean).map(|(a, b)| a - b).collect();
    Ok(10.0 * (variance(clean) / variance(&noise)).log10())
}

pub(crate) fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
}

/// Eye diagram as a 2-D count grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EyeHistogram {
    pub time_bins: usize,
    pub amp_bins: usize,
    /// Row-major `[amp_bin][time_bin]`.
    pub counts: Vec<u64>,
    /// `amp_bins + 1` increasing edges.
    pub amp_edges: Vec<f64>,
}

impl EyeHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn count(&self, amp_bin: usize, time_bin: usize) -> u64 {
        self.counts[amp_bin * self.time_bins + time_bin]
    }

    /// Amplitude rows holding at least one count.
    pub fn occupied_rows(&self) -> usize {
        (0..self.amp_bins)
            .filter(|&r| (0..self.time_bins).any(|t| self.count(r, t) > 0))
            .count()
    }
}

/// Folds the sample index modulo `periods` symbol periods and accumulates a
/// 2-D histogram with `amp_bins` rows spanning the signal range.
pub fn eye_histogram(x: &[f64], sps: usize, periods: usize, amp_bins: usize) -> Result<EyeHistogram> {
    if sps == 0 || periods == 0 || amp_bins == 0 {
        return Err(invalid("eye_histogram", "sps, periods and amp_bins must be positive"));
    }
    let time_bins = sps * periods;
    let (mut lo, mut hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if x.is_empty() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi <= lo {
        let pad = if lo == 0.0 { 0.5 } else { 0.5 * lo.abs() };
        lo -= pad;
        hi += pad;
    }
    let width = (hi - lo) / amp_bins as f64;
    let amp_edges = (0..=amp_bins).map(|k| lo + width * k as f64).collect();
    let mut counts = vec![0u64; time_bins * amp_bins];
    for (i, &v) in x.iter().enumerate() {
        let row = (((v - lo) / width) as usize).min(amp_bins - 1);
        counts[row * time_bins + i % time_bins] += 1;
    }
    Ok(EyeHistogram {
        time_bins,
        amp_bins,
        counts,
        amp_edges,
    })
}

/// Half the peak-to-peak steady-state power for a drive swinging
/// `I_bias +- I_pp / 2`, in dBm. Returns `-inf` for zero swing.
pub fn received_power_metric(p: &LaserParams, i_bias: f64, i_pp: f64) -> Result<f64> {
    if !(i_pp >= 0.0) {
        return Err(invalid("i_pp", "must be non-negative"));
    }
    let low = i_bias - 0.5 * i_pp;
    if low < 0.0 {
        return Err(invalid("i_bias", "drive swing goes below zero current"));
    }
    if low < p.analytic_threshold_current() {
        log::warn!("drive swing reaches below threshold ({:.2} mA)", low * 1e3);
    }
    let k = p.power_per_photon_density();
    let hi = steady_state(p, i_bias + 0.5 * i_pp)?.photons * k;
    let lo = steady_state(p, low)?.photons * k;
    let half_ptp = 0.5 * (hi - lo);
    Ok(10.0 * (half_ptp / 1e-3).log10())
}

/// Minimum-distance decisions against per-level means estimated on a
/// training split, with a pooled Gaussian noise model for soft outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelDetector {
    /// Mean received value of each transmitted symbol.
    pub means: Vec<f64>,
    pub sigma: f64,
}

impl LevelDetector {
    pub fn fit(values: &[f64], symbols: &[usize], order: usize) -> Result<Self> {
        if values.len() != symbols.len() {
            return Err(Error::LengthMismatch {
                expected: symbols.len(),
                actual: values.len(),
            });
        }
        let mut sum = vec![0.0; order];
        let mut cnt = vec![0usize; order];
        for (&v, &s) in values.iter().zip(symbols) {
            sum[s] += v;
            cnt[s] += 1;
        }
        if let Some(s) = cnt.iter().position(|&c| c == 0) {
            return Err(Error::Degenerate(format!("symbol {s} absent from the training split")));
        }
        let means: Vec<f64> = sum.iter().zip(&cnt).map(|(s, &c)| s / c as f64).collect();
        let ss: f64 = values.iter().zip(symbols).map(|(&v, &s)| (v - means[s]).powi(2)).sum();
        let sigma = (ss / values.len() as f64)
            .sqrt()
            .max(1e-12 * means.iter().fold(0.0f64, |a, m| a.max(m.abs())));
        Ok(Self { means, sigma })
    }

    /// Nearest level mean; identical to thresholds at the midpoints between
    /// sorted means.
    pub fn decide(&self, v: f64) -> usize {
        let mut best = 0;
        for (k, m) in self.means.iter().enumerate() {
            if (v - m).abs() < (v - self.means[best]).abs() {
                best = k;
            }
        }
        best
    }

    /// Posterior symbol probabilities under equal priors.
    pub fn posteriors(&self, v: f64) -> Vec<f64> {
        let logits: Vec<f64> = self
            .means
            .iter()
            .map(|m| -(v - m).powi(2) / (2.0 * self.sigma * self.sigma))
            .collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect()
    }

    /// Mean cross-entropy in bits of the posteriors against the true symbols.
    pub fn cross_entropy_bits(&self, values: &[f64], symbols: &[usize]) -> f64 {
        let total: f64 = values
            .iter()
            .zip(symbols)
            .map(|(&v, &s)| -self.posteriors(v)[s].max(1e-300).log2())
            .sum();
        total / values.len().max(1) as f64
    }
}
