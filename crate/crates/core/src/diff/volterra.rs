use crate::error::{invalid, Result};
use crate::linalg::{lstsq, Matrix};

/// Truncated second-order Volterra kernel. The quadratic part is stored as a
/// full `n2 x n2` grid; only its symmetric part affects the output.
#[derive(Debug, Clone, PartialEq)]
pub struct VolterraKernel {
    pub h0: f64,
    pub h1: Vec<f64>,
    /// Row-major `n2 x n2`.
    pub h2: Vec<f64>,
    pub n2: usize,
}

impl VolterraKernel {
    pub fn new(h0: f64, h1: Vec<f64>, h2: Vec<f64>, n2: usize) -> Result<Self> {
        if h1.is_empty() || n2 == 0 {
            return Err(invalid("volterra", "memory lengths must be positive"));
        }
        if h2.len() != n2 * n2 {
            return Err(invalid(
                "volterra",
                format!("quadratic grid needs {} entries, got {}", n2 * n2, h2.len()),
            ));
        }
        if !(h0.is_finite() && h1.iter().chain(&h2).all(|v| v.is_finite())) {
            return Err(invalid("volterra", "kernel entries must be finite"));
        }
        Ok(Self { h0, h1, h2, n2 })
    }

    pub fn zeros(n1: usize, n2: usize) -> Self {
        Self {
            h0: 0.0,
            h1: vec![0.0; n1],
            h2: vec![0.0; n2 * n2],
            n2,
        }
    }

    /// Linear plus quadratic coefficients, excluding the constant term.
    pub fn tap_count(&self) -> usize {
        self.h1.len() + self.h2.len()
    }

    /// Kernel with `h2` replaced by `(h2 + h2^T) / 2`.
    pub fn symmetrized(&self) -> Self {
        let n = self.n2;
        let mut h2 = self.h2.clone();
        for a in 0..n {
            for b in 0..n {
                h2[a * n + b] = 0.5 * (self.h2[a * n + b] + self.h2[b * n + a]);
            }
        }
        Self { h2, ..self.clone() }
    }
}

#[inline]
fn tap(u: &[f64], t: usize, k: usize, delay: usize) -> f64 {
    let s = t as isize - k as isize + delay as isize;
    if s >= 0 && (s as usize) < u.len() {
        u[s as usize]
    } else {
        0.0
    }
}

pub(crate) fn evaluate(u: &[f64], h0: f64, h1: &[f64], h2: &[f64], n2: usize, delay: usize) -> Vec<f64> {
    let mut window = vec![0.0; n2];
    (0..u.len())
        .map(|t| {
            let mut y = h0;
            for (k, h) in h1.iter().enumerate() {
                y += h * tap(u, t, k, delay);
            }
            for (k, w) in window.iter_mut().enumerate() {
                *w = tap(u, t, k, delay);
            }
            for a in 0..n2 {
                if window[a] == 0.0 {
                    continue;
                }
                let row = &h2[a * n2..(a + 1) * n2];
                let inner: f64 = row.iter().zip(&window).map(|(h, w)| h * w).sum();
                y += window[a] * inner;
            }
            y
        })
        .collect()
}

pub(crate) struct VolterraGrads {
    pub du: Vec<f64>,
    pub dh1: Vec<f64>,
    pub dh2: Vec<f64>,
}

pub(crate) fn backward(u: &[f64], h1: &[f64], h2: &[f64], n2: usize, delay: usize, g: &[f64]) -> VolterraGrads {
    let n = u.len();
    let mut du = vec![0.0; n];
    let mut dh1 = vec![0.0; h1.len()];
    let mut dh2 = vec![0.0; n2 * n2];
    let mut window = vec![0.0; n2];
    let mut idx = vec![usize::MAX; n2];
    for (t, &gt) in g.iter().enumerate() {
        for (k, h) in h1.iter().enumerate() {
            let s = t as isize - k as isize + delay as isize;
            if s >= 0 && (s as usize) < n {
                let s = s as usize;
                dh1[k] += gt * u[s];
                du[s] += gt * h;
            }
        }
        for k in 0..n2 {
            let s = t as isize - k as isize + delay as isize;
            if s >= 0 && (s as usize) < n {
                idx[k] = s as usize;
                window[k] = u[s as usize];
            } else {
                idx[k] = usize::MAX;
                window[k] = 0.0;
            }
        }
        for a in 0..n2 {
            for b in 0..n2 {
                let h = h2[a * n2 + b];
                dh2[a * n2 + b] += gt * window[a] * window[b];
                if idx[a] != usize::MAX {
                    du[idx[a]] += gt * h * window[b];
                }
                if idx[b] != usize::MAX {
                    du[idx[b]] += gt * h * window[a];
                }
            }
        }
    }
    VolterraGrads { du, dh1, dh2 }
}

/// `y(n) = h0 + sum_k h1(k) u(n-k+delay) + sum_{a,b} h2(a,b) u(n-a+delay) u(n-b+delay)`
/// with zero history outside the sequence.
pub fn volterra_apply(u: &[f64], kernel: &VolterraKernel, delay: usize) -> Vec<f64> {
    evaluate(u, kernel.h0, &kernel.h1, &kernel.h2, kernel.n2, delay)
}

/// Regression design with a constant column, `n1` linear columns and one
/// column per unordered pair `a <= b` of the `n2` quadratic lags.
pub fn volterra_design(u: &[f64], n1: usize, n2: usize, delay: usize, rows: std::ops::Range<usize>) -> Matrix {
    let cols = 1 + n1 + n2 * (n2 + 1) / 2;
    let mut m = Matrix::zeros(rows.len(), cols);
    let mut window = vec![0.0; n2];
    for (r, t) in rows.enumerate() {
        let row = &mut m.data[r * cols..(r + 1) * cols];
        row[0] = 1.0;
        for k in 0..n1 {
            row[1 + k] = tap(u, t, k, delay);
        }
        for (k, w) in window.iter_mut().enumerate() {
            *w = tap(u, t, k, delay);
        }
        let mut c = 1 + n1;
        for a in 0..n2 {
            for b in a..n2 {
                row[c] = window[a] * window[b];
                c += 1;
            }
        }
    }
    m
}

/// Least-squares Volterra fit mapping `u` to `target` sample by sample over
/// `rows`. Returns the symmetric full-grid kernel and the design condition
/// estimate.
pub fn fit_volterra(
    u: &[f64],
    target: &[f64],
    n1: usize,
    n2: usize,
    delay: usize,
    rows: std::ops::Range<usize>,
) -> Result<(VolterraKernel, f64)> {
    let design = volterra_design(u, n1, n2, delay, rows.clone());
    let sol = lstsq(&design, &target[rows])?;
    let c = &sol.coefficients;
    let mut kernel = VolterraKernel::zeros(n1, n2);
    kernel.h0 = c[0];
    kernel.h1.copy_from_slice(&c[1..1 + n1]);
    let mut i = 1 + n1;
    for a in 0..n2 {
        for b in a..n2 {
            if a == b {
                kernel.h2[a * n2 + a] = c[i];
            } else {
                kernel.h2[a * n2 + b] = 0.5 * c[i];
                kernel.h2[b * n2 + a] = 0.5 * c[i];
            }
            i += 1;
        }
    }
    Ok((kernel, sol.condition_estimate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pure_square_term() {
        let mut k = VolterraKernel::zeros(3, 3);
        k.h2[0] = 1.0;
        let u = [0.5, -2.0, 3.0];
        assert_eq!(volterra_apply(&u, &k, 0), vec![0.25, 4.0, 9.0]);
    }

    #[test]
    fn least_squares_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n1, n2) = (5, 3);
        let mut truth = VolterraKernel::zeros(n1, n2);
        truth.h0 = 0.3;
        truth.h1.iter_mut().for_each(|h| *h = rng.gen_range(-1.0..1.0));
        truth.h2.iter_mut().for_each(|h| *h = rng.gen_range(-0.5..0.5));
        let truth = truth.symmetrized();
        let u: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = volterra_apply(&u, &truth, 1);
        let (fit, cond) = fit_volterra(&u, &y, n1, n2, 1, 0..400).unwrap();
        assert!(cond.is_finite());
        assert!((fit.h0 - truth.h0).abs() < 1e-8);
        for (a, b) in fit.h1.iter().zip(&truth.h1).chain(fit.h2.iter().zip(&truth.h2)) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_malformed_kernels() {
        assert!(VolterraKernel::new(0.0, vec![], vec![0.0], 1).is_err());
        assert!(VolterraKernel::new(0.0, vec![1.0], vec![0.0; 3], 2).is_err());
        assert!(VolterraKernel::new(f64::NAN, vec![1.0], vec![0.0], 1).is_err());
    }
}
