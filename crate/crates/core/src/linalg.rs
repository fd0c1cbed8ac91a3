//! Dense least squares via Householder QR.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut m = Self::zeros(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), cols, "ragged rows");
            m.data[i * cols..(i + 1) * cols].copy_from_slice(r);
        }
        m
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }
}

#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub coefficients: Vec<f64>,
    /// Ratio of the largest to smallest |R_ii|; a cheap lower bound on the
    /// 2-norm condition number of the (column-scaled) design.
    pub condition_estimate: f64,
    /// Set when the design was numerically rank deficient and a ridge term
    /// was added.
    pub regularized: bool,
    pub residual_norm: f64,
}

const RIDGE: f64 = 1e-8;
const RANK_TOL: f64 = 1e-12;

/// Minimises `||A x - b||_2`. Columns are scaled to unit norm before the
/// factorisation. Rank-deficient designs fall back to a ridge-regularised
/// solve (`lambda = 1e-8` on the scaled problem) and set `regularized`.
pub fn lstsq(a: &Matrix, b: &[f64]) -> Result<LstsqSolution> {
    if a.rows != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.rows,
            actual: b.len(),
        });
    }
    if a.rows < a.cols || a.cols == 0 {
        return Err(Error::RankDeficient(format!("{} rows for {} unknowns", a.rows, a.cols)));
    }
    if a.data.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            stage: "least-squares input".into(),
        });
    }
    let scales: Vec<f64> = (0..a.cols)
        .map(|c| {
            let n = (0..a.rows).map(|r| a.at(r, c).powi(2)).sum::<f64>().sqrt();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = a.clone();
    for r in 0..a.rows {
        for c in 0..a.cols {
            scaled.data[r * a.cols + c] /= scales[c];
        }
    }
    let (mut x, diag, residual_norm) = qr_solve(scaled.clone(), b.to_vec());
    let dmax = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let dmin = diag.iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
    let mut regularized = false;
    let mut residual = residual_norm;
    if !(dmin > RANK_TOL * dmax) {
        log::warn!("rank-deficient least-squares design; using ridge {RIDGE:e}");
        regularized = true;
        // Augment with sqrt(lambda) I rows.
        let mut aug = Matrix::zeros(a.rows + a.cols, a.cols);
        aug.data[..a.rows * a.cols].copy_from_slice(&scaled.data);
        for c in 0..a.cols {
            aug.set(a.rows + c, c, RIDGE.sqrt());
        }
        let mut rhs = b.to_vec();
        rhs.extend(std::iter::repeat_n(0.0, a.cols));
        let (xr, _, _) = qr_solve(aug, rhs);
        x = xr;
        residual = residual_of(&scaled, &x, b);
    }
    for (xi, s) in x.iter_mut().zip(&scales) {
        *xi /= s;
    }
    Ok(LstsqSolution {
        coefficients: x,
        condition_estimate: if dmin > 0.0 { dmax / dmin } else { f64::INFINITY },
        regularized,
        residual_norm: residual,
    })
}

fn residual_of(a: &Matrix, x: &[f64], b: &[f64]) -> f64 {
    (0..a.rows)
        .map(|r| {
            let v: f64 = (0..a.cols).map(|c| a.at(r, c) * x[c]).sum();
            (v - b[r]).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Householder QR solve. Returns (x, diag(R), residual norm).
fn qr_solve(mut a: Matrix, mut b: Vec<f64>) -> (Vec<f64>, Vec<f64>, f64) {
    let (m, n) = (a.rows, a.cols);
    let mut diag = vec![0.0; n];
    let mut v = vec![0.0; m];
    for k in 0..n {
        let norm = (k..m).map(|r| a.at(r, k).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            diag[k] = 0.0;
            continue;
        }
        let alpha = if a.at(k, k) > 0.0 { -norm } else { norm };
        for r in k..m {
            v[r] = a.at(r, k);
        }
        v[k] -= alpha;
        let vnorm2: f64 = (k..m).map(|r| v[r] * v[r]).sum();
        if vnorm2 == 0.0 {
            diag[k] = a.at(k, k);
            continue;
        }
        for c in k..n {
            let dot: f64 = (k..m).map(|r| v[r] * a.at(r, c)).sum();
            let f = 2.0 * dot / vnorm2;
            for r in k..m {
                let val = a.at(r, c) - f * v[r];
                a.set(r, c, val);
            }
        }
        let dot: f64 = (k..m).map(|r| v[r] * b[r]).sum();
        let f = 2.0 * dot / vnorm2;
        for r in k..m {
            b[r] -= f * v[r];
        }
        diag[k] = a.at(k, k);
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for c in k + 1..n {
            s -= a.at(k, c) * x[c];
        }
        x[k] = if diag[k] != 0.0 { s / diag[k] } else { 0.0 };
    }
    let residual = b[n..].iter().map(|r| r * r).sum::<f64>().sqrt();
    (x, diag, residual)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_design_returns_targets() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let sol = lstsq(&a, &[3.0, -2.0, 0.5]).unwrap();
        for (x, t) in sol.coefficients.iter().zip(&[3.0, -2.0, 0.5]) {
            assert!((x - t).abs() < 1e-14);
        }
        assert!(!sol.regularized);
    }

    #[test]
    fn exact_overdetermined_solve() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let t = i as f64 * 0.1;
                vec![1.0, t, t * t]
            })
            .collect();
        let b: Vec<f64> = rows.iter().map(|r| 2.0 - r[1] + 0.25 * r[2]).collect();
        let sol = lstsq(&Matrix::from_rows(&rows), &b).unwrap();
        assert!(sol.residual_norm < 1e-10);
        assert!((sol.coefficients[2] - 0.25).abs() < 1e-10);
    }

    #[test]
    fn rank_deficiency_regularizes() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let b: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let sol = lstsq(&Matrix::from_rows(&rows), &b).unwrap();
        assert!(sol.regularized);
        assert!(sol.coefficients.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn underdetermined_is_rejected() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0]]);
        assert!(lstsq(&a, &[1.0]).is_err());
    }
}
