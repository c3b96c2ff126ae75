//! Small dense and banded Cholesky factorizations.

use crate::error::{Error, Result};
use crate::num::Real;

/// Lower Cholesky factor of a dense SPD matrix (row-major, `n x n`).
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    n: usize,
    lower: Vec<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn factor(a: &[T], n: usize) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: a.len(),
            });
        }
        let mut l = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s = s - l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > T::zero()) || !s.is_finite() {
                        return Err(Error::SolverFailure(format!(
                            "matrix not positive definite (pivot {i}: {s:e})"
                        )));
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Self { n, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Squared diagonal entry `L_ii^2`, the `i`-th elimination pivot.
    pub fn pivot(&self, i: usize) -> T {
        let d = self.lower[i * self.n + i];
        d * d
    }

    /// Solve `L y = b`.
    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s = s - self.lower[i * n + k] * y[k];
            }
            y[i] = s / self.lower[i * n + i];
        }
        y
    }

    /// `L x`.
    pub fn mul_lower(&self, x: &[T]) -> Vec<T> {
        let n = self.n;
        (0..n)
            .map(|i| (0..=i).map(|k| self.lower[i * n + k] * x[k]).sum())
            .collect()
    }

    pub fn log_det(&self) -> T {
        (0..self.n).map(|i| self.lower[i * self.n + i].ln()).sum::<T>() * T::lit(2.0)
    }
}

/// Symmetric positive definite band matrix storing the lower band,
/// `bandwidth` sub-diagonals.
#[derive(Debug, Clone)]
pub struct BandMatrix<T> {
    n: usize,
    bw: usize,
    /// Row `i` holds columns `i - bw ..= i` at offsets `0 ..= bw`.
    band: Vec<T>,
}

impl<T: Real> BandMatrix<T> {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        Self {
            n,
            bw: bandwidth,
            band: vec![T::zero(); n * (bandwidth + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Add `value` at `(i, j)`; entries above the diagonal are folded onto
    /// their symmetric counterpart, so callers may add both or just one.
    pub fn add(&mut self, i: usize, j: usize, value: T) {
        if j > i {
            return;
        }
        debug_assert!(i - j <= self.bw, "entry outside band");
        let idx = i * (self.bw + 1) + (j + self.bw - i);
        self.band[idx] = self.band[idx] + value;
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if i - j > self.bw {
            return T::zero();
        }
        self.band[i * (self.bw + 1) + (j + self.bw - i)]
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let a = self.get(i, j);
                y[i] = y[i] + a * x[j];
                if j != i {
                    y[j] = y[j] + a * x[i];
                }
            }
        }
        y
    }

    /// In-place banded Cholesky followed by forward/back substitution.
    pub fn solve(&self, rhs: &[T]) -> Result<Vec<T>> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let mut l = self.band.clone();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = l[i * w + (j + bw - i)];
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    s = s - l[i * w + (k + bw - i)] * l[j * w + (k + bw - j)];
                }
                if i == j {
                    if !(s > T::zero()) {
                        return Err(Error::SolverFailure(format!(
                            "band matrix not positive definite at row {i}"
                        )));
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + (j + bw - i)] = s / l[j * w + bw];
                }
            }
        }
        let mut y = rhs.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = y[i];
            for k in lo..i {
                s = s - l[i * w + (k + bw - i)] * y[k];
            }
            y[i] = s / l[i * w + bw];
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut s = y[i];
            for k in i + 1..=hi {
                s = s - l[k * w + (i + bw - k)] * y[k];
            }
            y[i] = s / l[i * w + bw];
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn dense_cholesky_round_trip() {
        let a = [4.0_f64, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0];
        let c = Cholesky::factor(&a, 3).unwrap();
        let x = [1.0, -2.0, 0.5];
        let lx = c.mul_lower(&x);
        let back = c.solve_lower(&lx);
        for (p, q) in back.iter().zip(&x) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-14);
        }
        assert!(Cholesky::factor(&[1.0_f64, 2.0, 2.0, 1.0], 2).is_err());
    }

    #[test]
    fn band_solve_matches_tridiagonal() {
        let n = 6;
        let mut m = BandMatrix::<f64>::zeros(n, 1);
        for i in 0..n {
            m.add(i, i, 2.0);
            if i > 0 {
                m.add(i, i - 1, -1.0);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let b = m.mul_vec(&x);
        let y = m.solve(&b).unwrap();
        for (p, q) in y.iter().zip(&x) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-13);
        }
    }
}
