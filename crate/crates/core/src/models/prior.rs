use rand::RngCore;

use crate::error::{Error, Result};
use crate::num::Real;
use crate::rng::standard_normals;

/// Gaussian random field on an `n x n` nodal grid of the unit square with
/// covariance `(delta I - gamma Lap_h)^{-s}`, where `Lap_h` is the
/// Neumann graph Laplacian of the grid.
///
/// The 1D Neumann second difference with spacing `h` is diagonalized by the
/// orthonormal cosine basis `phi_k(i) ∝ cos(pi k (i + 1/2) / n)` with
/// eigenvalues `(4 / h^2) sin^2(pi k / (2n))`; the 2D operator is the
/// tensor product, so eigenpairs are indexed by `(k, l)`.
#[derive(Debug, Clone)]
pub struct GaussianFieldPrior<T> {
    n: usize,
    delta: T,
    gamma: T,
    s: T,
    mean: Vec<T>,
    /// `basis[k * n + i] = phi_k(i)`.
    basis: Vec<T>,
    /// Eigenvalues of `delta I - gamma Lap_h`, `eig[k * n + l]`.
    eig: Vec<T>,
}

impl<T: Real> GaussianFieldPrior<T> {
    pub fn new(n: usize, delta: T, gamma: T, s: T, mean: Vec<T>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter("grid needs at least 2 nodes per side".into()));
        }
        if !(delta > T::zero()) || gamma < T::zero() || !(s > T::one()) {
            return Err(Error::InvalidParameter(
                "prior requires delta > 0, gamma >= 0, s > 1".into(),
            ));
        }
        if mean.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: mean.len(),
            });
        }
        let h = T::one() / T::count(n - 1);
        let nf = T::count(n);
        let pi = T::PI();
        let mut basis = vec![T::zero(); n * n];
        let mut mu = vec![T::zero(); n];
        for k in 0..n {
            let kf = T::count(k);
            let c = if k == 0 {
                (T::one() / nf).sqrt()
            } else {
                (T::lit(2.0) / nf).sqrt()
            };
            for i in 0..n {
                basis[k * n + i] = c * (pi * kf * (T::count(i) + T::lit(0.5)) / nf).cos();
            }
            let sn = (pi * kf / (T::lit(2.0) * nf)).sin();
            mu[k] = T::lit(4.0) * sn * sn / (h * h);
        }
        let mut eig = vec![T::zero(); n * n];
        for k in 0..n {
            for l in 0..n {
                eig[k * n + l] = delta + gamma * (mu[k] + mu[l]);
            }
        }
        Ok(Self {
            n,
            delta,
            gamma,
            s,
            mean,
            basis,
            eig,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dimension(&self) -> usize {
        self.n * self.n
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn parameters(&self) -> (T, T, T) {
        (self.delta, self.gamma, self.s)
    }

    /// Eigenvalue of `delta I - gamma Lap_h` for mode `(k, l)`.
    pub fn eigenvalue(&self, k: usize, l: usize) -> T {
        self.eig[k * self.n + l]
    }

    /// Nodal field of mode `(k, l)`; node `(ix, iy)` is at `iy * n + ix`.
    pub fn mode(&self, k: usize, l: usize) -> Vec<T> {
        let n = self.n;
        let mut out = vec![T::zero(); n * n];
        for iy in 0..n {
            for ix in 0..n {
                out[iy * n + ix] = self.basis[k * n + ix] * self.basis[l * n + iy];
            }
        }
        out
    }

    /// Coefficients `a[k * n + l] = <field, mode(k, l)>`.
    pub fn analyze(&self, field: &[T]) -> Vec<T> {
        let n = self.n;
        // tmp[k][iy] = sum_ix phi_k(ix) field[iy][ix]
        let mut tmp = vec![T::zero(); n * n];
        for k in 0..n {
            for iy in 0..n {
                tmp[k * n + iy] = (0..n).map(|ix| self.basis[k * n + ix] * field[iy * n + ix]).sum();
            }
        }
        let mut a = vec![T::zero(); n * n];
        for k in 0..n {
            for l in 0..n {
                a[k * n + l] = (0..n).map(|iy| self.basis[l * n + iy] * tmp[k * n + iy]).sum();
            }
        }
        a
    }

    /// Inverse of [`Self::analyze`].
    pub fn synthesize(&self, coeffs: &[T]) -> Vec<T> {
        let n = self.n;
        // tmp[k][iy] = sum_l phi_l(iy) a[k][l]
        let mut tmp = vec![T::zero(); n * n];
        for k in 0..n {
            for iy in 0..n {
                tmp[k * n + iy] = (0..n).map(|l| self.basis[l * n + iy] * coeffs[k * n + l]).sum();
            }
        }
        let mut out = vec![T::zero(); n * n];
        for iy in 0..n {
            for ix in 0..n {
                out[iy * n + ix] = (0..n).map(|k| self.basis[k * n + ix] * tmp[k * n + iy]).sum();
            }
        }
        out
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<T> {
        self.from_whitened(&standard_normals(rng, self.n * self.n))
    }

    /// Field `u0 + sum_kl lambda_kl^{-s/2} xi_kl phi_kl` for standard coordinates `xi`.
    pub fn from_whitened(&self, xi: &[T]) -> Vec<T> {
        let half = self.s / T::lit(2.0);
        let coeffs: Vec<T> = xi.iter().zip(&self.eig).map(|(&z, &lam)| z * lam.powf(-half)).collect();
        self.synthesize(&coeffs)
            .into_iter()
            .zip(&self.mean)
            .map(|(x, &m)| x + m)
            .collect()
    }

    /// `-1/2 (u - u0)' A^s (u - u0)`.
    pub fn log_density(&self, u: &[T]) -> T {
        let centered: Vec<T> = u.iter().zip(&self.mean).map(|(&x, &m)| x - m).collect();
        let a = self.analyze(&centered);
        let q: T = a.iter().zip(&self.eig).map(|(&c, &lam)| lam.powf(self.s) * c * c).sum();
        -q / T::lit(2.0)
    }

    /// Marginal variance of every node.
    pub fn marginal_variances(&self) -> Vec<T> {
        let n = self.n;
        let mut var = vec![T::zero(); n * n];
        for k in 0..n {
            for l in 0..n {
                let c = self.eig[k * n + l].powf(-self.s);
                for iy in 0..n {
                    for ix in 0..n {
                        let p = self.basis[k * n + ix] * self.basis[l * n + iy];
                        var[iy * n + ix] = var[iy * n + ix] + c * p * p;
                    }
                }
            }
        }
        var
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Component, StreamSeed};
    use approx::assert_abs_diff_eq;

    #[test]
    fn basis_is_orthonormal_and_diagonalizes_neumann_laplacian() {
        let n = 7;
        let p = GaussianFieldPrior::new(n, 1.0_f64, 0.0, 2.0, vec![0.0; n * n]).unwrap();
        let h = 1.0 / (n - 1) as f64;
        for k in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|i| p.basis[k * n + i] * p.basis[j * n + i]).sum();
                assert_abs_diff_eq!(dot, if j == k { 1.0 } else { 0.0 }, epsilon = 1e-12);
            }
            // (L phi)_i with reflecting ends.
            let phi = &p.basis[k * n..(k + 1) * n];
            let sn = (std::f64::consts::PI * k as f64 / (2.0 * n as f64)).sin();
            let mu = 4.0 * sn * sn / (h * h);
            for i in 0..n {
                let left = if i == 0 { phi[i] } else { phi[i - 1] };
                let right = if i == n - 1 { phi[i] } else { phi[i + 1] };
                let lap = (2.0 * phi[i] - left - right) / (h * h);
                assert_abs_diff_eq!(lap, mu * phi[i], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn analyze_inverts_synthesize() {
        let n = 5;
        let p = GaussianFieldPrior::new(n, 1.0_f64, 0.1, 2.0, vec![0.0; n * n]).unwrap();
        let field: Vec<f64> = (0..n * n).map(|i| (i as f64 * 0.7).cos()).collect();
        let back = p.synthesize(&p.analyze(&field));
        for (a, b) in back.iter().zip(&field) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_gamma_gives_iid_nodes() {
        let n = 4;
        let p = GaussianFieldPrior::new(n, 2.0_f64, 0.0, 2.0, vec![0.5; n * n]).unwrap();
        for v in p.marginal_variances() {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-12);
        }
        // Log-density is the i.i.d. quadratic form.
        let u: Vec<f64> = (0..n * n).map(|i| i as f64 * 0.1).collect();
        let expected: f64 = -u.iter().map(|x| (x - 0.5) * (x - 0.5) * 4.0).sum::<f64>() / 2.0;
        assert_abs_diff_eq!(p.log_density(&u), expected, epsilon = 1e-10);
    }

    #[test]
    fn sample_moments_match_eigenvalues() {
        let n = 6;
        let mean: Vec<f64> = (0..n * n).map(|i| (i as f64 * 0.3).sin()).collect();
        let p = GaussianFieldPrior::new(n, 1.0_f64, 0.1, 2.0, mean.clone()).unwrap();
        let draws = 10_000;
        let root = StreamSeed::new(21);
        let modes = [(0, 0), (1, 0), (2, 3), (5, 5)];
        let mut proj = vec![0.0; modes.len()];
        let mut sum = vec![0.0; n * n];
        for t in 0..draws {
            let mut rng = root.stream(Component::Test, 0, t, 0);
            let u = p.sample(&mut rng);
            let centered: Vec<f64> = u.iter().zip(&mean).map(|(a, b)| a - b).collect();
            let a = p.analyze(&centered);
            for (q, &(k, l)) in proj.iter_mut().zip(&modes) {
                *q += a[k * n + l] * a[k * n + l];
            }
            for (s, x) in sum.iter_mut().zip(&u) {
                *s += x;
            }
        }
        for (q, &(k, l)) in proj.iter().zip(&modes) {
            let expected = p.eigenvalue(k, l).powf(-2.0);
            assert!(((q / draws as f64) / expected - 1.0).abs() < 0.05, "mode ({k},{l})");
        }
        let var = p.marginal_variances();
        for i in 0..n * n {
            let se = (var[i] / draws as f64).sqrt();
            assert!((sum[i] / draws as f64 - mean[i]).abs() < 3.0 * se, "node {i}");
        }
    }
}
