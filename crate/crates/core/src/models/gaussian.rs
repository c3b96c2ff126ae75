use rand::RngCore;

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::models::TargetModel;
use crate::num::Real;
use crate::rng::standard_normals;

/// Banded-Gaussian toy: `mu0 = N(0, I)`, target `N(0, Gamma)` with
/// `Gamma_ij = sigma^2 exp(-(i-j)^2 / (2 l^2))`.
///
/// The squared-exponential kernel is numerically singular for long length
/// scales, so a relative nugget is added and the matrix rescaled to keep
/// every marginal variance exactly `sigma^2`:
/// `Gamma = sigma^2 (K + eta I) / (1 + eta)`.
#[derive(Debug, Clone)]
pub struct GaussianToy<T> {
    dim: usize,
    sigma: T,
    length_scale: T,
    nugget: T,
    covariance: Vec<T>,
    chol: Cholesky<T>,
}

impl<T: Real> GaussianToy<T> {
    pub const DEFAULT_DIM: usize = 20;
    pub const DEFAULT_SIGMA: f64 = 2.0;
    pub const DEFAULT_LENGTH_SCALE: f64 = 4.0;
    pub const DEFAULT_NUGGET: f64 = 1e-4;

    pub fn new(dim: usize, sigma: T, length_scale: T, nugget: T) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if !(sigma > T::zero()) || !(length_scale > T::zero()) || !(nugget >= T::zero()) {
            return Err(Error::InvalidParameter(
                "sigma, length scale must be > 0 and nugget >= 0".into(),
            ));
        }
        let s2 = sigma * sigma;
        let two_l2 = T::lit(2.0) * length_scale * length_scale;
        let mut covariance = vec![T::zero(); dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                let d = T::count(i.abs_diff(j));
                let k = (-(d * d) / two_l2).exp() + if i == j { nugget } else { T::zero() };
                covariance[i * dim + j] = s2 * k / (T::one() + nugget);
            }
        }
        let chol = Cholesky::factor(&covariance, dim)
            .map_err(|e| Error::InvalidParameter(format!("covariance is not positive definite: {e}")))?;
        // Reject numerically singular kernels: the smallest Cholesky pivot
        // must stay well above round-off relative to the variance.
        let tol = T::epsilon().sqrt() * s2;
        if let Some(i) = (0..dim).find(|&i| chol.pivot(i) <= tol) {
            return Err(Error::InvalidParameter(format!(
                "covariance is numerically singular (pivot {i}: {:e})",
                chol.pivot(i)
            )));
        }
        Ok(Self {
            dim,
            sigma,
            length_scale,
            nugget,
            covariance,
            chol,
        })
    }

    pub fn with_defaults(dim: usize) -> Result<Self> {
        Self::new(
            dim,
            T::lit(Self::DEFAULT_SIGMA),
            T::lit(Self::DEFAULT_LENGTH_SCALE),
            T::lit(Self::DEFAULT_NUGGET),
        )
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn length_scale(&self) -> T {
        self.length_scale
    }

    pub fn nugget(&self) -> T {
        self.nugget
    }

    pub fn covariance(&self) -> &[T] {
        &self.covariance
    }

    /// `-(u' Gamma^{-1} u - u'u) / 2`.
    pub fn gaussian_log_potential(&self, u: &[T]) -> T {
        let y = self.chol.solve_lower(u);
        let q: T = y.iter().map(|&x| x * x).sum();
        let uu: T = u.iter().map(|&x| x * x).sum();
        -(q - uu) / T::lit(2.0)
    }

    /// Exact draw from the target `N(0, Gamma)`.
    pub fn sample_posterior(&self, rng: &mut dyn RngCore) -> Vec<T> {
        self.chol.mul_lower(&standard_normals(rng, self.dim))
    }

    /// Log-density of the target `N(0, Gamma)`, up to a constant.
    pub fn log_posterior_density(&self, u: &[T]) -> T {
        let y = self.chol.solve_lower(u);
        -y.iter().map(|&x| x * x).sum::<T>() / T::lit(2.0)
    }
}

impl<T: Real> TargetModel<T> for GaussianToy<T> {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> Vec<T> {
        standard_normals(rng, self.dim)
    }

    fn log_potential(&self, u: &[T]) -> Result<T> {
        if u.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: u.len(),
            });
        }
        Ok(self.gaussian_log_potential(u))
    }

    fn log_initial_density(&self, u: &[T]) -> T {
        -u.iter().map(|&x| x * x).sum::<T>() / T::lit(2.0)
    }

    fn initial_mean(&self) -> Option<Vec<T>> {
        Some(vec![T::zero(); self.dim])
    }

    fn exact_moments(&self) -> Option<(Vec<T>, Vec<T>)> {
        Some((vec![T::zero(); self.dim], vec![self.sigma * self.sigma; self.dim]))
    }
}
