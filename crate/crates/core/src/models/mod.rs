//! Target distributions `dmu/dmu0 ∝ exp(V)` behind a common interface.

mod elliptic;
mod gaussian;
mod prior;

pub use elliptic::{EllipticConfig, EllipticInverse, FixtureManifest, ForwardSolver, Parameterization};
pub use gaussian::GaussianToy;
pub use prior::GaussianFieldPrior;

use rand::RngCore;

use crate::error::Result;
use crate::num::Real;

/// A tempered-inference target: an initial law `mu0` that can be sampled
/// and evaluated, and a log-potential `V` such that the target density with
/// respect to `mu0` is proportional to `exp(V)`.
pub trait TargetModel<T: Real>: Send + Sync {
    fn dimension(&self) -> usize;

    /// One draw from the initial distribution.
    fn sample_initial(&self, rng: &mut dyn RngCore) -> Vec<T>;

    /// `V(u)`, the log-likelihood. One call is one forward evaluation.
    fn log_potential(&self, u: &[T]) -> Result<T>;

    /// Log-density of the initial law, up to an additive constant.
    fn log_initial_density(&self, u: &[T]) -> T;

    /// Mean of the initial law when it is Gaussian (enables pCN proposals).
    fn initial_mean(&self) -> Option<Vec<T>> {
        None
    }

    /// Analytic posterior mean and marginal variances, when known.
    fn exact_moments(&self) -> Option<(Vec<T>, Vec<T>)> {
        None
    }
}

impl<T: Real, M: TargetModel<T> + ?Sized> TargetModel<T> for &M {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn sample_initial(&self, rng: &mut dyn RngCore) -> Vec<T> {
        (**self).sample_initial(rng)
    }
    fn log_potential(&self, u: &[T]) -> Result<T> {
        (**self).log_potential(u)
    }
    fn log_initial_density(&self, u: &[T]) -> T {
        (**self).log_initial_density(u)
    }
    fn initial_mean(&self) -> Option<Vec<T>> {
        (**self).initial_mean()
    }
    fn exact_moments(&self) -> Option<(Vec<T>, Vec<T>)> {
        (**self).exact_moments()
    }
}

/// Initial law with `V ≡ 0`; the posterior equals `mu0`. Useful for
/// checking samplers and oracles against a known answer.
#[derive(Debug, Clone)]
pub struct PriorOnly<M>(pub M);

impl<T: Real, M: TargetModel<T>> TargetModel<T> for PriorOnly<M> {
    fn dimension(&self) -> usize {
        self.0.dimension()
    }
    fn sample_initial(&self, rng: &mut dyn RngCore) -> Vec<T> {
        self.0.sample_initial(rng)
    }
    fn log_potential(&self, _u: &[T]) -> Result<T> {
        Ok(T::zero())
    }
    fn log_initial_density(&self, u: &[T]) -> T {
        self.0.log_initial_density(u)
    }
    fn initial_mean(&self) -> Option<Vec<T>> {
        self.0.initial_mean()
    }
}
