//! Adaptive tempered sequential samplers with an optimal-transport
//! ensemble transform in place of resampling.
//!
//! The numerical core is generic over the scalar type (`f32` or `f64`);
//! the aliases below fix it to `f64` or `f32`.

pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod linalg;
pub mod models;
pub mod mutation;
pub mod num;
pub mod resampling;
pub mod rng;
pub mod tempering;
pub mod transport;

pub use diagnostics::{
    mcmc_reference, repeat_runs, rmse_mean, variance_ratio, AggregateRow, OracleConfig, Provenance, ReferenceMoments,
    RepeatSummary, RunMetrics,
};
pub use ensemble::{Ensemble, LogPotentialValues};
pub use error::{Error, Result};
pub use models::{
    EllipticConfig, EllipticInverse, GaussianFieldPrior, GaussianToy, Parameterization, PriorOnly, TargetModel,
};
pub use mutation::MutationState;
pub use num::Real;
pub use resampling::ResamplingScheme;
pub use rng::{Component, StreamSeed};
pub use tempering::{run, Method, RunConfig, RunReport, Schedule, TemperatureRecord};
pub use transport::{solve_discrete_ot, CostMatrix, Coupling};

pub type Ensemble64 = Ensemble<f64>;
pub type Ensemble32 = Ensemble<f32>;
pub type LogPotentialValues64 = LogPotentialValues<f64>;
pub type LogPotentialValues32 = LogPotentialValues<f32>;
pub type CostMatrix64 = CostMatrix<f64>;
pub type CostMatrix32 = CostMatrix<f32>;
pub type Coupling64 = Coupling<f64>;
pub type Coupling32 = Coupling<f32>;
pub type MutationState64 = MutationState<f64>;
pub type MutationState32 = MutationState<f32>;
pub type GaussianToy64 = GaussianToy<f64>;
pub type GaussianToy32 = GaussianToy<f32>;
pub type EllipticInverse64 = EllipticInverse<f64>;
pub type EllipticInverse32 = EllipticInverse<f32>;
pub type GaussianFieldPrior64 = GaussianFieldPrior<f64>;
pub type GaussianFieldPrior32 = GaussianFieldPrior<f32>;
pub type RunReport64 = RunReport<f64>;
pub type RunReport32 = RunReport<f32>;
