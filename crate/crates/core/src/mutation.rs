//! Adaptive autoregressive Metropolis–Hastings mutation.
//!
//! Proposal: `u' = m + rho (u - m) + sqrt(1 - rho^2) xi`, `xi ~ N(0, diag(G))`,
//! with `m`, `G` the ensemble mean and marginal variances. The proposal is
//! reversible with respect to `phi = N(m, diag(G))`, so targeting
//! `pi_tau ∝ mu0 exp(tau V)` the acceptance probability is
//! `min(1, pi_tau(u') phi(u) / (pi_tau(u) phi(u')))`.

use rand::Rng;
use rayon::prelude::*;

use crate::ensemble::{Ensemble, LogPotentialValues};
use crate::error::{Error, Result};
use crate::models::TargetModel;
use crate::num::Real;
use crate::rng::{standard_normals, Component, StreamSeed};

/// Floor applied to empirical marginal variances.
pub const VARIANCE_FLOOR: f64 = 1e-12;
pub const DEFAULT_RHO: f64 = 0.5;
/// Acceptance-rate band; below it rho doubles, above it rho halves.
pub const ACCEPT_LOW: f64 = 0.15;
pub const ACCEPT_HIGH: f64 = 0.85;

#[derive(Debug, Clone, PartialEq)]
pub struct MutationState<T> {
    pub mean: Vec<T>,
    pub diag_cov: Vec<T>,
    pub rho: T,
    pub accepted: usize,
    pub proposed: usize,
}

impl<T: Real> MutationState<T> {
    pub fn new(dim: usize, rho: T) -> Result<Self> {
        if !(rho > T::zero() && rho <= T::one()) {
            return Err(Error::InvalidParameter(format!("rho {rho} must lie in (0, 1]")));
        }
        Ok(Self {
            mean: vec![T::zero(); dim],
            diag_cov: vec![T::one(); dim],
            rho,
            accepted: 0,
            proposed: 0,
        })
    }

    /// Replace mean and marginal variances with the ensemble's.
    pub fn refresh_statistics(&mut self, e: &Ensemble<T>) {
        let floor = T::lit(VARIANCE_FLOOR);
        self.mean = e.weighted_mean();
        self.diag_cov = e.weighted_diag_variance().into_iter().map(|v| v.max(floor)).collect();
    }

    /// Proposal with a given standard-normal vector `z` (`xi = sqrt(G) z`).
    pub fn propose_with(&self, u: &[T], z: &[T]) -> Vec<T> {
        let tail = (T::one() - self.rho * self.rho).max(T::zero()).sqrt();
        u.iter()
            .zip(&self.mean)
            .zip(&self.diag_cov)
            .zip(z)
            .map(|(((&x, &m), &g), &zz)| x + (self.rho - T::one()) * (x - m) + tail * g.sqrt() * zz)
            .collect()
    }

    pub fn propose<R: Rng + ?Sized>(&self, u: &[T], rng: &mut R) -> Vec<T> {
        let z = standard_normals(rng, u.len());
        self.propose_with(u, &z)
    }

    /// `log phi(u)` up to a constant.
    pub fn log_reference_density(&self, u: &[T]) -> T {
        let q: T = u
            .iter()
            .zip(&self.mean)
            .zip(&self.diag_cov)
            .map(|((&x, &m), &g)| (x - m) * (x - m) / g)
            .sum();
        -q / T::lit(2.0)
    }

    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }

    /// Double rho (capped at 1) on low acceptance, halve it on high
    /// acceptance, then reset the counters. Returns the pooled rate.
    pub fn adapt_rho(&mut self) -> Result<f64> {
        let rate = self.acceptance_rate().ok_or(Error::NoProposals)?;
        if rate < ACCEPT_LOW {
            self.rho = (self.rho * T::lit(2.0)).min(T::one());
        } else if rate > ACCEPT_HIGH {
            self.rho = self.rho / T::lit(2.0);
        }
        self.accepted = 0;
        self.proposed = 0;
        Ok(rate)
    }
}

/// Log acceptance ratio for moving `u -> u'` at inverse temperature `tau`.
pub fn log_acceptance_ratio<T: Real, M: TargetModel<T> + ?Sized>(
    state: &MutationState<T>,
    model: &M,
    tau: T,
    (u, v_u): (&[T], T),
    (prop, v_prop): (&[T], T),
) -> T {
    let target = tau * (v_prop - v_u) + model.log_initial_density(prop) - model.log_initial_density(u);
    target - (state.log_reference_density(prop) - state.log_reference_density(u))
}

/// Result of one sweep over the ensemble.
#[derive(Debug, Clone)]
pub struct Sweep<T> {
    pub ensemble: Ensemble<T>,
    pub potentials: LogPotentialValues<T>,
    pub accepted: usize,
    /// Model evaluations performed.
    pub evaluations: usize,
}

/// Address of a sweep in the random-stream space.
#[derive(Debug, Clone, Copy)]
pub struct SweepKey {
    pub seed: StreamSeed,
    pub temperature: u64,
    pub sweep: u64,
}

/// One Metropolis–Hastings step for every particle, in parallel; particle
/// `i` draws from its own stream so the result is independent of threading.
/// Model failures reject the proposal.
pub fn mh_step<T: Real, M: TargetModel<T> + ?Sized>(
    state: &mut MutationState<T>,
    e: &Ensemble<T>,
    potentials: &LogPotentialValues<T>,
    tau: T,
    model: &M,
    key: SweepKey,
) -> Result<Sweep<T>> {
    if potentials.len() != e.len() {
        return Err(Error::DimensionMismatch {
            expected: e.len(),
            got: potentials.len(),
        });
    }
    let st: &MutationState<T> = state;
    let moves: Vec<(Vec<T>, T, bool)> = (0..e.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = key
                .seed
                .stream(Component::Mutation, key.temperature, key.sweep, i as u64);
            let u = e.particle(i);
            let v_u = potentials.values()[i];
            let prop = st.propose(u, &mut rng);
            let log_u: f64 = rng.random::<f64>().ln();
            match model.log_potential(&prop) {
                Ok(v_prop) if v_prop.is_finite() => {
                    let log_a = log_acceptance_ratio(st, model, tau, (u, v_u), (&prop, v_prop));
                    if log_u < log_a.to_f64_lossy() {
                        (prop, v_prop, true)
                    } else {
                        (u.to_vec(), v_u, false)
                    }
                }
                Ok(v) => {
                    log::warn!("particle {i}: non-finite potential {v}; proposal rejected");
                    (u.to_vec(), v_u, false)
                }
                Err(err) => {
                    log::warn!("particle {i}: model evaluation failed ({err}); proposal rejected");
                    (u.to_vec(), v_u, false)
                }
            }
        })
        .collect();

    let n = e.len();
    let mut positions = Vec::with_capacity(n * e.dim());
    let mut values = Vec::with_capacity(n);
    let mut accepted = 0;
    for (p, v, acc) in moves {
        positions.extend_from_slice(&p);
        values.push(v);
        accepted += usize::from(acc);
    }
    state.accepted += accepted;
    state.proposed += n;
    Ok(Sweep {
        ensemble: e.with_positions(positions)?,
        potentials: LogPotentialValues::new(values)?,
        accepted,
        evaluations: n,
    })
}
