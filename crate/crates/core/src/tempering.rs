//! Adaptive tempering and the two samplers: the ensemble transform (SET)
//! and the resampling baseline (SMC).

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{ess_of_log_weights, Ensemble, LogPotentialValues};
use crate::error::{Error, Result};
use crate::models::TargetModel;
use crate::mutation::{mh_step, MutationState, SweepKey, DEFAULT_RHO};
use crate::num::Real;
use crate::resampling::{resample, ResamplingScheme};
use crate::rng::{Component, StreamSeed};
use crate::transport::apply_bayes_transform;

pub const DEFAULT_XI: f64 = 0.5;
/// Bisection stops once the bracket is this narrow...
pub const TAU_TOL: f64 = 1e-10;
/// ...and the ESS at the returned temperature is this close to the threshold.
pub const ESS_TOL: f64 = 1e-7;
pub const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Set,
    Smc,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "set" => Ok(Self::Set),
            "smc" => Ok(Self::Smc),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Set => "set",
            Self::Smc => "smc",
        })
    }
}

/// Temperature ladder `0 = tau_0 < ... < tau_K = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    pub temperatures: Vec<f64>,
    pub xi: f64,
}

impl Schedule {
    pub fn steps(&self) -> usize {
        self.temperatures.len().saturating_sub(1)
    }
}

/// ESS of an equally weighted ensemble after reweighting by `exp(dtau V)`.
pub fn ess_after<T: Real>(v: &LogPotentialValues<T>, dtau: T) -> T {
    let lw: Vec<T> = v.values().iter().map(|&x| dtau * x).collect();
    ess_of_log_weights(&lw)
}

/// Next temperature of the adaptive ladder: 1 if `ESS(1) > xi`, otherwise
/// the root of `ESS(tau) = xi` on `(tau_k, 1]` by bisection. The returned
/// value always satisfies `ESS <= xi` unless it is 1.
pub fn next_temperature<T: Real>(tau_k: T, v: &LogPotentialValues<T>, xi: T) -> Result<T> {
    if !(tau_k >= T::zero() && tau_k < T::one()) {
        return Err(Error::InvalidParameter(format!(
            "current temperature {tau_k} must lie in [0, 1)"
        )));
    }
    if !(xi > T::zero() && xi < T::one()) {
        return Err(Error::InvalidParameter(format!("xi {xi} must lie in (0, 1)")));
    }
    let ess = |tau: T| ess_after(v, tau - tau_k);
    if ess(T::one()) > xi {
        return Ok(T::one());
    }
    let (mut lo, mut hi) = (tau_k, T::one());
    let tau_tol = T::lit(TAU_TOL);
    let ess_tol = T::lit(ESS_TOL);
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= tau_tol && (ess(hi) - xi).abs() <= ess_tol {
            break;
        }
        let mid = lo + (hi - lo) / T::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if ess(mid) > xi {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Evaluate `V` on every particle in parallel.
pub fn evaluate_potentials<T: Real, M: TargetModel<T> + ?Sized>(
    model: &M,
    e: &Ensemble<T>,
) -> Result<LogPotentialValues<T>> {
    let values = (0..e.len())
        .into_par_iter()
        .map(|i| {
            let v = model.log_potential(e.particle(i))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::InvalidPotential {
                    index: i,
                    value: v.to_f64_lossy(),
                })
            }
        })
        .collect::<Result<Vec<T>>>()?;
    LogPotentialValues::new(values)
}

/// Ensemble, its cached potentials and the mutation state between steps.
#[derive(Debug, Clone)]
pub struct SamplerState<T> {
    pub ensemble: Ensemble<T>,
    pub potentials: LogPotentialValues<T>,
    pub mutation: MutationState<T>,
    /// Forward evaluations performed so far.
    pub solves: usize,
}

/// What one tempering step did.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepOutcome {
    /// Scale used by this step's mutations.
    pub rho: f64,
    pub acceptance: Option<f64>,
}

/// Counter-based addressing of the step's random streams.
#[derive(Debug, Clone, Copy)]
pub struct StepKey {
    pub seed: StreamSeed,
    /// Index `k + 1` of the temperature being reached.
    pub step: u64,
}

fn mutate<T: Real, M: TargetModel<T> + ?Sized>(
    state: &mut SamplerState<T>,
    tau: T,
    model: &M,
    p: usize,
    key: StepKey,
) -> Result<StepOutcome> {
    state.mutation.refresh_statistics(&state.ensemble);
    let rho = state.mutation.rho.to_f64_lossy();
    for sweep in 0..p {
        let sk = SweepKey {
            seed: key.seed,
            temperature: key.step,
            sweep: sweep as u64,
        };
        let out = mh_step(&mut state.mutation, &state.ensemble, &state.potentials, tau, model, sk)?;
        state.ensemble = out.ensemble;
        state.potentials = out.potentials;
        state.solves += out.evaluations;
    }
    let acceptance = if p > 0 { Some(state.mutation.adapt_rho()?) } else { None };
    Ok(StepOutcome { rho, acceptance })
}

/// Ensemble transform to `tau_next`, then `p` mutation sweeps.
pub fn set_step<T: Real, M: TargetModel<T> + ?Sized>(
    state: &mut SamplerState<T>,
    tau_k: T,
    tau_next: T,
    model: &M,
    p: usize,
    key: StepKey,
) -> Result<StepOutcome> {
    if !state.ensemble.is_equally_weighted() {
        return Err(Error::InvalidParameter(
            "ensemble transform step needs equal weights".into(),
        ));
    }
    let moved = apply_bayes_transform(&state.ensemble, &state.potentials, tau_next - tau_k)?;
    state.potentials = evaluate_potentials(model, &moved)?;
    state.solves += moved.len();
    state.ensemble = moved;
    mutate(state, tau_next, model, p, key)
}

/// Reweight and resample to `tau_next`, then `p` mutation sweeps.
pub fn smc_step<T: Real, M: TargetModel<T> + ?Sized>(
    state: &mut SamplerState<T>,
    tau_k: T,
    tau_next: T,
    model: &M,
    p: usize,
    scheme: ResamplingScheme,
    key: StepKey,
) -> Result<StepOutcome> {
    let weighted = state.ensemble.reweight(&state.potentials, tau_next - tau_k)?;
    let mut rng = key.seed.stream(Component::Resample, key.step, 0, 0);
    let idx = resample(scheme, &weighted.weights(), &mut rng);
    state.ensemble = weighted.select(&idx)?;
    state.potentials = state.potentials.select(&idx);
    mutate(state, tau_next, model, p, key)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: Method,
    pub n: usize,
    /// Mutation sweeps per temperature.
    pub p: usize,
    pub xi: f64,
    pub seed: u64,
    pub scheme: ResamplingScheme,
    pub rho0: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Set,
            n: 500,
            p: 0,
            xi: DEFAULT_XI,
            seed: 1,
            scheme: ResamplingScheme::Stratified,
            rho0: DEFAULT_RHO,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParameter("n must be at least 2".into()));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::InvalidParameter("xi must lie in (0,1)".into()));
        }
        if !(self.rho0 > 0.0 && self.rho0 <= 1.0) {
            return Err(Error::InvalidParameter("rho0 must lie in (0,1]".into()));
        }
        Ok(())
    }
}

/// One row of the per-temperature trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TemperatureRecord {
    pub tau: f64,
    /// ESS of the reweighted ensemble at the accepted temperature.
    pub ess: f64,
    pub rho: f64,
    pub acceptance: Option<f64>,
    /// Cumulative forward evaluations at the end of the step.
    pub solves: usize,
}

#[derive(Debug, Clone)]
pub struct RunReport<T> {
    pub config: RunConfig,
    pub records: Vec<TemperatureRecord>,
    pub ensemble: Ensemble<T>,
    pub solves: usize,
    pub wall_time: Duration,
}

impl<T: Real> RunReport<T> {
    pub fn steps(&self) -> usize {
        self.records.len()
    }

    pub fn schedule(&self) -> Schedule {
        let mut temperatures = vec![0.0];
        temperatures.extend(self.records.iter().map(|r| r.tau));
        Schedule {
            temperatures,
            xi: self.config.xi,
        }
    }

    /// Trace as CSV: `k,tau,ess,rho,acceptance,solves`.
    pub fn write_trace_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "k,tau,ess,rho,acceptance,solves")?;
        for (k, r) in self.records.iter().enumerate() {
            let acc = r.acceptance.map(|a| a.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{},{},{}", k + 1, r.tau, r.ess, r.rho, acc, r.solves)?;
        }
        Ok(())
    }
}

/// Draw `n` particles from the initial law, one stream per particle.
pub fn initial_ensemble<T: Real, M: TargetModel<T> + ?Sized>(
    model: &M,
    n: usize,
    seed: StreamSeed,
) -> Result<Ensemble<T>> {
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| model.sample_initial(&mut seed.stream(Component::Initial, 0, 0, i as u64)))
        .collect();
    Ensemble::from_rows(&rows)
}

/// Run a full tempered sampler from `tau = 0` to `tau = 1`.
pub fn run<T: Real, M: TargetModel<T> + ?Sized>(model: &M, config: &RunConfig) -> Result<RunReport<T>> {
    config.validate()?;
    let start = Instant::now();
    let seed = StreamSeed::new(config.seed);
    let ensemble = initial_ensemble(model, config.n, seed)?;
    let potentials = evaluate_potentials(model, &ensemble)?;
    let mut state = SamplerState {
        ensemble,
        potentials,
        mutation: MutationState::new(model.dimension(), T::lit(config.rho0))?,
        solves: config.n,
    };
    let xi = T::lit(config.xi);
    let mut tau = T::zero();
    let mut records = Vec::new();
    while tau < T::one() {
        let abort = |e: Error, completed: usize| Error::Aborted {
            tau: tau.to_f64_lossy(),
            completed,
            source: Box::new(e),
        };
        let next = next_temperature(tau, &state.potentials, xi).map_err(|e| abort(e, records.len()))?;
        let ess = ess_after(&state.potentials, next - tau);
        let key = StepKey {
            seed,
            step: records.len() as u64 + 1,
        };
        let outcome = match config.method {
            Method::Set => set_step(&mut state, tau, next, model, config.p, key),
            Method::Smc => smc_step(&mut state, tau, next, model, config.p, config.scheme, key),
        }
        .map_err(|e| abort(e, records.len()))?;
        log::debug!(
            "step {}: tau = {next:e}, ess = {ess:e}, rho = {}",
            records.len() + 1,
            outcome.rho
        );
        records.push(TemperatureRecord {
            tau: next.to_f64_lossy(),
            ess: ess.to_f64_lossy(),
            rho: outcome.rho,
            acceptance: outcome.acceptance,
            solves: state.solves,
        });
        tau = next;
    }
    Ok(RunReport {
        config: *config,
        records,
        ensemble: state.ensemble,
        solves: state.solves,
        wall_time: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GaussianToy, PriorOnly};
    use approx::assert_abs_diff_eq;

    fn lpv(v: &[f64]) -> LogPotentialValues<f64> {
        LogPotentialValues::new(v.to_vec()).unwrap()
    }

    #[test]
    fn constant_potential_jumps_to_one() {
        assert_eq!(next_temperature(0.0, &lpv(&[-3.0; 5]), 0.5).unwrap(), 1.0);
    }

    #[test]
    fn equality_at_one_runs_bisection() {
        let v = lpv(&[0.0, 3.0_f64.ln()]);
        assert_abs_diff_eq!(ess_after(&v, 1.0), 0.8, epsilon = 1e-15);
        let tau = next_temperature(0.0, &v, 0.8).unwrap();
        assert!(tau > 1.0 - 1e-6 && tau <= 1.0);
    }

    #[test]
    fn separated_two_particle_root() {
        // ESS = (1 + r)^2 / (2 (1 + r^2)) with r = exp(-1e6 tau); ESS = 1/2 at
        // r = 0, so the root is where r underflows relative to 1.
        let v = lpv(&[0.0, -1e6]);
        let tau = next_temperature(0.0, &v, 0.5).unwrap();
        let ess = ess_after(&v, tau);
        assert!((ess - 0.5).abs() <= 1e-6 || tau == 1.0, "tau {tau} ess {ess}");
        // Independent scalar root: solve (1+r)^2 = 2 xi (1+r^2) for r in closed form.
        let v2 = lpv(&[0.0, -10.0]);
        let tau2 = next_temperature(0.0, &v2, 0.9).unwrap();
        // 0.9 * 2 (1 + r^2) = (1 + r)^2  =>  0.8 r^2 - 2 r + 0.8 = 0.
        let r = (2.0 - (4.0 - 4.0 * 0.8 * 0.8_f64).sqrt()) / 1.6;
        assert_abs_diff_eq!(tau2, -r.ln() / 10.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_potential_finishes_in_one_step() {
        let model = PriorOnly(GaussianToy::<f64>::with_defaults(3).unwrap());
        for method in [Method::Set, Method::Smc] {
            let cfg = RunConfig {
                method,
                n: 64,
                p: 1,
                ..RunConfig::default()
            };
            let r = run(&model, &cfg).unwrap();
            assert_eq!(r.schedule().temperatures, vec![0.0, 1.0]);
        }
    }

    #[test]
    fn solve_accounting() {
        let model = GaussianToy::<f64>::with_defaults(4).unwrap();
        for (method, p) in [(Method::Set, 0), (Method::Set, 2), (Method::Smc, 0), (Method::Smc, 2)] {
            let cfg = RunConfig {
                method,
                n: 50,
                p,
                seed: 3,
                ..RunConfig::default()
            };
            let r = run(&model, &cfg).unwrap();
            let k = r.steps();
            let per_step = p + usize::from(method == Method::Set);
            assert_eq!(r.solves, 50 + k * 50 * per_step, "{method} p={p}");
            assert_eq!(r.records.last().unwrap().solves, r.solves);
            assert!(r.ensemble.is_equally_weighted());
        }
    }

    #[test]
    fn ladder_invariants() {
        let model = GaussianToy::<f64>::with_defaults(6).unwrap();
        let r = run(
            &model,
            &RunConfig {
                n: 100,
                p: 1,
                seed: 5,
                ..RunConfig::default()
            },
        )
        .unwrap();
        let t = r.schedule().temperatures;
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*t.last().unwrap(), 1.0);
        for rec in &r.records {
            assert!(rec.ess >= 0.5 - 1e-6 && rec.ess <= 1.0);
        }
    }

    #[test]
    fn smc_degenerate_weights_copy_survivor() {
        let e = Ensemble::uniform(vec![0.0, 1.0, 2.0], 1).unwrap();
        let model = GaussianToy::new(1, 1.0_f64, 1.0, 0.0).unwrap();
        let mut state = SamplerState {
            ensemble: e,
            potentials: lpv(&[0.0, -1e6, -1e6]),
            mutation: MutationState::new(1, 0.5).unwrap(),
            solves: 0,
        };
        let key = StepKey {
            seed: StreamSeed::new(1),
            step: 1,
        };
        smc_step(&mut state, 0.0, 1.0, &model, 0, ResamplingScheme::Stratified, key).unwrap();
        assert_eq!(state.ensemble.positions(), &[0.0, 0.0, 0.0]);
        assert_eq!(state.solves, 0);
    }

    #[test]
    fn set_degenerate_potential_moves_to_survivor() {
        let e = Ensemble::uniform(vec![0.0, 1.0], 1).unwrap();
        let model = GaussianToy::new(1, 1.0_f64, 1.0, 0.0).unwrap();
        let mut state = SamplerState {
            ensemble: e,
            potentials: lpv(&[0.0, -1e6]),
            mutation: MutationState::new(1, 0.5).unwrap(),
            solves: 0,
        };
        let key = StepKey {
            seed: StreamSeed::new(1),
            step: 1,
        };
        let out = set_step(&mut state, 0.0, 1.0, &model, 0, key).unwrap();
        assert_eq!(state.ensemble.positions(), &[0.0, 0.0]);
        assert_eq!(out.acceptance, None);
        assert_eq!(state.solves, 2);
    }

    #[test]
    fn run_is_deterministic() {
        let model = GaussianToy::<f64>::with_defaults(5).unwrap();
        for method in [Method::Set, Method::Smc] {
            let cfg = RunConfig {
                method,
                n: 80,
                p: 2,
                seed: 9,
                ..RunConfig::default()
            };
            let a = run(&model, &cfg).unwrap();
            let b = run(&model, &cfg).unwrap();
            assert_eq!(a.records, b.records);
            assert_eq!(a.ensemble, b.ensemble);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let model = GaussianToy::<f64>::with_defaults(2).unwrap();
        let err = run(
            &model,
            &RunConfig {
                xi: 1.5,
                ..RunConfig::default()
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("xi must lie in (0,1)"));
        assert!(run(
            &model,
            &RunConfig {
                n: 1,
                ..RunConfig::default()
            }
        )
        .is_err());
    }

    proptest::proptest! {
        #[test]
        fn ess_is_monotone_and_bisection_hits_target(
            v in proptest::collection::vec(-50.0f64..0.0, 2..200),
            tau_k in 0.0f64..0.9,
            xi in 0.1f64..0.9,
        ) {
            let v = lpv(&v);
            proptest::prop_assert_eq!(ess_after(&v, 0.0), 1.0);
            let grid: Vec<f64> = (0..=20).map(|k| ess_after(&v, k as f64 / 20.0)).collect();
            proptest::prop_assert!(grid.windows(2).all(|w| w[1] <= w[0] + 1e-12));
            let tau = next_temperature(tau_k, &v, xi).unwrap();
            proptest::prop_assert!(tau > tau_k && tau <= 1.0);
            if tau < 1.0 {
                proptest::prop_assert!((ess_after(&v, tau - tau_k) - xi).abs() <= 1e-6);
            }
        }
    }
}
