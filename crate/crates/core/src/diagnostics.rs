//! Accuracy metrics, reference moments and repeated-run aggregation.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::models::TargetModel;
use crate::num::Real;
use crate::rng::{Component, StreamSeed};
use crate::tempering::{run, Method, RunConfig};

/// Where a set of reference moments came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Analytic,
    Mcmc {
        chain_length: usize,
        burn_in: usize,
        seed: u64,
        /// pCN step size after adaptation.
        beta: f64,
        acceptance_rate: f64,
        /// Smallest per-coordinate effective sample size (batch means).
        min_ess: f64,
        warning: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMoments {
    pub mean: Vec<f64>,
    pub diag_variance: Vec<f64>,
    pub provenance: Provenance,
}

impl ReferenceMoments {
    pub fn new(mean: Vec<f64>, diag_variance: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if mean.len() != diag_variance.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: diag_variance.len(),
            });
        }
        if let Some(v) = diag_variance.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "reference variance {v} must be positive"
            )));
        }
        Ok(Self {
            mean,
            diag_variance,
            provenance,
        })
    }

    /// Analytic moments of a model, when it has them.
    pub fn analytic<T: Real, M: TargetModel<T> + ?Sized>(model: &M) -> Option<Result<Self>> {
        model.exact_moments().map(|(m, v)| {
            let f = |x: Vec<T>| x.into_iter().map(|y| y.to_f64_lossy()).collect();
            Self::new(f(m), f(v), Provenance::Analytic)
        })
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::new(m.mean, m.diag_variance, m.provenance)
    }
}

fn check_dim<T: Real>(e: &Ensemble<T>, r: &ReferenceMoments) -> Result<()> {
    if e.dim() != r.dimension() {
        return Err(Error::DimensionMismatch {
            expected: r.dimension(),
            got: e.dim(),
        });
    }
    Ok(())
}

/// `|mean(e) - m| / |m|`, or `|mean(e)|` when the reference mean is zero.
pub fn rmse_mean<T: Real>(e: &Ensemble<T>, reference: &ReferenceMoments) -> Result<f64> {
    check_dim(e, reference)?;
    let est = e.weighted_mean();
    let err: f64 = est
        .iter()
        .zip(&reference.mean)
        .map(|(&a, &b)| (a.to_f64_lossy() - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm = reference.mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(if norm > 0.0 { err / norm } else { err })
}

/// `R = (1/D) sum_d var_d(e) / sigma_d^2` with population variances.
pub fn variance_ratio<T: Real>(e: &Ensemble<T>, reference: &ReferenceMoments) -> Result<f64> {
    check_dim(e, reference)?;
    let var = e.weighted_diag_variance();
    let total: f64 = var
        .iter()
        .zip(&reference.diag_variance)
        .map(|(&a, &b)| a.to_f64_lossy() / b)
        .sum();
    Ok(total / reference.dimension() as f64)
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub const DEFAULT_CHAIN_LENGTH: usize = 200_000;
pub const MIN_CHAIN_LENGTH: usize = 10_000;
pub const DEFAULT_BURN_IN_FRACTION: f64 = 0.2;
const ADAPT_WINDOW: usize = 100;
const BATCHES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub chain_length: usize,
    pub burn_in_fraction: f64,
    pub seed: u64,
    pub beta0: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            chain_length: DEFAULT_CHAIN_LENGTH,
            burn_in_fraction: DEFAULT_BURN_IN_FRACTION,
            seed: 2019,
            beta0: 0.5,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chain_length < MIN_CHAIN_LENGTH {
            return Err(Error::InvalidParameter(format!(
                "chain_length must be at least {MIN_CHAIN_LENGTH}"
            )));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::InvalidParameter("burn_in_fraction must lie in [0,1)".into()));
        }
        if !(self.beta0 > 0.0 && self.beta0 <= 1.0) {
            return Err(Error::InvalidParameter("beta0 must lie in (0,1]".into()));
        }
        Ok(())
    }
}

/// pCN move `u' = m0 + sqrt(1 - beta^2) (u - m0) + beta (xi - m0)` with
/// `xi` a draw from the Gaussian initial law.
pub fn pcn_propose<T: Real>(u: &[T], xi: &[T], m0: &[T], beta: T) -> Vec<T> {
    let c = (T::one() - beta * beta).max(T::zero()).sqrt();
    u.iter()
        .zip(xi)
        .zip(m0)
        .map(|((&x, &z), &m)| m + c * (x - m) + beta * (z - m))
        .collect()
}

/// Reference moments from a pCN chain. The initial law must be Gaussian
/// (the model reports its mean), since pCN is reversible with respect to it
/// and the acceptance ratio then involves only `V`.
pub fn mcmc_reference<T: Real, M: TargetModel<T> + ?Sized>(
    model: &M,
    config: &OracleConfig,
) -> Result<ReferenceMoments> {
    config.validate()?;
    let m0 = model
        .initial_mean()
        .ok_or_else(|| Error::InvalidParameter("pCN oracle needs a Gaussian initial law".into()))?;
    let dim = model.dimension();
    let burn_in = (config.chain_length as f64 * config.burn_in_fraction) as usize;
    let kept = config.chain_length - burn_in;
    let batch = kept / BATCHES;
    if batch == 0 {
        return Err(Error::InvalidParameter("chain too short after burn-in".into()));
    }

    let mut rng = StreamSeed::new(config.seed).stream(Component::Oracle, 0, 0, 0);
    let mut u = model.sample_initial(&mut rng);
    let mut v = model.log_potential(&u)?;
    let mut beta = T::lit(config.beta0);
    let (mut window_acc, mut kept_acc) = (0usize, 0usize);

    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    let mut batch_sum = vec![0.0; dim];
    let mut batch_means: Vec<Vec<f64>> = Vec::with_capacity(BATCHES);

    for t in 0..config.chain_length {
        let xi = model.sample_initial(&mut rng);
        let prop = pcn_propose(&u, &xi, &m0, beta);
        let log_u: f64 = rng.random::<f64>().ln();
        let accepted = match model.log_potential(&prop) {
            Ok(vp) if vp.is_finite() && log_u < (vp - v).to_f64_lossy() => {
                u = prop;
                v = vp;
                true
            }
            Ok(_) => false,
            Err(err) => {
                log::warn!("oracle step {t}: model evaluation failed ({err}); proposal rejected");
                false
            }
        };
        if t < burn_in {
            window_acc += usize::from(accepted);
            if (t + 1) % ADAPT_WINDOW == 0 {
                let rate = window_acc as f64 / ADAPT_WINDOW as f64;
                if rate < crate::mutation::ACCEPT_LOW {
                    beta = beta / T::lit(2.0);
                } else if rate > crate::mutation::ACCEPT_HIGH {
                    beta = (beta * T::lit(2.0)).min(T::one());
                }
                window_acc = 0;
            }
            continue;
        }
        let idx = t - burn_in;
        if idx >= batch * BATCHES {
            continue;
        }
        kept_acc += usize::from(accepted);
        for d in 0..dim {
            let x = u[d].to_f64_lossy();
            sum[d] += x;
            sum_sq[d] += x * x;
            batch_sum[d] += x;
        }
        if (idx + 1) % batch == 0 {
            batch_means.push(batch_sum.iter().map(|s| s / batch as f64).collect());
            batch_sum.iter_mut().for_each(|s| *s = 0.0);
        }
    }

    let n = (batch * BATCHES) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let var: Vec<f64> = sum_sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| (s / n - m * m).max(0.0))
        .collect();
    let mut min_ess = f64::INFINITY;
    for d in 0..dim {
        let bvar = batch_means.iter().map(|b| (b[d] - mean[d]).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
        // Batch-means estimate: ess = n var / (batch * var(batch means)).
        let ess = if bvar > 0.0 {
            n * var[d] / (batch as f64 * bvar)
        } else {
            n
        };
        min_ess = min_ess.min(ess.min(n));
    }
    let acceptance_rate = kept_acc as f64 / n;
    let warning = if !(0.05..=0.9).contains(&acceptance_rate) {
        let msg = format!("OracleQuality: post-adaptation acceptance rate {acceptance_rate:.3} outside [0.05, 0.9]");
        log::warn!("{msg}");
        Some(msg)
    } else {
        None
    };
    ReferenceMoments::new(
        mean,
        var,
        Provenance::Mcmc {
            chain_length: config.chain_length,
            burn_in,
            seed: config.seed,
            beta: beta.to_f64_lossy(),
            acceptance_rate,
            min_ess,
            warning,
        },
    )
}

/// Metrics of a single run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub rmse_mean: f64,
    pub variance_ratio: f64,
    pub steps: usize,
    pub solves: usize,
}

/// Per-configuration summary over independent seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub method: Method,
    pub n: usize,
    pub p: usize,
    pub n_runs: usize,
    pub rmse_mean_avg: f64,
    pub rmse_mean_std: f64,
    pub r_avg: f64,
    pub r_std: f64,
    pub k_avg: f64,
    pub solves_avg: f64,
}

pub const AGGREGATE_HEADER: &str = "method,N,p,n_runs,rmse_mean_avg,rmse_mean_std,R_avg,R_std,K_avg,solves_avg";

impl AggregateRow {
    pub fn from_metrics(config: &RunConfig, runs: &[RunMetrics]) -> Self {
        let stats = |f: &dyn Fn(&RunMetrics) -> f64| {
            let k = runs.len() as f64;
            let mean = runs.iter().map(f).sum::<f64>() / k;
            let var = if runs.len() > 1 {
                runs.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            (mean, var.sqrt())
        };
        let (rmse_mean_avg, rmse_mean_std) = stats(&|r| r.rmse_mean);
        let (r_avg, r_std) = stats(&|r| r.variance_ratio);
        Self {
            method: config.method,
            n: config.n,
            p: config.p,
            n_runs: runs.len(),
            rmse_mean_avg,
            rmse_mean_std,
            r_avg,
            r_std,
            k_avg: stats(&|r| r.steps as f64).0,
            solves_avg: stats(&|r| r.solves as f64).0,
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.method,
            self.n,
            self.p,
            self.n_runs,
            self.rmse_mean_avg,
            self.rmse_mean_std,
            self.r_avg,
            self.r_std,
            self.k_avg,
            self.solves_avg
        )
    }
}

pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], mut out: W) -> Result<()> {
    writeln!(out, "{AGGREGATE_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(())
}

/// Outcome of `n_runs` independent runs with seeds `seed, seed + 1, ...`.
#[derive(Debug, Clone)]
pub struct RepeatSummary {
    pub runs: Vec<RunMetrics>,
    /// Seeds whose run failed, with the error message.
    pub failures: Vec<(u64, String)>,
    pub aggregate: AggregateRow,
}

pub fn repeat_runs<T: Real, M: TargetModel<T> + ?Sized>(
    model: &M,
    config: &RunConfig,
    n_runs: usize,
    reference: &ReferenceMoments,
) -> Result<RepeatSummary> {
    config.validate()?;
    if n_runs == 0 {
        return Err(Error::InvalidParameter("n_runs must be positive".into()));
    }
    let outcomes: Vec<(u64, Result<RunMetrics>)> = (0..n_runs as u64)
        .into_par_iter()
        .map(|k| {
            let seed = config.seed.wrapping_add(k);
            let cfg = RunConfig { seed, ..*config };
            let metrics = run::<T, M>(model, &cfg).and_then(|r| {
                Ok(RunMetrics {
                    seed,
                    rmse_mean: rmse_mean(&r.ensemble, reference)?,
                    variance_ratio: variance_ratio(&r.ensemble, reference)?,
                    steps: r.steps(),
                    solves: r.solves,
                })
            });
            (seed, metrics)
        })
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, m) in outcomes {
        match m {
            Ok(m) => runs.push(m),
            Err(e) => {
                log::warn!("run with seed {seed} failed: {e}");
                failures.push((seed, e.to_string()));
            }
        }
    }
    if runs.is_empty() {
        return Err(Error::ModelEvaluation(format!("all {n_runs} runs failed")));
    }
    let aggregate = AggregateRow::from_metrics(config, &runs);
    Ok(RepeatSummary {
        runs,
        failures,
        aggregate,
    })
}
