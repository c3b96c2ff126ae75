//! Weighted particle ensembles and log-space weight arithmetic.

use std::io::Write;

use crate::error::{Error, Result};
use crate::num::{log_sum_exp, Real};

/// Normalize raw log-weights so that they exponentiate to a probability vector.
///
/// Shift invariant; fails with [`Error::WeightCollapse`] when no entry is finite.
pub fn normalize_log_weights<T: Real>(raw: &[T]) -> Result<Vec<T>> {
    let lse = log_sum_exp(raw);
    if !lse.is_finite() {
        return Err(Error::WeightCollapse);
    }
    Ok(raw.iter().map(|&x| x - lse).collect())
}

/// ESS of a set of log-weights (normalized or not), divided by the particle count.
///
/// Computed as `(sum w)^2 / (N sum w^2)` with `w = exp(l - max l)`, so every
/// `w <= 1` and equal weights give exactly 1.
pub fn ess_of_log_weights<T: Real>(log_weights: &[T]) -> T {
    let n = T::count(log_weights.len());
    let top = log_weights.iter().copied().fold(T::neg_infinity(), T::max);
    if !top.is_finite() {
        return T::zero();
    }
    let (s1, s2) = log_weights.iter().fold((T::zero(), T::zero()), |(a, b), &l| {
        let w = (l - top).exp();
        (a + w, b + w * w)
    });
    (s1 * s1 / (n * s2)).min(T::one())
}

/// Per-particle log-potential values `V(u_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPotentialValues<T> {
    values: Vec<T>,
}

impl<T: Real> LogPotentialValues<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if let Some((index, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidPotential {
                index,
                value: v.to_f64_lossy(),
            });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Reorder along resampling indices.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            values: indices.iter().map(|&i| self.values[i]).collect(),
        }
    }
}

/// N particles in R^D with normalized log-weights.
///
/// Positions are row-major, one particle per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<T> {
    positions: Vec<T>,
    log_weights: Vec<T>,
    dim: usize,
}

impl<T: Real> Ensemble<T> {
    /// Build from row-major positions and unnormalized log-weights.
    pub fn new(positions: Vec<T>, dim: usize, log_weights: Vec<T>) -> Result<Self> {
        let n = log_weights.len();
        if dim == 0 || n == 0 {
            return Err(Error::InvalidParameter("ensemble needs N >= 1 and D >= 1".into()));
        }
        if positions.len() != n * dim {
            return Err(Error::DimensionMismatch {
                expected: n * dim,
                got: positions.len(),
            });
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite particle coordinate".into()));
        }
        if log_weights.iter().any(|&l| l.is_nan() || l == T::infinity()) {
            return Err(Error::InvalidParameter("invalid log-weight".into()));
        }
        let log_weights = normalize_log_weights(&log_weights)?;
        if log_weights.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidParameter("zero-weight particle".into()));
        }
        Ok(Self {
            positions,
            log_weights,
            dim,
        })
    }

    /// Equally weighted ensemble.
    pub fn uniform(positions: Vec<T>, dim: usize) -> Result<Self> {
        let n = if dim == 0 { 0 } else { positions.len() / dim };
        Self::new(positions, dim, vec![T::zero(); n])
    }

    /// Equally weighted ensemble from a list of rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidParameter("ragged particle rows".into()));
        }
        Self::uniform(rows.concat(), dim)
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn positions(&self) -> &[T] {
        &self.positions
    }

    pub fn particle(&self, i: usize) -> &[T] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.positions.chunks_exact(self.dim)
    }

    pub fn log_weights(&self) -> &[T] {
        &self.log_weights
    }

    pub fn weights(&self) -> Vec<T> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    pub fn is_equally_weighted(&self) -> bool {
        let target = -T::count(self.len()).ln();
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(16.0));
        self.log_weights
            .iter()
            .all(|&l| (l - target).abs() <= tol * (T::one() + target.abs()))
    }

    /// Same weights, new positions.
    pub fn with_positions(&self, positions: Vec<T>) -> Result<Self> {
        Self::new(positions, self.dim, self.log_weights.clone())
    }

    /// Equally weighted copy of the particles selected by `indices`.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut positions = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            positions.extend_from_slice(self.particle(i));
        }
        Self::uniform(positions, self.dim)
    }

    /// Bayes reweighting by `exp(dtau * dV)`.
    pub fn reweight(&self, potentials: &LogPotentialValues<T>, dtau: T) -> Result<Self> {
        if potentials.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: potentials.len(),
            });
        }
        if !dtau.is_finite() || dtau < T::zero() {
            return Err(Error::InvalidParameter(format!(
                "temperature increment {dtau} must be finite and >= 0"
            )));
        }
        let raw: Vec<T> = self
            .log_weights
            .iter()
            .zip(potentials.values())
            .map(|(&l, &v)| l + dtau * v)
            .collect();
        let log_weights = normalize_log_weights(&raw)?;
        if log_weights.iter().any(|l| !l.is_finite()) {
            return Err(Error::WeightCollapse);
        }
        Ok(Self {
            positions: self.positions.clone(),
            log_weights,
            dim: self.dim,
        })
    }

    /// Effective sample size normalized by N, in (0, 1].
    pub fn ess(&self) -> T {
        ess_of_log_weights(&self.log_weights)
    }

    pub fn weighted_mean(&self) -> Vec<T> {
        let mut mean = vec![T::zero(); self.dim];
        for (row, l) in self.rows().zip(&self.log_weights) {
            let w = l.exp();
            for (m, &x) in mean.iter_mut().zip(row) {
                *m = *m + w * x;
            }
        }
        mean
    }

    /// Population (1/N-normalized) marginal variances. Clamped at zero.
    pub fn weighted_diag_variance(&self) -> Vec<T> {
        let mean = self.weighted_mean();
        // Centered accumulation avoids cancellation in `E[x^2] - E[x]^2`.
        let mut var = vec![T::zero(); self.dim];
        for (row, l) in self.rows().zip(&self.log_weights) {
            let w = l.exp();
            for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                let d = x - m;
                *v = *v + w * d * d;
            }
        }
        var.into_iter().map(|v| v.max(T::zero())).collect()
    }

    /// Snapshot as CSV: `particle_id,w,x_0,...,x_{D-1}`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "particle_id,w")?;
        for d in 0..self.dim {
            write!(out, ",x_{d}")?;
        }
        writeln!(out)?;
        for (i, (row, l)) in self.rows().zip(&self.log_weights).enumerate() {
            write!(out, "{i},{}", l.exp())?;
            for x in row {
                write!(out, ",{x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}
