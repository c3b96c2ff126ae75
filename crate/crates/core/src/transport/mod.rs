//! Exact discrete optimal transport between two weightings of one particle
//! cloud, and the barycentric ensemble transform built on it.
//!
//! The transform maps an ensemble with weights `alpha` to the ensemble whose
//! particle `i` sits at the conditional mean `(1/alpha_i) sum_j C_ij u_j` of
//! the optimal coupling `C` between `alpha` and the target weights `beta`.
//! Outputs keep the weights `alpha`, so an equally weighted input stays
//! equally weighted.
//!
//! When several couplings are optimal (symmetric configurations) the solver
//! returns the one reached by its fixed pivot rule. Barycenters can differ
//! between tied optima; the objective cannot.

mod simplex;

use std::io::Write;

use rayon::prelude::*;

use crate::ensemble::{Ensemble, LogPotentialValues};
use crate::error::{Error, Result};
use crate::num::Real;

/// Couplings with mass below this are treated as pivoting dust and dropped.
pub const MASS_DROP_TOL: f64 = 1e-15;
/// Absolute tolerance for marginal and complementary-slackness checks.
pub const CERTIFICATE_TOL: f64 = 1e-9;

/// Dense row-major matrix of squared Euclidean distances.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<T> {
    entries: Vec<T>,
    rows: usize,
    cols: usize,
}

impl<T: Real> CostMatrix<T> {
    pub fn from_entries(entries: Vec<T>, rows: usize, cols: usize) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: entries.len(),
            });
        }
        if entries.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("non-finite cost entry".into()));
        }
        Ok(Self { entries, rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[i * self.cols + j]
    }

    pub fn max_entry(&self) -> T {
        self.entries.iter().fold(T::zero(), |acc, &c| acc.max(c.abs()))
    }
}

/// Quadratic cost `|u_i - u_j|^2` between all rows of a row-major point set.
pub fn build_cost_matrix<T: Real>(positions: &[T], dim: usize) -> CostMatrix<T> {
    let n = if dim == 0 { 0 } else { positions.len() / dim };
    let mut entries = vec![T::zero(); n * n];
    entries.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        let ui = &positions[i * dim..(i + 1) * dim];
        for (j, c) in row.iter_mut().enumerate() {
            let uj = &positions[j * dim..(j + 1) * dim];
            *c = ui.iter().zip(uj).map(|(&a, &b)| (a - b) * (a - b)).sum();
        }
    });
    CostMatrix {
        entries,
        rows: n,
        cols: n,
    }
}

/// Sparse optimal transport plan with its dual certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling<T> {
    /// `(row, col, mass)` with strictly positive mass, sorted by `(row, col)`.
    pub entries: Vec<(usize, usize, T)>,
    pub row_marginals: Vec<T>,
    pub col_marginals: Vec<T>,
    /// Row duals `u` and column duals `v`: `u_i + v_j <= c_ij`.
    pub row_potentials: Vec<T>,
    pub col_potentials: Vec<T>,
    pub objective: T,
    pub dual_objective: T,
    pub pivots: usize,
}

/// Measured violations of the optimality certificate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateReport {
    pub max_marginal_error: f64,
    pub max_dual_violation: f64,
    pub max_slackness_gap: f64,
    pub duality_gap: f64,
    pub support: usize,
}

impl<T: Real> Coupling<T> {
    pub fn support_size(&self) -> usize {
        self.entries.len()
    }

    /// Row sums and column sums of the stored masses.
    pub fn marginal_sums(&self) -> (Vec<T>, Vec<T>) {
        let mut rows = vec![T::zero(); self.row_marginals.len()];
        let mut cols = vec![T::zero(); self.col_marginals.len()];
        for &(i, j, c) in &self.entries {
            rows[i] = rows[i] + c;
            cols[j] = cols[j] + c;
        }
        (rows, cols)
    }

    /// Measure marginal feasibility, dual feasibility and complementary slackness.
    pub fn certificate(&self, cost: &CostMatrix<T>) -> CertificateReport {
        let (rows, cols) = self.marginal_sums();
        let marg = rows
            .iter()
            .zip(&self.row_marginals)
            .chain(cols.iter().zip(&self.col_marginals))
            .map(|(&a, &b)| (a - b).abs().to_f64_lossy())
            .fold(0.0, f64::max);
        let mut dual = 0.0_f64;
        for (i, &ui) in self.row_potentials.iter().enumerate() {
            for (j, &vj) in self.col_potentials.iter().enumerate() {
                dual = dual.max((ui + vj - cost.get(i, j)).to_f64_lossy());
            }
        }
        let slack = self
            .entries
            .iter()
            .map(|&(i, j, _)| {
                (cost.get(i, j) - self.row_potentials[i] - self.col_potentials[j])
                    .abs()
                    .to_f64_lossy()
            })
            .fold(0.0, f64::max);
        CertificateReport {
            max_marginal_error: marg,
            max_dual_violation: dual,
            max_slackness_gap: slack,
            duality_gap: (self.objective - self.dual_objective).abs().to_f64_lossy(),
            support: self.entries.len(),
        }
    }

    /// Check the certificate at [`CERTIFICATE_TOL`], with dual tolerances
    /// scaled by the largest cost entry.
    pub fn verify(&self, cost: &CostMatrix<T>) -> Result<CertificateReport> {
        let report = self.certificate(cost);
        let scale = cost.max_entry().to_f64_lossy().max(1.0);
        let marg_tol = CERTIFICATE_TOL.max(T::epsilon().to_f64_lossy() * 64.0 * self.row_marginals.len() as f64);
        let dual_tol = marg_tol * scale;
        let n = self.row_marginals.len() + self.col_marginals.len();
        if report.max_marginal_error > marg_tol {
            return Err(Error::Certificate(format!(
                "marginal error {:e}",
                report.max_marginal_error
            )));
        }
        if report.max_dual_violation > dual_tol {
            return Err(Error::Certificate(format!(
                "dual infeasibility {:e}",
                report.max_dual_violation
            )));
        }
        if report.max_slackness_gap > dual_tol {
            return Err(Error::Certificate(format!(
                "complementary slackness gap {:e}",
                report.max_slackness_gap
            )));
        }
        if report.duality_gap > dual_tol {
            return Err(Error::Certificate(format!("duality gap {:e}", report.duality_gap)));
        }
        if report.support + 1 > n.max(2) {
            return Err(Error::Certificate(format!(
                "support {} exceeds basis size",
                report.support
            )));
        }
        Ok(report)
    }

    /// Sparse triplet CSV `i,j,mass`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "i,j,mass")?;
        for (i, j, c) in &self.entries {
            writeln!(out, "{i},{j},{c}")?;
        }
        Ok(())
    }
}

fn check_marginal<T: Real>(name: &str, w: &[T]) -> Result<T> {
    if let Some(x) = w.iter().find(|x| !x.is_finite() || **x < T::zero()) {
        return Err(Error::InvalidMarginal(format!("{name} has entry {x}")));
    }
    Ok(w.iter().copied().sum())
}

/// Exact minimizer of `sum C_ij c_ij` over couplings of `alpha` and `beta`.
///
/// Every returned coupling has been checked against its dual certificate.
pub fn solve_discrete_ot<T: Real>(cost: &CostMatrix<T>, alpha: &[T], beta: &[T]) -> Result<Coupling<T>> {
    let (m, n) = (cost.rows, cost.cols);
    if alpha.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: alpha.len(),
        });
    }
    if beta.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: beta.len(),
        });
    }
    let sa = check_marginal("alpha", alpha)?;
    let sb = check_marginal("beta", beta)?;
    let tol = T::lit(1e-12).max(T::epsilon() * T::count(4 * (m + n)));
    if (sa - T::one()).abs() > tol || (sb - T::one()).abs() > tol || (sa - sb).abs() > tol {
        return Err(Error::MarginalMismatch {
            rows: sa.to_f64_lossy(),
            cols: sb.to_f64_lossy(),
        });
    }

    let basis = simplex::solve(&cost.entries, m, n, alpha, beta)?;
    let flow_tol = T::lit(CERTIFICATE_TOL).max(T::epsilon() * T::count(64 * m.max(n)));
    if basis.artificial_flow > flow_tol {
        return Err(Error::SolverFailure(format!(
            "artificial arcs still carry mass {:e}",
            basis.artificial_flow
        )));
    }

    let drop = T::lit(MASS_DROP_TOL);
    let mut entries: Vec<(usize, usize, T)> = Vec::with_capacity(basis.arcs.len());
    for &(i, j, f) in &basis.arcs {
        if f < -flow_tol {
            return Err(Error::Certificate(format!("negative flow {f} on ({i},{j})")));
        }
        if f > drop {
            entries.push((i, j, f));
        }
    }
    entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let objective = entries.iter().map(|&(i, j, f)| f * cost.get(i, j)).sum();
    let dual_objective = alpha.iter().zip(&basis.u).map(|(&a, &u)| a * u).sum::<T>()
        + beta.iter().zip(&basis.v).map(|(&b, &v)| b * v).sum::<T>();
    let coupling = Coupling {
        entries,
        row_marginals: alpha.to_vec(),
        col_marginals: beta.to_vec(),
        row_potentials: basis.u,
        col_potentials: basis.v,
        objective,
        dual_objective,
        pivots: basis.pivots,
    };
    coupling.verify(cost)?;
    Ok(coupling)
}

/// Barycentric projection of the optimal coupling between the ensemble's
/// weights and `beta`. Output weights equal the input weights.
pub fn ensemble_transform<T: Real>(e: &Ensemble<T>, beta: &[T]) -> Result<Ensemble<T>> {
    let cost = build_cost_matrix(e.positions(), e.dim());
    let alpha = e.weights();
    let coupling = solve_discrete_ot(&cost, &alpha, beta)?;
    let positions = barycenters(e, &coupling);
    e.with_positions(positions)
}

/// `u_i' = (1/alpha_i) sum_j C_ij u_j`, clamped into the per-coordinate hull.
pub fn barycenters<T: Real>(e: &Ensemble<T>, coupling: &Coupling<T>) -> Vec<T> {
    let dim = e.dim();
    let mut out = vec![T::zero(); e.len() * dim];
    let mut mass = vec![T::zero(); e.len()];
    for &(i, j, c) in &coupling.entries {
        mass[i] = mass[i] + c;
        let src = e.particle(j);
        for (o, &x) in out[i * dim..(i + 1) * dim].iter_mut().zip(src) {
            *o = *o + c * x;
        }
    }
    let mut lo = vec![T::infinity(); dim];
    let mut hi = vec![T::neg_infinity(); dim];
    for row in e.rows() {
        for d in 0..dim {
            lo[d] = lo[d].min(row[d]);
            hi[d] = hi[d].max(row[d]);
        }
    }
    for (i, row) in out.chunks_exact_mut(dim).enumerate() {
        // Normalizing by the realized row mass keeps each output an exact convex combination.
        let a = mass[i];
        for (d, x) in row.iter_mut().enumerate() {
            let y = if a > T::zero() { *x / a } else { e.particle(i)[d] };
            *x = y.max(lo[d]).min(hi[d]);
        }
    }
    out
}

/// Reweight by `exp(dtau * dV)` then transport back to the input weights.
pub fn apply_bayes_transform<T: Real>(e: &Ensemble<T>, dv: &LogPotentialValues<T>, dtau: T) -> Result<Ensemble<T>> {
    let target = e.reweight(dv, dtau)?;
    ensemble_transform(e, &target.weights())
}
