//! Elliptic inverse problem on the unit square.
//!
//! Forward model: `-div(e^u grad w) = 0` with a unit inflow flux on the
//! bottom edge and Robin outflow `-e^u grad w . n = Bi w` on the other three
//! edges. Discretized with bilinear elements on the uniform nodal grid; the
//! conductivity is constant per cell, the mean of `e^u` over its corners.
//! Node `(ix, iy)` at `(ix h, iy h)` has index `iy * n + ix`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::BandMatrix;
use crate::models::{GaussianFieldPrior, TargetModel};
use crate::num::Real;
use crate::rng::{standard_normals, Component, StreamSeed};

/// Coordinates the sampler works in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameterization {
    /// Standard normal coefficients of the prior eigenbasis; the prior is `N(0, I)`.
    #[default]
    Whitened,
    /// Nodal values of the log-conductivity field.
    Nodal,
}

/// Parameters of the synthetic elliptic experiment. Every field has a
/// default; the defaults are the versioned fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EllipticConfig {
    /// Nodes per side.
    pub grid: usize,
    pub biot: f64,
    /// Observation lattice is `obs_lattice x obs_lattice` at `k / (obs_lattice + 1)`.
    pub obs_lattice: usize,
    /// Noise standard deviation as a fraction of `max |G(u_true)|`.
    pub noise_fraction: f64,
    /// Amplitude of the true field `A sin(pi x) sin(pi y)`.
    pub amplitude: f64,
    pub prior_delta: f64,
    pub prior_gamma: f64,
    pub prior_s: f64,
    /// Seed for the observation noise.
    pub data_seed: u64,
    pub parameterization: Parameterization,
}

impl Default for EllipticConfig {
    fn default() -> Self {
        Self {
            grid: 10,
            biot: 0.1,
            obs_lattice: 5,
            noise_fraction: 0.05,
            amplitude: 1.0,
            prior_delta: 1.0,
            prior_gamma: 0.1,
            prior_s: 2.0,
            data_seed: 2019,
            parameterization: Parameterization::Whitened,
        }
    }
}

impl EllipticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.grid < 3 {
            return bad("grid must have at least 3 nodes per side");
        }
        if !(self.biot > 0.0) {
            return bad("biot must be > 0");
        }
        if self.obs_lattice == 0 {
            return bad("obs_lattice must be >= 1");
        }
        if !(self.noise_fraction > 0.0) {
            return bad("noise_fraction must be > 0");
        }
        if !(self.prior_delta > 0.0) || !(self.prior_gamma > 0.0) || !(self.prior_s > 1.0) {
            return bad("prior requires delta > 0, gamma > 0, s > 1");
        }
        if !self.amplitude.is_finite() {
            return bad("amplitude must be finite");
        }
        Ok(())
    }

    pub fn observation_points(&self) -> Vec<[f64; 2]> {
        let m = self.obs_lattice;
        let step = 1.0 / (m + 1) as f64;
        let mut pts = Vec::with_capacity(m * m);
        for j in 1..=m {
            for i in 1..=m {
                pts.push([i as f64 * step, j as f64 * step]);
            }
        }
        pts
    }
}

/// Bilinear finite-element solver for the forward problem.
#[derive(Debug, Clone)]
pub struct ForwardSolver {
    n: usize,
    biot: f64,
}

impl ForwardSolver {
    pub fn new(n: usize, biot: f64) -> Result<Self> {
        if n < 2 || !(biot > 0.0) {
            return Err(Error::InvalidParameter("forward solver needs n >= 2 and Bi > 0".into()));
        }
        Ok(Self { n, biot })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.n - 1) as f64
    }

    pub fn biot(&self) -> f64 {
        self.biot
    }

    /// Assemble the stiffness plus Robin boundary matrix and the inflow load.
    pub fn assemble<T: Real>(&self, u: &[T]) -> Result<(BandMatrix<T>, Vec<T>)> {
        let n = self.n;
        if u.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: u.len(),
            });
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::ModelEvaluation("non-finite parameter field".into()));
        }
        let h = T::lit(self.spacing());
        let bi = T::lit(self.biot);
        let mut a = BandMatrix::zeros(n * n, n + 1);
        let mut b = vec![T::zero(); n * n];
        let ku: Vec<T> = u.iter().map(|x| x.exp()).collect();

        // Unit square element, corners (0,0) (1,0) (1,1) (0,1); scale-free in 2D.
        const LOCAL: [[f64; 4]; 4] = [
            [4.0, -1.0, -2.0, -1.0],
            [-1.0, 4.0, -1.0, -2.0],
            [-2.0, -1.0, 4.0, -1.0],
            [-1.0, -2.0, -1.0, 4.0],
        ];
        let sixth = T::one() / T::lit(6.0);
        for cy in 0..n - 1 {
            for cx in 0..n - 1 {
                let nodes = [cy * n + cx, cy * n + cx + 1, (cy + 1) * n + cx + 1, (cy + 1) * n + cx];
                let k = nodes.iter().map(|&i| ku[i]).sum::<T>() / T::lit(4.0);
                for (p, &ip) in nodes.iter().enumerate() {
                    for (q, &iq) in nodes.iter().enumerate() {
                        if iq <= ip {
                            a.add(ip, iq, k * sixth * T::lit(LOCAL[p][q]));
                        }
                    }
                }
            }
        }

        let half = h / T::lit(2.0);
        for e in 0..n - 1 {
            // Bottom edge: inflow load.
            b[e] = b[e] + half;
            b[e + 1] = b[e + 1] + half;
            // Robin edges: left, right, top.
            for (p, q) in [
                (e * n, (e + 1) * n),
                (e * n + n - 1, (e + 1) * n + n - 1),
                ((n - 1) * n + e, (n - 1) * n + e + 1),
            ] {
                let m = bi * h * sixth;
                a.add(p, p, m * T::lit(2.0));
                a.add(q, q, m * T::lit(2.0));
                let (hi, lo) = if p > q { (p, q) } else { (q, p) };
                a.add(hi, lo, m);
            }
        }
        Ok((a, b))
    }

    pub fn solve<T: Real>(&self, u: &[T]) -> Result<Vec<T>> {
        let (a, b) = self.assemble(u)?;
        let w = a.solve(&b)?;
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::SolverFailure("non-finite state".into()));
        }
        Ok(w)
    }

    /// Bilinear interpolation of a nodal field at `(x, y)`.
    pub fn interpolate<T: Real>(&self, w: &[T], x: f64, y: f64) -> T {
        let n = self.n;
        let h = self.spacing();
        let fx = (x / h).clamp(0.0, (n - 1) as f64);
        let fy = (y / h).clamp(0.0, (n - 1) as f64);
        let cx = (fx.floor() as usize).min(n - 2);
        let cy = (fy.floor() as usize).min(n - 2);
        let (sx, sy) = (T::lit(fx - cx as f64), T::lit(fy - cy as f64));
        let one = T::one();
        let at = |ix: usize, iy: usize| w[iy * n + ix];
        at(cx, cy) * (one - sx) * (one - sy)
            + at(cx + 1, cy) * sx * (one - sy)
            + at(cx + 1, cy + 1) * sx * sy
            + at(cx, cy + 1) * (one - sx) * sy
    }

    /// Discrete Robin outflow `Bi * sum_edges int w ds` (trapezoid-exact for
    /// the consistent boundary mass) and the inflow length `|Gamma_R|`.
    pub fn boundary_balance<T: Real>(&self, w: &[T]) -> (T, T) {
        let n = self.n;
        let h = T::lit(self.spacing());
        let half = h / T::lit(2.0);
        let mut out = T::zero();
        for e in 0..n - 1 {
            for (p, q) in [
                (e * n, (e + 1) * n),
                (e * n + n - 1, (e + 1) * n + n - 1),
                ((n - 1) * n + e, (n - 1) * n + e + 1),
            ] {
                out = out + half * (w[p] + w[q]);
            }
        }
        (T::lit(self.biot) * out, T::count(n - 1) * h)
    }
}

/// Manifest written alongside fixture CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureManifest {
    pub config: EllipticConfig,
    pub noise_sd: f64,
    pub observations: usize,
    pub flux_edge: String,
    pub true_field: String,
    pub generator: String,
}

/// Posterior over the log-conductivity field given noisy point values of `w`.
#[derive(Debug, Clone)]
pub struct EllipticInverse<T> {
    config: EllipticConfig,
    solver: ForwardSolver,
    points: Vec<[f64; 2]>,
    data: Vec<T>,
    noise_sd: T,
    prior: GaussianFieldPrior<T>,
    true_field: Vec<T>,
}

impl<T: Real> EllipticInverse<T> {
    /// Generate synthetic data from `A sin(pi x) sin(pi y)` with Gaussian noise.
    pub fn synthetic(config: EllipticConfig) -> Result<Self> {
        config.validate()?;
        let n = config.grid;
        let solver = ForwardSolver::new(n, config.biot)?;
        let h = solver.spacing();
        let truth: Vec<f64> = (0..n * n)
            .map(|i| {
                let (ix, iy) = (i % n, i / n);
                config.amplitude
                    * (std::f64::consts::PI * ix as f64 * h).sin()
                    * (std::f64::consts::PI * iy as f64 * h).sin()
            })
            .collect();
        let points = config.observation_points();
        let w = solver.solve(&truth)?;
        let clean: Vec<f64> = points.iter().map(|p| solver.interpolate(&w, p[0], p[1])).collect();
        let scale = clean.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let noise_sd = config.noise_fraction * scale;
        let mut rng = StreamSeed::new(config.data_seed).stream(Component::Fixture, 0, 0, 0);
        let eta: Vec<f64> = standard_normals(&mut rng, points.len());
        let data: Vec<f64> = clean.iter().zip(&eta).map(|(g, e)| g + noise_sd * e).collect();
        Self::from_parts(config, points, data, noise_sd, truth)
    }

    pub fn from_parts(
        config: EllipticConfig,
        points: Vec<[f64; 2]>,
        data: Vec<f64>,
        noise_sd: f64,
        truth: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let n = config.grid;
        if points.len() != data.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: data.len(),
            });
        }
        if points
            .iter()
            .any(|p| !(p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0))
        {
            return Err(Error::InvalidParameter("observation points must be interior".into()));
        }
        if !(noise_sd > 0.0) {
            return Err(Error::InvalidParameter("noise level must be > 0".into()));
        }
        let prior = GaussianFieldPrior::new(
            n,
            T::lit(config.prior_delta),
            T::lit(config.prior_gamma),
            T::lit(config.prior_s),
            vec![T::zero(); n * n],
        )?;
        Ok(Self {
            solver: ForwardSolver::new(n, config.biot)?,
            config,
            points,
            data: data.into_iter().map(T::lit).collect(),
            noise_sd: T::lit(noise_sd),
            prior,
            true_field: truth.into_iter().map(T::lit).collect(),
        })
    }

    pub fn config(&self) -> &EllipticConfig {
        &self.config
    }

    pub fn solver(&self) -> &ForwardSolver {
        &self.solver
    }

    pub fn prior(&self) -> &GaussianFieldPrior<T> {
        &self.prior
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn noise_sd(&self) -> T {
        self.noise_sd
    }

    pub fn observation_points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn true_field(&self) -> &[T] {
        &self.true_field
    }

    /// Nodal log-conductivity field for sampler coordinates `x`.
    pub fn field(&self, x: &[T]) -> Vec<T> {
        match self.config.parameterization {
            Parameterization::Whitened => self.prior.from_whitened(x),
            Parameterization::Nodal => x.to_vec(),
        }
    }

    pub fn solve_forward(&self, u: &[T]) -> Result<Vec<T>> {
        self.solver.solve(u)
    }

    pub fn observe(&self, w: &[T]) -> Vec<T> {
        self.points
            .iter()
            .map(|p| self.solver.interpolate(w, p[0], p[1]))
            .collect()
    }

    /// `-|d - G(u)|^2 / (2 lambda^2)`.
    pub fn pde_log_potential(&self, u: &[T]) -> Result<T> {
        let g = self.observe(&self.solve_forward(u)?);
        Ok(self.log_potential_of_observables(&g))
    }

    pub fn log_potential_of_observables(&self, g: &[T]) -> T {
        let lam2 = self.noise_sd * self.noise_sd;
        let ss: T = self.data.iter().zip(g).map(|(&d, &x)| (d - x) * (d - x)).sum();
        -ss / (T::lit(2.0) * lam2)
    }

    /// Write `manifest.json`, `observations.csv` and `true_field.csv`.
    pub fn write_fixture(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = FixtureManifest {
            config: self.config.clone(),
            noise_sd: self.noise_sd.to_f64_lossy(),
            observations: self.points.len(),
            flux_edge: "bottom".into(),
            true_field: "amplitude * sin(pi x) * sin(pi y)".into(),
            generator: format!("set-core {}", env!("CARGO_PKG_VERSION")),
        };
        let mut json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
        json.push('\n');
        fs::write(dir.join("manifest.json"), json)?;

        let mut obs = Vec::new();
        writeln!(obs, "x,y,d")?;
        for (p, d) in self.points.iter().zip(&self.data) {
            writeln!(obs, "{},{},{}", p[0], p[1], d)?;
        }
        fs::write(dir.join("observations.csv"), obs)?;

        let n = self.config.grid;
        let h = self.solver.spacing();
        let mut truth = Vec::new();
        writeln!(truth, "node,x,y,u")?;
        for (i, u) in self.true_field.iter().enumerate() {
            writeln!(truth, "{i},{},{},{u}", (i % n) as f64 * h, (i / n) as f64 * h)?;
        }
        fs::write(dir.join("true_field.csv"), truth)?;
        Ok(())
    }

    pub fn load_fixture(dir: &Path) -> Result<Self> {
        let manifest: FixtureManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
            .map_err(|e| Error::Parse(format!("manifest.json: {e}")))?;
        let rows = read_csv_rows(&dir.join("observations.csv"), 3)?;
        let points = rows.iter().map(|r| [r[0], r[1]]).collect();
        let data = rows.iter().map(|r| r[2]).collect();
        let truth = read_csv_rows(&dir.join("true_field.csv"), 4)?
            .iter()
            .map(|r| r[3])
            .collect();
        Self::from_parts(manifest.config, points, data, manifest.noise_sd, truth)
    }
}

fn read_csv_rows(path: &Path, cols: usize) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            if vals.len() != cols {
                return Err(Error::Parse(format!("{}: expected {cols} columns", path.display())));
            }
            Ok(vals)
        })
        .collect()
}

impl<T: Real> TargetModel<T> for EllipticInverse<T> {
    fn dimension(&self) -> usize {
        self.prior.dimension()
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> Vec<T> {
        match self.config.parameterization {
            Parameterization::Whitened => standard_normals(rng, self.prior.dimension()),
            Parameterization::Nodal => self.prior.sample(rng),
        }
    }

    fn log_potential(&self, x: &[T]) -> Result<T> {
        if x.len() != self.prior.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.prior.dimension(),
                got: x.len(),
            });
        }
        self.pde_log_potential(&self.field(x))
    }

    fn log_initial_density(&self, x: &[T]) -> T {
        match self.config.parameterization {
            Parameterization::Whitened => -x.iter().map(|&v| v * v).sum::<T>() / T::lit(2.0),
            Parameterization::Nodal => self.prior.log_density(x),
        }
    }

    fn initial_mean(&self) -> Option<Vec<T>> {
        match self.config.parameterization {
            Parameterization::Whitened => Some(vec![T::zero(); self.prior.dimension()]),
            Parameterization::Nodal => Some(self.prior.mean().to_vec()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn smooth_field(n: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let h = 1.0 / (n - 1) as f64;
        (0..n * n).map(|i| f((i % n) as f64 * h, (i / n) as f64 * h)).collect()
    }

    #[test]
    fn discrete_conservation() {
        for n in [4, 10, 17] {
            let s = ForwardSolver::new(n, 0.1).unwrap();
            let u = smooth_field(n, |x, y| 0.8 * (3.0 * x).sin() * (2.0 * y).cos() + 0.3 * x * y);
            let w = s.solve(&u).unwrap();
            let (outflow, inflow) = s.boundary_balance(&w);
            assert!((outflow - inflow).abs() < 1e-8, "n={n}: {outflow} vs {inflow}");
            assert_abs_diff_eq!(inflow, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn mirror_symmetry_about_vertical_axis() {
        let n = 11;
        let s = ForwardSolver::new(n, 0.3).unwrap();
        let u = smooth_field(n, |x, y| ((x - 0.5) * 4.0).cos() * y + (y * 2.0).sin());
        let w = s.solve(&u).unwrap();
        for iy in 0..n {
            for ix in 0..n {
                assert!((w[iy * n + ix] - w[iy * n + (n - 1 - ix)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn self_convergence_is_second_order() {
        // Points on the 1/8 lattice are nodes of every grid, so the
        // Cauchy differences measure discretization error only.
        let f = |x: f64, y: f64| 0.5 * (std::f64::consts::PI * x).sin() * (2.0 * y).cos() + 0.2 * x;
        let pts: Vec<(usize, usize)> = (1..8).flat_map(|i| (1..8).map(move |j| (i, j))).collect();
        let sols: Vec<Vec<f64>> = [8usize, 16, 32]
            .iter()
            .map(|&cells| {
                let n = cells + 1;
                let w = ForwardSolver::new(n, 0.1).unwrap().solve(&smooth_field(n, f)).unwrap();
                let step = cells / 8;
                pts.iter().map(|&(i, j)| w[j * step * n + i * step]).collect()
            })
            .collect();
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let order = (diff(&sols[0], &sols[1]) / diff(&sols[1], &sols[2])).log2();
        assert!((order - 2.0).abs() <= 0.3, "order {order}");
    }

    #[test]
    fn residual_of_direct_solve() {
        let n = 10;
        let s = ForwardSolver::new(n, 0.1).unwrap();
        let u = smooth_field(n, |x, y| x - y);
        let (a, b) = s.assemble(&u).unwrap();
        let w = a.solve(&b).unwrap();
        let r = a.mul_vec(&w);
        let res = r.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(res <= 1e-10);
    }

    #[test]
    fn observation_potential_examples() {
        let m = EllipticInverse::<f64>::synthetic(EllipticConfig::default()).unwrap();
        let w = m.solve_forward(m.true_field()).unwrap();
        let g = m.observe(&w);
        assert_eq!(m.log_potential_of_observables(m.data()), 0.0);
        assert!(m.log_potential_of_observables(&g) < 0.0);

        let cfg = EllipticConfig {
            obs_lattice: 1,
            ..EllipticConfig::default()
        };
        let one = EllipticInverse::<f64>::from_parts(cfg, vec![[0.5, 0.5]], vec![2.0], 1.0, vec![0.0; 100]).unwrap();
        assert_abs_diff_eq!(
            one.log_potential_of_observables(&[1.25]),
            -0.75 * 0.75 / 2.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn potential_decreases_with_residual() {
        let m = EllipticInverse::<f64>::synthetic(EllipticConfig::default()).unwrap();
        let d = m.data().to_vec();
        let mut prev = 0.0;
        for k in 1..6 {
            let g: Vec<f64> = d.iter().map(|x| x + 0.01 * k as f64).collect();
            let v = m.log_potential_of_observables(&g);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn default_problem_shape() {
        let m = EllipticInverse::<f64>::synthetic(EllipticConfig::default()).unwrap();
        assert_eq!(m.dimension(), 100);
        assert_eq!(m.observation_points().len(), 25);
        assert!(m.noise_sd() > 0.0);
        // Data are informative: the truth fits far better than the prior mean.
        let v_truth = m.pde_log_potential(m.true_field()).unwrap();
        let v_zero = m.pde_log_potential(&vec![0.0; 100]).unwrap();
        assert!(v_truth > v_zero);
    }

    #[test]
    fn fixture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = EllipticInverse::<f64>::synthetic(EllipticConfig::default()).unwrap();
        m.write_fixture(dir.path()).unwrap();
        let back = EllipticInverse::<f64>::load_fixture(dir.path()).unwrap();
        assert_eq!(back.data(), m.data());
        assert_eq!(back.true_field(), m.true_field());
        assert_eq!(back.noise_sd(), m.noise_sd());
    }

    #[test]
    fn whitened_and_nodal_coordinates_agree() {
        let w = EllipticInverse::<f64>::synthetic(EllipticConfig::default()).unwrap();
        let nodal = EllipticInverse::<f64>::synthetic(EllipticConfig {
            parameterization: Parameterization::Nodal,
            ..EllipticConfig::default()
        })
        .unwrap();
        let mut rng_a = StreamSeed::new(3).stream(Component::Test, 0, 0, 0);
        let mut rng_b = StreamSeed::new(3).stream(Component::Test, 0, 0, 0);
        let xi = w.sample_initial(&mut rng_a);
        let u = nodal.sample_initial(&mut rng_b);
        let field = w.field(&xi);
        for (a, b) in field.iter().zip(&u) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let (vw, vn) = (w.log_potential(&xi).unwrap(), nodal.log_potential(&u).unwrap());
        assert_abs_diff_eq!(vw, vn, epsilon = 1e-9 * vn.abs().max(1.0));
        // Prior quadratic forms coincide under the change of variables.
        let qw = w.log_initial_density(&xi);
        let qn = nodal.log_initial_density(&u);
        assert_abs_diff_eq!(qw, qn, epsilon = 1e-8 * qn.abs().max(1.0));
        assert_eq!(w.initial_mean().unwrap(), vec![0.0; 100]);
        assert!(w.log_potential(&xi[..5]).is_err());
    }
}
