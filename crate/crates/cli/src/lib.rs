//! Command-line driver: `run`, `compare`, `oracle` and `fixture`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use set_core::diagnostics::write_aggregate_csv;
use set_core::{
    mcmc_reference, repeat_runs, rmse_mean, run, variance_ratio, EllipticConfig, EllipticInverse, GaussianToy, Method,
    OracleConfig, ReferenceMoments, ResamplingScheme, RunConfig, TargetModel,
};

const OUTPUT_ENV: &str = "SET_OUTPUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] set_core::Error),
}

impl CliError {
    /// 2 for configuration errors, 3 for runtime failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 3,
        }
    }
}

fn config_err(e: set_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
enum ModelKind {
    #[default]
    Gaussian,
    Pde,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GaussianParams {
    dim: usize,
    sigma: f64,
    length_scale: f64,
    nugget: f64,
}

impl Default for GaussianParams {
    fn default() -> Self {
        Self {
            dim: GaussianToy::<f64>::DEFAULT_DIM,
            sigma: GaussianToy::<f64>::DEFAULT_SIGMA,
            length_scale: GaussianToy::<f64>::DEFAULT_LENGTH_SCALE,
            nugget: GaussianToy::<f64>::DEFAULT_NUGGET,
        }
    }
}

/// Everything a command needs; read from JSON and overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Config {
    model: ModelKind,
    gaussian: GaussianParams,
    pde: EllipticConfig,
    /// Directory holding a saved observation fixture for the PDE model.
    fixture: Option<PathBuf>,
    method: Method,
    n: usize,
    p: usize,
    xi: f64,
    scheme: ResamplingScheme,
    seed: u64,
    rho0: f64,
    n_runs: usize,
    methods: Vec<Method>,
    ns: Vec<usize>,
    ps: Vec<usize>,
    oracle: OracleConfig,
    /// Reference moments file; computed on the fly when absent.
    reference: Option<PathBuf>,
    /// Not echoed, so outputs do not depend on where they are written.
    #[serde(skip_serializing)]
    output: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        let r = RunConfig::default();
        Self {
            model: ModelKind::Gaussian,
            gaussian: GaussianParams::default(),
            pde: EllipticConfig::default(),
            fixture: None,
            method: r.method,
            n: r.n,
            p: r.p,
            xi: r.xi,
            scheme: r.scheme,
            seed: r.seed,
            rho0: r.rho0,
            n_runs: 10,
            methods: vec![Method::Set, Method::Smc],
            ns: vec![250, 500, 1000],
            ps: vec![0, 1],
            oracle: OracleConfig::default(),
            reference: None,
            output: None,
        }
    }
}

impl Config {
    fn run_config(&self) -> RunConfig {
        RunConfig {
            method: self.method,
            n: self.n,
            p: self.p,
            xi: self.xi,
            seed: self.seed,
            scheme: self.scheme,
            rho0: self.rho0,
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        self.run_config().validate().map_err(config_err)?;
        self.pde.validate().map_err(config_err)?;
        if self.n_runs == 0 {
            return Err(CliError::Config("n_runs must be positive".into()));
        }
        if self.methods.is_empty() || self.ns.is_empty() || self.ps.is_empty() {
            return Err(CliError::Config("methods, ns and ps must be non-empty".into()));
        }
        if let Some(n) = self.ns.iter().find(|&&n| n < 2) {
            return Err(CliError::Config(format!("ns entry {n} must be at least 2")));
        }
        Ok(())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "set",
    version,
    about = "Tempered ensemble samplers: optimal-transport transform vs resampling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One sampler run: writes trace.csv, ensemble.csv and summary.json.
    Run(CommonArgs),
    /// Repeated runs over methods, ensemble sizes and mutation counts: writes compare.csv.
    Compare(CompareArgs),
    /// Reference moments from a pCN chain: writes moments.json.
    Oracle(OracleArgs),
    /// Generate the synthetic PDE observation fixture.
    Fixture(CommonArgs),
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// JSON configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    scheme: Option<ResamplingScheme>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dimension of the Gaussian toy.
    #[arg(long)]
    dim: Option<usize>,
    /// PDE grid nodes per side.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    fixture: Option<PathBuf>,
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Output directory (overrides the config and the environment).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for this command; defaults to the available cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long, value_delimiter = ',')]
    ns: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    ps: Option<Vec<usize>>,
    #[arg(long)]
    n_runs: Option<usize>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    chain_length: Option<usize>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<Config, CliError> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => Config::default(),
        };
        if let Some(v) = self.model {
            c.model = v;
        }
        if let Some(v) = self.method {
            c.method = v;
        }
        if let Some(v) = self.n {
            c.n = v;
        }
        if let Some(v) = self.p {
            c.p = v;
        }
        if let Some(v) = self.xi {
            c.xi = v;
        }
        if let Some(v) = self.scheme {
            c.scheme = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.dim {
            c.gaussian.dim = v;
        }
        if let Some(v) = self.grid {
            c.pde.grid = v;
        }
        if let Some(v) = &self.fixture {
            c.fixture = Some(v.clone());
        }
        if let Some(v) = &self.reference {
            c.reference = Some(v.clone());
        }
        if let Some(v) = std::env::var_os(OUTPUT_ENV) {
            c.output = Some(PathBuf::from(v));
        }
        if let Some(v) = &self.out {
            c.output = Some(v.clone());
        }
        Ok(c)
    }
}

fn output_dir(c: &Config) -> Result<PathBuf, CliError> {
    let dir = c.output.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(set_core::Error::from)?;
    Ok(dir)
}

enum Model {
    Gaussian(GaussianToy<f64>),
    Pde(Box<EllipticInverse<f64>>),
}

impl Model {
    fn build(c: &Config) -> Result<Self, CliError> {
        Ok(match c.model {
            ModelKind::Gaussian => {
                let g = &c.gaussian;
                Self::Gaussian(GaussianToy::new(g.dim, g.sigma, g.length_scale, g.nugget).map_err(config_err)?)
            }
            ModelKind::Pde => match &c.fixture {
                Some(dir) => Self::Pde(Box::new(EllipticInverse::load_fixture(dir)?)),
                None => Self::Pde(Box::new(EllipticInverse::synthetic(c.pde.clone()).map_err(config_err)?)),
            },
        })
    }

    fn target(&self) -> &dyn TargetModel<f64> {
        match self {
            Self::Gaussian(m) => m,
            Self::Pde(m) => m.as_ref(),
        }
    }

    fn reference(&self, c: &Config) -> Result<ReferenceMoments, CliError> {
        if let Some(path) = &c.reference {
            let r = ReferenceMoments::read_json(path)?;
            if r.dimension() != self.target().dimension() {
                return Err(CliError::Config(format!(
                    "reference: {} has dimension {}, model has {}",
                    path.display(),
                    r.dimension(),
                    self.target().dimension()
                )));
            }
            return Ok(r);
        }
        match ReferenceMoments::analytic(self.target()) {
            Some(r) => Ok(r?),
            None => {
                log::info!("no reference moments given; running the pCN oracle");
                Ok(mcmc_reference(self.target(), &c.oracle)?)
            }
        }
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    version: &'static str,
    seed: u64,
    config: &'a Config,
    metrics: Metrics,
    temperatures: Vec<f64>,
    reference: &'a set_core::Provenance,
}

#[derive(Serialize)]
struct Metrics {
    rmse_mean: f64,
    variance_ratio: f64,
    steps: usize,
    solves: usize,
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| set_core::Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(set_core::Error::from)?;
    Ok(())
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, CliError> {
    Ok(std::io::BufWriter::new(
        std::fs::File::create(path).map_err(set_core::Error::from)?,
    ))
}

fn cmd_run(args: &CommonArgs) -> Result<(), CliError> {
    let c = args.resolve()?;
    c.validate()?;
    let model = Model::build(&c)?;
    let reference = model.reference(&c)?;
    let dir = output_dir(&c)?;
    let report = run(model.target(), &c.run_config())?;
    report.write_trace_csv(create(&dir.join("trace.csv"))?)?;
    report.ensemble.write_csv(create(&dir.join("ensemble.csv"))?)?;
    let metrics = Metrics {
        rmse_mean: rmse_mean(&report.ensemble, &reference)?,
        variance_ratio: variance_ratio(&report.ensemble, &reference)?,
        steps: report.steps(),
        solves: report.solves,
    };
    log::info!(
        "{} N={} p={}: K={} solves={} rmse={:.4e} R={:.4} in {:.2?}",
        c.method,
        c.n,
        c.p,
        metrics.steps,
        metrics.solves,
        metrics.rmse_mean,
        metrics.variance_ratio,
        report.wall_time
    );
    let summary = Summary {
        version: env!("CARGO_PKG_VERSION"),
        seed: c.seed,
        config: &c,
        temperatures: report.schedule().temperatures,
        metrics,
        reference: &reference.provenance,
    };
    write_json(&dir.join("summary.json"), &summary)
}

fn cmd_compare(args: &CompareArgs) -> Result<(), CliError> {
    let mut c = args.common.resolve()?;
    if let Some(v) = &args.methods {
        c.methods = v.clone();
    }
    if let Some(v) = &args.ns {
        c.ns = v.clone();
    }
    if let Some(v) = &args.ps {
        c.ps = v.clone();
    }
    if let Some(v) = args.n_runs {
        c.n_runs = v;
    }
    c.validate()?;
    let model = Model::build(&c)?;
    let reference = model.reference(&c)?;
    let dir = output_dir(&c)?;
    let mut rows = Vec::new();
    for &p in &c.ps {
        for &n in &c.ns {
            for &method in &c.methods {
                let cfg = RunConfig {
                    method,
                    n,
                    p,
                    ..c.run_config()
                };
                let s = repeat_runs(model.target(), &cfg, c.n_runs, &reference)?;
                for (seed, err) in &s.failures {
                    eprintln!("warning: {method} N={n} p={p} seed {seed} failed: {err}");
                }
                log::info!("{}", s.aggregate.csv_line());
                rows.push(s.aggregate);
            }
        }
    }
    write_aggregate_csv(&rows, create(&dir.join("compare.csv"))?)?;
    write_json(&dir.join("config.json"), &c)
}

fn cmd_oracle(args: &OracleArgs) -> Result<(), CliError> {
    let mut c = args.common.resolve()?;
    if let Some(v) = args.chain_length {
        c.oracle.chain_length = v;
    }
    if let Some(v) = args.common.seed {
        c.oracle.seed = v;
    }
    c.validate()?;
    c.oracle.validate().map_err(config_err)?;
    let model = Model::build(&c)?;
    let dir = output_dir(&c)?;
    let moments = mcmc_reference(model.target(), &c.oracle)?;
    moments.write_json(&dir.join("moments.json"))?;
    Ok(())
}

fn cmd_fixture(args: &CommonArgs) -> Result<(), CliError> {
    let c = args.resolve()?;
    c.validate()?;
    let dir = output_dir(&c)?;
    EllipticInverse::<f64>::synthetic(c.pde.clone())
        .map_err(config_err)?
        .write_fixture(&dir)?;
    Ok(())
}

fn in_pool<F>(threads: Option<usize>, f: F) -> Result<(), CliError>
where
    F: FnOnce() -> Result<(), CliError> + Send,
{
    match threads {
        None => f(),
        Some(0) => Err(CliError::Config("threads must be positive".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?
            .install(f),
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let threads = match &cli.command {
        Command::Run(a) | Command::Fixture(a) => a.threads,
        Command::Compare(a) => a.common.threads,
        Command::Oracle(a) => a.common.threads,
    };
    in_pool(threads, || match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Fixture(a) => cmd_fixture(a),
    })
}

/// Parse `args` (including the program name) and run the command.
pub fn execute<I, A>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Config(e.to_string()))?;
    dispatch(&cli)
}

/// Entry point of the `set` binary: errors go to stderr, the exit code
/// follows [`CliError::exit_code`].
pub fn main_with_args<I, A>(args: I) -> ExitCode
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
