//! Batch experiment runner.
//!
//! Exit codes: 0 success, 2 configuration error, 3 resource or cost guard,
//! 4 check failure, 1 anything else.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    default_lyapunov_probes, fmt_f64, fullerror_check, growth_fit, lyapunov_check, perturbation_interpolated_check,
    perturbation_shift_check, CheckSummary, CsvTable, RecipeMode, TheoremConstants,
};
use crate::error::{Error, Result};
use crate::index_rng::{FrozenSample, IndexPath};
use crate::mlp_solver::{check_cost_guard, mlp_estimate, MlpConfig, SemilinearProblem};
use crate::net_builder::{build_mlp_network_with_limit, DEFAULT_PARAM_LIMIT};
use crate::problems::{network_encodings, problem_by_name, CatalogEntry};
use crate::sde_sim::TimeGrid;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_GUARD: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "picardnet", version, about = "Multilevel Picard solver and exact ReLU network builder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; without it results go to standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Allow n = M >= 6.
    #[arg(long, global = true)]
    force: bool,
    #[arg(long, global = true, env = "PICARDNET_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// MLP estimates at the configured probes.
    Solve,
    /// Build networks and compare their realization with the estimator.
    #[command(name = "build-verify", alias = "build", alias = "verify")]
    BuildVerify,
    /// Run the configured analysis checks.
    Sweep,
}

/// Time grid: `{"uniform": K}` or `{"points": [...]}`; omitted means `M^M`
/// uniform steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    Uniform(usize),
    Points(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Probe {
    pub t: f64,
    pub x: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildOptions {
    /// Allowed `|Φ(x) - U(x)| / (1 + |U(x)|)`.
    pub tolerance: f64,
    pub param_limit: u128,
    /// Random evaluation points per built network, drawn from `[-1, 1]^d`.
    pub test_points: usize,
    pub write_networks: bool,
    /// Coefficient accuracy for problems without exact encodings.
    pub delta: Option<f64>,
    pub radius: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            tolerance: 1e-8,
            param_limit: DEFAULT_PARAM_LIMIT,
            test_points: 20,
            write_networks: false,
            delta: None,
            radius: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FullErrorSweep {
    pub seeds: usize,
    pub delta: f64,
    pub steps: Option<usize>,
}

impl Default for FullErrorSweep {
    fn default() -> Self {
        FullErrorSweep { seeds: 100, delta: 0.0, steps: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthSweep {
    pub family: String,
    pub dims: Vec<usize>,
    pub eps: Vec<f64>,
    pub mode: RecipeMode,
    pub constants: TheoremConstants,
    pub param_limit: u128,
}

impl Default for GrowthSweep {
    fn default() -> Self {
        GrowthSweep {
            family: "relu-exact".into(),
            dims: vec![1, 2],
            eps: vec![0.5, 0.25],
            mode: RecipeMode::Desk { levels: 2, prefactor: 1.0 },
            constants: TheoremConstants::default(),
            param_limit: DEFAULT_PARAM_LIMIT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovSweep {
    pub kappas: Vec<f64>,
    pub paths: usize,
    pub steps: usize,
}

impl Default for LyapunovSweep {
    fn default() -> Self {
        LyapunovSweep { kappas: vec![1.0, 2.0], paths: 10_000, steps: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationSweep {
    pub delta: f64,
    pub delta_box: f64,
    pub radius: f64,
    pub paths: usize,
}

impl Default for PerturbationSweep {
    fn default() -> Self {
        PerturbationSweep { delta: 0.1, delta_box: 1e-3, radius: 3.0, paths: 10_000 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub fullerror: Option<FullErrorSweep>,
    pub growth: Option<GrowthSweep>,
    pub lyapunov: Option<LyapunovSweep>,
    pub perturbation: Option<PerturbationSweep>,
}

/// The JSON experiment configuration; see `docs/config.schema.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: String,
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default = "unit")]
    pub horizon: f64,
    #[serde(default)]
    pub n: Option<u32>,
    #[serde(default, rename = "M")]
    pub m: Option<u32>,
    /// `[[n, M], …]`; mutually exclusive with `n` and `M`.
    #[serde(default)]
    pub levels: Option<Vec<(u32, u32)>>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub probes: Vec<Probe>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub build: BuildOptions,
    #[serde(default)]
    pub sweep: SweepOptions,
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        for p in &self.probes {
            if p.x.len() != self.dim {
                return Err(Error::Config(format!("probe has {} coordinates, dim is {}", p.x.len(), self.dim)));
            }
            if !(0.0..=self.horizon).contains(&p.t) {
                return Err(Error::Config(format!("probe time {} outside [0, {}]", p.t, self.horizon)));
            }
        }
        let pairs = self.level_pairs()?;
        if pairs.iter().any(|&(_, m)| m == 0) {
            return Err(Error::Config("M must be at least 1".into()));
        }
        Ok(())
    }

    /// The `(n, M)` pairs in configuration order.
    pub fn level_pairs(&self) -> Result<Vec<(u32, u32)>> {
        match (&self.levels, self.n, self.m) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                Err(Error::Config("give either levels or n and M, not both".into()))
            }
            (Some(l), None, None) => Ok(l.clone()),
            (None, Some(n), Some(m)) => Ok(vec![(n, m)]),
            (None, None, None) => Ok(Vec::new()),
            _ => Err(Error::Config("n and M must be given together".into())),
        }
    }

    pub fn mlp_config(&self, n: u32, m: u32, seed: u64) -> Result<MlpConfig> {
        let sample = FrozenSample::new(seed);
        match &self.grid {
            None => MlpConfig::with_default_grid(n, m, self.horizon, sample),
            Some(GridSpec::Uniform(k)) => MlpConfig::new(n, m, TimeGrid::uniform(*k, self.horizon)?, sample),
            Some(GridSpec::Points(p)) => {
                if p.last().copied() != Some(self.horizon) {
                    return Err(Error::Config("grid points must end at the horizon".into()));
                }
                MlpConfig::new(n, m, TimeGrid::new(p.clone())?, sample)
            }
        }
        .map_err(|e| match e {
            Error::InvalidArgument(s) => Error::Config(s),
            e => e,
        })
    }

    fn entry(&self) -> Result<CatalogEntry> {
        problem_by_name(&self.problem, self.dim, self.horizon)
    }

    fn first_probe(&self) -> Probe {
        self.probes.first().cloned().unwrap_or(Probe { t: 0.0, x: vec![0.0; self.dim] })
    }
}

/// The outcome of a subcommand that ran to completion.
struct Outcome {
    checks_passed: bool,
}

/// Map an error to its exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Json(_) | Error::InvalidArgument(_) | Error::Dimension(_) => EXIT_CONFIG,
        Error::ResourceGuard { .. } | Error::CostGuard { .. } => EXIT_GUARD,
        Error::Unreachable { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

/// Parse `args` and run; text output and diagnostics go to the writers.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            if code == EXIT_OK {
                let _ = write!(stdout, "{e}");
            } else {
                let _ = write!(stderr, "{e}");
            }
            return code;
        }
    };
    match execute(&cli, stdout) {
        Ok(Outcome { checks_passed: true }) => EXIT_OK,
        Ok(Outcome { checks_passed: false }) => {
            let _ = writeln!(stderr, "picardnet: check failed");
            EXIT_CHECK
        }
        Err(e) => {
            let _ = writeln!(stderr, "picardnet: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<Outcome> {
    let path = cli.common.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.common.out {
        cfg.out = Some(o.clone());
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cli.common.threads {
        if k == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        pool = pool.num_threads(k);
    }
    let pool = pool.build().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let force = cli.common.force;
    let (files, checks_passed) = pool.install(|| match cli.command {
        Command::Solve => Ok((vec![("solve.csv".to_string(), solve_table(&cfg, force)?.to_csv_string())], true)),
        Command::BuildVerify => {
            let (report, mut files) = build_verify(&cfg, force)?;
            files.insert(0, ("build_report.json".to_string(), serde_json::to_string_pretty(&report)? + "\n"));
            Ok::<_, Error>((files, report.pass))
        }
        Command::Sweep => sweep(&cfg, force),
    })?;
    for (name, body) in files {
        emit(&cfg, &name, &body, stdout)?;
    }
    Ok(Outcome { checks_passed })
}

fn emit(cfg: &ExperimentConfig, name: &str, body: &str, stdout: &mut dyn Write) -> Result<()> {
    match &cfg.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(name), body)?;
        }
        None => {
            writeln!(stdout, "# {name}")?;
            stdout.write_all(body.as_bytes())?;
        }
    }
    Ok(())
}

/// Rows of `(n, M, t, x₀…x_{d-1}, estimate, seed)`.
pub struct SolveTable {
    pub dim: usize,
    pub rows: Vec<(u32, u32, f64, Vec<f64>, f64, u64)>,
}

impl CsvTable for SolveTable {
    fn header(&self) -> Vec<String> {
        let mut h = vec!["n".to_string(), "M".into(), "t".into()];
        h.extend((0..self.dim).map(|i| format!("x{i}")));
        h.extend(["estimate".to_string(), "seed".into()]);
        h
    }

    fn records(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|(n, m, t, x, u, s)| {
                let mut r = vec![n.to_string(), m.to_string(), fmt_f64(*t)];
                r.extend(x.iter().map(|v| fmt_f64(*v)));
                r.extend([fmt_f64(*u), s.to_string()]);
                r
            })
            .collect()
    }
}

/// MLP estimates at every configured probe and `(n, M)` pair.
pub fn solve_table(cfg: &ExperimentConfig, force: bool) -> Result<SolveTable> {
    let entry = cfg.entry()?;
    let mut rows = Vec::new();
    for (n, m) in cfg.level_pairs()? {
        check_cost_guard(n, m, force)?;
        let mc = cfg.mlp_config(n, m, cfg.seed)?;
        let est: Vec<f64> = cfg
            .probes
            .par_iter()
            .map(|p| mlp_estimate(&entry.problem, &mc, &IndexPath::root(), p.t, &p.x))
            .collect::<Result<_>>()?;
        for (p, u) in cfg.probes.iter().zip(est) {
            rows.push((n, m, p.t, p.x.clone(), u, cfg.seed));
        }
    }
    Ok(SolveTable { dim: cfg.dim, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BuildRow {
    pub n: u32,
    #[serde(rename = "M")]
    pub m: u32,
    pub t: f64,
    pub steps: usize,
    pub depth: usize,
    pub predicted_depth: usize,
    pub max_width: usize,
    pub width_bound: u128,
    pub param_count: u128,
    pub predicted_param_count: u128,
    pub param_bound: u128,
    pub max_relative_deviation: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BuildReport {
    pub problem: String,
    pub dim: usize,
    pub seed: u64,
    pub delta: f64,
    pub tolerance: f64,
    pub rows: Vec<BuildRow>,
    pub pass: bool,
}

/// Build `Φ^{root}_{n,t}` for every pair and probe time and compare with the
/// estimator at the probe point and at random points.
pub fn build_verify(cfg: &ExperimentConfig, force: bool) -> Result<(BuildReport, Vec<(String, String)>)> {
    let entry = cfg.entry()?;
    let opts = &cfg.build;
    let delta = match (&entry.problem.encodings, opts.delta) {
        (Some(_), d) => d.unwrap_or(0.0),
        (None, Some(d)) => d,
        (None, None) => {
            return Err(Error::Config(format!(
                "{} has no exact encodings; set build.delta",
                entry.name
            )))
        }
    };
    let enc = network_encodings(&entry, delta, opts.radius)?;
    let problem: SemilinearProblem = entry.problem.clone().with_encodings(enc.nets.clone()).encoded()?;
    let probes = if cfg.probes.is_empty() { vec![cfg.first_probe()] } else { cfg.probes.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let points: Vec<Vec<f64>> = (0..opts.test_points)
        .map(|_| (0..cfg.dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let theta = IndexPath::root();
    let mut rows = Vec::new();
    let mut files = Vec::new();
    for (n, m) in cfg.level_pairs()? {
        check_cost_guard(n, m, force)?;
        let mc = cfg.mlp_config(n, m, cfg.seed)?;
        for (pi, probe) in probes.iter().enumerate() {
            let built = build_mlp_network_with_limit(&enc.nets, &mc, &theta, probe.t, opts.param_limit)?;
            let xs: Vec<&Vec<f64>> = std::iter::once(&probe.x).chain(points.iter()).collect();
            let dev = xs
                .par_iter()
                .map(|x| {
                    let u = mlp_estimate(&problem, &mc, &theta, probe.t, x)?;
                    let r = built.network.realize(x)?[0];
                    Ok((r - u).abs() / (1.0 + u.abs()))
                })
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            let arch = built.network.architecture();
            let pred = &built.prediction;
            let depth = built.network.depth();
            let width = arch.max_width();
            let count = built.network.param_count();
            let pass = dev <= opts.tolerance
                && depth == pred.depth
                && (width as u128) <= pred.width_bound
                && count == pred.param_count
                && count <= pred.param_bound;
            rows.push(BuildRow {
                n,
                m,
                t: probe.t,
                steps: mc.grid.steps(),
                depth,
                predicted_depth: pred.depth,
                max_width: width,
                width_bound: pred.width_bound,
                param_count: count,
                predicted_param_count: pred.param_count,
                param_bound: pred.param_bound,
                max_relative_deviation: dev,
                pass,
            });
            if opts.write_networks {
                files.push((format!("network_n{n}_M{m}_probe{pi}.json"), built.to_json_string()));
            }
        }
    }
    let pass = rows.iter().all(|r| r.pass);
    let report = BuildReport {
        problem: entry.name.clone(),
        dim: cfg.dim,
        seed: cfg.seed,
        delta: enc.delta_box,
        tolerance: opts.tolerance,
        rows,
        pass,
    };
    Ok((report, files))
}

/// Run every configured sweep; returns `(file name, contents)` pairs in a
/// fixed order followed by `summary.json`, and whether every check passed.
pub fn sweep(cfg: &ExperimentConfig, force: bool) -> Result<(Vec<(String, String)>, bool)> {
    let mut files = Vec::new();
    let mut summaries: Vec<CheckSummary> = Vec::new();
    let probe = cfg.first_probe();
    if let Some(fe) = &cfg.sweep.fullerror {
        let pairs = cfg.level_pairs()?;
        for &(n, m) in &pairs {
            check_cost_guard(n, m, force)?;
        }
        let steps = match (&cfg.grid, fe.steps) {
            (_, Some(k)) => Some(k),
            (Some(GridSpec::Uniform(k)), None) => Some(*k),
            (Some(GridSpec::Points(_)), None) => {
                return Err(Error::Config("fullerror sweeps take a uniform grid".into()))
            }
            (None, None) => None,
        };
        let report = fullerror_check(&cfg.entry()?, &pairs, fe.delta, probe.t, &probe.x, fe.seeds, cfg.seed, steps)?;
        summaries.push(report.summary());
        files.push(("fullerror.csv".to_string(), report.to_csv_string()));
    }
    if let Some(g) = &cfg.sweep.growth {
        let report = growth_fit(&g.family, &g.dims, &g.eps, &g.constants, g.mode, g.param_limit)?;
        summaries.push(report.summary());
        files.push(("growth.csv".to_string(), report.to_csv_string()));
    }
    if let Some(l) = &cfg.sweep.lyapunov {
        let entry = cfg.entry()?;
        let probes = default_lyapunov_probes(cfg.dim, cfg.horizon);
        let report = lyapunov_check(&entry, &entry.spec, &l.kappas, &probes, l.paths, l.steps, cfg.seed)?;
        summaries.push(report.summary());
        files.push(("lyapunov.csv".to_string(), report.to_csv_string()));
    }
    if let Some(p) = &cfg.sweep.perturbation {
        let shift = perturbation_shift_check(cfg.dim, p.delta, probe.t, &probe.x, p.paths, cfg.seed)?;
        let interp =
            perturbation_interpolated_check(cfg.dim, p.delta_box, p.radius, probe.t, &probe.x, p.paths, cfg.seed)?;
        summaries.push(shift.summary());
        summaries.push(interp.summary());
        let mut body = shift.to_csv_string();
        let second = interp.to_csv_string();
        body.push_str(second.split_once('\n').map_or("", |(_, rest)| rest));
        files.push(("perturbation.csv".to_string(), body));
    }
    files.push(("summary.json".to_string(), serde_json::to_string_pretty(&summaries)? + "\n"));
    let pass = summaries.iter().all(|s| s.pass);
    Ok((files, pass))
}
