//! Quantitative checks: L² error, Lyapunov moments, perturbation and full
//! error bounds, and parameter growth.
//!
//! Every Monte Carlo check inflates its estimate by three standard errors
//! before comparing with the analytic bound, so a pass means the bound
//! dominates the estimate and not just the noise. Bounds are evaluated in
//! log space because their exponential prefactors overflow `f64` long before
//! they become interesting.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::index_rng::{brownian_path, FrozenSample, IndexPath};
use crate::mlp_solver::{mean_and_se, mlp_estimates_over_seeds, MlpConfig};
use crate::net_builder::{build_mlp_network_with_limit, predict_architecture, ProblemNetworks};
use crate::net_calculus::{Architecture, ReluNetwork};
use crate::problems::{network_encodings, problem_by_name, CatalogEntry, PerturbationSpec};
use crate::sde_sim::{euler_evaluate, TimeGrid};

/// Standard errors added to a Monte Carlo estimate before a bound comparison.
pub const SE_INFLATION: f64 = 3.0;

/// Shortest decimal that round-trips is not fixed width; reports use 17
/// significant digits instead.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// A table that can be written as CSV.
pub trait CsvTable {
    fn header(&self) -> Vec<String>;
    fn records(&self) -> Vec<Vec<String>>;

    fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(self.header()).map_err(csv_err)?;
        for r in self.records() {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// `{check, pass, margin}`; `margin` is `log(bound) - log(inflated estimate)`
/// at the tightest row, positive when passing.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckSummary {
    pub check: String,
    pub pass: bool,
    pub margin: f64,
}

fn min_margin(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(f64::INFINITY, f64::min)
}

/// Integration measure for the L² error: uniform on `[lower, upper]^d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorMeasureConfig {
    pub lower: f64,
    pub upper: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for ErrorMeasureConfig {
    fn default() -> Self {
        ErrorMeasureConfig { lower: 0.0, upper: 1.0, samples: 1000, seed: 0 }
    }
}

impl ErrorMeasureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 100 {
            return Err(Error::InvalidArgument(format!("need at least 100 samples, got {}", self.samples)));
        }
        if !(self.lower < self.upper) {
            return Err(Error::InvalidArgument("empty integration box".into()));
        }
        Ok(())
    }

    pub fn points(&self, d: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.samples)
            .map(|_| (0..d).map(|_| rng.gen_range(self.lower..self.upper)).collect())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct L2Report {
    pub rmse: f64,
    /// Jackknife standard error of `rmse`.
    pub standard_error: f64,
    pub samples: usize,
}

/// Monte Carlo `‖reference - estimator‖_{L²}` over the configured box.
/// The estimator receives the sample index so callers can vary randomness
/// across points.
pub fn l2_error<E, R>(d: usize, estimator: E, reference: R, cfg: &ErrorMeasureConfig) -> Result<L2Report>
where
    E: Fn(usize, &[f64]) -> Result<f64> + Sync,
    R: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let pts = cfg.points(d);
    let sq: Vec<f64> = pts
        .par_iter()
        .enumerate()
        .map(|(i, x)| Ok((estimator(i, x)? - reference(x)).powi(2)))
        .collect::<Result<_>>()?;
    let n = sq.len() as f64;
    let total: f64 = sq.iter().sum();
    let rmse = (total / n).sqrt();
    let loo: Vec<f64> = sq.iter().map(|e| ((total - e) / (n - 1.0)).max(0.0).sqrt()).collect();
    let mean_loo = loo.iter().sum::<f64>() / n;
    let var = (n - 1.0) / n * loo.iter().map(|v| (v - mean_loo).powi(2)).sum::<f64>();
    Ok(L2Report { rmse, standard_error: var.sqrt(), samples: sq.len() })
}

/// `log` of `e^{½κ((κ-1)c⁴+3c³)(s-t)} φ(x)^κ`.
pub fn lyapunov_bound_log(kappa: f64, c: f64, elapsed: f64, phi_x: f64) -> f64 {
    0.5 * kappa * ((kappa - 1.0) * c.powi(4) + 3.0 * c.powi(3)) * elapsed + kappa * phi_x.ln()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LyapunovProbe {
    pub t: f64,
    pub s: f64,
    pub x: Vec<f64>,
}

/// Probes at `t ∈ {0, T/2}`, `s ∈ {t + (T-t)/2, T}` and `x ∈ {0, (1,…,1)}`.
pub fn default_lyapunov_probes(d: usize, horizon: f64) -> Vec<LyapunovProbe> {
    let mut out = Vec::new();
    for t in [0.0, 0.5 * horizon] {
        for s in [t + 0.5 * (horizon - t), horizon] {
            for x in [vec![0.0; d], vec![1.0; d]] {
                out.push(LyapunovProbe { t, s, x });
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LyapunovRow {
    pub probe: usize,
    pub t: f64,
    pub s: f64,
    pub x_norm: f64,
    pub kappa: f64,
    pub moment: f64,
    pub standard_error: f64,
    pub log_bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub problem: String,
    pub dim: usize,
    pub paths: usize,
    pub hypothesis_holds: bool,
    pub spec: PerturbationSpec,
    pub rows: Vec<LyapunovRow>,
}

impl LyapunovReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn summary(&self) -> CheckSummary {
        CheckSummary {
            check: format!("lyapunov/{}/d={}", self.problem, self.dim),
            pass: self.pass(),
            margin: min_margin(self.rows.iter().map(|r| r.log_bound - (r.moment + SE_INFLATION * r.standard_error).ln())),
        }
    }
}

impl CsvTable for LyapunovReport {
    fn header(&self) -> Vec<String> {
        strings(&["probe", "t", "s", "x_norm", "kappa", "moment", "standard_error", "log_bound", "pass"])
    }

    fn records(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.probe.to_string(),
                    fmt_f64(r.t),
                    fmt_f64(r.s),
                    fmt_f64(r.x_norm),
                    fmt_f64(r.kappa),
                    fmt_f64(r.moment),
                    fmt_f64(r.standard_error),
                    fmt_f64(r.log_bound),
                    r.pass.to_string(),
                ]
            })
            .collect()
    }
}

/// Monte Carlo `E[φ(Y_{t,s})^κ]` along the Euler scheme with `steps` uniform
/// steps, against the moment bound with the constants of `spec`.
pub fn lyapunov_check(
    entry: &CatalogEntry,
    spec: &PerturbationSpec,
    kappas: &[f64],
    probes: &[LyapunovProbe],
    paths: usize,
    steps: usize,
    seed: u64,
) -> Result<LyapunovReport> {
    let problem = &entry.problem;
    let grid = TimeGrid::uniform(steps, problem.horizon)?;
    let sample = FrozenSample::new(seed);
    let mut rows = Vec::new();
    for (j, pr) in probes.iter().enumerate() {
        let phis: Vec<f64> = (0..paths as i64)
            .into_par_iter()
            .map(|i| {
                let theta = IndexPath::new(vec![j as i64, i]);
                let y = euler_evaluate(&problem.dynamics, &grid, sample, &theta, pr.t, &pr.x, pr.s)?;
                Ok(spec.phi.eval(&y))
            })
            .collect::<Result<_>>()?;
        let phi_x = spec.phi.eval(&pr.x);
        for &kappa in kappas {
            let vals: Vec<f64> = phis.iter().map(|p| p.powf(kappa)).collect();
            let (moment, se) = mean_and_se(&vals);
            let log_bound = lyapunov_bound_log(kappa, spec.c, pr.s - pr.t, phi_x);
            rows.push(LyapunovRow {
                probe: j,
                t: pr.t,
                s: pr.s,
                x_norm: pr.x.iter().map(|v| v * v).sum::<f64>().sqrt(),
                kappa,
                moment,
                standard_error: se,
                log_bound,
                pass: (moment + SE_INFLATION * se).ln() <= log_bound,
            });
        }
    }
    Ok(LyapunovReport {
        problem: entry.name.clone(),
        dim: problem.dim,
        paths,
        hypothesis_holds: spec.lyapunov_holds(entry.m0),
        spec: *spec,
        rows,
    })
}

/// `log` of `δ 2^{q+2} b^q (T+1) e^{q(2qc⁴+3c³)(T-t) + 2^q c^q T^q + (c+1)²} φ(x)^{q+½}`.
pub fn perturbation_bound_log(spec: &PerturbationSpec, horizon: f64, t: f64, phi_x: f64) -> f64 {
    let PerturbationSpec { delta, q, b, c, .. } = *spec;
    delta.ln()
        + (q + 2.0) * std::f64::consts::LN_2
        + q * b.ln()
        + (horizon + 1.0).ln()
        + q * (2.0 * q * c.powi(4) + 3.0 * c.powi(3)) * (horizon - t)
        + 2f64.powf(q) * c.powf(q) * horizon.powf(q)
        + (c + 1.0).powi(2)
        + (q + 0.5) * phi_x.ln()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerturbationRow {
    pub s: f64,
    pub measured: f64,
    pub standard_error: f64,
    /// `E‖X¹_{t,s} - X²_{t,s}‖`, exact for the coupled paths.
    pub path_gap: f64,
    pub log_bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerturbationReport {
    pub case: String,
    pub dim: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub delta: f64,
    pub paths: usize,
    pub lyapunov_hypothesis: bool,
    pub growth_hypothesis: bool,
    pub rows: Vec<PerturbationRow>,
}

impl PerturbationReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn summary(&self) -> CheckSummary {
        CheckSummary {
            check: format!("perturbation/{}/d={}", self.case, self.dim),
            pass: self.pass(),
            margin: min_margin(self.rows.iter().map(|r| {
                let m = r.measured + SE_INFLATION * r.standard_error;
                if m > 0.0 { r.log_bound - m.ln() } else { f64::INFINITY }
            })),
        }
    }
}

impl CsvTable for PerturbationReport {
    fn header(&self) -> Vec<String> {
        strings(&["case", "s", "measured", "standard_error", "path_gap", "log_bound", "pass"])
    }

    fn records(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    self.case.clone(),
                    fmt_f64(r.s),
                    fmt_f64(r.measured),
                    fmt_f64(r.standard_error),
                    fmt_f64(r.path_gap),
                    fmt_f64(r.log_bound),
                    r.pass.to_string(),
                ]
            })
            .collect()
    }
}

/// `E[R(net)(Z)]` for a one-hidden-layer network and `Z ~ N(mean, var I)`.
pub fn gaussian_expectation(net: &ReluNetwork, mean: &[f64], var: f64) -> Result<f64> {
    if net.layers().len() != 2 || net.output_dim() != 1 {
        return Err(Error::Architecture("need a scalar network with one hidden layer".into()));
    }
    if var <= 0.0 {
        return Ok(net.realize(mean)?[0]);
    }
    let (first, last) = (&net.layers()[0], &net.layers()[1]);
    let mut total = last.bias[0];
    for k in 0..first.weights.rows() {
        let row = first.weights.row(k);
        let m = row.iter().zip(mean).map(|(w, x)| w * x).sum::<f64>() + first.bias[k];
        let sd = (var * row.iter().map(|w| w * w).sum::<f64>()).sqrt();
        let e = if sd == 0.0 {
            m.max(0.0)
        } else {
            let z = m / sd;
            let cdf = 0.5 * erfc(-z / std::f64::consts::SQRT_2);
            let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            m * cdf + sd * pdf
        };
        total += last.weights.get(0, k) * e;
    }
    Ok(total)
}

fn probe_times(t: f64, horizon: f64) -> Vec<f64> {
    (0..=4).map(|k| t + (horizon - t) * k as f64 / 4.0).collect()
}

fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Coupled heat paths `X_s = x + √2 (W_s - W_t)` at the probe times, one
/// vector per probe time and path.
fn heat_paths(d: usize, t: f64, x: &[f64], times: &[f64], paths: usize, seed: u64) -> Result<Vec<Vec<Vec<f64>>>> {
    let sample = FrozenSample::new(seed);
    let bps: Vec<f64> = times.iter().copied().filter(|&s| s > t).collect();
    let mut full = vec![t];
    full.extend(&bps);
    (0..paths as i64)
        .into_par_iter()
        .map(|i| {
            let path = brownian_path(sample, &IndexPath::new(vec![i]), d, &full)?;
            Ok(times
                .iter()
                .map(|&s| {
                    let k = full.iter().position(|&p| p == s).unwrap_or(0);
                    let w = path.value_at(k);
                    x.iter().zip(&w).map(|(a, b)| a + std::f64::consts::SQRT_2 * b).collect()
                })
                .collect())
        })
        .collect()
}

fn perturbation_rows<F>(
    spec: &PerturbationSpec,
    horizon: f64,
    t: f64,
    x: &[f64],
    times: &[f64],
    samples: &[Vec<Vec<f64>>],
    diff: F,
    gap: impl Fn(f64) -> f64,
) -> Result<Vec<PerturbationRow>>
where
    F: Fn(f64, &[f64]) -> Result<f64> + Sync,
{
    let log_bound = perturbation_bound_log(spec, horizon, t, spec.phi.eval(x));
    times
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let v: Vec<f64> = samples.par_iter().map(|p| Ok(diff(s, &p[k])?.abs())).collect::<Result<_>>()?;
            let (measured, se) = mean_and_se(&v);
            Ok(PerturbationRow {
                s,
                measured,
                standard_error: se,
                path_gap: gap(s),
                log_bound,
                pass: measured + SE_INFLATION * se <= 0.0
                    || (measured + SE_INFLATION * se).ln() <= log_bound,
            })
        })
        .collect()
}

/// Heat equation against the same equation with drift shifted by a constant
/// vector of norm `delta`, coupled through identical Brownian paths.
pub fn perturbation_shift_check(d: usize, delta: f64, t: f64, x: &[f64], paths: usize, seed: u64) -> Result<PerturbationReport> {
    let entry = problem_by_name("heat", d, 1.0)?;
    let horizon = entry.problem.horizon;
    let spec = entry.spec.with_delta(delta);
    let e: Vec<f64> = vec![delta / (d as f64).sqrt(); d];
    let times = probe_times(t, horizon);
    let base = heat_paths(d, t, x, &times, paths, seed)?;
    let dd = 2.0 * d as f64;
    let rows = perturbation_rows(
        &spec,
        horizon,
        t,
        x,
        &times,
        &base,
        |s, y1| {
            let y2: Vec<f64> = y1.iter().zip(&e).map(|(a, b)| a + b * (s - t)).collect();
            let u1 = sq_norm(y1) + dd * (horizon - s);
            let shifted: Vec<f64> = y2.iter().zip(&e).map(|(a, b)| a + b * (horizon - s)).collect();
            let u2 = sq_norm(&shifted) + dd * (horizon - s);
            Ok(u2 - u1)
        },
        |s| delta * (s - t),
    )?;
    let growth = entry.growth_holds(&[x.to_vec()]);
    Ok(PerturbationReport {
        case: "drift-shift".into(),
        dim: d,
        t,
        x: x.to_vec(),
        delta,
        paths,
        lyapunov_hypothesis: spec.lyapunov_holds(entry.m0.max(delta)),
        growth_hypothesis: growth,
        rows,
    })
}

/// Heat equation against the same dynamics with `‖x‖²` replaced by its
/// piecewise-linear interpolant; `δ` is the measured weighted deviation.
pub fn perturbation_interpolated_check(
    d: usize,
    delta_box: f64,
    radius: f64,
    t: f64,
    x: &[f64],
    paths: usize,
    seed: u64,
) -> Result<PerturbationReport> {
    let entry = problem_by_name("heat", d, 1.0)?;
    let horizon = entry.problem.horizon;
    let enc = network_encodings(&entry, delta_box, radius)?;
    let spec = entry.spec.with_delta(enc.delta_weighted);
    let times = probe_times(t, horizon);
    let base = heat_paths(d, t, x, &times, paths, seed)?;
    let dd = 2.0 * d as f64;
    let g2 = enc.nets.g.clone();
    let rows = perturbation_rows(
        &spec,
        horizon,
        t,
        x,
        &times,
        &base,
        |s, y| {
            let u1 = sq_norm(y) + dd * (horizon - s);
            let u2 = gaussian_expectation(&g2, y, 2.0 * (horizon - s))?;
            Ok(u2 - u1)
        },
        |_| 0.0,
    )?;
    let growth = entry.growth_holds(&[x.to_vec()]);
    Ok(PerturbationReport {
        case: format!("interpolated-g/{}-pieces", enc.pieces),
        dim: d,
        t,
        x: x.to_vec(),
        delta: enc.delta_weighted,
        paths,
        lyapunov_hypothesis: spec.lyapunov_holds(entry.m0),
        growth_hypothesis: growth,
        rows,
    })
}

/// `δ + e^{2ncT + M/2} / M^{n/2} + M^{-M/2}`.
pub fn fullerror_bracket(n: u32, m: u32, c: f64, horizon: f64, delta: f64) -> f64 {
    let (n, m) = (n as f64, m as f64);
    delta + (2.0 * n * c * horizon + m / 2.0).exp() / m.powf(n / 2.0) + m.powf(-m / 2.0)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// `log` of the full error bound
/// `4^q b^q c² (T+1) e^{q(qc⁴+3c³)T + 2^q c^q T^q + (c+1)²} φ(x)^q [bracket]`.
pub fn fullerror_bound_log(spec: &PerturbationSpec, horizon: f64, phi_x: f64, n: u32, m: u32) -> f64 {
    let PerturbationSpec { delta, q, b, c, .. } = *spec;
    let (nf, mf) = (n as f64, m as f64);
    let bracket = log_sum_exp(&[
        delta.ln(),
        2.0 * nf * c * horizon + mf / 2.0 - nf / 2.0 * mf.ln(),
        -mf / 2.0 * mf.ln(),
    ]);
    q * 4f64.ln()
        + q * b.ln()
        + 2.0 * c.ln()
        + (horizon + 1.0).ln()
        + q * (q * c.powi(4) + 3.0 * c.powi(3)) * horizon
        + 2f64.powf(q) * c.powf(q) * horizon.powf(q)
        + (c + 1.0).powi(2)
        + q * phi_x.ln()
        + bracket
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FullErrorRow {
    pub n: u32,
    #[serde(rename = "M")]
    pub m: u32,
    pub rmse: f64,
    /// RMSE from the squared error inflated by three standard errors, plus
    /// three standard errors of the reference.
    pub rmse_upper: f64,
    pub mean_estimate: f64,
    pub reference: f64,
    pub reference_se: f64,
    pub log_bound: f64,
    pub ratio: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FullErrorReport {
    pub problem: String,
    pub dim: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub seeds: usize,
    pub spec: PerturbationSpec,
    pub rows: Vec<FullErrorRow>,
}

impl FullErrorReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn summary(&self) -> CheckSummary {
        CheckSummary {
            check: format!("fullerror/{}/d={}", self.problem, self.dim),
            pass: self.pass(),
            margin: min_margin(self.rows.iter().map(|r| r.log_bound - r.rmse_upper.ln())),
        }
    }
}

impl CsvTable for FullErrorReport {
    fn header(&self) -> Vec<String> {
        strings(&[
            "n", "M", "rmse", "rmse_upper", "mean_estimate", "reference", "reference_se", "log_bound", "ratio", "pass",
        ])
    }

    fn records(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.n.to_string(),
                    r.m.to_string(),
                    fmt_f64(r.rmse),
                    fmt_f64(r.rmse_upper),
                    fmt_f64(r.mean_estimate),
                    fmt_f64(r.reference),
                    fmt_f64(r.reference_se),
                    fmt_f64(r.log_bound),
                    fmt_f64(r.ratio),
                    r.pass.to_string(),
                ]
            })
            .collect()
    }
}

/// RMSE of `U^0_{n,M}(t,x)` over `seeds` master seeds against the catalog
/// reference, compared with the full error bound. `steps` overrides the
/// default `M^M`-step grid.
pub fn fullerror_check(
    entry: &CatalogEntry,
    pairs: &[(u32, u32)],
    delta: f64,
    t: f64,
    x: &[f64],
    seeds: usize,
    first_seed: u64,
    steps: Option<usize>,
) -> Result<FullErrorReport> {
    let problem = &entry.problem;
    let spec = entry.spec.with_delta(delta);
    let reference = entry.reference.evaluate(problem, t, x)?;
    let mut rows = Vec::new();
    for &(n, m) in pairs {
        let cfg = match steps {
            Some(k) => MlpConfig::new(n, m, TimeGrid::uniform(k, problem.horizon)?, FrozenSample::new(first_seed))?,
            None => MlpConfig::with_default_grid(n, m, problem.horizon, FrozenSample::new(first_seed))?,
        };
        let est = mlp_estimates_over_seeds(problem, &cfg, t, x, first_seed, seeds)?;
        let sq: Vec<f64> = est.iter().map(|u| (u - reference.value).powi(2)).collect();
        let (mse, mse_se) = mean_and_se(&sq);
        let (mean_estimate, _) = mean_and_se(&est);
        let rmse_upper = (mse + SE_INFLATION * mse_se).sqrt() + SE_INFLATION * reference.standard_error;
        let log_bound = fullerror_bound_log(&spec, problem.horizon, spec.phi.eval(x), n, m);
        let ratio = (rmse_upper.ln() - log_bound).exp();
        rows.push(FullErrorRow {
            n,
            m,
            rmse: mse.sqrt(),
            rmse_upper,
            mean_estimate,
            reference: reference.value,
            reference_se: reference.standard_error,
            log_bound,
            ratio,
            pass: ratio <= 1.0,
        });
    }
    Ok(FullErrorReport {
        problem: entry.name.clone(),
        dim: problem.dim,
        t,
        x: x.to_vec(),
        seeds,
        spec,
        rows,
    })
}

/// Constants of the size theorem. `p_size` and `beta_depth` are the network
/// size exponents; `frak_p` bounds the moments of the measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoremConstants {
    pub c: f64,
    pub b: f64,
    pub q: f64,
    pub big_b: f64,
    pub p_size: f64,
    pub frak_p: f64,
    pub alpha: f64,
    pub beta_depth: f64,
    pub gamma: f64,
    pub horizon: f64,
}

impl Default for TheoremConstants {
    fn default() -> Self {
        TheoremConstants {
            c: 1.0,
            b: 1.0,
            q: 2.0,
            big_b: 16.0,
            p_size: 1.0,
            frak_p: 1.0,
            alpha: 2.0,
            beta_depth: 1.0,
            gamma: 1.0,
            horizon: 1.0,
        }
    }
}

impl TheoremConstants {
    /// `B` raised to `max{16, |f(0)|+1, 16|c(4c+2|f(0)|)|^{1/(q-1)}}` if smaller.
    pub fn normalized(self, f0: f64) -> Self {
        let c = self.c;
        let floor = 16f64
            .max(f0.abs() + 1.0)
            .max(16.0 * (c * (4.0 * c + 2.0 * f0.abs())).abs().powf(1.0 / (self.q - 1.0)));
        TheoremConstants { big_b: self.big_b.max(floor), ..self }
    }

    /// `log c_d` with
    /// `c_d = 8^q b^q c² d^{(c+𝔭)(q+1)} B^q (T+1) e^{q(32qc⁴+24c³)T + (4cT)^q + (2c+1)²}`.
    pub fn log_c_d(&self, d: usize) -> f64 {
        let TheoremConstants { c, b, q, big_b, frak_p, horizon, .. } = *self;
        q * 8f64.ln()
            + q * b.ln()
            + 2.0 * c.ln()
            + (c + frak_p) * (q + 1.0) * (d as f64).ln()
            + q * big_b.ln()
            + (horizon + 1.0).ln()
            + q * (32.0 * q * c.powi(4) + 24.0 * c.powi(3)) * horizon
            + (4.0 * c * horizon).powf(q)
            + (2.0 * c + 1.0).powi(2)
    }

    /// `log` of `e^{4ncT + n/2}/n^{n/2} + n^{-n/2}`.
    pub fn log_level_bracket(&self, n: u64) -> f64 {
        let nf = n as f64;
        let a = 4.0 * nf * self.c * self.horizon + nf / 2.0;
        -nf / 2.0 * nf.ln() + a + (-a).exp().ln_1p()
    }

    /// The size exponent `6 + 2α + β + γ`.
    pub fn eps_exponent(&self) -> f64 {
        6.0 + 2.0 * self.alpha + self.beta_depth + self.gamma
    }
}

/// How `ε` is mapped to `(N, δ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum RecipeMode {
    /// `c_d` and `N_{d,ε}` exactly as in the theorem; the search for `N`
    /// stops at `search_cap`.
    Literal { search_cap: u64 },
    /// `N_{d,ε} = levels` and `c_d = prefactor`; keeps the rest of the
    /// mapping at sizes that can be built.
    Desk { levels: u64, prefactor: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RecipePoint {
    pub d: usize,
    pub eps: f64,
    pub log_c_d: f64,
    /// `None` when no level up to the search cap meets `ε/2`.
    pub levels: Option<u64>,
    pub delta: f64,
}

pub fn theorem_recipe(consts: &TheoremConstants, mode: RecipeMode, d: usize, eps: f64) -> Result<RecipePoint> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidArgument(format!("ε = {eps} outside (0, 1]")));
    }
    let (log_c_d, levels) = match mode {
        RecipeMode::Literal { search_cap } => {
            let lc = consts.log_c_d(d);
            let target = (eps / 2.0).ln();
            let n = (2..=search_cap.max(2)).find(|&n| lc + consts.log_level_bracket(n) <= target);
            (lc, n)
        }
        RecipeMode::Desk { levels, prefactor } => (prefactor.ln(), Some(levels.max(1))),
    };
    let delta = (eps.ln() - (4.0 * consts.big_b).ln() - consts.p_size * (d as f64).ln() - log_c_d).exp();
    Ok(RecipePoint { d, eps, log_c_d, levels, delta })
}

/// `log` of `4 B d^p δ^{-β} k² (3N)^{3N+1}`.
pub fn theorem_param_bound_log(consts: &TheoremConstants, d: usize, delta: f64, k: f64, levels: u64) -> f64 {
    let nf = levels as f64;
    (4.0 * consts.big_b).ln() + consts.p_size * (d as f64).ln() - consts.beta_depth * delta.ln()
        + 2.0 * k.ln()
        + (3.0 * nf + 1.0) * (3.0 * nf).ln()
}

/// Coefficient encodings of a problem family at accuracy `δ`.
pub fn family_encodings(family: &str, d: usize, delta: f64) -> Result<ProblemNetworks> {
    let entry = problem_by_name(family, d, 1.0)?;
    Ok(network_encodings(&entry, delta, 1.0)?.nets)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthRow {
    pub d: usize,
    pub eps: f64,
    pub levels: Option<u64>,
    pub delta: f64,
    pub status: String,
    pub measured: Option<u128>,
    pub predicted_bound: Option<u128>,
    pub log_theorem_bound: Option<f64>,
    pub within_prediction: Option<bool>,
    pub within_theorem_bound: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HalvingCheck {
    pub d: usize,
    pub eps: f64,
    pub ratio: f64,
    pub bound_ratio: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthFit {
    pub eta_d: Option<f64>,
    pub eta_eps: Option<f64>,
    pub intercept: f64,
    pub residual_rms: f64,
    pub points: usize,
    pub d_range: (usize, usize),
    pub eps_range: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthReport {
    pub family: String,
    pub mode: RecipeMode,
    pub constants: TheoremConstants,
    pub rows: Vec<GrowthRow>,
    pub fit: Option<GrowthFit>,
    pub halving: Vec<HalvingCheck>,
}

impl GrowthReport {
    pub fn built(&self) -> impl Iterator<Item = &GrowthRow> {
        self.rows.iter().filter(|r| r.measured.is_some())
    }

    /// Pointwise measured ≤ predicted on every built point.
    pub fn pointwise_pass(&self) -> bool {
        self.built().all(|r| r.within_prediction == Some(true))
    }

    pub fn summary(&self) -> CheckSummary {
        CheckSummary {
            check: format!("growth/{}", self.family),
            pass: self.pointwise_pass() && self.built().count() > 0,
            margin: min_margin(self.built().map(|r| {
                (r.predicted_bound.unwrap() as f64).ln() - (r.measured.unwrap() as f64).ln()
            })),
        }
    }
}

impl CsvTable for GrowthReport {
    fn header(&self) -> Vec<String> {
        strings(&[
            "d", "eps", "levels", "delta", "status", "measured", "predicted_bound", "log_theorem_bound",
            "within_prediction", "within_theorem_bound", "eta_d", "eta_eps", "residual_rms",
        ])
    }

    fn records(&self) -> Vec<Vec<String>> {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let (ed, ee, rr) = match &self.fit {
            Some(f) => (
                opt(f.eta_d.map(fmt_f64)),
                opt(f.eta_eps.map(fmt_f64)),
                fmt_f64(f.residual_rms),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.d.to_string(),
                    fmt_f64(r.eps),
                    opt(r.levels.map(|v| v.to_string())),
                    fmt_f64(r.delta),
                    r.status.clone(),
                    opt(r.measured.map(|v| v.to_string())),
                    opt(r.predicted_bound.map(|v| v.to_string())),
                    opt(r.log_theorem_bound.map(fmt_f64)),
                    opt(r.within_prediction.map(|v| v.to_string())),
                    opt(r.within_theorem_bound.map(|v| v.to_string())),
                    ed.clone(),
                    ee.clone(),
                    rr.clone(),
                ]
            })
            .collect()
    }
}

fn k_of(nets: &ProblemNetworks) -> f64 {
    let a = nets.architectures();
    [a.f.max_width(), a.g.max_width(), a.mu.max_width(), a.sigma.max_width(), 2]
        .into_iter()
        .max()
        .unwrap() as f64
}

fn growth_point(
    family: &str,
    consts: &TheoremConstants,
    mode: RecipeMode,
    d: usize,
    eps: f64,
    param_limit: u128,
) -> Result<GrowthRow> {
    let rp = theorem_recipe(consts, mode, d, eps)?;
    let mut row = GrowthRow {
        d,
        eps,
        levels: rp.levels,
        delta: rp.delta,
        status: String::new(),
        measured: None,
        predicted_bound: None,
        log_theorem_bound: None,
        within_prediction: None,
        within_theorem_bound: None,
    };
    let Some(n) = rp.levels else {
        row.status = "skipped: no level meets eps/2 within the search cap".into();
        return Ok(row);
    };
    let nets = match family_encodings(family, d, rp.delta) {
        Ok(n) => n,
        Err(Error::Unreachable { achievable, .. }) => {
            row.status = format!("skipped: encoding accuracy unreachable (best {achievable:e})");
            return Ok(row);
        }
        Err(e) => return Err(e),
    };
    let log_thm = theorem_param_bound_log(consts, d, rp.delta, k_of(&nets), n);
    row.log_theorem_bound = Some(log_thm);
    let steps = (n as u128).checked_pow(n as u32).filter(|&k| k <= 1 << 20 && n <= u32::MAX as u64);
    let Some(steps) = steps else {
        row.status = format!("skipped: grid with N^N steps for N = {n} exceeds the memory guard");
        return Ok(row);
    };
    let m = n as u32;
    let pred = predict_architecture(&nets.architectures(), m, m, steps as usize)?;
    row.predicted_bound = Some(pred.param_bound);
    if pred.param_count > param_limit {
        row.status = format!("skipped: {} dense parameters exceed the limit {param_limit}", pred.param_count);
        return Ok(row);
    }
    let cfg = MlpConfig::new(m, m, TimeGrid::uniform(steps as usize, consts.horizon)?, FrozenSample::new(0))?;
    let built = build_mlp_network_with_limit(&nets, &cfg, &IndexPath::root(), 0.0, param_limit)?;
    let count = built.network.param_count();
    row.status = "built".into();
    row.measured = Some(count);
    row.within_prediction = Some(count <= pred.param_bound);
    row.within_theorem_bound = Some((count as f64).ln() <= log_thm);
    Ok(row)
}

/// Least squares fit of `log P = a + η_d log d + η_ε log(1/ε)`; an axis with
/// a single distinct value is dropped from the model.
pub fn fit_growth(points: &[(usize, f64, u128)]) -> Option<GrowthFit> {
    if points.is_empty() {
        return None;
    }
    let mut ds: Vec<usize> = points.iter().map(|p| p.0).collect();
    ds.sort_unstable();
    ds.dedup();
    let mut es: Vec<f64> = points.iter().map(|p| p.1).collect();
    es.sort_by(f64::total_cmp);
    es.dedup();
    let use_d = ds.len() > 1;
    let use_e = es.len() > 1;
    let feats = |p: &(usize, f64, u128)| {
        let mut f = vec![1.0];
        if use_d {
            f.push((p.0 as f64).ln());
        }
        if use_e {
            f.push(-p.1.ln());
        }
        f
    };
    let k = 1 + use_d as usize + use_e as usize;
    let mut ata = vec![vec![0.0; k]; k];
    let mut atb = vec![0.0; k];
    for p in points {
        let f = feats(p);
        let y = (p.2 as f64).ln();
        for i in 0..k {
            atb[i] += f[i] * y;
            for j in 0..k {
                ata[i][j] += f[i] * f[j];
            }
        }
    }
    let coef = solve_small(ata, atb)?;
    let resid: f64 = points
        .iter()
        .map(|p| {
            let f = feats(p);
            let pred: f64 = f.iter().zip(&coef).map(|(a, b)| a * b).sum();
            ((p.2 as f64).ln() - pred).powi(2)
        })
        .sum();
    let mut idx = 1;
    let eta_d = use_d.then(|| {
        idx += 1;
        coef[idx - 1]
    });
    let eta_eps = use_e.then(|| coef[idx]);
    Some(GrowthFit {
        eta_d,
        eta_eps,
        intercept: coef[0],
        residual_rms: (resid / points.len() as f64).sqrt(),
        points: points.len(),
        d_range: (ds[0], *ds.last().unwrap()),
        eps_range: (es[0], *es.last().unwrap()),
    })
}

/// Gaussian elimination with partial pivoting for the normal equations.
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Build networks over the `(d, ε)` grid and compare sizes with the
/// predictions; points beyond `param_limit` are skipped, never failed.
pub fn growth_fit(
    family: &str,
    ds: &[usize],
    eps: &[f64],
    consts: &TheoremConstants,
    mode: RecipeMode,
    param_limit: u128,
) -> Result<GrowthReport> {
    let grid: Vec<(usize, f64)> = ds.iter().flat_map(|&d| eps.iter().map(move |&e| (d, e))).collect();
    let rows: Vec<GrowthRow> = grid
        .iter()
        .map(|&(d, e)| growth_point(family, consts, mode, d, e, param_limit))
        .collect::<Result<_>>()?;
    let pts: Vec<(usize, f64, u128)> = rows.iter().filter_map(|r| r.measured.map(|m| (r.d, r.eps, m))).collect();
    let fit = if pts.len() > 1 { fit_growth(&pts) } else { None };
    let mut halving = Vec::new();
    let bound_ratio = 2f64.powf(consts.eps_exponent());
    for &d in ds {
        for &e in eps {
            let hi = rows.iter().find(|r| r.d == d && r.eps == e).and_then(|r| r.measured);
            let lo = rows.iter().find(|r| r.d == d && r.eps == e / 2.0).and_then(|r| r.measured);
            if let (Some(hi), Some(lo)) = (hi, lo) {
                let ratio = lo as f64 / hi as f64;
                halving.push(HalvingCheck { d, eps: e, ratio, bound_ratio, pass: ratio <= bound_ratio });
            }
        }
    }
    Ok(GrowthReport { family: family.into(), mode, constants: *consts, rows, fit, halving })
}

/// Architecture helper for reports.
pub fn describe(arch: &Architecture) -> String {
    arch.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bracket_arithmetic() {
        let v = fullerror_bracket(3, 3, 1.0, 1.0, 0.0);
        assert!((v - 348.1).abs() < 0.1, "{v}");
    }

    #[test]
    fn l2_of_constant_offset() {
        let cfg = ErrorMeasureConfig::default();
        let r = l2_error(2, |_, x| Ok(x[0] + 1.0), |x| x[0], &cfg).unwrap();
        assert!((r.rmse - 1.0).abs() < 1e-12);
        let z = l2_error(2, |_, x| Ok(x[0]), |x| x[0], &cfg).unwrap();
        assert_eq!(z.rmse, 0.0);
        let small = ErrorMeasureConfig { samples: 10, ..cfg };
        assert!(l2_error(2, |_, x| Ok(x[0]), |x| x[0], &small).is_err());
    }

    #[test]
    fn gaussian_expectation_of_relu() {
        let net = ReluNetwork::new(vec![
            crate::net_calculus::Layer::new(crate::net_calculus::Matrix::identity(1), vec![0.0]).unwrap(),
            crate::net_calculus::Layer::new(crate::net_calculus::Matrix::identity(1), vec![0.0]).unwrap(),
        ])
        .unwrap();
        let e = gaussian_expectation(&net, &[0.0], 1.0).unwrap();
        assert!((e - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        assert_eq!(gaussian_expectation(&net, &[-2.0], 0.0).unwrap(), 0.0);
    }

    #[test]
    fn fit_recovers_exponents() {
        let pts: Vec<(usize, f64, u128)> = [1usize, 2, 4]
            .iter()
            .flat_map(|&d| [0.5, 0.25].iter().map(move |&e| (d, e, (10.0 * (d as f64).powi(2) / e) as u128)))
            .collect();
        let f = fit_growth(&pts).unwrap();
        assert!((f.eta_d.unwrap() - 2.0).abs() < 1e-9);
        assert!((f.eta_eps.unwrap() - 1.0).abs() < 1e-9);
        let single = fit_growth(&pts[..1]).unwrap();
        assert!(single.eta_d.is_none() && single.eta_eps.is_none());
    }

    #[test]
    fn literal_recipe_levels_are_large() {
        let c = TheoremConstants::default();
        let rp = theorem_recipe(&c, RecipeMode::Literal { search_cap: 1_000_000 }, 1, 0.5).unwrap();
        assert!(rp.levels.unwrap() > 1000);
        let desk = theorem_recipe(&c, RecipeMode::Desk { levels: 2, prefactor: 1.0 }, 2, 0.5).unwrap();
        assert_eq!(desk.levels, Some(2));
        assert!((desk.delta - 0.5 / (64.0 * 2.0)).abs() < 1e-15);
    }
}
