//! Full-history multilevel Picard estimator `U^θ_{n,M}(t,x)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::index_rng::{uniform_time, FrozenSample, IndexPath};
use crate::net_builder::ProblemNetworks;
use crate::net_calculus::RealFunctionHandle;
use crate::sde_sim::{euler_evaluate, Dynamics, TimeGrid};

/// `(d, T, μ, σ, f, g)` plus optional network encodings.
#[derive(Clone, Debug)]
pub struct SemilinearProblem {
    pub name: String,
    pub dim: usize,
    pub horizon: f64,
    pub dynamics: Dynamics,
    /// Nonlinearity `R -> R`.
    pub f: RealFunctionHandle,
    /// Terminal condition `R^d -> R`.
    pub g: RealFunctionHandle,
    /// Lipschitz constant of `f`.
    pub lipschitz_c: f64,
    pub encodings: Option<ProblemNetworks>,
}

impl SemilinearProblem {
    pub fn new(
        name: &str,
        horizon: f64,
        dynamics: Dynamics,
        f: RealFunctionHandle,
        g: RealFunctionHandle,
        lipschitz_c: f64,
    ) -> Result<Self> {
        let dim = dynamics.dim;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon {horizon} must be positive")));
        }
        if f.in_dim() != 1 || f.out_dim() != 1 {
            return Err(Error::Dimension("nonlinearity must map R to R".into()));
        }
        if g.in_dim() != dim || g.out_dim() != 1 {
            return Err(Error::Dimension(format!("terminal condition must map R^{dim} to R")));
        }
        Ok(SemilinearProblem {
            name: name.to_string(),
            dim,
            horizon,
            dynamics,
            f,
            g,
            lipschitz_c,
            encodings: None,
        })
    }

    pub fn with_encodings(mut self, nets: ProblemNetworks) -> Self {
        self.encodings = Some(nets);
        self
    }

    /// The problem whose coefficients are the realizations of its encodings.
    pub fn encoded(&self) -> Result<SemilinearProblem> {
        let nets = self
            .encodings
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no network encodings", self.name)))?;
        let dynamics = Dynamics::new(self.dim, nets.mu_handle(), nets.sigma.matrix_handle())?;
        let mut p = SemilinearProblem::new(
            &format!("{}[encoded]", self.name),
            self.horizon,
            dynamics,
            RealFunctionHandle::from_network(nets.f.clone()),
            RealFunctionHandle::from_network(nets.g.clone()),
            self.lipschitz_c,
        )?;
        p.encodings = Some(nets.clone());
        Ok(p)
    }

    pub fn f_scalar(&self, v: f64) -> f64 {
        self.f.call(&[v])[0]
    }

    pub fn g_scalar(&self, x: &[f64]) -> f64 {
        self.g.call(x)[0]
    }
}

/// Level `n`, base `M`, time grid and frozen sample.
#[derive(Clone, Debug)]
pub struct MlpConfig {
    pub n: u32,
    pub m: u32,
    pub grid: TimeGrid,
    pub sample: FrozenSample,
}

impl MlpConfig {
    pub fn new(n: u32, m: u32, grid: TimeGrid, sample: FrozenSample) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("M must be at least 1".into()));
        }
        Ok(MlpConfig { n, m, grid, sample })
    }

    /// The grid with `M^M` uniform steps.
    pub fn with_default_grid(n: u32, m: u32, horizon: f64, sample: FrozenSample) -> Result<Self> {
        let steps = (m as u64).checked_pow(m).filter(|k| *k <= 1 << 24).ok_or_else(|| {
            Error::InvalidArgument(format!("M^M steps for M = {m} is too large"))
        })?;
        MlpConfig::new(n, m, TimeGrid::uniform(steps as usize, horizon)?, sample)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        MlpConfig { sample: FrozenSample::new(seed), ..self.clone() }
    }
}

/// Refuse `n = M >= 6` unless forced.
pub fn check_cost_guard(n: u32, m: u32, force: bool) -> Result<()> {
    if !force && n >= 6 && m >= 6 {
        return Err(Error::CostGuard { n, m });
    }
    Ok(())
}

fn pow(m: u32, e: u32) -> u64 {
    (m as u64).pow(e)
}

fn sum_ordered(values: Vec<f64>) -> f64 {
    values.into_iter().fold(0.0, |a, b| a + b)
}

pub fn mlp_estimate(
    problem: &SemilinearProblem,
    config: &MlpConfig,
    theta: &IndexPath,
    t: f64,
    x: &[f64],
) -> Result<f64> {
    if !(0.0..=problem.horizon).contains(&t) {
        return Err(Error::InvalidArgument(format!("time {t} outside [0, {}]", problem.horizon)));
    }
    if x.len() != problem.dim {
        return Err(Error::Dimension(format!("point of length {} for d = {}", x.len(), problem.dim)));
    }
    if (config.grid.horizon() - problem.horizon).abs() > 0.0 {
        return Err(Error::InvalidArgument("grid horizon differs from problem horizon".into()));
    }
    estimate(problem, config, config.n, theta, t, x)
}

fn estimate(
    p: &SemilinearProblem,
    cfg: &MlpConfig,
    n: u32,
    theta: &IndexPath,
    t: f64,
    x: &[f64],
) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    let horizon = p.horizon;
    let m = cfg.m;
    let samples = pow(m, n);
    let terminal: Vec<f64> = (1..=samples as i64)
        .into_par_iter()
        .map(|i| {
            let eta = theta.child(0, -i);
            let y = euler_evaluate(&p.dynamics, &cfg.grid, cfg.sample, &eta, t, x, horizon)?;
            Ok(p.g_scalar(&y))
        })
        .collect::<Result<_>>()?;
    let mut total = sum_ordered(terminal) / samples as f64;
    for l in 0..n {
        let count = pow(m, n - l);
        let terms: Vec<f64> = (1..=count as i64)
            .into_par_iter()
            .map(|i| {
                let eta = theta.child(l as i64, i);
                let tau = uniform_time(cfg.sample, &eta, t, horizon)?;
                let y = euler_evaluate(&p.dynamics, &cfg.grid, cfg.sample, &eta, t, x, tau)?;
                let plus = p.f_scalar(estimate(p, cfg, l, &eta, tau, &y)?);
                let minus = if l >= 1 {
                    let zeta = theta.child(-(l as i64), i);
                    p.f_scalar(estimate(p, cfg, l - 1, &zeta, tau, &y)?)
                } else {
                    0.0
                };
                Ok(plus - minus)
            })
            .collect::<Result<_>>()?;
        total += (horizon - t) / count as f64 * sum_ordered(terms);
    }
    if !total.is_finite() {
        return Err(Error::Numeric { path: theta.entries().to_vec(), what: format!("U_{n}") });
    }
    Ok(total)
}

/// Root-mean-square error and related statistics over master seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct RmseReport {
    pub rmse: f64,
    /// Standard error of the mean squared error.
    pub mse_standard_error: f64,
    pub mean_estimate: f64,
    /// Standard error of the mean estimate.
    pub estimate_standard_error: f64,
    pub seeds: usize,
}

impl RmseReport {
    /// RMSE computed from the mean squared error inflated by `k` standard errors.
    pub fn rmse_upper(&self, k: f64) -> f64 {
        (self.rmse * self.rmse + k * self.mse_standard_error).sqrt()
    }
}

/// Estimates at `(t, x)` for master seeds `first_seed .. first_seed + seeds`.
pub fn mlp_estimates_over_seeds(
    problem: &SemilinearProblem,
    config: &MlpConfig,
    t: f64,
    x: &[f64],
    first_seed: u64,
    seeds: usize,
) -> Result<Vec<f64>> {
    (0..seeds as u64)
        .into_par_iter()
        .map(|k| mlp_estimate(problem, &config.with_seed(first_seed + k), &IndexPath::root(), t, x))
        .collect()
}

pub fn mlp_rmse_report(
    problem: &SemilinearProblem,
    config: &MlpConfig,
    t: f64,
    x: &[f64],
    reference: f64,
    seeds: usize,
) -> Result<RmseReport> {
    if !reference.is_finite() {
        return Err(Error::InvalidArgument("reference must be finite".into()));
    }
    if seeds == 0 {
        return Err(Error::InvalidArgument("need at least one seed".into()));
    }
    let est = mlp_estimates_over_seeds(problem, config, t, x, config.sample.master_seed, seeds)?;
    let sq: Vec<f64> = est.iter().map(|u| (u - reference).powi(2)).collect();
    let (mse, mse_se) = mean_and_se(&sq);
    let (mean, est_se) = mean_and_se(&est);
    Ok(RmseReport {
        rmse: mse.sqrt(),
        mse_standard_error: mse_se,
        mean_estimate: mean,
        estimate_standard_error: est_se,
        seeds,
    })
}

pub fn mlp_rmse(
    problem: &SemilinearProblem,
    config: &MlpConfig,
    t: f64,
    x: &[f64],
    reference: f64,
    seeds: usize,
) -> Result<f64> {
    Ok(mlp_rmse_report(problem, config, t, x, reference, seeds)?.rmse)
}

/// Sample mean and its standard error.
pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
