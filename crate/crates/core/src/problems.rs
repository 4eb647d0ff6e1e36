//! Catalog of semilinear problems with reference solutions, Setting constants
//! and ReLU encodings of their coefficients.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::index_rng::FrozenSample;
use crate::mlp_solver::{mean_and_se, mlp_estimates_over_seeds, MlpConfig, SemilinearProblem};
use crate::net_builder::{ProblemNetworks, SigmaNetworkFamily};
use crate::net_calculus::{
    affine_network, compose_fused, identity_network, Layer, Matrix, RealFunctionHandle, ReluNetwork,
};
use crate::sde_sim::{Dynamics, TimeGrid};

pub const PROBLEM_NAMES: [&str; 4] = ["ode-exp", "heat", "relu-exact", "bs-like"];

/// Drift and diffusion constants of the `relu-exact` problem.
pub const RELU_EXACT_DRIFT: (f64, f64) = (-0.1, 0.05);
pub const RELU_EXACT_SIGMA: f64 = 0.3;

/// `μ(x) = BS_DRIFT x`, `σ(x) = BS_VOL diag(x)`, strike `BS_STRIKE`, rate `BS_RATE`.
pub const BS_DRIFT: f64 = 0.05;
pub const BS_VOL: f64 = 0.2;
pub const BS_STRIKE: f64 = 0.5;
pub const BS_RATE: f64 = 0.05;

/// Largest interpolation piece count used for smooth terminal conditions.
pub const MAX_PIECES: usize = 1 << 14;

type Evaluator = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;

/// High-level MLP run used as a reference where no closed form exists.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OracleSpec {
    pub n: u32,
    pub m: u32,
    pub steps: usize,
    pub seeds: usize,
    pub first_seed: u64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec { n: 4, m: 4, steps: 16, seeds: 30, first_seed: 1 << 40 }
    }
}

#[derive(Clone)]
pub enum ReferenceKind {
    ClosedForm(Arc<Evaluator>),
    MlpOracle(OracleSpec),
}

/// A reference value with its standard error (zero for closed forms).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReferenceValue {
    pub value: f64,
    pub standard_error: f64,
}

#[derive(Clone)]
pub struct ReferenceSolution {
    pub kind: ReferenceKind,
    pub note: String,
}

impl std::fmt::Debug for ReferenceSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let k = match &self.kind {
            ReferenceKind::ClosedForm(_) => "closed-form".to_string(),
            ReferenceKind::MlpOracle(s) => format!("mlp-oracle {s:?}"),
        };
        write!(f, "ReferenceSolution({k}: {})", self.note)
    }
}

impl ReferenceSolution {
    pub fn closed_form<F>(note: &str, f: F) -> Self
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        ReferenceSolution { kind: ReferenceKind::ClosedForm(Arc::new(f)), note: note.into() }
    }

    pub fn is_closed_form(&self) -> bool {
        matches!(self.kind, ReferenceKind::ClosedForm(_))
    }

    /// Closed-form value, if any.
    pub fn exact(&self, t: f64, x: &[f64]) -> Option<f64> {
        match &self.kind {
            ReferenceKind::ClosedForm(f) => Some(f(t, x)),
            ReferenceKind::MlpOracle(_) => None,
        }
    }

    pub fn evaluate(&self, problem: &SemilinearProblem, t: f64, x: &[f64]) -> Result<ReferenceValue> {
        match &self.kind {
            ReferenceKind::ClosedForm(f) => Ok(ReferenceValue { value: f(t, x), standard_error: 0.0 }),
            ReferenceKind::MlpOracle(spec) => {
                let grid = TimeGrid::uniform(spec.steps, problem.horizon)?;
                let cfg = MlpConfig::new(spec.n, spec.m, grid, FrozenSample::new(spec.first_seed))?;
                let est = mlp_estimates_over_seeds(problem, &cfg, t, x, spec.first_seed, spec.seeds)?;
                let (value, standard_error) = mean_and_se(&est);
                Ok(ReferenceValue { value, standard_error })
            }
        }
    }
}

/// Lyapunov function `φ(x) = A + a ‖x‖²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuadraticLyapunov {
    #[serde(rename = "A")]
    pub offset: f64,
    pub a: f64,
}

impl QuadraticLyapunov {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.offset + self.a * x.iter().map(|v| v * v).sum::<f64>()
    }

    /// The choice `d^{2c} + ‖x‖²`.
    pub fn dimension_power(d: usize, c: f64) -> Self {
        QuadraticLyapunov { offset: (d as f64).powf(2.0 * c), a: 1.0 }
    }
}

/// The constants `(δ, q, b, β, p, c)` and `φ` of the perturbation setting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PerturbationSpec {
    pub delta: f64,
    pub q: f64,
    pub b: f64,
    pub beta: f64,
    pub p: f64,
    pub c: f64,
    pub phi: QuadraticLyapunov,
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.delta >= 0.0
            && self.q >= 2.0
            && self.b >= 1.0
            && self.beta >= 1.0
            && self.c >= 1.0
            && self.p >= 2.0 * self.beta
            && self.phi.offset >= 1.0
            && self.phi.a > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("constants out of range: {self:?}")));
        }
        Ok(())
    }

    pub fn with_delta(self, delta: f64) -> Self {
        PerturbationSpec { delta, ..self }
    }

    /// Smallest spec with `p = 2`, `β = 1`, `q = 2` whose quadratic `φ`
    /// satisfies the Lyapunov hypothesis for coefficients with
    /// `max{‖μ(0)‖, ‖σ(0)‖_F} = m0` and Lipschitz constants at most `lip`.
    pub fn quadratic(m0: f64, lip: f64, b: f64) -> Self {
        let a: f64 = if m0 > 0.0 { 2.0 } else { 1.0 };
        let c = (2.0 * a).max(lip).max(1.0);
        let offset = if m0 > 0.0 { (m0 * m0 / (c * c * (1.0 - 1.0 / a))).max(1.0) } else { 1.0 };
        PerturbationSpec {
            delta: 0.0,
            q: 2.0,
            b,
            beta: 1.0,
            p: 2.0,
            c,
            phi: QuadraticLyapunov { offset, a },
        }
    }

    /// Exact supremum of the three ratios in the Lyapunov hypothesis for
    /// quadratic `φ`, returned as `(gradient, hessian, growth)`; each must be
    /// at most `c`.
    pub fn lyapunov_ratios(&self, m0: f64) -> (f64, f64, f64) {
        let QuadraticLyapunov { offset: big_a, a } = self.phi;
        let p = self.p;
        // sup_r 2 a r / (A + a r²)^{(p-1)/p}
        let e = (p - 1.0) / p;
        let grad = if (e - 0.5).abs() < 1e-15 {
            2.0 * a.sqrt()
        } else {
            let r_star = (big_a / (a * (2.0 * e - 1.0))).sqrt();
            2.0 * a * r_star / (big_a + a * r_star * r_star).powf(e)
        };
        let hess = 2.0 * a / big_a.powf((p - 2.0) / p);
        let c = self.c;
        let growth = if (p - 2.0).abs() < 1e-15 {
            (c * c / a + m0 * m0 / big_a).sqrt()
        } else {
            (0..=20_000)
                .map(|k| {
                    let r = 1e-3 * k as f64 * (1.0 + k as f64);
                    (c * r + m0) / (big_a + a * r * r).powf(1.0 / p)
                })
                .fold(0.0, f64::max)
        };
        (grad, hess, growth)
    }

    pub fn lyapunov_holds(&self, m0: f64) -> bool {
        let (g, h, r) = self.lyapunov_ratios(m0);
        let tol = 1e-12 * self.c;
        g <= self.c + tol && h <= self.c + tol && r <= self.c + tol
    }
}

/// A catalog entry.
#[derive(Clone, Debug)]
pub struct CatalogEntry {
    pub name: String,
    pub problem: SemilinearProblem,
    pub reference: ReferenceSolution,
    pub spec: PerturbationSpec,
    /// `max{‖μ(0)‖, ‖σ(0)‖_F}`.
    pub m0: f64,
}

impl CatalogEntry {
    /// Growth hypothesis `max{T|f(0)|, |g(x)|} <= b φ(x)^{β/p}` at the given points.
    pub fn growth_holds(&self, points: &[Vec<f64>]) -> bool {
        let s = &self.spec;
        let tf0 = self.problem.horizon * self.problem.f_scalar(0.0).abs();
        points.iter().all(|x| {
            let rhs = s.b * s.phi.eval(x).powf(s.beta / s.p);
            tf0 <= rhs && self.problem.g_scalar(x).abs() <= rhs
        })
    }
}

pub fn problem_catalog(d: usize) -> Result<Vec<CatalogEntry>> {
    PROBLEM_NAMES.iter().map(|n| problem_by_name(n, d, 1.0)).collect()
}

pub fn problem_by_name(name: &str, d: usize, horizon: f64) -> Result<CatalogEntry> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    match name {
        "ode-exp" => ode_exp(d, horizon),
        "heat" => heat(d, horizon),
        "relu-exact" => relu_exact(d, horizon),
        "bs-like" => bs_like(d, horizon),
        other => Err(Error::Config(format!(
            "unknown problem '{other}', expected one of {}",
            PROBLEM_NAMES.join(", ")
        ))),
    }
}

fn linear_dynamics(d: usize, w: Matrix, b: Vec<f64>, sig: Matrix) -> Result<Dynamics> {
    let s = sig.data().to_vec();
    Dynamics::new(
        d,
        RealFunctionHandle::new(d, d, move |x| {
            w.mul_vec(x).into_iter().zip(&b).map(|(v, c)| v + c).collect()
        }),
        RealFunctionHandle::new(d, d * d, move |_| s.clone()),
    )
}

fn zero_encodings(d: usize, f: ReluNetwork, g: ReluNetwork) -> Result<ProblemNetworks> {
    ProblemNetworks::new(
        affine_network(&Matrix::zeros(d, d), &vec![0.0; d], 3)?,
        SigmaNetworkFamily::constant(Matrix::zeros(d, d), 3)?,
        f,
        g,
    )
}

fn ode_exp(d: usize, horizon: f64) -> Result<CatalogEntry> {
    let dynamics = linear_dynamics(d, Matrix::zeros(d, d), vec![0.0; d], Matrix::zeros(d, d))?;
    let problem = SemilinearProblem::new(
        "ode-exp",
        horizon,
        dynamics,
        RealFunctionHandle::new(1, 1, |v| vec![v[0]]),
        RealFunctionHandle::new(d, 1, |_| vec![1.0]),
        1.0,
    )?
    .with_encodings(zero_encodings(
        d,
        identity_network(1, 3)?,
        affine_network(&Matrix::zeros(1, d), &[1.0], 3)?,
    )?);
    Ok(CatalogEntry {
        name: "ode-exp".into(),
        problem,
        reference: ReferenceSolution::closed_form("u(t,x) = exp(T - t)", move |t, _| (horizon - t).exp()),
        spec: PerturbationSpec::quadratic(0.0, 1.0, 1.0),
        m0: 0.0,
    })
}

fn heat(d: usize, horizon: f64) -> Result<CatalogEntry> {
    let s2 = std::f64::consts::SQRT_2;
    let sig = Matrix::identity(d).scaled(s2);
    let dynamics = linear_dynamics(d, Matrix::zeros(d, d), vec![0.0; d], sig)?;
    let problem = SemilinearProblem::new(
        "heat",
        horizon,
        dynamics,
        RealFunctionHandle::new(1, 1, |_| vec![0.0]),
        RealFunctionHandle::new(d, 1, |x| vec![x.iter().map(|v| v * v).sum()]),
        1.0,
    )?;
    let m0 = (2.0 * d as f64).sqrt();
    Ok(CatalogEntry {
        name: "heat".into(),
        problem,
        reference: ReferenceSolution::closed_form("u(t,x) = |x|^2 + 2d(T - t)", move |t, x| {
            x.iter().map(|v| v * v).sum::<f64>() + 2.0 * d as f64 * (horizon - t)
        }),
        spec: PerturbationSpec::quadratic(m0, 1.0, 1.0),
        m0,
    })
}

fn relu_exact(d: usize, horizon: f64) -> Result<CatalogEntry> {
    let (k, c0) = RELU_EXACT_DRIFT;
    let w = Matrix::identity(d).scaled(k);
    let b = vec![c0; d];
    let sig = Matrix::identity(d).scaled(RELU_EXACT_SIGMA);
    let dynamics = linear_dynamics(d, w.clone(), b.clone(), sig.clone())?;
    let problem = SemilinearProblem::new(
        "relu-exact",
        horizon,
        dynamics,
        RealFunctionHandle::new(1, 1, |v| vec![0.5 * v[0].clamp(-1.0, 1.0)]),
        RealFunctionHandle::new(d, 1, |x| vec![x.iter().copied().fold(f64::NEG_INFINITY, f64::max)]),
        1.0,
    )?
    .with_encodings(ProblemNetworks::new(
        affine_network(&w, &b, 3)?,
        SigmaNetworkFamily::constant(sig, 3)?,
        half_clamp_network()?,
        max_network(d)?,
    )?);
    let m0 = (d as f64).sqrt() * c0.abs().max(RELU_EXACT_SIGMA);
    Ok(CatalogEntry {
        name: "relu-exact".into(),
        problem,
        reference: ReferenceSolution {
            kind: ReferenceKind::MlpOracle(OracleSpec::default()),
            note: "high-level MLP average".into(),
        },
        spec: PerturbationSpec::quadratic(m0, 1.0, 1.0),
        m0,
    })
}

fn bs_like(d: usize, horizon: f64) -> Result<CatalogEntry> {
    let drift = Matrix::identity(d).scaled(BS_DRIFT);
    let dim = d;
    let dynamics = Dynamics::new(
        d,
        RealFunctionHandle::new(d, d, |x| x.iter().map(|v| BS_DRIFT * v).collect()),
        RealFunctionHandle::new(d, d * d, move |x| {
            let mut m = vec![0.0; dim * dim];
            for i in 0..dim {
                m[i * dim + i] = BS_VOL * x[i];
            }
            m
        }),
    )?;
    let problem = SemilinearProblem::new(
        "bs-like",
        horizon,
        dynamics,
        RealFunctionHandle::new(1, 1, |v| vec![-BS_RATE * v[0].max(0.0)]),
        RealFunctionHandle::new(d, 1, |x| {
            vec![(x.iter().copied().fold(f64::NEG_INFINITY, f64::max) - BS_STRIKE).max(0.0)]
        }),
        1.0,
    )?;
    let directions: Vec<Matrix> = (0..d)
        .map(|j| {
            let mut m = Matrix::zeros(d, d);
            m.set(j, j, BS_VOL);
            m
        })
        .collect();
    let f = ReluNetwork::new(vec![
        Layer::new(Matrix::identity(1), vec![0.0])?,
        Layer::new(Matrix::identity(1).scaled(-BS_RATE), vec![0.0])?,
    ])?;
    let hinge = ReluNetwork::new(vec![
        Layer::new(Matrix::identity(1), vec![-BS_STRIKE])?,
        Layer::new(Matrix::identity(1), vec![0.0])?,
    ])?;
    let problem = problem.with_encodings(ProblemNetworks::new(
        affine_network(&drift, &vec![0.0; d], 3)?,
        SigmaNetworkFamily::affine(directions, Matrix::zeros(d, d), 3)?,
        f,
        compose_fused(&hinge, &max_network(d)?)?,
    )?);
    Ok(CatalogEntry {
        name: "bs-like".into(),
        problem,
        reference: ReferenceSolution {
            kind: ReferenceKind::MlpOracle(OracleSpec::default()),
            note: "high-level MLP average".into(),
        },
        spec: PerturbationSpec::quadratic(0.0, 1.0, 1.0),
        m0: 0.0,
    })
}

/// `v -> 0.5 clamp(v, -1, 1) = 0.5 (relu(v + 1) - relu(v - 1)) - 0.5`.
pub fn half_clamp_network() -> Result<ReluNetwork> {
    ReluNetwork::new(vec![
        Layer::new(Matrix::from_rows(&[vec![1.0], vec![1.0]])?, vec![1.0, -1.0])?,
        Layer::new(Matrix::from_rows(&[vec![0.5, -0.5]])?, vec![-0.5])?,
    ])
}

/// One level of the pairwise max tree on `m` inputs: `max(a, b) = a⁺ - a⁻ + (b - a)⁺`,
/// an unpaired last input passes through its sign split.
fn max_level(m: usize) -> Result<ReluNetwork> {
    let pairs = m / 2;
    let odd = m % 2;
    let hidden = 3 * pairs + 2 * odd;
    let out = pairs + odd;
    let mut w1 = Matrix::zeros(hidden, m);
    let mut w2 = Matrix::zeros(out, hidden);
    for p in 0..pairs {
        let (a, b, r) = (2 * p, 2 * p + 1, 3 * p);
        w1.set(r, a, 1.0);
        w1.set(r + 1, a, -1.0);
        w1.set(r + 2, b, 1.0);
        w1.set(r + 2, a, -1.0);
        w2.set(p, r, 1.0);
        w2.set(p, r + 1, -1.0);
        w2.set(p, r + 2, 1.0);
    }
    if odd == 1 {
        let r = 3 * pairs;
        w1.set(r, m - 1, 1.0);
        w1.set(r + 1, m - 1, -1.0);
        w2.set(pairs, r, 1.0);
        w2.set(pairs, r + 1, -1.0);
    }
    ReluNetwork::new(vec![Layer::new(w1, vec![0.0; hidden])?, Layer::new(w2, vec![0.0; out])?])
}

/// `x -> max_i x_i` on `R^d`.
pub fn max_network(d: usize) -> Result<ReluNetwork> {
    if d == 1 {
        return identity_network(1, 3);
    }
    let mut net = max_level(d)?;
    let mut m = d.div_ceil(2);
    while m > 1 {
        net = compose_fused(&max_level(m)?, &net)?;
        m = m.div_ceil(2);
    }
    Ok(net)
}

/// Piecewise-linear interpolant of `x²` on `[-r, r]` with `pieces` equal
/// pieces, linearly extended outside, applied to every coordinate and summed.
pub fn squared_norm_interpolant(d: usize, r: f64, pieces: usize) -> Result<ReluNetwork> {
    if pieces == 0 || !(r > 0.0) {
        return Err(Error::InvalidArgument("need at least one piece on a nonempty interval".into()));
    }
    let h = 2.0 * r / pieces as f64;
    let knots: Vec<f64> = (0..=pieces).map(|k| -r + h * k as f64).collect();
    let slope0 = knots[0] + knots[1];
    let alpha = -knots[0] * knots[1];
    let per = pieces + 1;
    let mut w1 = Matrix::zeros(d * per, d);
    let mut b1 = vec![0.0; d * per];
    let mut w2 = Matrix::zeros(1, d * per);
    for i in 0..d {
        let base = i * per;
        w1.set(base, i, 1.0);
        w1.set(base + 1, i, -1.0);
        w2.set(0, base, slope0);
        w2.set(0, base + 1, -slope0);
        for k in 1..pieces {
            w1.set(base + 1 + k, i, 1.0);
            b1[base + 1 + k] = -knots[k];
            w2.set(0, base + 1 + k, 2.0 * h);
        }
    }
    ReluNetwork::new(vec![Layer::new(w1, b1)?, Layer::new(w2, vec![alpha * d as f64])?])
}

/// Encodings with their measured deviation from the exact coefficients.
#[derive(Clone, Debug)]
pub struct EncodingReport {
    pub nets: ProblemNetworks,
    /// Sup deviation of `g` on `[-r, r]^d`.
    pub delta_box: f64,
    /// Sup over sampled points of `|g - g̃| / φ^q`.
    pub delta_weighted: f64,
    pub box_radius: f64,
    pub pieces: usize,
}

/// Encodings reaching sup deviation `delta_target` on `[-r, r]^d`.
pub fn network_encodings(entry: &CatalogEntry, delta_target: f64, r: f64) -> Result<EncodingReport> {
    let d = entry.problem.dim;
    if let Some(nets) = &entry.problem.encodings {
        if delta_target < 0.0 {
            return Err(Error::Unreachable { requested: delta_target, achievable: 0.0 });
        }
        return Ok(EncodingReport {
            nets: nets.clone(),
            delta_box: 0.0,
            delta_weighted: 0.0,
            box_radius: r,
            pieces: 0,
        });
    }
    if entry.name != "heat" {
        return Err(Error::InvalidArgument(format!("no encoding construction for {}", entry.name)));
    }
    let best = d as f64 * r * r / ((MAX_PIECES - 1) * (MAX_PIECES - 1)) as f64;
    if !(delta_target >= best) {
        return Err(Error::Unreachable { requested: delta_target, achievable: best });
    }
    let pieces = ((r * (d as f64 / delta_target).sqrt()).ceil() as usize + 1).clamp(1, MAX_PIECES);
    let g = squared_norm_interpolant(d, r, pieces)?;
    let delta_box = measure_box_deviation(&entry.problem, &g, r)?;
    let delta_weighted = measure_weighted_deviation(entry, &g, r)?;
    let s2 = std::f64::consts::SQRT_2;
    let nets = ProblemNetworks::new(
        affine_network(&Matrix::zeros(d, d), &vec![0.0; d], 3)?,
        SigmaNetworkFamily::constant(Matrix::identity(d).scaled(s2), 3)?,
        affine_network(&Matrix::zeros(1, 1), &[0.0], 3)?,
        g,
    )?;
    Ok(EncodingReport { nets, delta_box, delta_weighted, box_radius: r, pieces })
}

/// Sup of `|g - R(net)|` on the diagonal of `[-r, r]^d`, which for separable
/// `g` equals the sup over the box.
fn measure_box_deviation(problem: &SemilinearProblem, net: &ReluNetwork, r: f64) -> Result<f64> {
    let d = problem.dim;
    let samples = 20_001;
    let mut worst: f64 = 0.0;
    for k in 0..samples {
        let s = -r + 2.0 * r * k as f64 / (samples - 1) as f64;
        let x = vec![s; d];
        worst = worst.max((problem.g_scalar(&x) - net.realize(&x)?[0]).abs());
    }
    Ok(worst)
}

fn measure_weighted_deviation(entry: &CatalogEntry, net: &ReluNetwork, r: f64) -> Result<f64> {
    let d = entry.problem.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst: f64 = 0.0;
    let q = entry.spec.q;
    for k in 0..20_000 {
        let x: Vec<f64> = if k % 2 == 0 {
            vec![-20.0 * r + 40.0 * r * k as f64 / 20_000.0; d]
        } else {
            (0..d).map(|_| rng.gen_range(-20.0 * r..20.0 * r)).collect()
        };
        let dev = (entry.problem.g_scalar(&x) - net.realize(&x)?[0]).abs();
        worst = worst.max(dev / entry.spec.phi.eval(&x).powf(q));
    }
    Ok(worst)
}

/// Largest observed `|f(v) - f(w)| / |v - w|` over random pairs.
pub fn lipschitz_spot_check(problem: &SemilinearProblem, pairs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let v: f64 = rng.gen_range(-10.0..10.0);
        let w: f64 = rng.gen_range(-10.0..10.0);
        if v != w {
            worst = worst.max((problem.f_scalar(v) - problem.f_scalar(w)).abs() / (v - w).abs());
        }
    }
    worst
}
