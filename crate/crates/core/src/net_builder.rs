//! Explicit ReLU networks for the time recursion, the Euler–Maruyama scheme
//! and the multilevel Picard estimator under a frozen sample.
//!
//! The Euler network of `K` steps, each of length `L`, has `K(L-1)+1`
//! architecture entries. It is attached to `g` and to the lower-level
//! estimator networks with [`compose_fused`], which merges the two boundary
//! affine maps. With identity towers of length `m(dim f - 2 + K(L-1)) + 1`
//! every summand then has exactly
//! `(n+1)K(L-1) - 1 + n(dim f - 2) + dim g` entries.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::index_rng::{brownian_path, uniform_time, FrozenSample, IndexPath};
use crate::mlp_solver::MlpConfig;
use crate::net_calculus::{
    affine_network, compose, compose_fused, extend_depth, identity_network, sum_networks,
    Architecture, Matrix, RealFunctionHandle, ReluNetwork,
};
use crate::sde_sim::{effective_breakpoints, TimeGrid};

/// Default limit on dense parameters of a single build.
pub const DEFAULT_PARAM_LIMIT: u128 = 100_000_000;

type Factory = dyn Fn(&[f64]) -> Result<ReluNetwork> + Send + Sync;

/// Networks `Φ_{σ,v}` realizing `x -> σ(x) v`, all of one architecture.
#[derive(Clone)]
pub struct SigmaNetworkFamily {
    dim: usize,
    reference: Architecture,
    factory: Arc<Factory>,
}

impl std::fmt::Debug for SigmaNetworkFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SigmaNetworkFamily(d = {}, {})", self.dim, self.reference)
    }
}

impl SigmaNetworkFamily {
    /// Family from an arbitrary factory; the reference architecture is read
    /// off `factory(0)` and every later output is checked against it.
    pub fn from_factory<F>(dim: usize, factory: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<ReluNetwork> + Send + Sync + 'static,
    {
        let reference = factory(&vec![0.0; dim])?.architecture();
        if reference.input_dim() != dim || reference.output_dim() != dim {
            return Err(Error::Dimension(format!("sigma networks must map R^{dim} to R^{dim}")));
        }
        Ok(SigmaNetworkFamily { dim, reference, factory: Arc::new(factory) })
    }

    /// `σ(x) v = (sum_j v_j L_j) x + S v`, every member an affine network of
    /// the given depth.
    pub fn affine(linear: Vec<Matrix>, offset: Matrix, depth: usize) -> Result<Self> {
        let d = offset.rows();
        if offset.cols() != d {
            return Err(Error::Dimension("diffusion offset must be square".into()));
        }
        if !linear.is_empty() && linear.len() != d {
            return Err(Error::Dimension(format!("need {d} direction matrices, got {}", linear.len())));
        }
        if linear.iter().any(|m| m.rows() != d || m.cols() != d) {
            return Err(Error::Dimension("direction matrices must be d x d".into()));
        }
        SigmaNetworkFamily::from_factory(d, move |v| {
            let mut w = Matrix::zeros(d, d);
            for (j, l) in linear.iter().enumerate() {
                if v[j] == 0.0 {
                    continue;
                }
                for r in 0..d {
                    for c in 0..d {
                        w.set(r, c, w.get(r, c) + v[j] * l.get(r, c));
                    }
                }
            }
            affine_network(&w, &offset.mul_vec(v), depth)
        })
    }

    /// Constant diffusion `σ ≡ S`.
    pub fn constant(offset: Matrix, depth: usize) -> Result<Self> {
        SigmaNetworkFamily::affine(Vec::new(), offset, depth)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn reference(&self) -> &Architecture {
        &self.reference
    }

    pub fn network(&self, v: &[f64]) -> Result<ReluNetwork> {
        if v.len() != self.dim {
            return Err(Error::Dimension(format!("direction of length {} for d = {}", v.len(), self.dim)));
        }
        let net = (self.factory)(v)?;
        if net.architecture() != self.reference {
            return Err(Error::Architecture(format!(
                "family produced {} instead of {}",
                net.architecture(),
                self.reference
            )));
        }
        Ok(net)
    }

    /// `x -> σ(x)` as a row-major `d×d` matrix, column `j` realized by `Φ_{σ,e_j}`.
    pub fn matrix_handle(&self) -> RealFunctionHandle {
        let d = self.dim;
        let cols: Vec<ReluNetwork> = (0..d)
            .map(|j| {
                let mut e = vec![0.0; d];
                e[j] = 1.0;
                self.network(&e).expect("family member")
            })
            .collect();
        RealFunctionHandle::new(d, d * d, move |x| {
            let mut m = vec![0.0; d * d];
            for (j, net) in cols.iter().enumerate() {
                let c = net.realize(x).expect("dimension checked");
                for i in 0..d {
                    m[i * d + j] = c[i];
                }
            }
            m
        })
    }
}

/// Network encodings `(Φ_μ, Φ_{σ,·}, Φ_f, Φ_g)` of a problem's coefficients.
#[derive(Clone, Debug)]
pub struct ProblemNetworks {
    pub mu: ReluNetwork,
    pub sigma: SigmaNetworkFamily,
    pub f: ReluNetwork,
    pub g: ReluNetwork,
}

impl ProblemNetworks {
    pub fn new(
        mu: ReluNetwork,
        sigma: SigmaNetworkFamily,
        f: ReluNetwork,
        g: ReluNetwork,
    ) -> Result<Self> {
        let d = sigma.dim();
        if mu.input_dim() != d || mu.output_dim() != d {
            return Err(Error::Dimension(format!("drift network must map R^{d} to R^{d}")));
        }
        if f.input_dim() != 1 || f.output_dim() != 1 {
            return Err(Error::Dimension("nonlinearity network must map R to R".into()));
        }
        if g.input_dim() != d || g.output_dim() != 1 {
            return Err(Error::Dimension(format!("terminal network must map R^{d} to R")));
        }
        Ok(ProblemNetworks { mu, sigma, f, g })
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    pub fn mu_handle(&self) -> RealFunctionHandle {
        RealFunctionHandle::from_network(self.mu.clone())
    }

    pub fn architectures(&self) -> CoefficientArchitectures {
        CoefficientArchitectures {
            dim: self.dim(),
            mu: self.mu.architecture(),
            sigma: self.sigma.reference().clone(),
            f: self.f.architecture(),
            g: self.g.architecture(),
        }
    }
}

/// Architectures of the four coefficient encodings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CoefficientArchitectures {
    pub dim: usize,
    pub mu: Architecture,
    pub sigma: Architecture,
    pub f: Architecture,
    pub g: Architecture,
}

impl CoefficientArchitectures {
    /// Common step length `L = max(dim D(Φ_μ), dim D(Φ_{σ,0}))`.
    pub fn step_len(&self) -> usize {
        self.mu.len().max(self.sigma.len())
    }

    /// `K(L - 1)`.
    pub fn euler_depth_index(&self, k: usize) -> usize {
        k * (self.step_len() - 1)
    }

    fn prolonged(arch: &Architecture, len: usize) -> Result<Architecture> {
        match len - arch.len() {
            0 => Ok(arch.clone()),
            1 => {
                let mut w = arch.widths().to_vec();
                let k = w[w.len() - 2];
                w.insert(w.len() - 1, k);
                Architecture::new(w)
            }
            gap => Architecture::identity(arch.output_dim(), gap + 1)?.odot(arch),
        }
    }

    /// Architecture of one Euler step `𝔫^d_L ⊞ D(Φ_μ') ⊞ D(Φ_σ')`.
    pub fn euler_step(&self) -> Result<Architecture> {
        let l = self.step_len();
        Architecture::identity(self.dim, l)?
            .boxplus(&Self::prolonged(&self.mu, l)?)?
            .boxplus(&Self::prolonged(&self.sigma, l)?)
    }

    /// Architecture of the `K`-step Euler network.
    pub fn euler(&self, k: usize) -> Result<Architecture> {
        let step = self.euler_step()?;
        let mut a = step.clone();
        for _ in 1..k {
            a = step.odot(&a)?;
        }
        Ok(a)
    }
}

fn check_times(grid: &TimeGrid, t: f64, s: f64) -> Result<()> {
    let h = grid.horizon();
    if !(0.0..=h).contains(&t) || !(t..=h).contains(&s) {
        return Err(Error::InvalidArgument(format!("need 0 <= t <= s <= T, got t = {t}, s = {s}")));
    }
    Ok(())
}

/// Compose per-step networks, first step innermost.
fn chain(steps: Vec<ReluNetwork>) -> Result<ReluNetwork> {
    let mut it = steps.into_iter();
    let mut net = it.next().ok_or_else(|| Error::InvalidArgument("no steps".into()))?;
    for s in it {
        net = compose(&s, &net)?;
    }
    Ok(net)
}

/// Network for `g_s` with `g_0 = x` and
/// `g_s = g_{⌊s⌋} + σ(g_{⌊s⌋})(f(s) - f(⌊s⌋))`.
///
/// `noise_values[k]` is `f(τ_k)` for `k = 0..=K`, `query_value` is `f(s)`.
pub fn build_recursion_network(
    sigma: &SigmaNetworkFamily,
    grid: &TimeGrid,
    noise_values: &[Vec<f64>],
    query_value: &[f64],
    s: f64,
) -> Result<ReluNetwork> {
    let tau = grid.points();
    let k = grid.steps();
    if noise_values.len() != k + 1 {
        return Err(Error::InvalidArgument(format!(
            "need {} noise values, got {}",
            k + 1,
            noise_values.len()
        )));
    }
    check_times(grid, 0.0, s)?;
    let d = sigma.dim();
    let l = sigma.reference().len();
    let id = identity_network(d, l)?;
    let steps = (1..=k)
        .map(|j| {
            let upper: &[f64] = if s <= tau[j - 1] {
                &noise_values[j - 1]
            } else if s <= tau[j] {
                query_value
            } else {
                &noise_values[j]
            };
            let v: Vec<f64> = upper.iter().zip(&noise_values[j - 1]).map(|(a, b)| a - b).collect();
            let sig = sigma.network(&v)?;
            sum_networks(&[1.0, 1.0], &[&id, &sig])
        })
        .collect::<Result<Vec<_>>>()?;
    chain(steps)
}

/// Network realizing `x -> Y^{θ,x}_{t,s}` under the frozen sample.
pub fn build_euler_network(
    nets: &ProblemNetworks,
    grid: &TimeGrid,
    sample: FrozenSample,
    theta: &IndexPath,
    t: f64,
    s: f64,
) -> Result<ReluNetwork> {
    check_times(grid, t, s)?;
    let d = nets.dim();
    let l = nets.mu.depth().max(nets.sigma.reference().len());
    let id = identity_network(d, l)?;
    let mu = extend_depth(&nets.mu, l)?;
    let bps = effective_breakpoints(grid, t, s)?;
    let path = brownian_path(sample, theta, d, &bps)?;
    let clamp = |p: f64| p.max(t).min(s);
    let tau = grid.points();
    let steps = (1..=grid.steps())
        .map(|k| {
            let (a, b) = (clamp(tau[k - 1]), clamp(tau[k]));
            let (dt, dw) = if b > a {
                let idx = bps.iter().position(|&p| p == a).expect("breakpoint present");
                (b - a, path.increments[idx].clone())
            } else {
                (0.0, vec![0.0; d])
            };
            let sig = extend_depth(&nets.sigma.network(&dw)?, l)?;
            sum_networks(&[1.0, dt, 1.0], &[&id, &mu, &sig])
        })
        .collect::<Result<Vec<_>>>()?;
    chain(steps)
}

/// Predicted shape of the estimator network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ArchitecturePrediction {
    /// Exact architecture the builder produces.
    pub architecture: Architecture,
    /// `(n+1)K(L-1) - 1 + n(dim f - 2) + dim g`.
    pub depth: usize,
    /// `max{2d, ⦀f⦀, ⦀g⦀, ⦀μ⦀, ⦀σ⦀, ⦀Euler⦀}`.
    pub c: usize,
    /// `max{2d, ⦀f⦀, ⦀g⦀, ⦀μ⦀, ⦀σ⦀}`, without the Euler width.
    pub c_coefficients: usize,
    /// `c (3M)^n`.
    pub width_bound: u128,
    /// `depth * w * (w + 1)` with `w` the width bound.
    pub param_bound: u128,
    /// Exact dense parameter count of `architecture`.
    pub param_count: u128,
    pub euler: Architecture,
}

fn repeat_boxplus(arch: &Architecture, copies: u64) -> Result<Architecture> {
    let w = arch.widths();
    let n = w.len();
    let mut out = w.to_vec();
    for v in out.iter_mut().take(n - 1).skip(1) {
        *v = usize::try_from(*v as u128 * copies as u128)
            .map_err(|_| Error::InvalidArgument("architecture width overflow".into()))?;
    }
    Architecture::new(out)
}

fn sum_archs(parts: Vec<Architecture>) -> Result<Architecture> {
    let mut it = parts.into_iter();
    let mut a = it.next().ok_or_else(|| Error::InvalidArgument("empty sum".into()))?;
    for b in it {
        a = a.boxplus(&b)?;
    }
    Ok(a)
}

fn tower_len(m: usize, dim_f: usize, yy: usize) -> usize {
    m * (dim_f - 2 + yy) + 1
}

pub fn predict_architecture(
    coeffs: &CoefficientArchitectures,
    n: u32,
    m: u32,
    k: usize,
) -> Result<ArchitecturePrediction> {
    if m == 0 || k == 0 {
        return Err(Error::InvalidArgument("need M >= 1 and K >= 1".into()));
    }
    let d = coeffs.dim;
    let (df, dg) = (coeffs.f.len(), coeffs.g.len());
    let yy = coeffs.euler_depth_index(k);
    let euler = coeffs.euler(k)?;
    let mut levels: Vec<Architecture> = Vec::with_capacity(n as usize + 1);
    let mut zero = vec![1usize; yy + dg - 1];
    zero[0] = d;
    levels.push(Architecture::new(zero)?);
    let pow = |e: u32| (m as u64).pow(e);
    for lvl in 1..=n as usize {
        let nn = lvl as u32;
        let mut parts = Vec::new();
        let term = Architecture::identity(1, tower_len(lvl, df, yy))?.odot(&coeffs.g.fused(&euler)?)?;
        parts.push(repeat_boxplus(&term, pow(nn))?);
        for l in 0..lvl {
            let count = pow(nn - l as u32);
            let mut inner = levels[l].fused(&euler)?;
            if l + 1 < lvl {
                inner = Architecture::identity(1, tower_len(lvl - 1 - l, df, yy))?.odot(&inner)?;
            }
            parts.push(repeat_boxplus(&coeffs.f.odot(&inner)?, count)?);
            if l >= 1 {
                let inner = Architecture::identity(1, tower_len(lvl - l, df, yy))?
                    .odot(&levels[l - 1].fused(&euler)?)?;
                parts.push(repeat_boxplus(&coeffs.f.odot(&inner)?, count)?);
            }
        }
        levels.push(sum_archs(parts)?);
    }
    let architecture = levels.pop().unwrap();
    let depth = (n as usize + 1) * yy - 1 + n as usize * (df - 2) + dg;
    let c_coefficients = [2 * d, coeffs.f.max_width(), coeffs.g.max_width(), coeffs.mu.max_width(), coeffs.sigma.max_width()]
        .into_iter()
        .max()
        .unwrap();
    let c = c_coefficients.max(euler.max_width());
    let width_bound = c as u128 * (3 * m as u128).pow(n);
    let param_bound = depth as u128 * width_bound * (width_bound + 1);
    let param_count = architecture.param_count();
    Ok(ArchitecturePrediction {
        architecture,
        depth,
        c,
        c_coefficients,
        width_bound,
        param_bound,
        param_count,
        euler,
    })
}

/// Where a built network came from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub theta: Vec<i64>,
    pub t: f64,
    pub n: u32,
    #[serde(rename = "M")]
    pub m: u32,
    pub seed: u64,
    pub grid: Vec<f64>,
}

/// The estimator network together with its provenance and prediction.
#[derive(Clone, Debug)]
pub struct BuiltMlpNetwork {
    pub network: ReluNetwork,
    pub provenance: Provenance,
    pub prediction: ArchitecturePrediction,
}

impl BuiltMlpNetwork {
    pub fn to_json_string(&self) -> String {
        self.network
            .to_json_with_metadata(serde_json::to_value(&self.provenance).expect("provenance serializes"))
    }
}

/// Build `Φ^θ_{n,t}` with the default parameter limit.
pub fn build_mlp_network(
    nets: &ProblemNetworks,
    config: &MlpConfig,
    theta: &IndexPath,
    t: f64,
) -> Result<BuiltMlpNetwork> {
    build_mlp_network_with_limit(nets, config, theta, t, DEFAULT_PARAM_LIMIT)
}

pub fn build_mlp_network_with_limit(
    nets: &ProblemNetworks,
    config: &MlpConfig,
    theta: &IndexPath,
    t: f64,
    param_limit: u128,
) -> Result<BuiltMlpNetwork> {
    check_times(&config.grid, t, config.grid.horizon())?;
    let coeffs = nets.architectures();
    let k = config.grid.steps();
    let prediction = predict_architecture(&coeffs, config.n, config.m, k)?;
    if prediction.param_count > param_limit {
        return Err(Error::ResourceGuard { params: prediction.param_count, limit: param_limit });
    }
    let builder = Builder {
        nets,
        cfg: config,
        yy: coeffs.euler_depth_index(k),
        zero_len: coeffs.euler_depth_index(k) + coeffs.g.len() - 1,
    };
    let network = builder.build(config.n, theta, t)?;
    Ok(BuiltMlpNetwork {
        network,
        provenance: Provenance {
            theta: theta.entries().to_vec(),
            t,
            n: config.n,
            m: config.m,
            seed: config.sample.master_seed,
            grid: config.grid.points().to_vec(),
        },
        prediction,
    })
}

struct Builder<'a> {
    nets: &'a ProblemNetworks,
    cfg: &'a MlpConfig,
    yy: usize,
    zero_len: usize,
}

impl Builder<'_> {
    fn tower(&self, m: usize) -> Result<ReluNetwork> {
        identity_network(1, tower_len(m, self.nets.f.depth(), self.yy))
    }

    fn euler(&self, theta: &IndexPath, t: f64, s: f64) -> Result<ReluNetwork> {
        build_euler_network(self.nets, &self.cfg.grid, self.cfg.sample, theta, t, s)
    }

    fn build(&self, n: u32, theta: &IndexPath, t: f64) -> Result<ReluNetwork> {
        let d = self.nets.dim();
        if n == 0 {
            let mut w = vec![1usize; self.zero_len];
            w[0] = d;
            return Ok(ReluNetwork::zeros(&Architecture::new(w)?));
        }
        let horizon = self.cfg.grid.horizon();
        let m = self.cfg.m as u64;
        let lvl = n as usize;
        let samples = m.pow(n);
        let mut terms: Vec<(f64, ReluNetwork)> = (1..=samples as i64)
            .into_par_iter()
            .map(|i| {
                let y = self.euler(&theta.child(0, -i), t, horizon)?;
                let net = compose(&self.tower(lvl)?, &compose_fused(&self.nets.g, &y)?)?;
                Ok((1.0 / samples as f64, net))
            })
            .collect::<Result<_>>()?;
        for l in 0..n {
            let count = m.pow(n - l);
            let coef = (horizon - t) / count as f64;
            let lu = l as usize;
            let parts: Vec<Vec<(f64, ReluNetwork)>> = (1..=count as i64)
                .into_par_iter()
                .map(|i| {
                    let eta = theta.child(l as i64, i);
                    let tau = uniform_time(self.cfg.sample, &eta, t, horizon)?;
                    let y = self.euler(&eta, t, tau)?;
                    let mut inner = compose_fused(&self.build(l, &eta, tau)?, &y)?;
                    if lu + 1 < lvl {
                        inner = compose(&self.tower(lvl - 1 - lu)?, &inner)?;
                    }
                    let mut out = vec![(coef, compose(&self.nets.f, &inner)?)];
                    if l >= 1 {
                        let zeta = theta.child(-(l as i64), i);
                        let inner = compose(
                            &self.tower(lvl - lu)?,
                            &compose_fused(&self.build(l - 1, &zeta, tau)?, &y)?,
                        )?;
                        out.push((-coef, compose(&self.nets.f, &inner)?));
                    }
                    Ok(out)
                })
                .collect::<Result<_>>()?;
            terms.extend(parts.into_iter().flatten());
        }
        let coefs: Vec<f64> = terms.iter().map(|(h, _)| *h).collect();
        let refs: Vec<&ReluNetwork> = terms.iter().map(|(_, n)| n).collect();
        sum_networks(&coefs, &refs)
    }
}
