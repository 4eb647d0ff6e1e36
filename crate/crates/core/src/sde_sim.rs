//! Euler–Maruyama simulation of `dX = μ(X) ds + σ(X) dW` on a fixed time grid.

use crate::error::{Error, Result};
use crate::index_rng::{brownian_path, FrozenSample, IndexPath};
use crate::net_calculus::RealFunctionHandle;

/// Grid `0 = τ_0 <= τ_1 <= ... <= τ_K = T`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument("a time grid needs K >= 1 steps".into()));
        }
        if points[0] != 0.0 {
            return Err(Error::InvalidArgument("time grid must start at 0".into()));
        }
        if points.iter().any(|p| !p.is_finite()) || points.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument("time grid must be sorted and finite".into()));
        }
        if *points.last().unwrap() <= 0.0 {
            return Err(Error::InvalidArgument("time horizon must be positive".into()));
        }
        Ok(TimeGrid { points })
    }

    /// `K` equal steps on `[0, T]`; the last point is exactly `T`.
    pub fn uniform(steps: usize, horizon: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("a time grid needs K >= 1 steps".into()));
        }
        let mut pts: Vec<f64> = (0..steps).map(|k| k as f64 * horizon / steps as f64).collect();
        pts.push(horizon);
        TimeGrid::new(pts)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of steps `K`.
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.points.last().unwrap()
    }

    fn check_time(&self, s: f64) -> Result<()> {
        if !(0.0..=self.horizon()).contains(&s) {
            return Err(Error::InvalidArgument(format!(
                "time {s} outside [0, {}]",
                self.horizon()
            )));
        }
        Ok(())
    }
}

/// Largest grid point strictly below `s`, or `τ_0` when there is none.
pub fn grid_floor(grid: &TimeGrid, s: f64) -> Result<f64> {
    grid.check_time(s)?;
    Ok(grid.points.iter().copied().filter(|&p| p < s).fold(grid.points[0], f64::max))
}

/// The distinct times `{t} ∪ (grid ∩ (t, s)) ∪ {s}` in increasing order.
pub fn effective_breakpoints(grid: &TimeGrid, t: f64, s: f64) -> Result<Vec<f64>> {
    grid.check_time(t)?;
    grid.check_time(s)?;
    if s < t {
        return Err(Error::InvalidArgument(format!("query time {s} before start {t}")));
    }
    let mut out = vec![t];
    for &p in &grid.points {
        if p > t && p < s && p > *out.last().unwrap() {
            out.push(p);
        }
    }
    if s > t {
        out.push(s);
    }
    Ok(out)
}

/// Drift `R^d -> R^d` and diffusion `R^d -> R^{d×d}` (row-major).
#[derive(Clone, Debug)]
pub struct Dynamics {
    pub dim: usize,
    pub mu: RealFunctionHandle,
    pub sigma: RealFunctionHandle,
}

impl Dynamics {
    pub fn new(dim: usize, mu: RealFunctionHandle, sigma: RealFunctionHandle) -> Result<Self> {
        if mu.in_dim() != dim || mu.out_dim() != dim {
            return Err(Error::Dimension(format!("drift must map R^{dim} to R^{dim}")));
        }
        if sigma.in_dim() != dim || sigma.out_dim() != dim * dim {
            return Err(Error::Dimension(format!("diffusion must map R^{dim} to R^{dim}x{dim}")));
        }
        Ok(Dynamics { dim, mu, sigma })
    }

    /// One Euler step `y + μ(y) dt + σ(y) dw`, evaluated in place.
    pub fn step(&self, y: &mut [f64], dt: f64, dw: &[f64]) {
        let d = self.dim;
        let m = self.mu.call(y);
        let sg = self.sigma.call(y);
        for i in 0..d {
            let mut diff = 0.0;
            for j in 0..d {
                diff += sg[i * d + j] * dw[j];
            }
            y[i] = y[i] + m[i] * dt + diff;
        }
    }
}

/// `Y^{θ,x}_{t,s}` under the frozen sample.
pub fn euler_evaluate(
    dynamics: &Dynamics,
    grid: &TimeGrid,
    sample: FrozenSample,
    theta: &IndexPath,
    t: f64,
    x: &[f64],
    s: f64,
) -> Result<Vec<f64>> {
    if x.len() != dynamics.dim {
        return Err(Error::Dimension(format!(
            "start point has length {}, dynamics dimension {}",
            x.len(),
            dynamics.dim
        )));
    }
    let bps = effective_breakpoints(grid, t, s)?;
    let path = brownian_path(sample, theta, dynamics.dim, &bps)?;
    let mut y = x.to_vec();
    for (k, dw) in path.increments.iter().enumerate() {
        dynamics.step(&mut y, bps[k + 1] - bps[k], dw);
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            path: theta.entries().to_vec(),
            what: "Euler state".into(),
        });
    }
    Ok(y)
}
