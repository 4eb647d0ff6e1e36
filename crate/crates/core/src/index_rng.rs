//! Randomness keyed by finite integer index paths.
//!
//! Every `(master seed, purpose, index path)` triple is hashed with SHA-256
//! into a 32-byte key that seeds a ChaCha20 stream. Draws are read from that
//! stream in order:
//!
//! * uniform time: one `u64` `r`, mapped to `U = (r >> 11) * 2^-53`;
//! * Brownian increments: for each interval in time order and each coordinate
//!   in order, one `u64` `r`, mapped to `u = ((r >> 11) + 0.5) * 2^-53` and then
//!   to a standard normal by the inverse CDF, scaled by the square root of the
//!   interval length.
//!
//! The hash input is `"picardnet/index-rng/v1"`, then the purpose tag as a
//! `u64` little-endian length followed by its bytes, then the seed as `u64`
//! little-endian, then the number of path entries as `u64` little-endian and
//! each entry as `i64` little-endian. The encoding is prefix-free, so distinct
//! inputs never hash the same bytes.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

const DOMAIN: &[u8] = b"picardnet/index-rng/v1";
const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

/// A node of the index tree `Θ = ∪_n Z^n`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IndexPath(Vec<i64>);

impl IndexPath {
    pub fn new(entries: Vec<i64>) -> Self {
        IndexPath(entries)
    }

    /// The path `(0)` used for top-level estimates.
    pub fn root() -> Self {
        IndexPath(vec![0])
    }

    /// The extension `(self, a, b)`.
    pub fn child(&self, a: i64, b: i64) -> Self {
        let mut v = Vec::with_capacity(self.0.len() + 2);
        v.extend_from_slice(&self.0);
        v.push(a);
        v.push(b);
        IndexPath(v)
    }

    pub fn entries(&self) -> &[i64] {
        &self.0
    }
}

/// Which independent family a draw belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    UniformTime,
    Brownian,
}

impl Purpose {
    pub fn tag(self) -> &'static str {
        match self {
            Purpose::UniformTime => "uniform-time",
            Purpose::Brownian => "brownian",
        }
    }
}

/// The frozen sample point: all randomness is a pure function of this seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenSample {
    pub master_seed: u64,
}

impl FrozenSample {
    pub fn new(master_seed: u64) -> Self {
        FrozenSample { master_seed }
    }
}

/// SHA-256 key material for one substream.
pub fn key_material(sample: FrozenSample, theta: &IndexPath, purpose: Purpose) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(DOMAIN);
    let tag = purpose.tag().as_bytes();
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag);
    h.update(sample.master_seed.to_le_bytes());
    h.update((theta.0.len() as u64).to_le_bytes());
    for e in &theta.0 {
        h.update(e.to_le_bytes());
    }
    h.finalize().into()
}

fn stream(sample: FrozenSample, theta: &IndexPath, purpose: Purpose) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(key_material(sample, theta, purpose))
}

/// The uniform `U ∈ [0,1)` attached to `theta`.
pub fn uniform_unit(sample: FrozenSample, theta: &IndexPath) -> f64 {
    let r = stream(sample, theta, Purpose::UniformTime).next_u64();
    (r >> 11) as f64 * TWO_POW_M53
}

/// `t + (T - t) U` for the uniform attached to `theta`.
pub fn uniform_time(sample: FrozenSample, theta: &IndexPath, t: f64, horizon: f64) -> Result<f64> {
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::InvalidArgument(format!("time {t} outside [0, {horizon}]")));
    }
    Ok(t + (horizon - t) * uniform_unit(sample, theta))
}

/// Standard normal quantile.
pub fn normal_quantile(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

/// Brownian increments over consecutive breakpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianPath {
    pub index: IndexPath,
    pub dim: usize,
    pub breakpoints: Vec<f64>,
    /// `increments[k]` is `W(breakpoints[k+1]) - W(breakpoints[k])`.
    pub increments: Vec<Vec<f64>>,
}

impl BrownianPath {
    /// `W(breakpoints[k]) - W(breakpoints[0])` as a prefix sum.
    pub fn value_at(&self, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for inc in &self.increments[..k] {
            for (a, b) in v.iter_mut().zip(inc) {
                *a += b;
            }
        }
        v
    }
}

pub fn brownian_path(
    sample: FrozenSample,
    theta: &IndexPath,
    dim: usize,
    breakpoints: &[f64],
) -> Result<BrownianPath> {
    for (i, b) in breakpoints.iter().enumerate() {
        if !b.is_finite() || *b < 0.0 {
            return Err(Error::InvalidArgument(format!("breakpoint {b} is not a valid time")));
        }
        if i > 0 && breakpoints[i - 1] >= *b {
            return Err(Error::InvalidArgument(
                "breakpoints must be strictly increasing".into(),
            ));
        }
    }
    let mut rng = stream(sample, theta, Purpose::Brownian);
    let increments = breakpoints
        .windows(2)
        .map(|w| {
            let s = (w[1] - w[0]).sqrt();
            (0..dim)
                .map(|_| {
                    let u = ((rng.next_u64() >> 11) as f64 + 0.5) * TWO_POW_M53;
                    s * normal_quantile(u)
                })
                .collect()
        })
        .collect();
    Ok(BrownianPath { index: theta.clone(), dim, breakpoints: breakpoints.to_vec(), increments })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_time_endpoints() {
        let s = FrozenSample::new(7);
        for i in 0..20 {
            let th = IndexPath::new(vec![i, -i]);
            assert_eq!(uniform_time(s, &th, 1.0, 1.0).unwrap(), 1.0);
            let v = uniform_time(s, &th, 0.25, 1.0).unwrap();
            assert!((0.25..=1.0).contains(&v));
        }
        assert!(uniform_time(s, &IndexPath::root(), 1.5, 1.0).is_err());
        assert!(uniform_time(s, &IndexPath::root(), -0.1, 1.0).is_err());
    }

    #[test]
    fn same_unit_for_every_start_time() {
        let s = FrozenSample::new(3);
        let th = IndexPath::new(vec![4, 2, 1]);
        let u = uniform_unit(s, &th);
        for t in [0.0, 0.3, 0.9] {
            assert_eq!(uniform_time(s, &th, t, 2.0).unwrap(), t + (2.0 - t) * u);
        }
    }

    #[test]
    fn brownian_rejects_unsorted() {
        let s = FrozenSample::new(1);
        assert!(brownian_path(s, &IndexPath::root(), 2, &[0.0, 0.5, 0.5]).is_err());
        assert!(brownian_path(s, &IndexPath::root(), 2, &[0.5, 0.1]).is_err());
        let empty = brownian_path(s, &IndexPath::root(), 2, &[]).unwrap();
        assert!(empty.increments.is_empty());
    }

    #[test]
    fn prefix_consistency_and_determinism() {
        let s = FrozenSample::new(11);
        let th = IndexPath::new(vec![0, 2, 5]);
        let a = brownian_path(s, &th, 3, &[0.0, 0.2, 0.7]).unwrap();
        let b = brownian_path(s, &th, 3, &[0.0, 0.2, 0.7, 1.0]).unwrap();
        assert_eq!(a.increments[..], b.increments[..2]);
        assert_eq!(a, brownian_path(s, &th, 3, &[0.0, 0.2, 0.7]).unwrap());
        assert_eq!(b.value_at(0), vec![0.0; 3]);
    }

    #[test]
    fn quantile_sanity() {
        assert!(normal_quantile(0.5).abs() < 1e-15);
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-12);
        assert!((normal_quantile(0.001) + 3.090232306167813).abs() < 1e-10);
    }

    #[test]
    fn child_paths_are_distinct() {
        let r = IndexPath::root();
        assert_ne!(r.child(1, 2), r.child(2, 1));
        assert_ne!(r.child(0, -1).entries(), r.child(0, 1).entries());
        assert_eq!(r.child(1, 2).entries(), &[0, 1, 2]);
    }
}
