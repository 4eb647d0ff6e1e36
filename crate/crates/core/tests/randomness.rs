use std::collections::HashSet;

use picardnet::index_rng::{brownian_path, key_material, uniform_time, FrozenSample, IndexPath, Purpose};
use picardnet::net_calculus::RealFunctionHandle;
use picardnet::sde_sim::{euler_evaluate, Dynamics, TimeGrid};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const PATHS: i64 = 100_000;

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn scalar_dynamics(mu: f64, sigma: f64) -> Dynamics {
    Dynamics::new(
        1,
        RealFunctionHandle::new(1, 1, move |_x: &[f64]| vec![mu]),
        RealFunctionHandle::new(1, 1, move |_x: &[f64]| vec![sigma]),
    )
    .unwrap()
}

#[test]
fn uniform_time_mean_is_midpoint() {
    let s = FrozenSample::new(1);
    let horizon = 2.0;
    let v: Vec<f64> = (0..PATHS)
        .into_par_iter()
        .map(|i| uniform_time(s, &IndexPath::new(vec![i]), 0.0, horizon).unwrap())
        .collect();
    let (m, var) = mean_var(&v);
    let se = (var / v.len() as f64).sqrt();
    assert!((m - 1.0).abs() <= 3.0 * se, "mean {m}, se {se}");
    assert!(((var - horizon * horizon / 12.0) / (horizon * horizon / 12.0)).abs() < 0.02);
    assert!(v.iter().all(|t| (0.0..=horizon).contains(t)));
}

#[test]
fn increments_have_interval_variance() {
    let s = FrozenSample::new(2);
    let horizon = 0.7;
    let v: Vec<f64> = (0..PATHS)
        .into_par_iter()
        .map(|i| brownian_path(s, &IndexPath::new(vec![3, i]), 1, &[0.0, horizon]).unwrap().increments[0][0])
        .collect();
    let (_, var) = mean_var(&v);
    assert!(((var - horizon) / horizon).abs() < 0.02, "variance {var}");
    let empty = brownian_path(s, &IndexPath::root(), 2, &[]).unwrap();
    assert!(empty.increments.is_empty());
}

#[test]
fn sibling_paths_are_uncorrelated() {
    let s = FrozenSample::new(3);
    let pairs: Vec<(f64, f64)> = (0..PATHS)
        .into_par_iter()
        .map(|i| {
            let a = brownian_path(s, &IndexPath::new(vec![i, 1]), 1, &[0.0, 1.0]).unwrap().increments[0][0];
            let b = brownian_path(s, &IndexPath::new(vec![i, 2]), 1, &[0.0, 1.0]).unwrap().increments[0][0];
            (a, b)
        })
        .collect();
    let n = pairs.len() as f64;
    let corr = pairs.iter().map(|(a, b)| a * b).sum::<f64>() / n;
    assert!(corr.abs() <= 3.0 / n.sqrt(), "correlation {corr}");
}

#[test]
fn time_and_noise_streams_are_uncorrelated() {
    let s = FrozenSample::new(4);
    let n = PATHS as f64;
    let c: f64 = (0..PATHS)
        .into_par_iter()
        .map(|i| {
            let th = IndexPath::new(vec![i]);
            let u = uniform_time(s, &th, 0.0, 1.0).unwrap() - 0.5;
            let w = brownian_path(s, &th, 1, &[0.0, 1.0]).unwrap().increments[0][0];
            u * w
        })
        .sum::<f64>()
        / n;
    let se = (1.0f64 / 12.0).sqrt() / n.sqrt();
    assert!(c.abs() <= 3.0 * se, "covariance {c}");
}

#[test]
fn increments_pass_jarque_bera() {
    let s = FrozenSample::new(5);
    let v: Vec<f64> = (0..PATHS / 4)
        .into_par_iter()
        .flat_map_iter(|i| {
            brownian_path(s, &IndexPath::new(vec![i]), 2, &[0.0, 0.25, 0.5]).unwrap().increments.into_iter().flatten().map(|x| x / 0.5)
        })
        .collect();
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = v.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2);
    let jb = n / 6.0 * (skew * skew + (kurt - 3.0).powi(2) / 4.0);
    let p = 1.0 - ChiSquared::new(2.0).unwrap().cdf(jb);
    assert!(p > 1e-3, "JB = {jb}, p = {p}");
}

#[test]
fn key_material_is_injective_on_a_million_paths() {
    let s = FrozenSample::new(6);
    let keys: Vec<u128> = (0..1_000_000i64)
        .into_par_iter()
        .map(|i| {
            let path = match i % 4 {
                0 => IndexPath::new(vec![i]),
                1 => IndexPath::new(vec![i / 7, -(i % 7)]),
                2 => IndexPath::new(vec![0, i / 1000, i % 1000]),
                _ => IndexPath::new(vec![i, 0, -1, i]),
            };
            let k = key_material(s, &path, Purpose::Brownian);
            u128::from_le_bytes(k[..16].try_into().unwrap())
        })
        .collect();
    let distinct: HashSet<u128> = keys.iter().copied().collect();
    assert_eq!(distinct.len(), keys.len());
    let a = key_material(s, &IndexPath::new(vec![1, 2]), Purpose::Brownian);
    let b = key_material(s, &IndexPath::new(vec![1, 2]), Purpose::UniformTime);
    assert_ne!(a, b);
}

#[test]
fn euler_variance_matches_horizon() {
    let dynamics = scalar_dynamics(0.0, 1.0);
    let grid = TimeGrid::uniform(4, 1.0).unwrap();
    let s = FrozenSample::new(7);
    let v: Vec<f64> = (0..PATHS)
        .into_par_iter()
        .map(|i| euler_evaluate(&dynamics, &grid, s, &IndexPath::new(vec![i]), 0.0, &[0.0], 1.0).unwrap()[0])
        .collect();
    let (_, var) = mean_var(&v);
    assert!((var - 1.0).abs() < 0.02, "variance {var}");
}

#[test]
fn grid_refinement_keeps_linear_variance() {
    let dynamics = scalar_dynamics(0.3, 0.5);
    let s = FrozenSample::new(8);
    let var_for = |steps: usize| {
        let grid = TimeGrid::uniform(steps, 1.0).unwrap();
        let v: Vec<f64> = (0..PATHS / 2)
            .into_par_iter()
            .map(|i| euler_evaluate(&dynamics, &grid, s, &IndexPath::new(vec![i]), 0.0, &[1.0], 1.0).unwrap()[0])
            .collect();
        mean_var(&v)
    };
    for steps in [1, 8] {
        let (m, var) = var_for(steps);
        assert!((m - 1.3).abs() < 3.0 * (0.25f64 / (PATHS / 2) as f64).sqrt(), "mean {m}");
        assert!((var - 0.25).abs() / 0.25 < 0.03, "variance {var} with {steps} steps");
    }
}

#[test]
fn euler_is_deterministic_and_rejects_reversed_times() {
    let dynamics = Dynamics::new(
        1,
        RealFunctionHandle::new(1, 1, |x: &[f64]| vec![-x[0]]),
        RealFunctionHandle::new(1, 1, |x: &[f64]| vec![0.2 * x[0]]),
    )
    .unwrap();
    let grid = TimeGrid::uniform(4, 1.0).unwrap();
    let s = FrozenSample::new(9);
    let th = IndexPath::new(vec![4]);
    let full = euler_evaluate(&dynamics, &grid, s, &th, 0.0, &[1.0], 1.0).unwrap();
    let again = euler_evaluate(&dynamics, &grid, s, &th, 0.0, &[1.0], 1.0).unwrap();
    assert_eq!(full, again);
    let zero = scalar_dynamics(0.0, 0.0);
    assert_eq!(euler_evaluate(&zero, &grid, s, &th, 0.25, &[3.0], 0.9).unwrap(), vec![3.0]);
    assert!(euler_evaluate(&zero, &grid, s, &th, 0.5, &[3.0], 0.4).is_err());
}
