use picardnet::index_rng::{FrozenSample, IndexPath};
use picardnet::mlp_solver::{mlp_estimate, MlpConfig};
use picardnet::net_builder::{
    build_euler_network, build_mlp_network, build_recursion_network, predict_architecture,
    SigmaNetworkFamily,
};
use picardnet::net_calculus::{affine_network, Matrix};
use picardnet::problems::problem_by_name;
use picardnet::sde_sim::{euler_evaluate, grid_floor, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> Matrix {
    let data = (0..r * c).map(|_| rng.gen_range(-s..s)).collect();
    Matrix::from_row_major(r, c, data).unwrap()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + b.abs())
}

#[test]
fn built_network_matches_estimator() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for name in ["relu-exact", "ode-exp", "bs-like"] {
        for d in [1, 2] {
            let entry = problem_by_name(name, d, 1.0).unwrap();
            let nets = entry.problem.encodings.clone().unwrap();
            let problem = entry.problem.encoded().unwrap();
            for n in 0..=2 {
                for m in 1..=2 {
                    let seed = rng.gen();
                    let cfg = MlpConfig::with_default_grid(n, m, 1.0, FrozenSample::new(seed)).unwrap();
                    let theta = IndexPath::new(vec![rng.gen_range(-5..5), rng.gen_range(-5..5)]);
                    let t = rng.gen_range(0.0..1.0);
                    let built = build_mlp_network(&nets, &cfg, &theta, t).unwrap();
                    assert_eq!(built.network.architecture(), built.prediction.architecture);
                    assert_eq!(built.network.depth(), built.prediction.depth);
                    for _ in 0..5 {
                        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
                        let u = mlp_estimate(&problem, &cfg, &theta, t, &x).unwrap();
                        let r = built.network.realize(&x).unwrap()[0];
                        assert!(close(r, u, 1e-8), "{name} d={d} n={n} M={m}: {r} vs {u}");
                    }
                }
            }
        }
    }
}

#[test]
fn euler_network_matches_simulator() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for d in 1..=3 {
        let w = random_matrix(&mut rng, d, d, 1.0);
        let b: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lin: Vec<Matrix> = (0..d).map(|_| random_matrix(&mut rng, d, d, 0.5)).collect();
        let off = random_matrix(&mut rng, d, d, 0.5);
        let sigma = SigmaNetworkFamily::affine(lin, off, 4).unwrap();
        let nets = picardnet::ProblemNetworks::new(
            affine_network(&w, &b, 3).unwrap(),
            sigma,
            affine_network(&Matrix::identity(1), &[0.0], 3).unwrap(),
            affine_network(&Matrix::zeros(1, d), &[0.0], 3).unwrap(),
        )
        .unwrap();
        let dynm = picardnet::sde_sim::Dynamics::new(d, nets.mu_handle(), nets.sigma.matrix_handle()).unwrap();
        let grid = TimeGrid::new(vec![0.0, 0.3, 0.3, 0.7, 1.0]).unwrap();
        let sample = FrozenSample::new(rng.gen());
        let theta = IndexPath::new(vec![1, 2, 3]);
        let t = rng.gen_range(0.0..0.5);
        let s = rng.gen_range(t..1.0);
        let y = build_euler_network(&nets, &grid, sample, &theta, t, s).unwrap();
        assert_eq!(y.architecture(), nets.architectures().euler(4).unwrap());
        for _ in 0..100 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = y.realize(&x).unwrap();
            let e = euler_evaluate(&dynm, &grid, sample, &theta, t, &x, s).unwrap();
            for (p, q) in a.iter().zip(&e) {
                assert!(close(*p, *q, 1e-9), "{p} vs {q}");
            }
        }
    }
}

#[test]
fn recursion_network_matches_direct_recursion() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = 2;
    let lin: Vec<Matrix> = (0..d).map(|_| random_matrix(&mut rng, d, d, 0.5)).collect();
    let sigma = SigmaNetworkFamily::affine(lin, Matrix::zeros(d, d), 3).unwrap();
    let sm = sigma.matrix_handle();
    let grid = TimeGrid::uniform(3, 1.0).unwrap();
    let noise_fn = |s: f64| vec![s.sin(), (2.0 * s).cos()];
    let noise: Vec<Vec<f64>> = grid.points().iter().map(|&p| noise_fn(p)).collect();
    for s in [0.0, 0.2, 1.0 / 3.0, 0.5, 0.9, 1.0] {
        let net = build_recursion_network(&sigma, &grid, &noise, &noise_fn(s), s).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            // g_s = g_⌊s⌋ + σ(g_⌊s⌋)(f(s) - f(⌊s⌋)), unrolled over grid points below s
            let mut y = x.clone();
            let mut prev = 0.0;
            loop {
                let next = grid.points().iter().copied().find(|&p| p > prev).unwrap_or(1.0);
                let upto = if s <= next { s } else { next };
                let m = sm.call(&y);
                let dv: Vec<f64> = noise_fn(upto).iter().zip(noise_fn(prev)).map(|(a, b)| a - b).collect();
                let mut z = y.clone();
                for i in 0..d {
                    for j in 0..d {
                        z[i] += m[i * d + j] * dv[j];
                    }
                }
                y = z;
                if s <= next {
                    break;
                }
                prev = next;
            }
            let _ = grid_floor(&grid, s).unwrap();
            let r = net.realize(&x).unwrap();
            for (p, q) in r.iter().zip(&y) {
                assert!(close(*p, *q, 1e-9), "s={s}: {p} vs {q}");
            }
        }
    }
}

#[test]
fn architecture_is_independent_of_time_and_index() {
    let entry = problem_by_name("relu-exact", 2, 1.0).unwrap();
    let nets = entry.problem.encodings.clone().unwrap();
    let cfg = MlpConfig::new(2, 2, TimeGrid::uniform(3, 1.0).unwrap(), FrozenSample::new(1)).unwrap();
    let a = build_mlp_network(&nets, &cfg, &IndexPath::new(vec![0]), 0.1).unwrap();
    let b = build_mlp_network(&nets, &cfg.with_seed(9), &IndexPath::new(vec![4, -2]), 0.8).unwrap();
    assert_eq!(a.network.architecture(), b.network.architecture());
    let p = predict_architecture(&nets.architectures(), 2, 2, 3).unwrap();
    assert!(a.network.architecture().max_width() as u128 <= p.width_bound);
}
