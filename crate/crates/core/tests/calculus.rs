use picardnet::net_calculus::{
    affine_network, compose, compose_fused, extend_depth, identity_network, sum_networks, Architecture, Layer,
    Matrix, ReluNetwork,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_net(rng: &mut ChaCha8Rng, widths: &[usize]) -> ReluNetwork {
    let layers = widths
        .windows(2)
        .map(|w| {
            let data = (0..w[0] * w[1]).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let bias = (0..w[1]).map(|_| rng.gen_range(-0.5..0.5)).collect();
            Layer::new(Matrix::from_row_major(w[1], w[0], data).unwrap(), bias).unwrap()
        })
        .collect();
    ReluNetwork::new(layers).unwrap()
}

fn random_point(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect()
}

fn close(a: &[f64], b: &[f64], rel: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= rel * (1.0 + y.abs()))
}

fn widths_strategy(input: usize, output: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..6, 1..4).prop_map(move |hidden| {
        let mut w = vec![input];
        w.extend(hidden);
        w.push(output);
        w
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn composition_is_a_homomorphism(
        d in 1usize..4, mid in 1usize..4, e in 1usize..3,
        hi in prop::collection::vec(1usize..6, 1..4),
        ho in prop::collection::vec(1usize..6, 1..4),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wi: Vec<usize> = std::iter::once(d).chain(hi).chain([mid]).collect();
        let wo: Vec<usize> = std::iter::once(mid).chain(ho).chain([e]).collect();
        let inner = random_net(&mut rng, &wi);
        let outer = random_net(&mut rng, &wo);
        let c = compose(&outer, &inner).unwrap();
        prop_assert_eq!(c.architecture(), outer.architecture().odot(&inner.architecture()).unwrap());
        let f = compose_fused(&outer, &inner).unwrap();
        prop_assert_eq!(f.architecture(), outer.architecture().fused(&inner.architecture()).unwrap());
        prop_assert_eq!(f.depth(), outer.depth() + inner.depth() - 2);
        for _ in 0..16 {
            let x = random_point(&mut rng, d);
            let direct = outer.realize(&inner.realize(&x).unwrap()).unwrap();
            prop_assert!(close(&c.realize(&x).unwrap(), &direct, 1e-10));
            prop_assert!(close(&f.realize(&x).unwrap(), &direct, 1e-10));
        }
    }

    #[test]
    fn sum_is_a_homomorphism(
        d in 1usize..4, e in 1usize..3, depth in 3usize..6, count in 1usize..5,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nets: Vec<ReluNetwork> = (0..count)
            .map(|_| {
                let mut w = vec![d];
                w.extend((0..depth - 2).map(|_| rng.gen_range(1..6)));
                w.push(e);
                random_net(&mut rng, &w)
            })
            .collect();
        let h: Vec<f64> = (0..count).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let refs: Vec<&ReluNetwork> = nets.iter().collect();
        let s = sum_networks(&h, &refs).unwrap();
        let expected = nets[1..].iter().fold(nets[0].architecture(), |a, n| a.boxplus(&n.architecture()).unwrap());
        prop_assert_eq!(s.architecture(), expected);
        let bound: usize = nets.iter().map(|n| n.architecture().max_width()).sum();
        prop_assert!(s.architecture().max_width() <= bound);
        for _ in 0..16 {
            let x = random_point(&mut rng, d);
            let mut direct = vec![0.0; e];
            for (hi, n) in h.iter().zip(&nets) {
                for (a, v) in direct.iter_mut().zip(n.realize(&x).unwrap()) {
                    *a += hi * v;
                }
            }
            prop_assert!(close(&s.realize(&x).unwrap(), &direct, 1e-10));
        }
    }

    #[test]
    fn extend_depth_preserves_realization(
        widths in widths_strategy(2, 2), gap in 0usize..5, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, &widths);
        let longer = extend_depth(&net, net.depth() + gap).unwrap();
        prop_assert_eq!(longer.depth(), net.depth() + gap);
        for _ in 0..16 {
            let x = random_point(&mut rng, 2);
            let a = net.realize(&x).unwrap();
            let b = longer.realize(&x).unwrap();
            if gap <= 1 {
                prop_assert_eq!(a, b);
            } else {
                prop_assert!(close(&b, &a, 1e-12));
            }
        }
    }

    #[test]
    fn identity_is_bitwise(d in 1usize..5, depth in 3usize..7, xs in prop::collection::vec(any::<f64>(), 4)) {
        let id = identity_network(d, depth).unwrap();
        let x: Vec<f64> = xs.iter().cycle().take(d).map(|v| if v.is_nan() { 0.0 } else { *v }).collect();
        let y = id.realize(&x).unwrap();
        for (a, b) in x.iter().zip(&y) {
            if a.is_finite() {
                prop_assert_eq!(a.to_bits() & !(1 << 63), b.to_bits() & !(1 << 63));
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn param_count_matches_formula(widths in widths_strategy(3, 2), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, &widths);
        let formula: u128 = widths.windows(2).map(|w| (w[1] * (w[0] + 1)) as u128).sum();
        prop_assert_eq!(net.param_count(), formula);
        prop_assert_eq!(Architecture::new(widths).unwrap().param_count(), formula);
    }

    #[test]
    fn json_round_trip(widths in widths_strategy(2, 3), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, &widths);
        let back = ReluNetwork::from_json_str(&net.to_json_string()).unwrap();
        prop_assert_eq!(back, net);
    }
}

#[test]
fn thousand_point_homomorphisms() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inner = random_net(&mut rng, &[3, 5, 4, 2]);
    let outer = random_net(&mut rng, &[2, 6, 1]);
    let c = compose(&outer, &inner).unwrap();
    let other = random_net(&mut rng, &[3, 2, 7, 2]);
    let s = sum_networks(&[0.7, -1.3], &[&inner, &other]).unwrap();
    let id = identity_network(3, 4).unwrap();
    let ext = extend_depth(&inner, 9).unwrap();
    for _ in 0..1000 {
        let x = random_point(&mut rng, 3);
        let gx = inner.realize(&x).unwrap();
        assert!(close(&c.realize(&x).unwrap(), &outer.realize(&gx).unwrap(), 1e-10));
        let ox = other.realize(&x).unwrap();
        let direct: Vec<f64> = gx.iter().zip(&ox).map(|(a, b)| 0.7 * a - 1.3 * b).collect();
        assert!(close(&s.realize(&x).unwrap(), &direct, 1e-10));
        assert_eq!(id.realize(&x).unwrap(), x);
        assert!(close(&ext.realize(&x).unwrap(), &gx, 1e-10));
    }
}

#[test]
fn composition_with_identity_outer() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = random_net(&mut rng, &[2, 4, 3]);
    let c = compose(&identity_network(3, 3).unwrap(), &g).unwrap();
    for _ in 0..100 {
        let x = random_point(&mut rng, 2);
        assert!(close(&c.realize(&x).unwrap(), &g.realize(&x).unwrap(), 1e-12));
    }
}

#[test]
fn scalar_composition_against_closures() {
    let a = affine_network(&Matrix::from_rows(&[vec![2.0]]).unwrap(), &[-1.0], 3).unwrap();
    let b = affine_network(&Matrix::from_rows(&[vec![-0.5]]).unwrap(), &[0.25], 4).unwrap();
    let c = compose(&a, &b).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let x: f64 = rng.gen_range(-10.0..10.0);
        let direct = 2.0 * (-0.5 * x + 0.25) - 1.0;
        let got = c.realize(&[x]).unwrap()[0];
        assert!((got - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
    }
}

#[test]
fn random_affine_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = Matrix::from_row_major(3, 2, (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let net = affine_network(&w, &b, 5).unwrap();
    for _ in 0..100 {
        let x = random_point(&mut rng, 2);
        let direct: Vec<f64> = w.mul_vec(&x).iter().zip(&b).map(|(a, c)| a + c).collect();
        assert!(close(&net.realize(&x).unwrap(), &direct, 1e-15));
    }
}

#[test]
fn boxplus_triangle_inequality() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let len = rng.gen_range(3..7);
        let mk = |rng: &mut ChaCha8Rng| {
            let mut w = vec![2];
            w.extend((0..len - 2).map(|_| rng.gen_range(1..20)));
            w.push(1);
            Architecture::new(w).unwrap()
        };
        let (a, b) = (mk(&mut rng), mk(&mut rng));
        assert!(a.boxplus(&b).unwrap().max_width() <= a.max_width() + b.max_width());
    }
}

#[test]
fn mismatches_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_net(&mut rng, &[2, 3, 1]);
    let b = random_net(&mut rng, &[2, 3, 3, 1]);
    assert!(compose(&a, &b).is_err());
    assert!(sum_networks(&[1.0, 1.0], &[&a, &b]).is_err());
    assert!(extend_depth(&b, 3).is_err());
    assert!(identity_network(2, 2).is_err());
    assert!(a.realize(&[1.0]).is_err());
}
