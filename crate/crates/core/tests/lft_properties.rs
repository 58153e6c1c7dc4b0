use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robsyn::fixtures::{random_ss, ScaleFeedthrough};
use robsyn::lft::{
    build_delta_matrix, closed_loop_a, realize_controller, star_product, ControllerStructure, DeltaPoint, Entry,
    PartitionedSystem, StateSpace, UncertainClosedLoop, UncertaintyStructure,
};

fn identity_interconnection(a: usize, b: usize) -> PartitionedSystem {
    // inputs (from upper out2: b, free: a), outputs (to upper in2: a, free: b)
    let mut d = DMatrix::zeros(a + b, b + a);
    d.view_mut((0, b), (a, a)).fill_with_identity();
    d.view_mut((a, 0), (b, b)).fill_with_identity();
    PartitionedSystem::new(StateSpace::gain(d), b, a).unwrap()
}

fn blocks() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=3, 1..=3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn star_with_identity_is_neutral(seed in 0u64..10_000, n in 0usize..5, in1 in 0usize..3, out1 in 0usize..3, a in 1usize..3, b in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_ss(&mut rng, n, in1 + a, out1 + b);
        let upper = PartitionedSystem::new(g.clone(), in1, out1).unwrap();
        let s = star_product(&upper, &identity_interconnection(a, b)).unwrap();
        for _ in 0..5 {
            let w = 10f64.powf(rng.gen_range(-2.0..2.0));
            let diff = (s.sys.freq_response(w).unwrap() - g.freq_response(w).unwrap()).norm();
            prop_assert!(diff <= 1e-10, "difference {diff}");
        }
    }

    #[test]
    fn delta_matrix_is_linear(bs in blocks(), seed in 0u64..10_000) {
        let st = UncertaintyStructure::new(bs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = st.params();
        let x: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (s, t) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let comb: Vec<f64> = x.iter().zip(&y).map(|(a, b)| s * a + t * b).collect();
        let lhs = build_delta_matrix(&st, &DeltaPoint(comb)).unwrap();
        let rhs = build_delta_matrix(&st, &DeltaPoint(x)).unwrap() * s + build_delta_matrix(&st, &DeltaPoint(y)).unwrap() * t;
        prop_assert!((lhs - rhs).norm() <= 1e-14);
    }

    #[test]
    fn closed_a_is_affine_without_feedthrough(bs in blocks(), seed in 0u64..10_000) {
        let st = UncertaintyStructure::new(bs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = st.size();
        let g = random_ss(&mut rng, 3, k + 1, k + 1).scaled_d(0.0);
        let loop_ = UncertainClosedLoop::new(PartitionedSystem::new(g, k, k).unwrap()).unwrap();
        let m = st.params();
        let a0 = closed_loop_a(&loop_, &st, &DeltaPoint::nominal(m)).unwrap();
        let delta: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut expected = a0.clone();
        for i in 0..m {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            expected += (closed_loop_a(&loop_, &st, &DeltaPoint(e)).unwrap() - &a0) * delta[i];
        }
        let got = closed_loop_a(&loop_, &st, &DeltaPoint(delta)).unwrap();
        prop_assert!((got - expected).norm() <= 1e-12);
    }

    #[test]
    fn controller_realization_is_affine(seed in 0u64..10_000, order in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = |r: usize, c: usize, rng: &mut ChaCha8Rng| {
            DMatrix::from_fn(r, c, |_, _| if rng.gen_bool(0.3) { Entry::Fixed(rng.gen_range(-1.0..1.0)) } else { Entry::Free })
        };
        let cs = ControllerStructure::new(
            mask(order, order, &mut rng),
            mask(order, 2, &mut rng),
            mask(1, order, &mut rng),
            mask(1, 2, &mut rng),
        )
        .unwrap();
        let p = cs.param_count();
        let k1: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k2: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sum: Vec<f64> = k1.iter().zip(&k2).map(|(a, b)| a + b).collect();
        let r = |k: &[f64]| realize_controller(&cs, k).unwrap();
        let (a, b, c, z) = (r(&sum), r(&k1), r(&k2), r(&vec![0.0; p]));
        prop_assert!((&a.a - &b.a - &c.a + &z.a).norm() <= 1e-14);
        prop_assert!((&a.b - &b.b - &c.b + &z.b).norm() <= 1e-14);
        prop_assert!((&a.c - &b.c - &c.c + &z.c).norm() <= 1e-14);
        prop_assert!((&a.d - &b.d - &c.d + &z.d).norm() <= 1e-14);
    }
}
