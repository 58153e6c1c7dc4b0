use nalgebra::DMatrix;
use robsyn::algorithm::closed_loop;
use robsyn::analysis::{hinf_norm, HINF_REL_TOL};
use robsyn::fixtures::scalar_loop;
use robsyn::lft::{close_uncertainty, closed_loop_a, DeltaPoint, PartitionedSystem, StateSpace, UncertainClosedLoop, UncertaintyStructure};
use robsyn::linalg::spectral_abscissa_value;
use robsyn::minmin::ParamBox;
use robsyn::problem::Problem;
use robsyn::worstcase::{destabilize, distance_to_instability, worst_performance, StartPolicy};

fn synthetic() -> (Problem, UncertainClosedLoop) {
    let p = Problem::load(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/synthetic.json")).unwrap();
    let m = closed_loop(&p, &p.initial_kappa()).unwrap();
    (p, m)
}

fn alpha(m: &UncertainClosedLoop, st: &UncertaintyStructure, d: &[f64]) -> f64 {
    spectral_abscissa_value(&closed_loop_a(m, st, &DeltaPoint(d.to_vec())).unwrap()).unwrap()
}

fn norm(m: &UncertainClosedLoop, st: &UncertaintyStructure, d: &[f64]) -> f64 {
    let t = close_uncertainty(m, st, &DeltaPoint(d.to_vec())).unwrap().t_zw;
    hinf_norm(&t, HINF_REL_TOL).unwrap().hinf
}

#[test]
fn results_lie_in_the_box_and_are_not_stale() {
    let (p, m) = synthetic();
    let bx = ParamBox::unit(2);
    let policy = StartPolicy::default();
    let s = destabilize(&m, &p.structure, &bx, &policy).unwrap();
    assert!(bx.contains(&s.delta.0));
    assert_eq!(s.value, alpha(&m, &p.structure, &s.delta.0));
    let w = worst_performance(&m, &p.structure, &bx, &policy).unwrap();
    assert!(bx.contains(&w.delta.0));
    assert!((w.value - norm(&m, &p.structure, &w.delta.0)).abs() <= 1e-12 * w.value);
}

#[test]
fn best_values_grow_with_the_number_of_starts() {
    let (p, m) = synthetic();
    let bx = ParamBox::unit(2);
    let (mut last_a, mut last_h) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for interior in [0, 2, 5, 10, 20] {
        let policy = StartPolicy { interior, ..StartPolicy::default() };
        let a = destabilize(&m, &p.structure, &bx, &policy).unwrap().value;
        let h = worst_performance(&m, &p.structure, &bx, &policy).unwrap().value;
        assert!(a >= last_a && h >= last_h, "{interior} starts: {a} / {h}");
        (last_a, last_h) = (a, h);
    }
}

#[test]
fn distance_is_consistent_along_the_critical_ray() {
    let (p, m) = synthetic();
    let r = distance_to_instability(&m, &p.structure, &StartPolicy::default()).unwrap();
    assert!(r.radius.is_finite() && r.radius > 0.0);
    let d = r.delta.unwrap();
    let dir: Vec<f64> = d.0.iter().map(|v| v / d.inf_norm()).collect();
    let at = |s: f64| alpha(&m, &p.structure, &dir.iter().map(|v| s * v).collect::<Vec<_>>());
    assert!(at(0.9 * r.radius) < 0.0);
    assert!(at(r.radius) >= -1e-3, "{}", at(r.radius));
}

#[test]
fn escalated_points_are_unstable() {
    let st = UncertaintyStructure::new(vec![1]).unwrap();
    let m = scalar_loop(-0.5, 1.0, 1.0, 0.0);
    let r = worst_performance(&m, &st, &ParamBox::unit(1), &StartPolicy::default()).unwrap();
    assert!(!r.escalations.is_empty());
    for d in &r.escalations {
        assert!(alpha(&m, &st, &d.0) >= -1e-10);
    }
}

/// `z = (1 + d1)(1 + 0.5 d2) w` as a static LFT with nilpotent `D11`.
#[test]
fn monotone_gain_matches_vertex_enumeration() {
    let d = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.5, 1.0]);
    let m = UncertainClosedLoop::new(PartitionedSystem::new(StateSpace::gain(d), 2, 2).unwrap()).unwrap();
    let st = UncertaintyStructure::new(vec![1, 1]).unwrap();
    let bx = ParamBox::unit(2);
    let enumerated = bx
        .vertices()
        .iter()
        .map(|v| norm(&m, &st, v))
        .fold(f64::NEG_INFINITY, f64::max);
    let r = worst_performance(&m, &st, &bx, &StartPolicy::default()).unwrap();
    assert_eq!(r.value, enumerated);
    assert!((r.value - 3.0).abs() < 1e-12);
    assert_eq!(r.delta.0, vec![1.0, 1.0]);
}
