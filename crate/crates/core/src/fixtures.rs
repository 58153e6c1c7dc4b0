//! Reproducible test plants and small reference problems.

use nalgebra::DMatrix;
use rand::Rng;

use crate::lft::{
    build_delta_matrix, star_product, Channels, DeltaPoint, PartitionedSystem, Plant, StateSpace,
    UncertainClosedLoop, UncertaintyStructure,
};

/// Random internally stable system with `n` states. The state matrix is a
/// uniform random matrix shifted so its spectral abscissa is in `[-1.5, -0.5]`.
pub fn random_ss<R: Rng>(rng: &mut R, n: usize, inputs: usize, outputs: usize) -> StateSpace {
    let mut a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    if n > 0 {
        let alpha = crate::linalg::spectral_abscissa_value(&a).expect("eigenvalues");
        let margin = rng.gen_range(0.5..1.5);
        for i in 0..n {
            a[(i, i)] -= alpha + margin;
        }
    }
    let b = DMatrix::from_fn(n, inputs, |_, _| rng.gen_range(-1.0..1.0));
    let c = DMatrix::from_fn(outputs, n, |_, _| rng.gen_range(-1.0..1.0));
    let d = DMatrix::from_fn(outputs, inputs, |_, _| rng.gen_range(-1.0..1.0));
    StateSpace::new(a, b, c, d).expect("consistent sizes")
}

pub trait ScaleFeedthrough {
    fn scaled_d(self, factor: f64) -> Self;
}

impl ScaleFeedthrough for StateSpace {
    fn scaled_d(mut self, factor: f64) -> Self {
        self.d *= factor;
        self
    }
}

/// One-state loop with scalar uncertainty and performance channels:
/// `dx = a x + b p + w`, `q = c x + d p`, `z = x`.
pub fn scalar_loop(a: f64, b: f64, c: f64, d: f64) -> UncertainClosedLoop {
    let m = |rows: usize, cols: usize, v: &[f64]| DMatrix::from_row_slice(rows, cols, v);
    let sys = StateSpace::new(
        m(1, 1, &[a]),
        m(1, 2, &[b, 1.0]),
        m(2, 1, &[c, 1.0]),
        m(2, 2, &[d, 0.0, 0.0, 0.0]),
    )
    .expect("scalar loop");
    UncertainClosedLoop::new(PartitionedSystem::new(sys, 1, 1).expect("partition")).expect("loop")
}

/// `F_l(F_u(P, Delta), K)`, closing uncertainty first.
pub fn upper_then_lower(
    plant: &Plant,
    structure: &UncertaintyStructure,
    delta: &DeltaPoint,
    k: &StateSpace,
) -> StateSpace {
    let dm = build_delta_matrix(structure, delta).expect("delta");
    let upper = PartitionedSystem::new(StateSpace::gain(dm), 0, 0).expect("upper");
    let fu = star_product(&upper, &plant.uncertainty_partition()).expect("F_u");
    let fu = fu.repartition(plant.ch.w, plant.ch.z).expect("repartition");
    let lower = PartitionedSystem::new(k.clone(), plant.ch.y, plant.ch.u).expect("lower");
    star_product(&fu, &lower).expect("F_l").sys
}

/// Static plant with `z = delta - u`, `y = 1`: the closed-loop map is
/// `T_zw(delta, kappa) = delta - kappa` under static feedback `u = kappa y`.
///
/// Realized with `q = w`, `p -> z`, `y = w`, `z = p - u`.
pub fn toy_static_plant() -> Plant {
    // inputs (p, w, u), outputs (q, z, y)
    let d = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0]);
    Plant::new(
        StateSpace::gain(d),
        Channels { p: 1, w: 1, u: 1, q: 1, z: 1, y: 1 },
    )
    .expect("toy plant")
}
