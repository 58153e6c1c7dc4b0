use proptest::prelude::*;
use robsyn::linalg::{dot, norm2};
use robsyn::minmin::{
    minimize_minmin, solve_tangent_program, MinMinParams, ModelFlag, Objective, ParamBox, WorkingModel,
};

/// Separable convex quadratic `sum h_i (x_i - c_i)^2 / 2`.
#[derive(Debug, Clone)]
struct Quad {
    h: Vec<f64>,
    c: Vec<f64>,
}

impl Objective for Quad {
    fn eval(&self, x: &[f64]) -> robsyn::Result<f64> {
        Ok(x.iter().zip(&self.c).zip(&self.h).map(|((a, c), h)| 0.5 * h * (a - c).powi(2)).sum())
    }
    fn first_order(&self, x: &[f64]) -> robsyn::Result<(f64, Vec<f64>)> {
        let g = x.iter().zip(&self.c).zip(&self.h).map(|((a, c), h)| h * (a - c)).collect();
        Ok((self.eval(x)?, g))
    }
}

/// Pointwise minimum of affine pieces plus a small quadratic: a min-min
/// type objective with kinks.
#[derive(Debug, Clone)]
struct MinAffine {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl MinAffine {
    fn pieces(&self, x: &[f64]) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(a, b)| dot(a, x) + b + 0.1 * dot(x, x)).collect()
    }
    fn grad(&self, i: usize, x: &[f64]) -> Vec<f64> {
        self.a[i].iter().zip(x).map(|(a, v)| a + 0.2 * v).collect()
    }
}

impl Objective for MinAffine {
    fn eval(&self, x: &[f64]) -> robsyn::Result<f64> {
        Ok(self.pieces(x).into_iter().fold(f64::INFINITY, f64::min))
    }
    fn first_order(&self, x: &[f64]) -> robsyn::Result<(f64, Vec<f64>)> {
        let p = self.pieces(x);
        let i = (0..p.len()).min_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        Ok((p[i], self.grad(i, x)))
    }
}

fn quad() -> impl Strategy<Value = (Quad, Vec<f64>)> {
    (1usize..=4).prop_flat_map(|m| {
        (
            prop::collection::vec(0.1f64..5.0, m),
            prop::collection::vec(-3.0f64..3.0, m),
            prop::collection::vec(-1.0f64..1.0, m),
        )
            .prop_map(|(h, c, x0)| (Quad { h, c }, x0))
    })
}

fn min_affine() -> impl Strategy<Value = (MinAffine, Vec<f64>)> {
    (1usize..=3, 1usize..=4).prop_flat_map(|(m, k)| {
        (
            prop::collection::vec(prop::collection::vec(-2.0f64..2.0, m), k),
            prop::collection::vec(-1.0f64..1.0, k),
            prop::collection::vec(-1.0f64..1.0, m),
        )
            .prop_map(|(a, b, x0)| (MinAffine { a, b }, x0))
    })
}

fn check_trace(obj: &dyn Objective, x0: &[f64], flag: ModelFlag) -> Result<(), TestCaseError> {
    let bx = ParamBox::unit(x0.len());
    let params = MinMinParams::with_flag(flag);
    let r = minimize_minmin(obj, &bx, x0, &params).unwrap();
    for x in &r.trace.iterates {
        prop_assert!(bx.contains(x), "iterate {x:?} left the box");
    }
    for w in r.trace.values.windows(2) {
        prop_assert!(w[1] < w[0], "values {:?}", r.trace.values);
    }
    for &rho in &r.trace.rhos {
        prop_assert!(rho >= params.gamma);
    }
    prop_assert_eq!(r.f, obj.eval(&r.x).unwrap());
    Ok(())
}

/// Projected gradient with Armijo backtracking by `theta` and the same
/// memory-stepsize rule.
fn projected_gradient(obj: &Quad, bx: &ParamBox, x0: &[f64], p: &MinMinParams, steps: usize) -> Vec<Vec<f64>> {
    let mut x = x0.to_vec();
    let (mut fx, mut g) = obj.first_order(&x).unwrap();
    let mut t_sharp = 1.0 / (1.0 + norm2(&g));
    let mut out = vec![x.clone()];
    'outer: for _ in 0..steps {
        let mut t = t_sharp;
        for _ in 0..p.k_max {
            let step: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - t * b).collect();
            let eta = bx.project(&step);
            let d: Vec<f64> = eta.iter().zip(&x).map(|(e, v)| e - v).collect();
            let predicted = -dot(&g, &d);
            if !(predicted > 1e-15 * (1.0 + fx.abs())) {
                break 'outer;
            }
            let f = obj.eval(&eta).unwrap();
            let rho = (fx - f) / predicted;
            if rho >= p.gamma {
                t_sharp = if rho >= p.big_gamma { t / p.theta } else { t };
                x = eta;
                (fx, g) = obj.first_order(&x).unwrap();
                out.push(x.clone());
                continue 'outer;
            }
            t *= p.theta;
        }
        break;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quadratic_invariants((obj, x0) in quad()) {
        check_trace(&obj, &x0, ModelFlag::Upper)?;
        check_trace(&obj, &x0, ModelFlag::Strict)?;
    }

    #[test]
    fn kinked_invariants((obj, x0) in min_affine()) {
        check_trace(&obj, &x0, ModelFlag::Upper)?;
        check_trace(&obj, &x0, ModelFlag::Strict)?;
    }

    #[test]
    fn upper_flag_is_projected_gradient((obj, x0) in quad()) {
        let bx = ParamBox::unit(x0.len());
        let params = MinMinParams::with_flag(ModelFlag::Upper);
        let r = minimize_minmin(&obj, &bx, &x0, &params).unwrap();
        let reference = projected_gradient(&obj, &bx, &x0, &params, r.trace.iterates.len());
        let n = r.trace.iterates.len().min(reference.len());
        prop_assert!(n >= 1);
        prop_assert_eq!(&r.trace.iterates[..n], &reference[..n]);
    }

    #[test]
    fn single_plane_is_clamp(
        g in prop::collection::vec(-5.0f64..5.0, 1..5),
        t in 0.01f64..3.0,
        seed in 0u64..1000,
    ) {
        let m = g.len();
        let x: Vec<f64> = (0..m).map(|i| ((seed as f64 + i as f64) * 0.37).sin()).collect();
        let bx = ParamBox::unit(m);
        let tp = solve_tangent_program(&WorkingModel::new(0.0, g.clone()), &x, t, &bx);
        for j in 0..m {
            prop_assert_eq!(tp.eta[j], (x[j] - t * g[j]).clamp(-1.0, 1.0));
        }
    }

    #[test]
    fn aggregation_keeps_the_cut(
        gs in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 2..5),
        t in 0.05f64..2.0,
    ) {
        let x = vec![0.1, -0.2];
        let bx = ParamBox::unit(2);
        let model = WorkingModel { value: 0.0, subgradients: gs.clone(), aggregate: None };
        let tp = solve_tangent_program(&model, &x, t, &bx);
        let reduced = WorkingModel {
            value: 0.0,
            subgradients: vec![gs[0].clone(), tp.aggregate(&model)],
            aggregate: None,
        };
        let full = model.eval(&x, &tp.eta);
        let kept = reduced.eval(&x, &tp.eta);
        let d: Vec<f64> = tp.eta.iter().zip(&x).map(|(e, v)| e - v).collect();
        let scale = gs.iter().map(|g| norm2(g)).fold(0.0, f64::max) * norm2(&d);
        prop_assert!(kept >= full - 1e-6 * scale - 1e-9, "full {full}, reduced {kept}");
        prop_assert!(kept <= full + 1e-12);
    }
}
