//! Clarke subgradients of the worst-case objectives next to central finite
//! differences at a smooth point.

use robsyn::analysis::{subgrad_a_minus_delta, subgrad_h_minus_delta};
use robsyn::lft::{close_uncertainty, closed_loop_a, DeltaPoint, UncertainClosedLoop, UncertaintyStructure};
use robsyn::problem::Problem;
use robsyn::algorithm::closed_loop;

fn central<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let (mut up, mut dn) = (x.to_vec(), x.to_vec());
            up[i] += h;
            dn[i] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

fn show(name: &str, analytic: &[f64], fd: &[f64]) {
    println!("{name}");
    for (a, b) in analytic.iter().zip(fd) {
        println!("  analytic {a:>14.8}  finite difference {b:>14.8}");
    }
}

fn main() -> robsyn::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/synthetic.json");
    let problem = Problem::load(path)?;
    let m: UncertainClosedLoop = closed_loop(&problem, &problem.initial_kappa())?;
    let st: &UncertaintyStructure = &problem.structure;
    let delta = DeltaPoint(vec![0.3, -0.2]);

    let h = |d: &[f64]| {
        let t = close_uncertainty(&m, st, &DeltaPoint(d.to_vec())).unwrap().t_zw;
        -robsyn::analysis::hinf_norm(&t, 1e-12).unwrap().hinf
    };
    let g = subgrad_h_minus_delta(&m, st, &delta)?;
    show(&format!("h_-(delta), smooth = {}", g.smooth), &g.g, &central(h, &delta.0, 1e-6));

    let a = |d: &[f64]| {
        let a = closed_loop_a(&m, st, &DeltaPoint(d.to_vec())).unwrap();
        -robsyn::linalg::spectral_abscissa_value(&a).unwrap()
    };
    let g = subgrad_a_minus_delta(&m, st, &delta)?;
    show(&format!("a_-(delta), smooth = {}", g.smooth), &g.g, &central(a, &delta.0, 1e-6));
    Ok(())
}
