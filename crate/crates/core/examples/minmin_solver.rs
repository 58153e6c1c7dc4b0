//! The box-constrained min-min solver on a smooth and a nonsmooth objective,
//! printing the serious-step traces.

use robsyn::minmin::{minimize_minmin, MinMinParams, ModelFlag, Objective, ParamBox};

/// `(x1 - 2)^2 + (x2 + 3)^2` over the unit box: optimum at the corner (1, -1).
struct Quadratic;

impl Objective for Quadratic {
    fn eval(&self, x: &[f64]) -> robsyn::Result<f64> {
        Ok((x[0] - 2.0).powi(2) + (x[1] + 3.0).powi(2))
    }
    fn first_order(&self, x: &[f64]) -> robsyn::Result<(f64, Vec<f64>)> {
        Ok((self.eval(x)?, vec![2.0 * (x[0] - 2.0), 2.0 * (x[1] + 3.0)]))
    }
}

/// `-|x|`, a minimum of two smooth branches.
struct NegAbs;

impl Objective for NegAbs {
    fn eval(&self, x: &[f64]) -> robsyn::Result<f64> {
        Ok(-x[0].abs())
    }
    fn first_order(&self, x: &[f64]) -> robsyn::Result<(f64, Vec<f64>)> {
        Ok((-x[0].abs(), vec![if x[0] >= 0.0 { -1.0 } else { 1.0 }]))
    }
}

fn report(name: &str, r: &robsyn::minmin::MinMinResult) {
    println!("{name}: x = {:?}, f = {:.8}, kkt = {:.1e}", r.x, r.f, r.kkt_residual);
    for (k, (x, f)) in r.trace.iterates.iter().zip(&r.trace.values).enumerate() {
        println!("  {k:>2}  x = {x:?}  f = {f:.8}");
    }
    println!("  termination: {:?}", r.trace.termination);
}

fn main() -> robsyn::Result<()> {
    let params = MinMinParams::default();
    let r = minimize_minmin(&Quadratic, &ParamBox::unit(2), &[0.0, 0.0], &params)?;
    report("projected quadratic", &r);

    let strict = MinMinParams::with_flag(ModelFlag::Strict);
    let r = minimize_minmin(&NegAbs, &ParamBox::unit(1), &[0.3], &strict)?;
    report("-|x| from 0.3", &r);
    Ok(())
}
