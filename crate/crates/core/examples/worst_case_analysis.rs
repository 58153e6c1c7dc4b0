//! Multi-start worst-case searches at a fixed controller: well-posedness,
//! destabilization and worst performance over the unit box.

use robsyn::algorithm::closed_loop;
use robsyn::minmin::ParamBox;
use robsyn::problem::Problem;
use robsyn::worstcase::{destabilize, wellposedness_scan, worst_performance, StartPolicy};

fn main() -> robsyn::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/synthetic.json");
    let problem = Problem::load(path)?;
    let kappa = problem.initial_kappa();
    let m = closed_loop(&problem, &kappa)?;
    let st = &problem.structure;
    let bx = ParamBox::unit(st.params());
    let policy = StartPolicy::with_seed(3);

    let wp = wellposedness_scan(&m, st, &bx, &policy)?;
    println!("well-posedness: -1/sigma_min = {:.4} at {:?}", wp.value, wp.delta.0);

    let stab = destabilize(&m, st, &bx, &policy)?;
    println!(
        "destabilization: alpha* = {:.6} at {:?} ({} starts, flagged = {})",
        stab.value, stab.delta.0, stab.starts_used, stab.flagged
    );

    let perf = worst_performance(&m, st, &bx, &policy)?;
    println!("worst performance: v* = {:.6} at {:?}", perf.value, perf.delta.0);
    for s in &perf.per_start {
        println!("  start {:?} -> {:.6} in {} steps", s.start, s.value, s.trace.values.len());
    }
    Ok(())
}
