//! Exhaustive grid check of a synthesized controller next to the
//! multi-start local search.

use robsyn::algorithm::{closed_loop, grid_certify, run_dynamic_inner_approximation, RunConfig, DEFAULT_GRID_CAP};
use robsyn::minmin::ParamBox;
use robsyn::problem::Problem;
use robsyn::worstcase::{worst_performance, StartPolicy};

fn main() -> robsyn::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/synthetic.json");
    let problem = Problem::load(path)?;
    let report = run_dynamic_inner_approximation(&problem, &RunConfig::from_options(&problem.options));
    let kappa = &report.kappa;

    let m = closed_loop(&problem, kappa)?;
    let local = worst_performance(&m, &problem.structure, &ParamBox::unit(2), &StartPolicy::default())?;
    println!("local search: v* = {:.10} at {:?}", local.value, local.delta.0);
    for n in [5, 21, 51] {
        let g = grid_certify(&problem, kappa, n, DEFAULT_GRID_CAP)?;
        println!(
            "{n:>2}^2 grid: worst norm {:.10} at {:?}, worst alpha {:.6}",
            g.worst_norm, g.worst_norm_at.0, g.worst_alpha
        );
    }
    match grid_certify(&problem, kappa, 2000, DEFAULT_GRID_CAP) {
        Err(e) => println!("2000^2 grid refused: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
