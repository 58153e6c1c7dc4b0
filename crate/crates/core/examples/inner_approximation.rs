//! Full dynamic inner approximation on a problem file, writing the JSON
//! report and CSV tables. Usage:
//!
//!     cargo run --release --example inner_approximation -- [problem.json] [out-dir]

use std::path::PathBuf;

use robsyn::algorithm::{run_dynamic_inner_approximation, RunConfig};
use robsyn::problem::Problem;
use robsyn::report::write_report;

fn main() -> robsyn::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/synthetic.json").into());
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("robsyn-run"));
    let problem = Problem::load(&path)?;
    let report = run_dynamic_inner_approximation(&problem, &RunConfig::from_options(&problem.options));

    println!("{:>4} {:>9} {:>12} {:>12} {:>12}", "iter", "scenarios", "v_*", "alpha*", "v*");
    for r in &report.iterations {
        println!(
            "{:>4} {:>9} {:>12.6} {:>12.6} {:>12.6}",
            r.iter, r.scenarios, r.v_star, r.alpha_star, r.v_upper
        );
    }
    println!("termination: {}", report.termination);
    println!("kappa: {:?}", report.kappa);
    if let Some(d) = &report.d_star {
        println!("d* = {:.6}", d.radius);
    }
    if let Some(h) = &report.h_star {
        println!("h* = {:.6} at level {:.6}", h.radius, report.h_level);
    }
    for f in write_report(&report, Some(&problem), &out)? {
        println!("wrote {}", f.display());
    }
    println!("exit code {}", report.exit_code());
    Ok(())
}
