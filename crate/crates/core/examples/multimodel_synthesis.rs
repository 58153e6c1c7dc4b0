//! Structured synthesis against a fixed scenario set with the proximal
//! bundle method, on the static plant `T_zw = delta - kappa`.

use robsyn::fixtures::toy_static_plant;
use robsyn::lft::{ControllerStructure, DeltaPoint, UncertaintyStructure};
use robsyn::synthesis::{multimodel_objective, synthesize_structured, SynthesisParams, SynthesisProblem};

fn main() -> robsyn::Result<()> {
    let scenarios = vec![DeltaPoint(vec![-1.0]), DeltaPoint(vec![1.0])];
    let problem = SynthesisProblem::new(
        toy_static_plant(),
        ControllerStructure::static_gain(1, 1),
        UncertaintyStructure::new(vec![1])?,
        scenarios,
        Some(vec![0.7]),
    )?;
    let start = multimodel_objective(&problem, &[0.7])?;
    println!("kappa = 0.7: per scenario {:?}, max {:.6}", start.per_scenario, start.value);

    let r = synthesize_structured(&problem, &SynthesisParams::default())?;
    println!("kappa* = {:?}, v_* = {:.10}", r.kappa, r.value);
    println!("criticality {:.2e} (critical = {})", r.criticality, r.critical);
    println!("serious values: {:?}", r.trace.values);
    println!("status: {:?}", r.trace.status);
    Ok(())
}
