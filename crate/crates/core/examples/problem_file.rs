//! Problem files: physical parameter ranges are normalized to [-1, 1] and
//! dimension errors name the offending block.

use robsyn::lft::{close_uncertainty, DeltaPoint, StateSpace};
use robsyn::problem::{Problem, ProblemFile};

const SPRING: &str = r#"{
    "plant": {
        "A": [[0.0, 1.0], [0.0, -0.4]],
        "Bp": [[0.0], [-1.0]], "Bw": [[0.0], [1.0]], "Bu": [[0.0], [1.0]],
        "Cq": [[1.0, 0.0]], "Cz": [[1.0, 0.0]], "Cy": [[1.0, 0.0]]
    },
    "uncertainty": {"blocks": [1], "ranges": [[2.0, 4.0]]},
    "controller": {"order": 0, "dk": [[-1.0]]}
}"#;

fn a_matrix(p: &Problem, d: f64) -> robsyn::Result<StateSpace> {
    let m = robsyn::algorithm::closed_loop(p, &p.initial_kappa())?;
    Ok(close_uncertainty(&m, &p.structure, &DeltaPoint(vec![d]))?.t_zw)
}

fn main() -> robsyn::Result<()> {
    // stiffness k in [2, 4] enters as dx2 = -k x1 + ...; with u = -x1, A[1][0] = -k - 1
    let p = ProblemFile::from_json(SPRING)?.normalize()?;
    println!("parameters: {}, free controller entries: {}", p.structure.params(), p.controller.param_count());
    for d in [-1.0, 0.0, 1.0] {
        let a = a_matrix(&p, d)?.a;
        println!("delta = {d:>4}: A[1][0] = {}", a[(1, 0)]);
    }

    let bad = SPRING.replace(r#""blocks": [1]"#, r#""blocks": [2]"#);
    match ProblemFile::from_json(&bad).and_then(|f| f.normalize()) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
