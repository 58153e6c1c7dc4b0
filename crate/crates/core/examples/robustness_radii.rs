//! Distance to instability and performance radius of a one-state loop
//! `dx = (-0.4 + delta) x + w`, `z = x`.

use robsyn::fixtures::scalar_loop;
use robsyn::lft::UncertaintyStructure;
use robsyn::worstcase::{distance_to_instability, performance_radius, StartPolicy};

fn main() -> robsyn::Result<()> {
    let st = UncertaintyStructure::new(vec![1])?;
    let policy = StartPolicy::default();

    let m = scalar_loop(-0.4, 1.0, 1.0, 0.0);
    let d = distance_to_instability(&m, &st, &policy)?;
    println!("d* = {:.9} at {:?}", d.radius, d.delta.map(|p| p.0));
    if let Some(mu) = d.multipliers {
        println!("   multipliers: lambda = {:.4}, mu+ = {:?}, mu- = {:?}", mu.lambda, mu.mu_plus, mu.mu_minus);
    }

    // ||T_zw|| = 1 / (1 - delta): level 2 is reached at delta = 0.5
    let m = scalar_loop(-1.0, 1.0, 1.0, 0.0);
    for level in [1.5, 2.0, 4.0] {
        let h = performance_radius(&m, &st, level, &policy)?;
        println!("h*(level {level}) = {:.9}   closed form {:.9}", h.radius, 1.0 - 1.0 / level);
    }

    let unstable = scalar_loop(0.1, 1.0, 1.0, 0.0);
    println!("nominally unstable: d* = {}", distance_to_instability(&unstable, &st, &policy)?.radius);
    Ok(())
}
