//! Closing the controller loop first and the uncertainty loop second gives
//! the same transfer function as the reverse order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robsyn::fixtures::{random_ss, upper_then_lower, ScaleFeedthrough};
use robsyn::lft::{close_controller, close_uncertainty, Channels, DeltaPoint, Plant, UncertaintyStructure};

fn main() -> robsyn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // one repeated scalar (size 2) and one plain scalar
    let st = UncertaintyStructure::new(vec![2, 1])?;
    let ch = Channels { p: 3, w: 2, u: 1, q: 3, z: 2, y: 1 };
    let plant = Plant::new(random_ss(&mut rng, 4, 6, 6).scaled_d(0.3), ch)?;
    let k = random_ss(&mut rng, 2, 1, 1).scaled_d(0.3);
    let delta = DeltaPoint(vec![0.7, -0.4]);

    let lower_first = close_uncertainty(&close_controller(&plant, &k)?, &st, &delta)?.t_zw;
    let upper_first = upper_then_lower(&plant, &st, &delta, &k);
    println!("states: {} vs {}", lower_first.order(), upper_first.order());
    for _ in 0..5 {
        let w = 10f64.powf(rng.gen_range(-2.0..2.0));
        let diff = (lower_first.freq_response(w)? - upper_first.freq_response(w)?).norm();
        println!("omega = {w:>9.4}  |difference| = {diff:.2e}");
    }
    Ok(())
}
