//! H-infinity norm of a lightly damped second-order system, with the peak
//! frequency and a dense frequency sweep for comparison.

use nalgebra::DMatrix;
use robsyn::analysis::{hinf_norm, spectral_abscissa, EIG_ACTIVITY, HINF_REL_TOL};
use robsyn::lft::StateSpace;
use robsyn::linalg::sigma_max;

fn main() -> robsyn::Result<()> {
    // G(s) = 1 / (s^2 + 2 zeta s + 1)
    let zeta = 0.05;
    let sys = StateSpace::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -2.0 * zeta]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DMatrix::zeros(1, 1),
    )?;
    let abscissa = spectral_abscissa(&sys.a, EIG_ACTIVITY)?;
    let h = hinf_norm(&sys, HINF_REL_TOL)?;
    let exact = 1.0 / (2.0 * zeta * (1.0 - zeta * zeta).sqrt());
    println!("spectral abscissa  {:.6}", abscissa.alpha);
    println!("hinf               {:.10}", h.hinf);
    println!("closed form        {exact:.10}");
    println!("peak frequency     {:?}", h.peak_frequency());

    let sweep = (0..10_000)
        .map(|i| 10f64.powf(-2.0 + 4.0 * i as f64 / 9_999.0))
        .map(|w| sys.freq_response(w).map(|g| sigma_max(&g)))
        .collect::<robsyn::Result<Vec<_>>>()?;
    let best = sweep.iter().copied().fold(0.0, f64::max);
    println!("10^4-point sweep   {best:.10}");
    Ok(())
}
