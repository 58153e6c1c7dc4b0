//! Report serialization and plot tables.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::algorithm::{closed_loop, RunReport};
use crate::error::{Error, Result};
use crate::lft::StateSpace;
use crate::problem::Problem;

pub const ITERATION_HEADER: [&str; 4] = ["iter", "v_star", "alpha_star", "v_upper"];
pub const FREQUENCY_POINTS: usize = 100;
pub const STEP_SAMPLES: usize = 200;

fn io(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    io(path, e)
}

pub fn to_json(report: &RunReport) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| Error::Invalid(e.to_string()))
}

pub fn from_json(s: &str) -> Result<RunReport> {
    serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
}

/// Iteration table: one row per outer iteration.
pub fn iteration_table(report: &RunReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let p = Path::new("<iterations>");
    w.write_record(ITERATION_HEADER).map_err(|e| csv_err(p, e))?;
    for r in &report.iterations {
        w.write_record([
            r.iter.to_string(),
            r.v_star.to_string(),
            r.alpha_star.to_string(),
            r.v_upper.to_string(),
        ])
        .map_err(|e| csv_err(p, e))?;
    }
    let bytes = w.into_inner().map_err(|e| io(p, e))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Log-spaced frequencies on `[1e-2, 1e3]`.
pub fn frequency_grid(n: usize) -> Vec<f64> {
    let (a, b) = (-2.0f64, 3.0f64);
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n.max(2) - 1) as f64))
        .collect()
}

/// Largest singular value of the frequency response along the grid.
pub fn sigma_curve(sys: &StateSpace, omegas: &[f64]) -> Result<Vec<f64>> {
    omegas
        .iter()
        .map(|&w| Ok(crate::linalg::sigma_max(&sys.freq_response(w)?)))
        .collect()
}

/// Step responses from every input, zero initial state. Returns the time
/// grid and `y[input][sample]` as output vectors.
pub fn step_response(sys: &StateSpace, horizon: f64, samples: usize) -> (Vec<f64>, Vec<Vec<Vec<f64>>>) {
    let (n, nu) = (sys.order(), sys.inputs());
    let dt = horizon / (samples.max(2) - 1) as f64;
    let mut aug = DMatrix::zeros(n + nu, n + nu);
    aug.view_mut((0, 0), (n, n)).copy_from(&sys.a);
    aug.view_mut((0, n), (n, nu)).copy_from(&sys.b);
    let phi = (aug * dt).exp();
    let ad = phi.view((0, 0), (n, n)).into_owned();
    let bd = phi.view((0, n), (n, nu)).into_owned();
    let times: Vec<f64> = (0..samples).map(|k| k as f64 * dt).collect();
    let ys = (0..nu)
        .map(|j| {
            let mut x = nalgebra::DVector::zeros(n);
            let bj = bd.column(j).into_owned();
            let dj = sys.d.column(j).into_owned();
            (0..samples)
                .map(|_| {
                    let y = &sys.c * &x + &dj;
                    x = &ad * &x + &bj;
                    y.iter().copied().collect()
                })
                .collect()
        })
        .collect();
    (times, ys)
}

/// Frequency and step tables for every active scenario at the final
/// controller. Ill-posed or unstable scenarios are skipped.
pub fn plot_tables(problem: &Problem, report: &RunReport) -> Result<(String, String)> {
    let closed = closed_loop(problem, &report.kappa)?;
    let lft = closed.delta_lft(&problem.structure)?;
    let omegas = frequency_grid(FREQUENCY_POINTS);
    let mut freq = csv::Writer::from_writer(Vec::new());
    let mut step = csv::Writer::from_writer(Vec::new());
    let p = Path::new("<plots>");
    freq.write_record(["scenario", "omega", "sigma_max"]).map_err(|e| csv_err(p, e))?;
    step.write_record(["scenario", "t", "input", "output", "value"]).map_err(|e| csv_err(p, e))?;
    for (k, s) in report.scenarios.iter().enumerate() {
        let Ok(c) = lft.close(&s.delta.0) else { continue };
        let alpha = crate::linalg::spectral_abscissa_value(&c.a)?;
        if alpha >= 0.0 {
            continue;
        }
        for (w, v) in omegas.iter().zip(sigma_curve(&c.perf, &omegas)?) {
            freq.write_record([k.to_string(), w.to_string(), v.to_string()])
                .map_err(|e| csv_err(p, e))?;
        }
        let horizon = if c.perf.order() == 0 { 1.0 } else { (8.0 / alpha.abs()).clamp(1.0, 100.0) };
        let (times, ys) = step_response(&c.perf, horizon, STEP_SAMPLES);
        for (j, yj) in ys.iter().enumerate() {
            for (t, y) in times.iter().zip(yj) {
                for (i, v) in y.iter().enumerate() {
                    step.write_record([k.to_string(), t.to_string(), j.to_string(), i.to_string(), v.to_string()])
                        .map_err(|e| csv_err(p, e))?;
                }
            }
        }
    }
    let f = String::from_utf8(freq.into_inner().map_err(|e| io(p, e))?).expect("utf-8");
    let s = String::from_utf8(step.into_inner().map_err(|e| io(p, e))?).expect("utf-8");
    Ok((f, s))
}

fn write(path: PathBuf, content: &str) -> Result<PathBuf> {
    fs::write(&path, content).map_err(|e| io(&path, e))?;
    Ok(path)
}

/// Writes `report.json` and `iterations.csv` into `dir`; with a problem,
/// also `frequency.csv` and `step.csv`.
pub fn write_report(report: &RunReport, problem: Option<&Problem>, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut out = vec![
        write(dir.join("report.json"), &to_json(report)?)?,
        write(dir.join("iterations.csv"), &iteration_table(report)?)?,
    ];
    if let Some(p) = problem {
        if report.controller.is_some() {
            let (f, s) = plot_tables(p, report)?;
            out.push(write(dir.join("frequency.csv"), &f)?);
            out.push(write(dir.join("step.csv"), &s)?);
        }
    }
    Ok(out)
}
