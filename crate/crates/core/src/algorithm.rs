//! Dynamic inner approximation: alternate multi-model synthesis over a
//! growing scenario set with worst-case searches over the whole box, then
//! post-process the final controller with the radii `d*` and `h*`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lft::{close_controller, realize_controller, DeltaPoint, UncertainClosedLoop};
use crate::linalg::{self, inf_norm};
use crate::minmin::ParamBox;
use crate::problem::{Options, Problem, Rows};
use crate::synthesis::{synthesize_structured, SynthesisParams, SynthesisProblem};
use crate::worstcase::{
    destabilize, distance_to_instability, performance_radius, wellposedness_scan, worst_performance, RadiusResult,
    StartPolicy, WorstCaseResult,
};

/// Scenarios closer than this in the infinity norm count as duplicates.
pub const SCENARIO_SEPARATION: f64 = 1e-8;
pub const DEFAULT_GRID_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub eps: f64,
    /// Random interior starts per worst-case search.
    pub starts: usize,
    pub seed: u64,
    pub max_outer: usize,
    /// Destabilization rounds allowed inside one outer iteration.
    pub max_destab_rounds: usize,
    pub synthesis: SynthesisParams,
    /// Wall-clock timings make reports irreproducible, so they are opt-in.
    pub record_timings: bool,
}

impl RunConfig {
    pub fn from_options(o: &Options) -> Self {
        Self {
            eps: o.eps,
            starts: o.starts,
            seed: o.seed,
            max_outer: o.max_outer,
            max_destab_rounds: 10,
            synthesis: SynthesisParams::default(),
            record_timings: false,
        }
    }

    fn policy(&self, previous: Vec<DeltaPoint>) -> StartPolicy {
        StartPolicy {
            interior: self.starts,
            seed: self.seed,
            previous,
            ..StartPolicy::default()
        }
    }
}

/// Why a scenario joined the active set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Nominal,
    Destabilizing {
        #[serde(with = "crate::float")]
        alpha: f64,
    },
    Degrading {
        #[serde(with = "crate::float")]
        v: f64,
    },
    /// Met as an unstable point by the performance search.
    Unstable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub delta: DeltaPoint,
    pub origin: Origin,
    /// Outer iteration that added it (0 for the nominal point).
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub iter: usize,
    /// Size of the active set used by this iteration's synthesis.
    pub scenarios: usize,
    /// `v_*`: running maximum of the multi-model optima so far.
    #[serde(with = "crate::float")]
    pub v_star: f64,
    /// Multi-model objective at this iteration's controller.
    #[serde(with = "crate::float")]
    pub v_multi: f64,
    /// Largest spectral abscissa found over the box.
    #[serde(with = "crate::float")]
    pub alpha_star: f64,
    /// `v*`: largest norm found over the box.
    #[serde(with = "crate::float")]
    pub v_upper: f64,
    pub delta_star: DeltaPoint,
    pub destab_rounds: usize,
    pub stop: bool,
    pub kappa: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    #[serde(rename = "converged")]
    Converged,
    #[serde(rename = "not converged")]
    NotConverged,
    #[serde(rename = "destabilization limit")]
    DestabilizationLimit,
    #[serde(rename = "synthesis failure")]
    SynthesisFailure,
    #[serde(rename = "analysis failure")]
    AnalysisFailure,
}

impl Termination {
    pub fn aborted(self) -> bool {
        matches!(self, Self::SynthesisFailure | Self::AnalysisFailure)
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).expect("termination serializes");
        write!(f, "{}", s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerMatrices {
    pub a: Rows,
    pub b: Rows,
    pub c: Rows,
    pub d: Rows,
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub synthesis_s: f64,
    pub analysis_s: f64,
    pub post_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(with = "crate::float")]
    pub eps: f64,
    pub seed: u64,
    pub iterations: Vec<OuterRecord>,
    pub scenarios: Vec<Scenario>,
    pub kappa: Vec<f64>,
    pub controller: Option<ControllerMatrices>,
    #[serde(with = "crate::float")]
    pub v_star: f64,
    #[serde(with = "crate::float")]
    pub v_upper: f64,
    pub d_star: Option<RadiusResult>,
    /// Level used for `h*`: `(1 + eps) v_*`.
    #[serde(with = "crate::float")]
    pub h_level: f64,
    pub h_star: Option<RadiusResult>,
    pub termination: Termination,
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

impl RunReport {
    /// Stability certified over the unit box: converged and `d* >= 1`.
    pub fn certified(&self) -> bool {
        self.termination == Termination::Converged && self.d_star.as_ref().is_some_and(|d| d.radius >= 1.0)
    }

    /// 0: certified, 2: completed without certificate, 3: aborted.
    pub fn exit_code(&self) -> i32 {
        if self.termination.aborted() {
            3
        } else if self.certified() {
            0
        } else {
            2
        }
    }
}

/// The closed loop `F_l(P, K(kappa))`.
pub fn closed_loop(problem: &Problem, kappa: &[f64]) -> Result<UncertainClosedLoop> {
    close_controller(&problem.plant, &realize_controller(&problem.controller, kappa)?)
}

fn is_new(scenarios: &[Scenario], d: &DeltaPoint) -> bool {
    scenarios.iter().all(|s| {
        let diff: Vec<f64> = s.delta.0.iter().zip(&d.0).map(|(a, b)| a - b).collect();
        inf_norm(&diff) >= SCENARIO_SEPARATION
    })
}

struct Clock {
    on: bool,
    synthesis: f64,
    analysis: f64,
    post: f64,
}

impl Clock {
    fn time<T>(&self, f: impl FnOnce() -> T) -> (T, f64) {
        if !self.on {
            return (f(), 0.0);
        }
        let t = Instant::now();
        let out = f();
        (out, t.elapsed().as_secs_f64())
    }
}

pub fn run_dynamic_inner_approximation(problem: &Problem, config: &RunConfig) -> RunReport {
    let m = problem.structure.params();
    let bx = ParamBox::unit(m);
    let mut clock = Clock {
        on: config.record_timings,
        synthesis: 0.0,
        analysis: 0.0,
        post: 0.0,
    };
    let mut scenarios = vec![Scenario {
        delta: DeltaPoint::nominal(m),
        origin: Origin::Nominal,
        iteration: 0,
    }];
    let mut kappa = problem.initial_kappa();
    let mut records: Vec<OuterRecord> = Vec::new();
    let mut termination = Termination::NotConverged;
    let mut message = None;
    let mut v_star = f64::NAN;
    let mut v_upper = f64::NAN;
    let mut synthesized = false;

    'outer: for iter in 1..=config.max_outer {
        let mut rounds = 0;
        let (value, alpha_star, closed) = loop {
            let sp = match SynthesisProblem::new(
                problem.plant.clone(),
                problem.controller.clone(),
                problem.structure.clone(),
                scenarios.iter().map(|s| s.delta.clone()).collect(),
                Some(kappa.clone()),
            ) {
                Ok(sp) => sp,
                Err(e) => {
                    termination = Termination::SynthesisFailure;
                    message = Some(e.to_string());
                    break 'outer;
                }
            };
            let (synth, dt) = clock.time(|| synthesize_structured(&sp, &config.synthesis));
            clock.synthesis += dt;
            let synth = match synth {
                Ok(s) => s,
                Err(e) => {
                    termination = Termination::SynthesisFailure;
                    message = Some(e.to_string());
                    break 'outer;
                }
            };
            kappa = synth.kappa.clone();
            synthesized = true;
            let closed = match closed_loop(problem, &kappa) {
                Ok(c) => c,
                Err(e) => {
                    termination = Termination::SynthesisFailure;
                    message = Some(e.to_string());
                    break 'outer;
                }
            };
            let previous = scenarios.iter().map(|s| s.delta.clone()).collect();
            let (destab, dt) = clock.time(|| destabilize(&closed, &problem.structure, &bx, &config.policy(previous)));
            clock.analysis += dt;
            let destab = match destab {
                Ok(d) => d,
                Err(e) => {
                    termination = Termination::AnalysisFailure;
                    message = Some(e.to_string());
                    break 'outer;
                }
            };
            if !destab.flagged {
                break (synth.value, destab.value, closed);
            }
            rounds += 1;
            if !is_new(&scenarios, &destab.delta) || rounds >= config.max_destab_rounds {
                termination = Termination::DestabilizationLimit;
                message = Some(format!("still destabilized by {:?} after {rounds} rounds", destab.delta.0));
                break 'outer;
            }
            scenarios.push(Scenario {
                delta: destab.delta,
                origin: Origin::Destabilizing { alpha: destab.value },
                iteration: iter,
            });
        };

        let previous = scenarios.iter().map(|s| s.delta.clone()).collect();
        let (perf, dt) = clock.time(|| worst_performance(&closed, &problem.structure, &bx, &config.policy(previous)));
        clock.analysis += dt;
        let perf = match perf {
            Ok(p) => p,
            Err(e) => {
                termination = Termination::AnalysisFailure;
                message = Some(e.to_string());
                break 'outer;
            }
        };
        // An unstable point in the box makes the supremum infinite.
        v_upper = if perf.escalations.is_empty() { perf.value } else { f64::INFINITY };
        // The local synthesis can land below an earlier optimum; keep the
        // larger estimate.
        let lower = if records.is_empty() { value } else { v_star.max(value) };
        v_star = lower;
        let stop = v_upper < (1.0 + config.eps) * lower;
        records.push(OuterRecord {
            iter,
            scenarios: scenarios.len(),
            v_star: lower,
            v_multi: value,
            alpha_star,
            v_upper,
            delta_star: perf.delta.clone(),
            destab_rounds: rounds,
            stop,
            kappa: kappa.clone(),
        });
        if stop {
            termination = Termination::Converged;
            break;
        }
        let (delta, origin) = match perf.escalations.first() {
            Some(d) => (d.clone(), Origin::Unstable),
            None => (perf.delta.clone(), Origin::Degrading { v: perf.value }),
        };
        if !is_new(&scenarios, &delta) {
            message = Some(format!("worst case {:?} is already an active scenario", delta.0));
            break;
        }
        scenarios.push(Scenario {
            delta,
            origin,
            iteration: iter,
        });
    }

    let h_level = (1.0 + config.eps) * v_star;
    let mut d_star = None;
    let mut h_star = None;
    let mut controller = None;
    if synthesized && !termination.aborted() {
        if let Ok(k) = realize_controller(&problem.controller, &kappa) {
            controller = Some(ControllerMatrices {
                a: rows(&k.a),
                b: rows(&k.b),
                c: rows(&k.c),
                d: rows(&k.d),
            });
        }
        let ((d, h), dt) = clock.time(|| match closed_loop(problem, &kappa) {
            Ok(closed) => {
                let policy = config.policy(Vec::new());
                (
                    distance_to_instability(&closed, &problem.structure, &policy).ok(),
                    performance_radius(&closed, &problem.structure, h_level, &policy).ok(),
                )
            }
            Err(_) => (None, None),
        });
        clock.post += dt;
        d_star = d;
        h_star = h;
    }

    RunReport {
        eps: config.eps,
        seed: config.seed,
        iterations: records,
        scenarios,
        kappa,
        controller,
        v_star,
        v_upper,
        d_star,
        h_level,
        h_star,
        termination,
        message,
        timings: config.record_timings.then_some(Timings {
            synthesis_s: clock.synthesis,
            analysis_s: clock.analysis,
            post_s: clock.post,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCertificate {
    pub points_per_axis: usize,
    pub evaluated: usize,
    #[serde(with = "crate::float")]
    pub worst_alpha: f64,
    pub worst_alpha_at: DeltaPoint,
    #[serde(with = "crate::float")]
    pub worst_norm: f64,
    pub worst_norm_at: DeltaPoint,
}

/// Uniform grid points of `[-1, 1]` (`n >= 2`).
pub fn axis(n: usize) -> Vec<f64> {
    (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect()
}

/// Exhaustive evaluation of the closed loop on a uniform grid of the unit
/// box. Ill-posed points count as `alpha = +inf`, unstable ones as
/// `norm = +inf`.
pub fn grid_certify(problem: &Problem, kappa: &[f64], points_per_axis: usize, cap: usize) -> Result<GridCertificate> {
    if points_per_axis < 2 {
        return Err(Error::Invalid("grid needs at least 2 points per axis".into()));
    }
    let m = problem.structure.params();
    let total = (0..m).try_fold(1usize, |acc, _| acc.checked_mul(points_per_axis));
    let total = match total {
        Some(t) if t <= cap => t,
        _ => {
            return Err(Error::GridCap {
                required: total.unwrap_or(usize::MAX),
                cap,
            })
        }
    };
    let closed = closed_loop(problem, kappa)?;
    let lft = closed.delta_lft(&problem.structure)?;
    let ax = axis(points_per_axis);
    let point = |mut idx: usize| -> Vec<f64> {
        (0..m)
            .map(|_| {
                let v = ax[idx % points_per_axis];
                idx /= points_per_axis;
                v
            })
            .collect()
    };
    let values: Vec<(f64, f64)> = (0..total)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let d = point(i);
            match lft.close(&d) {
                Ok(c) => {
                    let alpha = linalg::spectral_abscissa_value(&c.a)?;
                    if alpha >= 0.0 {
                        return Ok((alpha, f64::INFINITY));
                    }
                    let h = crate::analysis::hinf_norm(&c.perf, crate::analysis::HINF_REL_TOL)?;
                    Ok((alpha, h.hinf))
                }
                Err(Error::IllPosed { .. }) => Ok((f64::INFINITY, f64::INFINITY)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let (mut ia, mut ih) = (0, 0);
    for (i, v) in values.iter().enumerate() {
        if v.0 > values[ia].0 {
            ia = i;
        }
        if v.1 > values[ih].1 {
            ih = i;
        }
    }
    Ok(GridCertificate {
        points_per_axis,
        evaluated: total,
        worst_alpha: values[ia].0,
        worst_alpha_at: DeltaPoint(point(ia)),
        worst_norm: values[ih].1,
        worst_norm_at: DeltaPoint(point(ih)),
    })
}

/// Worst-case programs at a fixed controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub kappa: Vec<f64>,
    pub wellposedness: WorstCaseResult,
    pub stability: WorstCaseResult,
    pub performance: Option<WorstCaseResult>,
}

pub fn analyze(problem: &Problem, kappa: &[f64], config: &RunConfig) -> Result<AnalysisReport> {
    let closed = closed_loop(problem, kappa)?;
    let bx = ParamBox::unit(problem.structure.params());
    let policy = config.policy(Vec::new());
    let wellposedness = wellposedness_scan(&closed, &problem.structure, &bx, &policy)?;
    let stability = destabilize(&closed, &problem.structure, &bx, &policy)?;
    let performance = if stability.flagged {
        None
    } else {
        Some(worst_performance(&closed, &problem.structure, &bx, &policy)?)
    };
    Ok(AnalysisReport {
        kappa: kappa.to_vec(),
        wellposedness,
        stability,
        performance,
    })
}

/// Grid cross-check plus the radii at a fixed controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub kappa: Vec<f64>,
    pub grid: GridCertificate,
    pub d_star: RadiusResult,
    #[serde(with = "crate::float")]
    pub h_level: f64,
    pub h_star: RadiusResult,
}

impl CertifyReport {
    pub fn exit_code(&self) -> i32 {
        if self.d_star.radius >= 1.0 && self.grid.worst_alpha < 0.0 {
            0
        } else {
            2
        }
    }
}

/// `h*` is computed at level `(1 + eps)` times the grid's worst norm.
pub fn certify(problem: &Problem, kappa: &[f64], points_per_axis: usize, config: &RunConfig) -> Result<CertifyReport> {
    let grid = grid_certify(problem, kappa, points_per_axis, DEFAULT_GRID_CAP)?;
    let closed = closed_loop(problem, kappa)?;
    let policy = config.policy(Vec::new());
    let d_star = distance_to_instability(&closed, &problem.structure, &policy)?;
    let h_level = (1.0 + config.eps) * grid.worst_norm;
    let h_star = performance_radius(&closed, &problem.structure, h_level, &policy)?;
    Ok(CertifyReport {
        kappa: kappa.to_vec(),
        grid,
        d_star,
        h_level,
        h_star,
    })
}
