//! Multi-model structured H-infinity synthesis: minimize over the controller
//! parameters the largest closed-loop norm over a finite scenario set, with a
//! proximal bundle method. A first phase drives the largest closed-loop
//! spectral abscissa below zero when the initial controller does not
//! stabilize every scenario.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{abscissa_clarke, hinf_clarke};
use crate::error::{Error, Result};
use crate::lft::{ControllerStructure, DeltaPoint, ParametricLft, Plant, UncertaintyStructure};
use crate::linalg::{self, dist, dot, norm2};
use crate::minmin::MinMinParams;

#[derive(Debug, Clone)]
pub struct SynthesisProblem {
    pub plant: Plant,
    pub controller: ControllerStructure,
    pub structure: UncertaintyStructure,
    pub scenarios: Vec<DeltaPoint>,
    pub kappa0: Vec<f64>,
}

impl SynthesisProblem {
    pub fn new(
        plant: Plant,
        controller: ControllerStructure,
        structure: UncertaintyStructure,
        scenarios: Vec<DeltaPoint>,
        kappa0: Option<Vec<f64>>,
    ) -> Result<Self> {
        let kappa0 = kappa0.unwrap_or_else(|| vec![0.0; controller.param_count()]);
        if kappa0.len() != controller.param_count() {
            return Err(crate::error::dim("initial controller parameters", controller.param_count(), kappa0.len()));
        }
        if scenarios.is_empty() {
            return Err(Error::Invalid("scenario set is empty".into()));
        }
        for s in &scenarios {
            if s.0.len() != structure.params() {
                return Err(crate::error::dim("scenario", structure.params(), s.0.len()));
            }
        }
        Ok(Self {
            plant,
            controller,
            structure,
            scenarios,
            kappa0,
        })
    }

    /// Controller-side LFT of every scenario.
    pub fn lfts(&self) -> Result<Vec<ParametricLft>> {
        self.scenarios
            .iter()
            .map(|d| ParametricLft::controller(&self.plant, &self.controller, &self.structure, d))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisParams {
    /// Criticality tolerance, relative to `1 + |v|`.
    pub tol: f64,
    pub max_serious: usize,
    /// Null steps allowed per serious step.
    pub k_max: usize,
    /// Cutting planes kept besides the aggregate.
    pub bundle_cap: usize,
    /// Scenarios within this relative gap of the maximum contribute planes.
    pub activity: f64,
    /// Phase 1 stops once the largest abscissa is below `-margin`.
    pub stability_margin: f64,
    pub gamma: f64,
    pub big_gamma: f64,
    pub theta: f64,
    pub gamma_tilde: f64,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        let mm = MinMinParams::default();
        Self {
            tol: 1e-4,
            max_serious: 300,
            k_max: 50,
            bundle_cap: 10,
            activity: 1e-4,
            stability_margin: 1e-3,
            gamma: mm.gamma,
            big_gamma: mm.big_gamma,
            theta: mm.theta,
            gamma_tilde: mm.gamma_tilde,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Criterion {
    Hinf,
    Abscissa,
}

/// Value of a max function with the subgradients of its nearly active pieces.
#[derive(Debug, Clone, PartialEq)]
struct Pieces {
    value: f64,
    worst: usize,
    per_scenario: Vec<f64>,
    /// `(piece value, subgradient)`, most active first.
    planes: Vec<(f64, Vec<f64>)>,
}

fn undefined(e: &Error) -> bool {
    matches!(e, Error::IllPosed { .. } | Error::Unstable { .. })
}

fn fd_gradient(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64]) -> Result<Vec<f64>> {
    let mut g = Vec::with_capacity(x.len());
    let mut y = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * (1.0 + x[i].abs());
        y[i] = x[i] + h;
        let fp = f(&y)?;
        y[i] = x[i] - h;
        let fm = f(&y)?;
        y[i] = x[i];
        g.push((fp - fm) / (2.0 * h));
    }
    Ok(g)
}

fn scenario_pieces(lft: &ParametricLft, kappa: &[f64], criterion: Criterion) -> Result<(f64, Vec<Vec<f64>>)> {
    let out = match criterion {
        Criterion::Hinf => hinf_clarke(lft, kappa, 1.0).map(|(d, set)| {
            let gs = (0..set.branches.len()).map(|i| set.branch_element(i)).collect();
            (d.hinf, gs)
        }),
        Criterion::Abscissa => match abscissa_clarke(lft, kappa, 1.0) {
            Ok((d, set)) => Ok((d.alpha, (0..set.branches.len()).map(|i| set.branch_element(i)).collect())),
            Err(Error::Derogatory { .. }) => {
                let f = |k: &[f64]| linalg::spectral_abscissa_value(&lft.closed_a(k)?);
                Ok((f(kappa)?, vec![fd_gradient(f, kappa)?]))
            }
            Err(e) => Err(e),
        },
    };
    match out {
        Err(e) if undefined(&e) => Ok((f64::INFINITY, Vec::new())),
        other => other,
    }
}

fn evaluate(lfts: &[ParametricLft], kappa: &[f64], criterion: Criterion, activity: f64) -> Result<Pieces> {
    let per: Vec<(f64, Vec<Vec<f64>>)> = lfts
        .par_iter()
        .map(|l| scenario_pieces(l, kappa, criterion))
        .collect::<Result<_>>()?;
    let mut worst = 0;
    for (i, p) in per.iter().enumerate() {
        if p.0 > per[worst].0 {
            worst = i;
        }
    }
    let value = per[worst].0;
    let mut order: Vec<usize> = (0..per.len())
        .filter(|&i| value.is_finite() && per[i].0 >= value - activity * (1.0 + value.abs()))
        .collect();
    order.sort_by(|&a, &b| per[b].0.total_cmp(&per[a].0).then(a.cmp(&b)));
    let mut planes = Vec::new();
    for &i in &order {
        planes.extend(per[i].1.iter().map(|g| (per[i].0, g.clone())));
    }
    Ok(Pieces {
        value,
        worst,
        per_scenario: per.into_iter().map(|p| p.0).collect(),
        planes,
    })
}

/// Value of the multi-model objective at `kappa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiModelValue {
    /// `+inf` when some scenario is unstable.
    pub value: f64,
    pub worst: usize,
    pub per_scenario: Vec<f64>,
    pub subgradient: Vec<f64>,
    /// First unstable scenario, if any.
    pub unstable: Option<usize>,
}

pub fn multimodel_objective(problem: &SynthesisProblem, kappa: &[f64]) -> Result<MultiModelValue> {
    let p = evaluate(&problem.lfts()?, kappa, Criterion::Hinf, 0.0)?;
    let unstable = p.per_scenario.iter().position(|v| v.is_infinite());
    let subgradient = match unstable {
        Some(_) => vec![0.0; kappa.len()],
        None => p
            .planes
            .first()
            .map(|pl| pl.1.clone())
            .unwrap_or_else(|| vec![0.0; kappa.len()]),
    };
    Ok(MultiModelValue {
        value: p.value,
        worst: unstable.unwrap_or(p.worst),
        per_scenario: p.per_scenario,
        subgradient,
        unstable,
    })
}

/// Affine minorant `l(y) = intercept + slope^T y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub slope: Vec<f64>,
    pub intercept: f64,
}

impl Plane {
    fn at(value: f64, g: Vec<f64>, y: &[f64]) -> Self {
        Self {
            intercept: value - dot(&g, y),
            slope: g,
        }
    }

    fn eval(&self, y: &[f64]) -> f64 {
        self.intercept + dot(&self.slope, y)
    }
}

/// Cutting planes, their aggregate and the proximity parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub planes: VecDeque<Plane>,
    pub aggregate: Option<Plane>,
    pub tau: f64,
    cap: usize,
}

impl Bundle {
    pub fn new(tau: f64, cap: usize) -> Self {
        Self {
            planes: VecDeque::new(),
            aggregate: None,
            tau,
            cap,
        }
    }

    pub fn push(&mut self, p: Plane) {
        self.planes.push_back(p);
        while self.planes.len() > self.cap {
            self.planes.pop_front();
        }
    }

    fn all(&self) -> impl Iterator<Item = &Plane> {
        self.planes.iter().chain(self.aggregate.iter())
    }

    /// Downshifted linearization errors `max(f(x) - l(x), 0)` at the serious iterate.
    pub fn errors(&self, x: &[f64], fx: f64) -> Vec<f64> {
        self.all().map(|p| (fx - p.eval(x)).max(0.0)).collect()
    }

    /// Model `f(x) + max_i (-e_i + g_i^T (y - x))`.
    pub fn model(&self, x: &[f64], fx: f64, y: &[f64]) -> f64 {
        let d: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
        fx + self
            .all()
            .zip(self.errors(x, fx))
            .map(|(p, e)| -e + dot(&p.slope, &d))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let (mut cum, mut tau) = (0.0, 0.0);
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// Maximize `-sum l_i e_i - |sum l_i g_i|^2 / (2 tau)` over the simplex.
fn dual_weights(gs: &[&[f64]], es: &[f64], tau: f64) -> Vec<f64> {
    let k = gs.len();
    if k == 1 {
        return vec![1.0];
    }
    let n = gs[0].len();
    let lip = gs.iter().map(|g| dot(g, g)).sum::<f64>() / tau;
    let agg = |l: &[f64]| -> Vec<f64> { (0..n).map(|j| gs.iter().zip(l).map(|(g, w)| w * g[j]).sum()).collect() };
    let grad = |l: &[f64]| -> Vec<f64> {
        let a = agg(l);
        (0..k).map(|i| -es[i] - dot(gs[i], &a) / tau).collect()
    };
    let step = if lip > 0.0 { 1.0 / lip } else { 1.0 };
    let mut lam = vec![1.0 / k as f64; k];
    let mut y = lam.clone();
    let mut s = 1.0_f64;
    for _ in 0..5000 {
        let g = grad(&y);
        let next = project_simplex(&y.iter().zip(&g).map(|(a, b)| a + step * b).collect::<Vec<_>>());
        let change = dist(&next, &lam);
        let s_next = 0.5 * (1.0 + (1.0 + 4.0 * s * s).sqrt());
        let beta = (s - 1.0) / s_next;
        y = project_simplex(&next.iter().zip(&lam).map(|(a, b)| a + beta * (a - b)).collect::<Vec<_>>());
        lam = next;
        s = s_next;
        if change <= 1e-14 {
            break;
        }
    }
    lam
}

/// Norm of the smallest convex combination of `gs`.
pub fn min_norm_element(gs: &[Vec<f64>]) -> Vec<f64> {
    if gs.is_empty() {
        return Vec::new();
    }
    let refs: Vec<&[f64]> = gs.iter().map(|g| g.as_slice()).collect();
    let lam = dual_weights(&refs, &vec![0.0; gs.len()], 1.0);
    (0..gs[0].len()).map(|j| gs.iter().zip(&lam).map(|(g, w)| w * g[j]).sum()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BundleStatus {
    Critical,
    /// Stabilization target reached.
    Target,
    NullStepLimit,
    MaxSerious,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BundleTrace {
    pub values: Vec<f64>,
    pub taus: Vec<f64>,
    pub null_steps: Vec<usize>,
    pub status: Option<BundleStatus>,
}

struct BundleRun {
    x: Vec<f64>,
    value: f64,
    trace: BundleTrace,
}

fn add_planes(bundle: &mut Bundle, p: &Pieces, y: &[f64]) {
    for (v, g) in p.planes.iter().rev() {
        bundle.push(Plane::at(*v, g.clone(), y));
    }
}

fn bundle_minimize(
    f: &dyn Fn(&[f64]) -> Result<Pieces>,
    x0: &[f64],
    params: &SynthesisParams,
    target: Option<f64>,
) -> Result<BundleRun> {
    let mut x = x0.to_vec();
    let p0 = f(&x)?;
    let mut fx = p0.value;
    if !fx.is_finite() {
        return Err(Error::Numerical("bundle method started at a point with infinite value".into()));
    }
    let g0 = p0.planes.first().map(|p| norm2(&p.1)).unwrap_or(0.0);
    let mut bundle = Bundle::new(1.0 + g0, params.bundle_cap);
    add_planes(&mut bundle, &p0, &x);
    let mut trace = BundleTrace {
        values: vec![fx],
        taus: vec![bundle.tau],
        ..BundleTrace::default()
    };
    let reached = |v: f64| target.is_some_and(|t| v < t);
    if reached(fx) {
        trace.status = Some(BundleStatus::Target);
        return Ok(BundleRun { x, value: fx, trace });
    }
    let mut status = BundleStatus::MaxSerious;
    'outer: for _ in 0..params.max_serious {
        let mut nulls = 0;
        loop {
            let planes: Vec<Plane> = bundle.all().cloned().collect();
            let es = bundle.errors(&x, fx);
            let gs: Vec<&[f64]> = planes.iter().map(|p| p.slope.as_slice()).collect();
            let lam = dual_weights(&gs, &es, bundle.tau);
            let n = x.len();
            let gstar: Vec<f64> = (0..n).map(|j| gs.iter().zip(&lam).map(|(g, w)| w * g[j]).sum()).collect();
            let estar: f64 = es.iter().zip(&lam).map(|(e, w)| e * w).sum();
            let scale = 1.0 + fx.abs();
            if norm2(&gstar) <= params.tol * scale && estar <= params.tol * scale {
                status = BundleStatus::Critical;
                break 'outer;
            }
            let y: Vec<f64> = x.iter().zip(&gstar).map(|(a, g)| a - g / bundle.tau).collect();
            let pred = fx - bundle.model(&x, fx, &y);
            if !(pred > 1e-14 * scale) {
                status = BundleStatus::Critical;
                break 'outer;
            }
            bundle.aggregate = Some(Plane {
                slope: gstar.clone(),
                intercept: fx - estar - dot(&gstar, &x),
            });
            let py = f(&y)?;
            let rho = (fx - py.value) / pred;
            if rho >= params.gamma {
                x = y;
                fx = py.value;
                add_planes(&mut bundle, &py, &x);
                if rho >= params.big_gamma {
                    bundle.tau *= params.theta;
                }
                trace.values.push(fx);
                trace.taus.push(bundle.tau);
                trace.null_steps.push(nulls);
                if reached(fx) {
                    status = BundleStatus::Target;
                    break 'outer;
                }
                break;
            }
            nulls += 1;
            let rho_tilde = if py.value.is_finite() {
                add_planes(&mut bundle, &py, &y);
                (fx - bundle.model(&x, fx, &y)) / pred
            } else {
                1.0
            };
            if rho_tilde >= params.gamma_tilde {
                bundle.tau /= params.theta;
            }
            if nulls >= params.k_max {
                trace.null_steps.push(nulls);
                status = BundleStatus::NullStepLimit;
                break 'outer;
            }
        }
    }
    trace.status = Some(status);
    Ok(BundleRun { x, value: fx, trace })
}

/// Drives `max_s alpha(A(delta_s, kappa))` below `-margin` (or below zero if
/// the bundle method stops earlier). Returns `kappa0` when it already
/// stabilizes every scenario with margin.
pub fn stabilize_scenarios(
    problem: &SynthesisProblem,
    kappa0: &[f64],
    params: &SynthesisParams,
) -> Result<(Vec<f64>, BundleTrace)> {
    let lfts = problem.lfts()?;
    let f = |k: &[f64]| evaluate(&lfts, k, Criterion::Abscissa, params.activity);
    let start = f(kappa0)?;
    if !start.value.is_finite() {
        return Err(Error::IllPosed {
            context: format!("control loop of scenario {} at the initial controller", start.worst),
            sigma_min: 0.0,
        });
    }
    let run = bundle_minimize(&f, kappa0, params, Some(-params.stability_margin))?;
    if run.value >= 0.0 {
        let end = f(&run.x)?;
        let bad = end
            .per_scenario
            .iter()
            .enumerate()
            .filter(|(_, a)| **a >= 0.0)
            .map(|(i, _)| i)
            .collect();
        return Err(Error::StabilizationFailed(bad));
    }
    Ok((run.x, run.trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub kappa: Vec<f64>,
    /// `v_*`, the multi-model objective at `kappa`.
    pub value: f64,
    /// Smallest convex combination of active subgradients at `kappa`,
    /// recomputed after the run.
    pub criticality: f64,
    pub critical: bool,
    pub stabilization: Option<BundleTrace>,
    pub trace: BundleTrace,
}

/// Norm of the smallest element in the hull of the subgradients of the
/// nearly active pieces at `kappa`.
pub fn criticality(problem: &SynthesisProblem, kappa: &[f64], activity: f64) -> Result<(f64, f64)> {
    let p = evaluate(&problem.lfts()?, kappa, Criterion::Hinf, activity)?;
    let gs: Vec<Vec<f64>> = p.planes.into_iter().map(|(_, g)| g).collect();
    Ok((p.value, norm2(&min_norm_element(&gs))))
}

pub fn synthesize_structured(problem: &SynthesisProblem, params: &SynthesisParams) -> Result<SynthesisResult> {
    let lfts = problem.lfts()?;
    let hinf = |k: &[f64]| evaluate(&lfts, k, Criterion::Hinf, params.activity);
    let mut kappa = problem.kappa0.clone();
    let mut stabilization = None;
    if !hinf(&kappa)?.value.is_finite() {
        let (k, t) = stabilize_scenarios(problem, &kappa, params)?;
        kappa = k;
        stabilization = Some(t);
    }
    let run = bundle_minimize(&hinf, &kappa, params, None)?;
    let (value, crit) = criticality(problem, &run.x, params.activity)?;
    Ok(SynthesisResult {
        critical: crit <= params.tol * (1.0 + value.abs()),
        kappa: run.x,
        value,
        criticality: crit,
        stabilization,
        trace: run.trace,
    })
}
