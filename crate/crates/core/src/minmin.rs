//! Descent method for box-constrained min-min programs.
//!
//! The outer loop moves between serious iterates; the inner loop
//! ([`find_descent_step`]) solves the convex tangent program
//! `min_{eta in box} phi_k(eta, x) + |eta - x|^2 / (2 t)` over a working
//! model `phi_k(eta, x) = f(x) + max_{g in G_k} g^T (eta - x)`, tests the
//! Armijo-type quotient and, for non upper-C1 objectives, enriches the
//! model with cutting and aggregate planes.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist, dot, norm2};

/// Whether the objective is certified upper-C1 (`Upper`, the inner loop is a
/// projected-gradient linesearch) or only has a strict standard model
/// (`Strict`, cutting planes are added after failed trials).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelFlag {
    Upper,
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMinParams {
    /// Acceptance threshold for the quotient `rho`.
    pub gamma: f64,
    /// `rho >= big_gamma` enlarges the memorized stepsize.
    pub big_gamma: f64,
    pub theta: f64,
    pub big_theta: f64,
    /// Threshold on the model-improvement quotient `rho~`.
    pub gamma_tilde: f64,
    pub tol1: f64,
    pub tol2: f64,
    /// Inner-loop budget per serious step.
    pub k_max: usize,
    /// Outer-loop budget.
    pub max_serious: usize,
    /// Consecutive near-null backtracks that declare the iterate optimal.
    pub backtrack_limit: usize,
    /// Memorized stepsize at the first iterate; `None` means `1 / (1 + |g0|)`.
    pub t_init: Option<f64>,
    pub flag: ModelFlag,
}

impl Default for MinMinParams {
    fn default() -> Self {
        Self {
            gamma: 1e-4,
            big_gamma: 0.1,
            theta: 0.25,
            big_theta: 0.75,
            gamma_tilde: 2e-4,
            tol1: 1e-4,
            tol2: 1e-4,
            k_max: 50,
            max_serious: 200,
            backtrack_limit: 5,
            t_init: None,
            flag: ModelFlag::Upper,
        }
    }
}

impl MinMinParams {
    pub fn with_flag(flag: ModelFlag) -> Self {
        Self {
            flag,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.gamma
            && self.gamma < self.big_gamma
            && self.big_gamma < 1.0
            && 0.0 < self.theta
            && self.theta < self.big_theta
            && self.big_theta < 1.0
            && 0.0 < self.gamma_tilde
            && self.gamma_tilde < 1.0
            && self.tol1 > 0.0
            && self.tol2 > 0.0
            && self.k_max > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid("min-min parameters out of range".into()))
        }
    }
}

/// Axis-aligned box `lo <= x <= hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ParamBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(crate::error::dim("box bounds", lo.len(), hi.len()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::Invalid("box lower bound exceeds upper bound".into()));
        }
        Ok(Self { lo, hi })
    }

    /// `[-r, r]^m`.
    pub fn symmetric(m: usize, r: f64) -> Self {
        Self {
            lo: vec![-r; m],
            hi: vec![r; m],
        }
    }

    pub fn unit(m: usize) -> Self {
        Self::symmetric(m, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| v.clamp(*l, *h))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let m = self.dim();
        (0..1usize << m)
            .map(|mask| {
                (0..m)
                    .map(|i| if mask >> i & 1 == 1 { self.hi[i] } else { self.lo[i] })
                    .collect()
            })
            .collect()
    }
}

/// Objective with value and Clarke first-order information.
pub trait Objective: Sync {
    fn eval(&self, x: &[f64]) -> Result<f64>;

    /// Value and one subgradient `g0` (the branch the descent follows).
    fn first_order(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// A subgradient `g` at `x` realizing `g^T d = f°(x, d)`.
    fn support(&self, x: &[f64], _d: &[f64]) -> Result<Vec<f64>> {
        Ok(self.first_order(x)?.1)
    }
}

/// Finite set of subgradients at the serious iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingModel {
    pub value: f64,
    pub subgradients: Vec<Vec<f64>>,
    pub aggregate: Option<Vec<f64>>,
}

impl WorkingModel {
    pub fn new(value: f64, g0: Vec<f64>) -> Self {
        Self {
            value,
            subgradients: vec![g0],
            aggregate: None,
        }
    }

    /// `f(x) + max_g g^T (eta - x)`.
    pub fn eval(&self, x: &[f64], eta: &[f64]) -> f64 {
        let d: Vec<f64> = eta.iter().zip(x).map(|(e, v)| e - v).collect();
        self.value
            + self
                .subgradients
                .iter()
                .map(|g| dot(g, &d))
                .fold(f64::NEG_INFINITY, f64::max)
    }

    fn push_unique(&mut self, g: Vec<f64>) {
        if !self.subgradients.iter().any(|h| dist(h, &g) <= 1e-14 * (1.0 + norm2(&g))) {
            self.subgradients.push(g);
        }
    }
}

/// Solution of the tangent program with the multipliers of the model planes.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentSolution {
    pub eta: Vec<f64>,
    pub weights: Vec<f64>,
}

impl TangentSolution {
    /// Aggregate subgradient `sum_i lambda_i g_i`.
    pub fn aggregate(&self, model: &WorkingModel) -> Vec<f64> {
        let m = model.subgradients[0].len();
        let mut g = vec![0.0; m];
        for (w, gi) in self.weights.iter().zip(&model.subgradients) {
            for (a, b) in g.iter_mut().zip(gi) {
                *a += w * b;
            }
        }
        g
    }
}

fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// Minimize `max_{g in G} g^T (eta - x) + |eta - x|^2 / (2 t)` over the box.
///
/// A single plane gives the coordinatewise clamp of `x - t g`; otherwise the
/// dual over simplex weights is maximized by accelerated projected gradient
/// and `eta = proj(x - t sum_i lambda_i g_i)`.
pub fn solve_tangent_program(model: &WorkingModel, x: &[f64], t: f64, bx: &ParamBox) -> TangentSolution {
    let gs = &model.subgradients;
    let eta_of = |lam: &[f64]| -> Vec<f64> {
        let step: Vec<f64> = (0..x.len())
            .map(|j| x[j] - t * gs.iter().zip(lam).map(|(g, l)| l * g[j]).sum::<f64>())
            .collect();
        bx.project(&step)
    };
    if gs.len() == 1 {
        return TangentSolution {
            eta: eta_of(&[1.0]),
            weights: vec![1.0],
        };
    }
    let k = gs.len();
    let lip = t * gs.iter().map(|g| dot(g, g)).sum::<f64>();
    if lip == 0.0 {
        return TangentSolution {
            eta: x.to_vec(),
            weights: vec![1.0 / k as f64; k],
        };
    }
    let grad = |lam: &[f64]| -> Vec<f64> {
        let eta = eta_of(lam);
        let d: Vec<f64> = eta.iter().zip(x).map(|(e, v)| e - v).collect();
        gs.iter().map(|g| dot(g, &d)).collect()
    };
    // duality gap max_i g_i^T d - sum_i lam_i g_i^T d at d = eta(lam) - x
    let gap = |lam: &[f64]| -> f64 {
        let gd = grad(lam);
        let best = gd.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        best - dot(lam, &gd)
    };
    let mut lam = vec![1.0 / k as f64; k];
    let mut y = lam.clone();
    let mut s = 1.0_f64;
    let (mut best, mut best_gap) = (lam.clone(), gap(&lam));
    for _ in 0..5000 {
        if best_gap <= 1e-13 * (1.0 + lip) {
            break;
        }
        let gy = grad(&y);
        let next = project_simplex(&y.iter().zip(&gy).map(|(a, b)| a + b / lip).collect::<Vec<_>>());
        let s_next = 0.5 * (1.0 + (1.0 + 4.0 * s * s).sqrt());
        let beta = (s - 1.0) / s_next;
        y = next
            .iter()
            .zip(&lam)
            .map(|(a, b)| a + beta * (a - b))
            .collect();
        y = project_simplex(&y);
        lam = next;
        s = s_next;
        let g = gap(&lam);
        if g < best_gap {
            best_gap = g;
            best = lam.clone();
        }
    }
    TangentSolution {
        eta: eta_of(&best),
        weights: best,
    }
}

/// Outcome of the stopping tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopDecision {
    Continue,
    /// The accepted step is negligible: stop at the new iterate.
    OptimalNext,
    /// The inner loop only produced negligible rejected trials: the current
    /// iterate is declared optimal.
    OptimalCurrent,
}

/// What the inner loop produced at the current iterate.
#[derive(Debug, Clone, Copy)]
pub enum StopInput<'a> {
    Accepted { next: &'a [f64], f_next: f64 },
    /// Rejected trial points with their values, most recent last.
    Rejected { trials: &'a [(Vec<f64>, f64)] },
}

fn negligible(x: &[f64], fx: f64, y: &[f64], fy: f64, p: &MinMinParams) -> bool {
    let xs = norm2(x);
    dist(y, x) / (1.0 + xs) < p.tol1 && (fy - fx).abs() / (1.0 + fx.abs()) < p.tol2
}

pub fn check_stop(x: &[f64], fx: f64, input: StopInput<'_>, params: &MinMinParams) -> StopDecision {
    match input {
        StopInput::Accepted { next, f_next } => {
            if negligible(x, fx, next, f_next, params) {
                StopDecision::OptimalNext
            } else {
                StopDecision::Continue
            }
        }
        StopInput::Rejected { trials } => {
            let n = params.backtrack_limit;
            if trials.len() >= n
                && trials[trials.len() - n..]
                    .iter()
                    .all(|(y, fy)| fy.is_finite() && negligible(x, fx, y, *fy, params))
            {
                StopDecision::OptimalCurrent
            } else {
                StopDecision::Continue
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StallReason {
    /// The tangent program returned the current point.
    Kkt,
    /// Consecutive negligible rejected trials.
    Backtracks,
    /// Inner-loop budget exhausted.
    KMax,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Accepted {
        x: Vec<f64>,
        f: f64,
        t: f64,
        rho: f64,
        inner: usize,
    },
    Stalled {
        reason: StallReason,
        inner: usize,
    },
}

/// Values at rejected trial points, keyed by exact coordinates.
#[derive(Debug, Default)]
pub struct TrialCache {
    values: HashMap<Vec<u64>, f64>,
}

impl TrialCache {
    fn key(x: &[f64]) -> Vec<u64> {
        x.iter().map(|v| v.to_bits()).collect()
    }

    fn get_or_eval(&mut self, obj: &dyn Objective, x: &[f64]) -> f64 {
        let key = Self::key(x);
        if let Some(&v) = self.values.get(&key) {
            return v;
        }
        let v = match obj.eval(x) {
            Ok(v) if !v.is_nan() => v,
            _ => f64::INFINITY,
        };
        self.values.insert(key, v);
        v
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Inner loop at a serious iterate `x` with value `fx` and subgradient `g0`,
/// started from the memorized stepsize.
#[allow(clippy::too_many_arguments)]
pub fn find_descent_step(
    obj: &dyn Objective,
    bx: &ParamBox,
    x: &[f64],
    fx: f64,
    g0: &[f64],
    t_sharp: f64,
    params: &MinMinParams,
    cache: &mut TrialCache,
) -> Result<StepOutcome> {
    let mut model = WorkingModel::new(fx, g0.to_vec());
    let mut t = t_sharp;
    let mut trials: Vec<(Vec<f64>, f64)> = Vec::new();
    for k in 1..=params.k_max {
        let tp = solve_tangent_program(&model, x, t, bx);
        let model_eta = model.eval(x, &tp.eta);
        let predicted = fx - model_eta;
        if !(predicted > 1e-15 * (1.0 + fx.abs())) {
            return Ok(StepOutcome::Stalled {
                reason: StallReason::Kkt,
                inner: k,
            });
        }
        let f_eta = cache.get_or_eval(obj, &tp.eta);
        let rho = (fx - f_eta) / predicted;
        if rho >= params.gamma {
            return Ok(StepOutcome::Accepted {
                x: tp.eta,
                f: f_eta,
                t,
                rho,
                inner: k,
            });
        }
        trials.push((tp.eta.clone(), f_eta));
        if check_stop(x, fx, StopInput::Rejected { trials: &trials }, params) == StopDecision::OptimalCurrent {
            return Ok(StepOutcome::Stalled {
                reason: StallReason::Backtracks,
                inner: k,
            });
        }

        let mut rho_tilde = 1.0;
        if params.flag == ModelFlag::Strict && f_eta.is_finite() {
            let d: Vec<f64> = tp.eta.iter().zip(x).map(|(e, v)| e - v).collect();
            let cut = obj.support(x, &d)?;
            let aggregate = tp.aggregate(&model);
            let mut next = WorkingModel::new(fx, g0.to_vec());
            next.push_unique(aggregate.clone());
            next.push_unique(cut);
            next.aggregate = Some(aggregate);
            rho_tilde = (fx - next.eval(x, &tp.eta)) / predicted;
            model = next;
        }
        if rho_tilde >= params.gamma_tilde {
            t *= params.theta;
        }
    }
    Ok(StepOutcome::Stalled {
        reason: StallReason::KMax,
        inner: params.k_max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    /// Negligible accepted step.
    Converged,
    /// Inner loop found no descent at the final iterate.
    Stationary(StallReason),
    MaxSerious,
    /// No subgradient at the last accepted iterate.
    OracleFailure,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub iterates: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub rhos: Vec<f64>,
    pub stepsizes: Vec<f64>,
    pub inner_counts: Vec<usize>,
    pub termination: Option<Termination>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMinResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
    /// `|x - proj(x - g)|`.
    pub kkt_residual: f64,
    pub trace: SolveTrace,
}

impl MinMinResult {
    pub fn termination(&self) -> Termination {
        self.trace.termination.unwrap_or(Termination::MaxSerious)
    }
}

pub fn kkt_residual(bx: &ParamBox, x: &[f64], g: &[f64]) -> f64 {
    let step: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
    dist(x, &bx.project(&step))
}

/// Descent method for `min f(x)` over a box.
pub fn minimize_minmin(obj: &dyn Objective, bx: &ParamBox, x1: &[f64], params: &MinMinParams) -> Result<MinMinResult> {
    params.validate()?;
    if !bx.contains(x1) {
        return Err(Error::Invalid("initial point outside the box".into()));
    }
    let mut x = x1.to_vec();
    let (mut fx, mut g) = obj.first_order(&x)?;
    if !fx.is_finite() {
        return Err(Error::Numerical("objective not finite at the initial point".into()));
    }
    let mut t_sharp = params.t_init.unwrap_or(1.0 / (1.0 + norm2(&g)));
    let mut trace = SolveTrace {
        iterates: vec![x.clone()],
        values: vec![fx],
        ..SolveTrace::default()
    };
    let mut cache = TrialCache::default();
    let mut termination = Termination::MaxSerious;
    for _ in 0..params.max_serious {
        match find_descent_step(obj, bx, &x, fx, &g, t_sharp, params, &mut cache)? {
            StepOutcome::Accepted { x: next, f, t, rho, inner } => {
                let decision = check_stop(&x, fx, StopInput::Accepted { next: &next, f_next: f }, params);
                t_sharp = if rho >= params.big_gamma { t / params.theta } else { t };
                let first = obj.first_order(&next);
                x = next;
                fx = f;
                trace.iterates.push(x.clone());
                trace.values.push(fx);
                trace.rhos.push(rho);
                trace.stepsizes.push(t);
                trace.inner_counts.push(inner);
                match first {
                    Ok((_, g_new)) => g = g_new,
                    Err(_) => {
                        termination = Termination::OracleFailure;
                        break;
                    }
                }
                cache = TrialCache::default();
                if decision == StopDecision::OptimalNext {
                    termination = Termination::Converged;
                    break;
                }
            }
            StepOutcome::Stalled { reason, inner } => {
                trace.inner_counts.push(inner);
                termination = Termination::Stationary(reason);
                break;
            }
        }
    }
    trace.termination = Some(termination);
    Ok(MinMinResult {
        kkt_residual: kkt_residual(bx, &x, &g),
        x,
        f: fx,
        g,
        trace,
    })
}
