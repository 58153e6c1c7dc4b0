//! Worst-case programs over the uncertainty box at a fixed controller:
//! destabilization, performance degradation, well-posedness scan and the
//! radii `d*` (distance to instability) and `h*` (performance radius).
//!
//! Each program is a box-constrained min-min problem solved from several
//! starting points.

use std::sync::Mutex;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{abscissa_clarke, hinf_clarke, hinf_norm, HINF_REL_TOL};
use crate::error::{Error, Result};
use crate::lft::{DeltaPoint, ParametricLft, UncertainClosedLoop, UncertaintyStructure};
use crate::linalg::{self, dot, inf_norm};
use crate::minmin::{minimize_minmin, MinMinParams, ModelFlag, Objective, ParamBox, SolveTrace};

/// Radius of the enclosing box searched by [`distance_to_instability`] and
/// [`performance_radius`].
pub const ENCLOSING_RADIUS: f64 = 10.0;
/// Well-posedness measures below this value flag an ill-posed scenario.
pub const ILL_POSED_THRESHOLD: f64 = -1e6;

/// `-alpha(A(delta))`.
pub struct AbscissaObjective {
    pub lft: ParametricLft,
}

impl Objective for AbscissaObjective {
    fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(-linalg::spectral_abscissa_value(&self.lft.closed_a(x)?)?)
    }

    fn first_order(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (_, set) = abscissa_clarke(&self.lft, x, -1.0)?;
        Ok((set.value, set.steepest_branch()))
    }

    fn support(&self, x: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        Ok(abscissa_clarke(&self.lft, x, -1.0)?.1.support(d))
    }
}

/// `-||T_zw(delta)||_inf`. Unstable points are errors and are recorded.
pub struct HinfObjective {
    pub lft: ParametricLft,
    unstable: Mutex<Vec<Vec<f64>>>,
}

impl HinfObjective {
    pub fn new(lft: ParametricLft) -> Self {
        Self {
            lft,
            unstable: Mutex::new(Vec::new()),
        }
    }

    fn record(&self, x: &[f64], e: Error) -> Error {
        if matches!(e, Error::Unstable { .. }) {
            self.unstable.lock().expect("unstable list").push(x.to_vec());
        }
        e
    }

    /// Points found unstable during the search, sorted and deduplicated.
    pub fn unstable_points(&self) -> Vec<Vec<f64>> {
        let mut v = self.unstable.lock().expect("unstable list").clone();
        v.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
        v.dedup();
        v
    }
}

impl Objective for HinfObjective {
    fn eval(&self, x: &[f64]) -> Result<f64> {
        let closed = self.lft.close(x)?;
        let data = hinf_norm(&closed.perf, HINF_REL_TOL)?;
        if !data.stable {
            return Err(self.record(x, Error::Unstable { alpha: data.alpha }));
        }
        Ok(-data.hinf)
    }

    fn first_order(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (_, set) = hinf_clarke(&self.lft, x, -1.0).map_err(|e| self.record(x, e))?;
        Ok((set.value, set.steepest_branch()))
    }

    fn support(&self, x: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        Ok(hinf_clarke(&self.lft, x, -1.0).map_err(|e| self.record(x, e))?.1.support(d))
    }
}

/// `-1 / sigma_min(I - Delta(delta) D)`.
pub struct WellPosednessObjective {
    pub lft: ParametricLft,
    singular: Mutex<Option<Vec<f64>>>,
}

impl WellPosednessObjective {
    pub fn new(lft: ParametricLft) -> Self {
        Self {
            lft,
            singular: Mutex::new(None),
        }
    }

    fn matrix(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let g = self.lft.gain(x)?;
        let n = g.nrows();
        Ok(DMatrix::identity(n, n) - g * self.lft.sys.d11())
    }

    fn check(&self, x: &[f64], lo: f64, hi: f64) -> Result<()> {
        if !(lo >= linalg::SINGULAR_RATIO * hi) || hi == 0.0 {
            self.singular.lock().expect("singular slot").get_or_insert_with(|| x.to_vec());
            return Err(Error::IllPosed {
                context: "uncertainty loop I - Delta D".into(),
                sigma_min: lo,
            });
        }
        Ok(())
    }

    pub fn singular_point(&self) -> Option<Vec<f64>> {
        self.singular.lock().expect("singular slot").clone()
    }
}

impl Objective for WellPosednessObjective {
    fn eval(&self, x: &[f64]) -> Result<f64> {
        let (lo, hi) = linalg::sigma_extremes(&self.matrix(x)?);
        self.check(x, lo, hi)?;
        Ok(-1.0 / lo)
    }

    fn first_order(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let e = self.matrix(x)?;
        let n = e.nrows();
        if n == 0 {
            return Ok((-1.0, vec![0.0; x.len()]));
        }
        let svd = e.clone().svd(true, true);
        let s = &svd.singular_values;
        let (imin, lo) = s.iter().enumerate().fold((0, f64::INFINITY), |b, (i, &v)| if v < b.1 { (i, v) } else { b });
        let hi = s.iter().fold(0.0_f64, |a, &v| a.max(v));
        self.check(x, lo, hi)?;
        let u = svd.u.expect("U").column(imin).into_owned();
        let v = svd.v_t.expect("V^T").row(imin).transpose();
        // d sigma / d delta_k = u^T (-E_k D) v
        let dv = self.lft.sys.d11() * v;
        let g = self
            .lft
            .map
            .coords
            .iter()
            .map(|coords| {
                let ds: f64 = coords.iter().map(|&(a, c)| -u[a] * dv[c]).sum();
                ds / (lo * lo)
            })
            .collect();
        Ok((-1.0 / lo, g))
    }
}

/// Starting points for the multi-start drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartPolicy {
    /// Uniform random interior points.
    pub interior: usize,
    /// All vertices are used up to this dimension; beyond it,
    /// `2^max_exhaustive` random vertices.
    pub max_exhaustive: u32,
    pub seed: u64,
    /// Points from earlier iterations (e.g. previous worst cases).
    pub previous: Vec<DeltaPoint>,
}

impl Default for StartPolicy {
    fn default() -> Self {
        Self {
            interior: 10,
            max_exhaustive: 10,
            seed: 0,
            previous: Vec::new(),
        }
    }
}

impl StartPolicy {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// Start list: nominal point (when in the box), previous points, vertices,
/// random interior points. The random part is drawn last so that raising
/// `interior` extends the list without reordering it.
pub fn multistart(bx: &ParamBox, policy: &StartPolicy) -> Vec<Vec<f64>> {
    let m = bx.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut starts = Vec::new();
    let zero = vec![0.0; m];
    if bx.contains(&zero) {
        starts.push(zero);
    } else {
        starts.push(bx.project(&zero));
    }
    for p in &policy.previous {
        if p.0.len() == m {
            starts.push(bx.project(&p.0));
        }
    }
    if m as u32 <= policy.max_exhaustive {
        starts.extend(bx.vertices());
    } else {
        for _ in 0..1usize << policy.max_exhaustive {
            starts.push(
                (0..m)
                    .map(|i| if rng.gen_bool(0.5) { bx.hi[i] } else { bx.lo[i] })
                    .collect(),
            );
        }
    }
    for _ in 0..policy.interior {
        starts.push((0..m).map(|i| rng.gen_range(bx.lo[i]..=bx.hi[i])).collect());
    }
    let mut unique: Vec<Vec<f64>> = Vec::with_capacity(starts.len());
    for s in starts {
        if !unique.contains(&s) {
            unique.push(s);
        }
    }
    unique
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartResult {
    pub start: Vec<f64>,
    pub x: Vec<f64>,
    /// Value in the program's natural sign (alpha, norm or measure).
    #[serde(with = "crate::float")]
    pub value: f64,
    pub trace: SolveTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseResult {
    /// Best value over the starts: max for destabilization and degradation,
    /// min for the well-posedness scan.
    #[serde(with = "crate::float")]
    pub value: f64,
    pub delta: DeltaPoint,
    pub per_start: Vec<StartResult>,
    pub starts_used: usize,
    /// Starts at which the objective was undefined.
    pub skipped: usize,
    /// Unstable points met by the performance search.
    pub escalations: Vec<DeltaPoint>,
    /// Destabilizing (alpha >= 0) or ill-posed, depending on the program.
    pub flagged: bool,
    /// Set only by a grid cross-check.
    pub certified: bool,
}

/// Minimizes `obj` from every start in parallel. `sign` maps the minimized
/// value to the natural one. Results keep the start order.
fn run_starts(
    obj: &dyn Objective,
    bx: &ParamBox,
    starts: &[Vec<f64>],
    params: &MinMinParams,
    sign: f64,
) -> Vec<Option<StartResult>> {
    starts
        .par_iter()
        .map(|s| {
            let r = minimize_minmin(obj, bx, s, params).ok()?;
            let f = obj.eval(&r.x).ok()?;
            Some(StartResult {
                start: s.clone(),
                x: r.x,
                value: sign * f,
                trace: r.trace,
            })
        })
        .collect()
}

fn reduce(results: Vec<Option<StartResult>>, maximize: bool) -> Result<WorstCaseResult> {
    let starts_used = results.len();
    let per_start: Vec<StartResult> = results.into_iter().flatten().collect();
    let skipped = starts_used - per_start.len();
    let mut best: Option<&StartResult> = None;
    for r in &per_start {
        let better = match best {
            None => true,
            Some(b) => {
                if maximize {
                    r.value > b.value
                } else {
                    r.value < b.value
                }
            }
        };
        if better {
            best = Some(r);
        }
    }
    let best = best.ok_or_else(|| Error::IllPosed {
        context: "every start point (run a well-posedness scan)".into(),
        sigma_min: 0.0,
    })?;
    Ok(WorstCaseResult {
        value: best.value,
        delta: DeltaPoint(best.x.clone()),
        per_start: per_start.clone(),
        starts_used,
        skipped,
        escalations: Vec::new(),
        flagged: false,
        certified: false,
    })
}

fn check_box(structure: &UncertaintyStructure, bx: &ParamBox) -> Result<()> {
    if bx.dim() != structure.params() {
        return Err(crate::error::dim("search box", structure.params(), bx.dim()));
    }
    Ok(())
}

/// `alpha* = max_{delta in box} alpha(A(delta))`, flagged when `alpha* >= 0`.
pub fn destabilize(
    m: &UncertainClosedLoop,
    structure: &UncertaintyStructure,
    bx: &ParamBox,
    policy: &StartPolicy,
) -> Result<WorstCaseResult> {
    check_box(structure, bx)?;
    if m.sys.sys.order() == 0 {
        return Ok(WorstCaseResult {
            value: f64::NEG_INFINITY,
            delta: DeltaPoint::nominal(bx.dim()),
            per_start: Vec::new(),
            starts_used: 0,
            skipped: 0,
            escalations: Vec::new(),
            flagged: false,
            certified: false,
        });
    }
    let obj = AbscissaObjective {
        lft: m.delta_lft(structure)?,
    };
    let starts = multistart(bx, policy);
    let params = MinMinParams::with_flag(ModelFlag::Strict);
    let mut r = reduce(run_starts(&obj, bx, &starts, &params, -1.0), true)?;
    r.flagged = r.value >= 0.0;
    Ok(r)
}

/// `v* = max_{delta in box} ||T_zw(delta)||_inf` over stable points; unstable
/// points met on the way are returned in `escalations`.
pub fn worst_performance(
    m: &UncertainClosedLoop,
    structure: &UncertaintyStructure,
    bx: &ParamBox,
    policy: &StartPolicy,
) -> Result<WorstCaseResult> {
    check_box(structure, bx)?;
    let obj = HinfObjective::new(m.delta_lft(structure)?);
    let starts = multistart(bx, policy);
    let params = MinMinParams::with_flag(ModelFlag::Upper);
    let results = run_starts(&obj, bx, &starts, &params, -1.0);
    let escalations: Vec<DeltaPoint> = obj.unstable_points().into_iter().map(DeltaPoint).collect();
    let mut r = match reduce(results, true) {
        Ok(r) => r,
        Err(e) if escalations.is_empty() => return Err(e),
        Err(_) => WorstCaseResult {
            value: f64::INFINITY,
            delta: escalations[0].clone(),
            per_start: Vec::new(),
            starts_used: starts.len(),
            skipped: starts.len(),
            escalations: Vec::new(),
            flagged: true,
            certified: false,
        },
    };
    r.flagged |= !escalations.is_empty();
    r.escalations = escalations;
    Ok(r)
}

/// Most negative `-sigma_max((I - Delta D)^{-1})` over the box, flagged when
/// below [`ILL_POSED_THRESHOLD`] or when a singular point was met.
pub fn wellposedness_scan(
    m: &UncertainClosedLoop,
    structure: &UncertaintyStructure,
    bx: &ParamBox,
    policy: &StartPolicy,
) -> Result<WorstCaseResult> {
    check_box(structure, bx)?;
    let obj = WellPosednessObjective::new(m.delta_lft(structure)?);
    let starts = multistart(bx, policy);
    let params = MinMinParams::with_flag(ModelFlag::Upper);
    let results = run_starts(&obj, bx, &starts, &params, 1.0);
    if let Some(p) = obj.singular_point() {
        return Ok(WorstCaseResult {
            value: f64::NEG_INFINITY,
            delta: DeltaPoint(p),
            per_start: results.into_iter().flatten().collect(),
            starts_used: starts.len(),
            skipped: 0,
            escalations: Vec::new(),
            flagged: true,
            certified: false,
        });
    }
    let mut r = reduce(results, false)?;
    r.flagged = r.value < ILL_POSED_THRESHOLD;
    Ok(r)
}

/// Multipliers of `min t s.t. -t <= delta_i <= t, c(delta) <= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub lambda: f64,
    pub mu_plus: Vec<f64>,
    pub mu_minus: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusResult {
    /// `+inf` when nothing was found within [`ENCLOSING_RADIUS`].
    #[serde(with = "crate::float")]
    pub radius: f64,
    pub delta: Option<DeltaPoint>,
    pub multipliers: Option<Multipliers>,
}

impl RadiusResult {
    fn infinite() -> Self {
        Self {
            radius: f64::INFINITY,
            delta: None,
            multipliers: None,
        }
    }

    fn zero(m: usize) -> Self {
        Self {
            radius: 0.0,
            delta: Some(DeltaPoint::nominal(m)),
            multipliers: None,
        }
    }
}

/// Constraint `c(delta) = offset + inner(delta) <= 0` where points at which
/// `inner` is undefined (ill-posed or unstable) count as satisfying it.
struct Constraint<'a> {
    inner: &'a dyn Objective,
    offset: f64,
}

fn undefined(e: &Error) -> bool {
    matches!(e, Error::IllPosed { .. } | Error::Unstable { .. })
}

impl Constraint<'_> {
    fn value(&self, delta: &[f64]) -> Result<f64> {
        match self.inner.eval(delta) {
            Ok(v) => Ok(self.offset + v),
            Err(e) if undefined(&e) => Ok(f64::NEG_INFINITY),
            Err(e) => Err(e),
        }
    }

    fn first_order(&self, delta: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self.inner.first_order(delta) {
            Ok((v, g)) => Ok((self.offset + v, g)),
            Err(e) if undefined(&e) => Ok((f64::NEG_INFINITY, vec![0.0; delta.len()])),
            Err(e) => Err(e),
        }
    }

    /// First `s` in `(0, s_max]` along `dir` (unit infinity norm) with
    /// `c <= 0`, to bisection accuracy.
    fn first_crossing(&self, dir: &[f64], s_max: f64, samples: usize, extra: Option<f64>) -> Result<Option<f64>> {
        let at = |s: f64| -> Vec<f64> { dir.iter().map(|d| s * d).collect() };
        let mut grid: Vec<f64> = (1..=samples).map(|i| s_max * i as f64 / samples as f64).collect();
        if let Some(e) = extra.filter(|e| *e > 0.0 && *e <= s_max) {
            grid.push(e);
            grid.sort_by(f64::total_cmp);
        }
        let mut lo = 0.0;
        for s in grid {
            if self.value(&at(s))? <= 0.0 {
                let mut hi = s;
                for _ in 0..200 {
                    if hi - lo <= 1e-13 * (1.0 + hi) {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    if self.value(&at(mid))? <= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Ok(Some(hi));
            }
            lo = s;
        }
        Ok(None)
    }
}

/// `F(u, s) = s + mu * max(0, c(s u))^2` over `u in [-1,1]^m`, `s in [0, R]`.
struct RayPenalty<'a> {
    c: &'a Constraint<'a>,
    mu: f64,
}

impl RayPenalty<'_> {
    fn split(z: &[f64]) -> (&[f64], f64) {
        (&z[..z.len() - 1], z[z.len() - 1])
    }

    fn delta(z: &[f64]) -> Vec<f64> {
        let (u, s) = Self::split(z);
        u.iter().map(|v| s * v).collect()
    }

    fn assemble(&self, z: &[f64], cv: f64, gc: &[f64]) -> Vec<f64> {
        let (u, s) = Self::split(z);
        let w = 2.0 * self.mu * cv.max(0.0);
        let mut g: Vec<f64> = gc.iter().map(|gi| w * s * gi).collect();
        g.push(1.0 + w * dot(gc, u));
        g
    }
}

impl Objective for RayPenalty<'_> {
    fn eval(&self, z: &[f64]) -> Result<f64> {
        let cv = self.c.value(&Self::delta(z))?;
        Ok(z[z.len() - 1] + self.mu * cv.max(0.0).powi(2))
    }

    fn first_order(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (cv, gc) = self.c.first_order(&Self::delta(z))?;
        Ok((z[z.len() - 1] + self.mu * cv.max(0.0).powi(2), self.assemble(z, cv, &gc)))
    }

    fn support(&self, z: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        let delta = Self::delta(z);
        let (cv, _) = self.c.first_order(&delta)?;
        if cv <= 0.0 {
            return Ok(self.assemble(z, cv, &vec![0.0; delta.len()]));
        }
        let (u, s) = Self::split(z);
        let (du, ds) = Self::split(d);
        let jd: Vec<f64> = du.iter().zip(u).map(|(a, b)| s * a + ds * b).collect();
        let gc = self.c.inner.support(&delta, &jd)?;
        Ok(self.assemble(z, cv, &gc))
    }
}

const PENALTY_ROUNDS: usize = 6;
const PENALTY_MU0: f64 = 10.0;
const RAY_SAMPLES: usize = 200;

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = inf_norm(v);
    (n > 0.0).then(|| v.iter().map(|x| x / n).collect())
}

/// `min ||delta||_inf s.t. c(delta) <= 0` by exterior penalty in ray
/// coordinates followed by bisection along the final ray.
fn radius(c: &Constraint<'_>, m: usize, flag: ModelFlag, policy: &StartPolicy) -> Result<RadiusResult> {
    if c.value(&vec![0.0; m])? <= 0.0 {
        return Ok(RadiusResult::zero(m));
    }
    let directions: Vec<Vec<f64>> = multistart(&ParamBox::unit(m), policy)
        .iter()
        .filter_map(|d| normalized(d))
        .collect();
    let mut zbox = ParamBox::unit(m + 1);
    zbox.lo[m] = 0.0;
    zbox.hi[m] = ENCLOSING_RADIUS;
    let params = MinMinParams::with_flag(flag);

    let candidates: Vec<Option<(f64, Vec<f64>)>> = directions
        .par_iter()
        .map(|dir| -> Option<(f64, Vec<f64>)> {
            let s0 = c.first_crossing(dir, ENCLOSING_RADIUS, RAY_SAMPLES, None).ok()?;
            let mut z: Vec<f64> = dir.clone();
            z.push(s0.unwrap_or(ENCLOSING_RADIUS));
            let mut mu = PENALTY_MU0;
            for _ in 0..PENALTY_ROUNDS {
                let pen = RayPenalty { c, mu };
                if let Ok(r) = minimize_minmin(&pen, &zbox, &z, &params) {
                    z = r.x;
                }
                mu *= 10.0;
            }
            let delta = RayPenalty::delta(&z);
            let dir_final = normalized(&delta).unwrap_or_else(|| dir.clone());
            let hint = inf_norm(&delta);
            let mut best = c
                .first_crossing(&dir_final, ENCLOSING_RADIUS, RAY_SAMPLES, Some(hint))
                .ok()
                .flatten()
                .map(|s| (s, dir_final.clone()));
            if let Some(s) = s0 {
                if best.as_ref().map_or(true, |b| s < b.0) {
                    best = Some((s, dir.clone()));
                }
            }
            best
        })
        .collect();

    let mut best: Option<(f64, Vec<f64>)> = None;
    for cand in candidates.into_iter().flatten() {
        if best.as_ref().map_or(true, |b| cand.0 < b.0) {
            best = Some(cand);
        }
    }
    let Some((s, dir)) = best else {
        return Ok(RadiusResult::infinite());
    };
    let delta: Vec<f64> = dir.iter().map(|d| s * d).collect();
    let multipliers = c.first_order(&delta).ok().and_then(|(cv, g)| {
        let l1: f64 = g.iter().map(|x| x.abs()).sum();
        (cv.is_finite() && l1 > 0.0).then(|| {
            let lambda = 1.0 / l1;
            Multipliers {
                lambda,
                mu_plus: g.iter().map(|gi| (-lambda * gi).max(0.0)).collect(),
                mu_minus: g.iter().map(|gi| (lambda * gi).max(0.0)).collect(),
            }
        })
    });
    Ok(RadiusResult {
        radius: inf_norm(&delta),
        delta: Some(DeltaPoint(delta)),
        multipliers,
    })
}

/// `d* = min { ||delta||_inf : alpha(A(delta)) >= 0 }`; ill-posed points
/// count as unstable.
pub fn distance_to_instability(
    m: &UncertainClosedLoop,
    structure: &UncertaintyStructure,
    policy: &StartPolicy,
) -> Result<RadiusResult> {
    let obj = AbscissaObjective {
        lft: m.delta_lft(structure)?,
    };
    let c = Constraint { inner: &obj, offset: 0.0 };
    radius(&c, structure.params(), ModelFlag::Strict, policy)
}

/// `h* = min { ||delta||_inf : ||T_zw(delta)||_inf >= level }`; unstable
/// points attain every level.
pub fn performance_radius(
    m: &UncertainClosedLoop,
    structure: &UncertaintyStructure,
    level: f64,
    policy: &StartPolicy,
) -> Result<RadiusResult> {
    let obj = HinfObjective::new(m.delta_lft(structure)?);
    let c = Constraint {
        inner: &obj,
        offset: level,
    };
    radius(&c, structure.params(), ModelFlag::Upper, policy)
}

/// Best value by start count, used to check monotonicity in the number of starts.
pub fn best_of_first(result: &WorstCaseResult, n: usize, maximize: bool) -> Option<f64> {
    let values = result.per_start.iter().take(n).map(|r| r.value);
    if maximize {
        values.reduce(f64::max)
    } else {
        values.reduce(f64::min)
    }
}
