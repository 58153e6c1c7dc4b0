//! Stability and performance functions with Clarke subgradients.
//!
//! Every function here is evaluated on a [`ParametricLft`]: a system whose
//! first channel is closed by a static gain `X(theta)` affine in `theta`.
//! With `X = Delta(delta)` this gives the worst-case analysis functions in
//! `delta`; on the augmented plant with `X = [[A_K, B_K], [C_K, D_K]]` it
//! gives the synthesis functions in `kappa`.
//!
//! Perturbing `X` by `dX` changes the closed-loop map by
//! `G21 (I - X G11)^{-1} dX (I - G11 X)^{-1} G12`, and the closed-loop state
//! matrix by the same expression with `(B1, C1, D11)`. Projecting onto
//! singular or eigen subspaces gives, for each active branch, a pair of
//! matrices `(U~, V~)` such that the directional derivative along
//! `E_ab` with weight `Y` is `Re Tr(Y U~[a,:]^H V~[b,:])`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lft::{
    ControllerStructure, DeltaPoint, ParametricLft, Plant, StateSpace, UncertainClosedLoop,
    UncertaintyStructure,
};
use crate::linalg::{self, CMat, C64};

/// Relative activity tolerance for eigenvalues: `1e-8 (1 + |alpha|)`.
pub const EIG_ACTIVITY: f64 = 1e-8;
/// Frequencies with `sigma >= (1 - 1e-6) hinf` are active.
pub const FREQ_ACTIVITY: f64 = 1e-6;
/// Default relative accuracy of the H-infinity norm.
pub const HINF_REL_TOL: f64 = 1e-8;

const CLUSTER_TOL: f64 = 1e-9;
const NULLSPACE_TOL: f64 = 1e-7;
const SIGMA_MULTIPLICITY_TOL: f64 = 1e-9;
const GRID_POINTS: usize = 128;

/// An active eigenvalue (or a cluster of equal ones) with bi-orthonormal
/// eigenvector bases, `U^H V = I`.
#[derive(Debug, Clone)]
pub struct ActiveEigen {
    pub lambda: C64,
    pub multiplicity: usize,
    pub v: CMat,
    pub u: CMat,
    /// Geometric multiplicity equals algebraic multiplicity.
    pub semisimple: bool,
}

impl ActiveEigen {
    pub fn is_simple(&self) -> bool {
        self.multiplicity == 1
    }
}

#[derive(Debug, Clone)]
pub struct ActiveEigenData {
    pub alpha: f64,
    pub active: Vec<ActiveEigen>,
}

impl ActiveEigenData {
    pub fn derogatory(&self) -> Option<&ActiveEigen> {
        self.active.iter().find(|e| !e.semisimple)
    }
}

/// Spectral abscissa with its active eigenvalues.
pub fn spectral_abscissa(a: &DMatrix<f64>, activity_tol: f64) -> Result<ActiveEigenData> {
    let n = a.nrows();
    if n == 0 {
        return Ok(ActiveEigenData {
            alpha: f64::NEG_INFINITY,
            active: Vec::new(),
        });
    }
    let eigs = linalg::eigenvalues(a)?;
    let alpha = eigs.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    let cut = alpha - activity_tol * (1.0 + alpha.abs());
    let mut candidates: Vec<C64> = eigs.into_iter().filter(|l| l.re >= cut).collect();
    candidates.sort_by(|x, y| y.im.total_cmp(&x.im));

    // group numerically equal eigenvalues
    let mut clusters: Vec<Vec<C64>> = Vec::new();
    for l in candidates {
        match clusters
            .iter_mut()
            .find(|c| (c[0] - l).norm() <= CLUSTER_TOL * (1.0 + l.norm()))
        {
            Some(c) => c.push(l),
            None => clusters.push(vec![l]),
        }
    }

    let ac = linalg::to_complex(a);
    let scale = 1.0 + linalg::sigma_max_real(a);
    let mut active = Vec::with_capacity(clusters.len());
    for c in clusters {
        let r = c.len();
        let lambda = c.iter().sum::<C64>() / C64::new(r as f64, 0.0);
        let mut shifted = ac.clone();
        for i in 0..n {
            shifted[(i, i)] -= lambda;
        }
        let (sv, _, right) = linalg::svd_sorted(&shifted);
        let (_, _, left) = linalg::svd_sorted(&shifted.adjoint());
        let semisimple = sv[n - r] <= NULLSPACE_TOL * scale;
        let v = right.columns(n - r, r).into_owned();
        let u0 = left.columns(n - r, r).into_owned();
        // U := U (U^H V)^{-H} so that U^H V = I
        let uv = u0.adjoint() * &v;
        let u = match uv.try_inverse() {
            Some(inv) => u0 * inv.adjoint(),
            None => {
                return Err(Error::Numerical(
                    "left and right eigenvectors are orthogonal".into(),
                ))
            }
        };
        active.push(ActiveEigen {
            lambda,
            multiplicity: r,
            v,
            u,
            semisimple,
        });
    }
    Ok(ActiveEigenData { alpha, active })
}

/// Active peak of the largest singular value at one frequency.
#[derive(Debug, Clone)]
pub struct ActiveFrequency {
    /// rad/time; `f64::INFINITY` for the feedthrough.
    pub omega: f64,
    pub sigma: f64,
    /// Left singular vectors of the top singular value.
    pub q: CMat,
    /// Right singular vectors of the top singular value.
    pub p: CMat,
}

#[derive(Debug, Clone)]
pub struct ActiveFrequencyData {
    pub hinf: f64,
    pub stable: bool,
    pub alpha: f64,
    pub active: Vec<ActiveFrequency>,
}

impl ActiveFrequencyData {
    pub fn peak_frequency(&self) -> Option<f64> {
        self.active
            .iter()
            .max_by(|a, b| a.sigma.total_cmp(&b.sigma))
            .map(|f| f.omega)
    }
}

fn sigma_at(sys: &StateSpace, omega: f64) -> Result<f64> {
    Ok(linalg::sigma_max(&sys.freq_response(omega)?))
}

/// Frequencies `omega >= 0` where `gamma` is a singular value of `G(j omega)`,
/// read off the purely imaginary eigenvalues of the associated Hamiltonian.
fn level_crossings(sys: &StateSpace, gamma: f64) -> Result<Vec<f64>> {
    let (n, m, p) = (sys.order(), sys.inputs(), sys.outputs());
    let (a, b, c, d) = (&sys.a, &sys.b, &sys.c, &sys.d);
    let g2 = gamma * gamma;
    let r = d.transpose() * d - DMatrix::identity(m, m) * g2;
    let s = d * d.transpose() - DMatrix::identity(p, p) * g2;
    let ri = linalg::inverse(&r)?;
    let si = linalg::inverse(&s)?;
    let h11 = a - b * &ri * d.transpose() * c;
    let h12 = -(b * &ri * b.transpose()) * gamma;
    let h21 = (c.transpose() * &si * c) * gamma;
    let h22 = -a.transpose() + c.transpose() * d * &ri * b.transpose();
    let h = linalg::blocks(&[n, n], &[n, n], &[(0, 0, &h11), (0, 1, &h12), (1, 0, &h21), (1, 1, &h22)]);
    let eigs = linalg::eigenvalues(&h)?;
    let mut out: Vec<f64> = eigs
        .iter()
        .filter(|l| l.re.abs() <= 1e-7 * (1.0 + l.norm()) && l.im >= -1e-12)
        .map(|l| l.im.abs())
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup_by(|x, y| (*x - *y).abs() <= 1e-10 * (1.0 + y.abs()));
    Ok(out)
}

fn golden_max(sys: &StateSpace, mut lo: f64, mut hi: f64) -> Result<(f64, f64)> {
    let ends = [lo, hi];
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = sigma_at(sys, x1)?;
    let mut f2 = sigma_at(sys, x2)?;
    for _ in 0..80 {
        if (hi - lo) <= 1e-13 * (1.0 + hi.abs()) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = sigma_at(sys, x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = sigma_at(sys, x1)?;
        }
    }
    let mut best = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    for x in [lo, hi, ends[0], ends[1]] {
        let f = sigma_at(sys, x)?;
        if f > best.1 {
            best = (x, f);
        }
    }
    Ok(best)
}

fn frequency_grid(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let eigs = linalg::eigenvalues(a)?;
    let mags: Vec<f64> = eigs.iter().map(|l| l.norm()).filter(|&x| x > 0.0).collect();
    let lo = mags.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mags.iter().copied().fold(0.0_f64, f64::max);
    let (lo, hi) = if mags.is_empty() { (1e-3, 1e3) } else { (lo * 1e-2, hi * 1e2) };
    let (l0, l1) = (lo.log10(), hi.log10());
    let mut grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| 10f64.powf(l0 + (l1 - l0) * i as f64 / (GRID_POINTS - 1) as f64))
        .collect();
    grid.push(0.0);
    grid.extend(eigs.iter().map(|l| l.im.abs()).filter(|&x| x > 0.0));
    grid.extend(mags);
    Ok(grid)
}

fn singular_pairs(g: &CMat, omega: f64) -> ActiveFrequency {
    let (s, u, v) = linalg::svd_sorted(g);
    let top = s.first().copied().unwrap_or(0.0);
    let r = s
        .iter()
        .take_while(|&&x| top - x <= SIGMA_MULTIPLICITY_TOL * (1.0 + top))
        .count()
        .max(1)
        .min(s.len());
    ActiveFrequency {
        omega,
        sigma: top,
        q: u.columns(0, r).into_owned(),
        p: v.columns(0, r).into_owned(),
    }
}

/// H-infinity norm by level-set bisection on the Hamiltonian test
/// (two-point midpoint refinement), followed by local peak refinement.
///
/// Unstable systems return `hinf = inf` with `stable = false`.
pub fn hinf_norm(sys: &StateSpace, rel_tol: f64) -> Result<ActiveFrequencyData> {
    let n = sys.order();
    let d_gain = linalg::sigma_max_real(&sys.d);
    let static_data = |alpha: f64| ActiveFrequencyData {
        hinf: d_gain,
        stable: true,
        alpha,
        active: vec![singular_pairs(&linalg::to_complex(&sys.d), f64::INFINITY)],
    };
    if n == 0 {
        return Ok(static_data(f64::NEG_INFINITY));
    }
    let alpha = sys.spectral_abscissa()?;
    if alpha >= 0.0 {
        return Ok(ActiveFrequencyData {
            hinf: f64::INFINITY,
            stable: false,
            alpha,
            active: Vec::new(),
        });
    }
    if sys.b.iter().all(|&x| x == 0.0) || sys.c.iter().all(|&x| x == 0.0) {
        return Ok(static_data(alpha));
    }

    let mut lower = d_gain * (1.0 + 1e-12);
    let mut peak = f64::INFINITY;
    for w in frequency_grid(&sys.a)? {
        let s = sigma_at(sys, w)?;
        if s > lower {
            lower = s;
            peak = w;
        }
    }

    let mut converged = false;
    for _ in 0..200 {
        let gamma = lower * (1.0 + 2.0 * rel_tol);
        let xs = level_crossings(sys, gamma)?;
        if xs.is_empty() {
            converged = true;
            break;
        }
        let mut cands: Vec<f64> = xs.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        cands.push(0.0);
        cands.extend(xs.iter().copied());
        let mut improved = false;
        for w in cands {
            let s = sigma_at(sys, w)?;
            if s > lower {
                lower = s;
                peak = w;
                improved = true;
            }
        }
        if !improved {
            // crossings without any interval above the level are spurious
            // near-imaginary eigenvalues; the bracket is already tight
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Stagnation {
            lower,
            upper: lower * (1.0 + 2.0 * rel_tol),
        });
    }

    // Locate every peak above the activity level and polish it.
    let level = lower * (1.0 - FREQ_ACTIVITY);
    let mut peaks: Vec<(f64, f64)> = Vec::new();
    if peak.is_finite() {
        let xs = level_crossings(sys, level)?;
        let mut bounds = vec![0.0];
        bounds.extend(xs.iter().copied());
        for w in bounds.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            if sigma_at(sys, mid)? >= level {
                peaks.push(golden_max(sys, w[0], w[1])?);
            }
        }
        if peaks.is_empty() {
            let (lo, hi) = (peak * (1.0 - 1e-3), peak * (1.0 + 1e-3) + 1e-12);
            peaks.push(golden_max(sys, lo, hi)?);
        }
    }
    let mut hinf = lower;
    for &(_, s) in &peaks {
        hinf = hinf.max(s);
    }
    let cut = hinf * (1.0 - FREQ_ACTIVITY);
    let mut active: Vec<ActiveFrequency> = Vec::new();
    for (w, s) in peaks {
        if s >= cut && !active.iter().any(|f| (f.omega - w).abs() <= 1e-9 * (1.0 + w)) {
            active.push(singular_pairs(&sys.freq_response(w)?, w));
        }
    }
    if d_gain >= cut {
        active.push(singular_pairs(&linalg::to_complex(&sys.d), f64::INFINITY));
    }
    if active.is_empty() {
        active.push(singular_pairs(&sys.freq_response(peak)?, peak));
    }
    Ok(ActiveFrequencyData {
        hinf,
        stable: true,
        alpha,
        active,
    })
}

/// A Clarke subgradient with a flag telling whether the subdifferential is
/// a singleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgradient {
    pub g: Vec<f64>,
    pub smooth: bool,
}

/// One active branch: eigenvalue cluster or active frequency.
#[derive(Debug, Clone)]
pub struct Branch {
    /// `p x r`, projected left vectors.
    pub ut: CMat,
    /// `q x r`, projected right vectors.
    pub vt: CMat,
}

impl Branch {
    pub fn rank(&self) -> usize {
        self.ut.ncols()
    }
}

/// Clarke subdifferential of `sign * f` where `f` is a spectral abscissa or
/// an H-infinity norm: the set of `g` with
/// `g_k = sign * sum_b Re Tr(Y_b W_{b,k})`, `Y_b >= 0`, `sum Tr Y_b = 1`.
#[derive(Debug, Clone)]
pub struct ClarkeSet {
    pub value: f64,
    pub sign: f64,
    pub branches: Vec<Branch>,
    pub coords: Vec<Vec<(usize, usize)>>,
}

impl ClarkeSet {
    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Every branch simple and all branches giving the same gradient (a
    /// conjugate eigenvalue pair counts as smooth).
    pub fn is_smooth(&self) -> bool {
        if self.branches.is_empty() {
            return true;
        }
        if self.branches.iter().any(|b| b.rank() != 1) {
            return false;
        }
        let first = self.branch_element(0);
        let scale = 1.0 + linalg::norm2(&first);
        (1..self.branches.len()).all(|i| linalg::dist(&self.branch_element(i), &first) <= 1e-9 * scale)
    }

    /// `W_{b,k} = sum_{(a,c) in coords[k]} U~[a,:]^H V~[c,:]`.
    fn generator(&self, b: &Branch, k: usize) -> CMat {
        let r = b.rank();
        let mut w = CMat::zeros(r, r);
        for &(row, col) in &self.coords[k] {
            w += b.ut.row(row).adjoint() * b.vt.row(col);
        }
        w
    }

    /// Element for the given weight matrices (one Hermitian PSD per branch).
    pub fn element(&self, weights: &[CMat]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        for (b, y) in self.branches.iter().zip(weights) {
            for (k, gk) in g.iter_mut().enumerate() {
                *gk += self.sign * (y * self.generator(b, k)).trace().re;
            }
        }
        g
    }

    fn scaled_identity(r: usize, s: f64) -> CMat {
        CMat::identity(r, r) * C64::new(s, 0.0)
    }

    /// `Y_b = I / R` with `R` the total multiplicity.
    pub fn equal_weights(&self) -> Subgradient {
        let total: usize = self.branches.iter().map(Branch::rank).sum();
        let ys: Vec<CMat> = self
            .branches
            .iter()
            .map(|b| Self::scaled_identity(b.rank(), 1.0 / total as f64))
            .collect();
        Subgradient {
            g: self.element(&ys),
            smooth: self.is_smooth(),
        }
    }

    /// Rank-one weight on the leading vector of each branch, equal across branches.
    pub fn equal_rank_one(&self) -> Subgradient {
        let nb = self.branches.len() as f64;
        let ys: Vec<CMat> = self
            .branches
            .iter()
            .map(|b| {
                let mut y = CMat::zeros(b.rank(), b.rank());
                y[(0, 0)] = C64::new(1.0 / nb, 0.0);
                y
            })
            .collect();
        Subgradient {
            g: self.element(&ys),
            smooth: self.is_smooth(),
        }
    }

    /// Element supported on a single branch with `Y = I / r`.
    pub fn branch_element(&self, index: usize) -> Vec<f64> {
        let ys: Vec<CMat> = self
            .branches
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let s = if i == index { 1.0 / b.rank() as f64 } else { 0.0 };
                Self::scaled_identity(b.rank(), s)
            })
            .collect();
        self.element(&ys)
    }

    /// Branch element with the largest Euclidean norm (first on ties).
    pub fn steepest_branch(&self) -> Vec<f64> {
        let mut best: Option<Vec<f64>> = None;
        for i in 0..self.branches.len() {
            let g = self.branch_element(i);
            if best
                .as_ref()
                .map_or(true, |b| linalg::norm2(&g) > linalg::norm2(b))
            {
                best = Some(g);
            }
        }
        best.unwrap_or_else(|| vec![0.0; self.dim()])
    }

    /// `argmax { g^T d : g in the set }`, i.e. a subgradient realizing the
    /// Clarke directional derivative in direction `d`.
    pub fn support(&self, d: &[f64]) -> Vec<f64> {
        let mut best_val = f64::NEG_INFINITY;
        let mut best = vec![0.0; self.dim()];
        for b in &self.branches {
            let r = b.rank();
            let mut h = CMat::zeros(r, r);
            for (k, &dk) in d.iter().enumerate() {
                if dk != 0.0 {
                    h += self.generator(b, k) * C64::new(self.sign * dk, 0.0);
                }
            }
            let (val, y): (f64, DVector<C64>) = linalg::hermitian_top(&h);
            if val > best_val {
                best_val = val;
                let yy = &y * y.adjoint();
                best = (0..self.dim())
                    .map(|k| self.sign * (&yy * self.generator(b, k)).trace().re)
                    .collect();
            }
        }
        best
    }
}

/// Spectral abscissa of the closed loop and its Clarke set for `sign * alpha`.
pub fn abscissa_clarke(lft: &ParametricLft, theta: &[f64], sign: f64) -> Result<(ActiveEigenData, ClarkeSet)> {
    let closed = lft.close(theta)?;
    let data = spectral_abscissa(&closed.a, EIG_ACTIVITY)?;
    if let Some(e) = data.derogatory() {
        return Err(Error::Derogatory {
            re: e.lambda.re,
            im: e.lambda.im,
        });
    }
    let b1 = linalg::to_complex(&lft.sys.b1());
    let c1 = linalg::to_complex(&lft.sys.c1());
    let right_inv = linalg::to_complex(&closed.right_inv);
    let left_inv = linalg::to_complex(&closed.left_inv);
    let branches = data
        .active
        .iter()
        .map(|e| Branch {
            ut: right_inv.adjoint() * b1.adjoint() * &e.u,
            vt: &left_inv * &c1 * &e.v,
        })
        .collect();
    let set = ClarkeSet {
        value: sign * data.alpha,
        sign,
        branches,
        coords: lft.map.coords.clone(),
    };
    Ok((data, set))
}

/// H-infinity norm of the closed performance channel and its Clarke set for
/// `sign * ||T||_inf`. Fails with [`Error::Unstable`] off the stability domain.
pub fn hinf_clarke(lft: &ParametricLft, theta: &[f64], sign: f64) -> Result<(ActiveFrequencyData, ClarkeSet)> {
    let closed = lft.close(theta)?;
    let data = hinf_norm(&closed.perf, HINF_REL_TOL)?;
    if !data.stable {
        return Err(Error::Unstable { alpha: data.alpha });
    }
    let (qw, ze) = lft.loop_maps(&closed)?;
    let mut branches = Vec::with_capacity(data.active.len());
    for f in &data.active {
        let vt = qw.freq_response(f.omega)? * &f.p;
        let ut = ze.freq_response(f.omega)?.adjoint() * &f.q;
        branches.push(Branch { ut, vt });
    }
    let set = ClarkeSet {
        value: sign * data.hinf,
        sign,
        branches,
        coords: lft.map.coords.clone(),
    };
    Ok((data, set))
}

/// One Clarke subgradient of `h_-(delta) = -||T_zw(delta)||_inf`, rank-one
/// weights on the top singular pair of each active frequency.
pub fn subgrad_h_minus_delta(
    m: &UncertainClosedLoop,
    structure: &UncertaintyStructure,
    delta: &DeltaPoint,
) -> Result<Subgradient> {
    let lft = m.delta_lft(structure)?;
    Ok(hinf_clarke(&lft, &delta.0, -1.0)?.1.equal_rank_one())
}

/// One Clarke subgradient of `a_-(delta) = -alpha(A(delta))` with equal
/// weights over active eigenvalues.
pub fn subgrad_a_minus_delta(
    m: &UncertainClosedLoop,
    structure: &UncertaintyStructure,
    delta: &DeltaPoint,
) -> Result<Subgradient> {
    let lft = m.delta_lft(structure)?;
    Ok(abscissa_clarke(&lft, &delta.0, -1.0)?.1.equal_weights())
}

/// One Clarke subgradient of `kappa -> ||T_zw(delta, kappa)||_inf`.
pub fn subgrad_hinf_kappa(
    plant: &Plant,
    cstructure: &ControllerStructure,
    kappa: &[f64],
    structure: &UncertaintyStructure,
    delta: &DeltaPoint,
) -> Result<Subgradient> {
    let lft = ParametricLft::controller(plant, cstructure, structure, delta)?;
    Ok(hinf_clarke(&lft, kappa, 1.0)?.1.equal_rank_one())
}

/// Value of `-sigma_max((I - Delta D)^{-1})`; `-inf` with `singular` set
/// when the interconnection is singular.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WellPosedness {
    pub value: f64,
    pub singular: bool,
}

pub fn wellposedness_measure(
    m: &UncertainClosedLoop,
    structure: &UncertaintyStructure,
    delta: &DeltaPoint,
) -> Result<WellPosedness> {
    let lft = m.delta_lft(structure)?;
    let x = lft.gain(&delta.0)?;
    let n = x.nrows();
    let e = DMatrix::identity(n, n) - x * lft.sys.d11();
    let (lo, hi) = linalg::sigma_extremes(&e);
    if !(lo >= linalg::SINGULAR_RATIO * hi) || hi == 0.0 {
        return Ok(WellPosedness {
            value: f64::NEG_INFINITY,
            singular: true,
        });
    }
    Ok(WellPosedness {
        value: -1.0 / lo,
        singular: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::*;
    use crate::lft::{PartitionedSystem, StateSpace};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ss(a: &[f64], b: &[f64], c: &[f64], d: &[f64], n: usize, m: usize, p: usize) -> StateSpace {
        StateSpace::new(
            DMatrix::from_row_slice(n, n, a),
            DMatrix::from_row_slice(n, m, b),
            DMatrix::from_row_slice(p, n, c),
            DMatrix::from_row_slice(p, m, d),
        )
        .unwrap()
    }

    /// Dense log grid plus local refinement around the best grid point.
    fn grid_oracle(sys: &StateSpace) -> (f64, f64) {
        let mut best = (sys.d.norm(), f64::INFINITY);
        best.0 = linalg::sigma_max_real(&sys.d);
        let pts = 10_000;
        let mut idx = None;
        let grid: Vec<f64> = (0..pts).map(|i| 10f64.powf(-4.0 + 8.0 * i as f64 / (pts - 1) as f64)).collect();
        for (i, &w) in grid.iter().enumerate() {
            let s = sigma_at(sys, w).unwrap();
            if s > best.0 {
                best = (s, w);
                idx = Some(i);
            }
        }
        let s0 = sigma_at(sys, 0.0).unwrap();
        if s0 > best.0 {
            best = (s0, 0.0);
            idx = None;
        }
        if let Some(i) = idx {
            let lo = grid[i.saturating_sub(1)];
            let hi = grid[(i + 1).min(pts - 1)];
            for j in 0..=2000 {
                let w = lo + (hi - lo) * j as f64 / 2000.0;
                let s = sigma_at(sys, w).unwrap();
                if s > best.0 {
                    best = (s, w);
                }
            }
        }
        best
    }

    #[test]
    fn spectral_abscissa_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-3.0, -1.0]));
        let d = spectral_abscissa(&a, EIG_ACTIVITY).unwrap();
        assert_eq!(d.alpha, -1.0);
        assert_eq!(d.active.len(), 1);
        assert!(d.active[0].is_simple() && d.active[0].semisimple);
    }

    #[test]
    fn spectral_abscissa_rotation_pair() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let d = spectral_abscissa(&a, EIG_ACTIVITY).unwrap();
        assert!(d.alpha.abs() < 1e-14);
        assert_eq!(d.active.len(), 2);
        let ims: Vec<f64> = d.active.iter().map(|e| e.lambda.im).collect();
        assert!((ims[0] - 1.0).abs() < 1e-12 && (ims[1] + 1.0).abs() < 1e-12);
        for e in &d.active {
            let uv = e.u.adjoint() * &e.v;
            assert!((uv - CMat::identity(1, 1)).norm() < 1e-8);
        }
    }

    #[test]
    fn spectral_abscissa_matches_independent_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = DMatrix::from_fn(8, 8, |_, _| rng.gen_range(-1.0..1.0));
        let d = spectral_abscissa(&a, EIG_ACTIVITY).unwrap();
        // independent route: eigenvalues of the complex matrix through its
        // characteristic roots via nalgebra's complex Schur
        let ac = linalg::to_complex(&a);
        let schur = nalgebra::linalg::Schur::new(ac);
        let oracle = schur.eigenvalues().unwrap().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
        assert!((d.alpha - oracle).abs() < 1e-10);
        for e in &d.active {
            let res = linalg::to_complex(&a) * &e.v - &e.v * e.lambda;
            assert!(res.norm() < 1e-8);
        }
    }

    #[test]
    fn jordan_block_is_flagged() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]);
        let d = spectral_abscissa(&a, EIG_ACTIVITY).unwrap();
        assert!(d.derogatory().is_some());
        let semi = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -1.0]));
        assert!(spectral_abscissa(&semi, EIG_ACTIVITY).unwrap().derogatory().is_none());
    }

    #[test]
    fn hinf_static_gain() {
        let sys = StateSpace::gain(DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -4.0]));
        let h = hinf_norm(&sys, HINF_REL_TOL).unwrap();
        assert!((h.hinf - 4.0).abs() < 1e-14);
        assert_eq!(h.active.len(), 1);
        assert!(h.active[0].omega.is_infinite());
    }

    #[test]
    fn hinf_first_order_lag() {
        let sys = ss(&[-1.0], &[1.0], &[2.0], &[0.0], 1, 1, 1);
        let h = hinf_norm(&sys, HINF_REL_TOL).unwrap();
        let (g, _) = grid_oracle(&sys);
        assert!((h.hinf - 2.0).abs() < 1e-8);
        assert!((h.hinf - g).abs() <= 1e-6 * g);
        assert!(h.peak_frequency().unwrap() < 1e-6);
    }

    #[test]
    fn hinf_resonance() {
        // 1/(s^2 + s + 1)
        let sys = ss(&[0.0, 1.0, -1.0, -1.0], &[0.0, 1.0], &[1.0, 0.0], &[0.0], 2, 1, 1);
        let h = hinf_norm(&sys, HINF_REL_TOL).unwrap();
        let zeta: f64 = 0.5;
        let exact = 1.0 / (2.0 * zeta * (1.0 - zeta * zeta).sqrt());
        assert!((h.hinf - exact).abs() < 1e-8 * exact);
        let peak = h.peak_frequency().unwrap();
        assert!((peak - (1.0 - 2.0 * zeta * zeta).sqrt()).abs() < 1e-5);
        let (g, _) = grid_oracle(&sys);
        assert!((h.hinf - g).abs() <= 1e-6 * g);
    }

    #[test]
    fn hinf_unstable_is_flagged() {
        let sys = ss(&[1.0], &[1.0], &[1.0], &[0.0], 1, 1, 1);
        let h = hinf_norm(&sys, HINF_REL_TOL).unwrap();
        assert!(!h.stable && h.hinf.is_infinite());
    }

    #[test]
    fn hinf_random_against_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..6 {
            let n = rng.gen_range(1..=6);
            let (mi, po) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let sys = random_ss(&mut rng, n, mi, po);
            let h = hinf_norm(&sys, HINF_REL_TOL).unwrap();
            let (g, _) = grid_oracle(&sys);
            assert!(h.hinf >= g * (1.0 - 1e-9), "{} < grid {}", h.hinf, g);
            assert!((h.hinf - g).abs() <= 1e-6 * g, "{} vs {}", h.hinf, g);
        }
    }

    #[test]
    fn hinf_invariant_under_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let sys = random_ss(&mut rng, 4, 2, 2);
        let t = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { rng.gen_range(-0.3..0.3) });
        let h1 = hinf_norm(&sys, HINF_REL_TOL).unwrap().hinf;
        let h2 = hinf_norm(&sys.similarity(&t).unwrap(), HINF_REL_TOL).unwrap().hinf;
        assert!((h1 - h2).abs() <= 1e-8 * h1);
    }

    fn static_delta_loop(dzw: f64, dzp: f64, dqw: f64, dqp: f64) -> UncertainClosedLoop {
        let d = DMatrix::from_row_slice(2, 2, &[dqp, dqw, dzp, dzw]);
        UncertainClosedLoop::new(PartitionedSystem::new(StateSpace::gain(d), 1, 1).unwrap()).unwrap()
    }

    #[test]
    fn h_minus_gradient_static_scalar() {
        // T_zw = 1 + delta
        let m = static_delta_loop(1.0, 1.0, 1.0, 0.0);
        let st = UncertaintyStructure::new(vec![1]).unwrap();
        let g = subgrad_h_minus_delta(&m, &st, &DeltaPoint(vec![0.0])).unwrap();
        let f = |d: f64| -hinf_norm(&close_uncertainty_zw(&m, &st, d), HINF_REL_TOL).unwrap().hinf;
        let fd = (f(1e-6) - f(-1e-6)) / 2e-6;
        assert!((g.g[0] - fd).abs() < 1e-6);
        assert!((g.g[0] + 1.0).abs() < 1e-12);
        assert!(g.smooth);
    }

    fn close_uncertainty_zw(m: &UncertainClosedLoop, st: &UncertaintyStructure, d: f64) -> StateSpace {
        crate::lft::close_uncertainty(m, st, &DeltaPoint(vec![d])).unwrap().t_zw
    }

    #[test]
    fn h_minus_gradient_zero_when_decoupled() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut g = random_ss(&mut rng, 3, 2, 2);
        // zero T_qw: nothing from w reaches q
        g.b.column_mut(1).fill(0.0);
        g.d[(0, 1)] = 0.0;
        let m = UncertainClosedLoop::new(PartitionedSystem::new(g.scaled_d(0.5), 1, 1).unwrap()).unwrap();
        let st = UncertaintyStructure::new(vec![1]).unwrap();
        let sg = subgrad_h_minus_delta(&m, &st, &DeltaPoint(vec![0.2])).unwrap();
        assert!(sg.g[0].abs() < 1e-12);
    }

    #[test]
    fn a_minus_affine_scalar() {
        // A(delta) = -1 + delta
        let m = scalar_loop(-1.0, 1.0, 1.0, 0.0);
        let st = UncertaintyStructure::new(vec![1]).unwrap();
        for d in [-0.7, 0.0, 0.4] {
            let g = subgrad_a_minus_delta(&m, &st, &DeltaPoint(vec![d])).unwrap();
            assert!((g.g[0] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn a_minus_two_active_semisimple() {
        // A(delta) = diag(-1 + d1, -1 + d2): B_p = I, C_q = I, D = 0
        let sys = StateSpace::new(
            -DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let m = UncertainClosedLoop::new(PartitionedSystem::new(sys, 2, 2).unwrap()).unwrap();
        let st = UncertaintyStructure::new(vec![1, 1]).unwrap();
        let g = subgrad_a_minus_delta(&m, &st, &DeltaPoint(vec![0.0, 0.0])).unwrap();
        assert!(!g.smooth);
        let (y1, y2) = (-g.g[0], -g.g[1]);
        assert!(y1 >= -1e-12 && y2 >= -1e-12 && (y1 + y2 - 1.0).abs() < 1e-10);
        // directional derivatives of a_- along +-unit directions
        let f = |d: [f64; 2]| -closed_loop_alpha(&m, &st, &d);
        let h = 1e-7;
        for dir in [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]] {
            let dd = (f([h * dir[0], h * dir[1]]) - f([0.0, 0.0])) / h;
            // Clarke upper bound: f°(d) = max_g g.d >= g.d for our element
            let lft = m.delta_lft(&st).unwrap();
            let (_, set) = abscissa_clarke(&lft, &[0.0, 0.0], -1.0).unwrap();
            let sup = linalg::dot(&set.support(&dir), &dir);
            // a_- is a min of branches: the one-sided derivative is the
            // smallest branch slope, the Clarke derivative the largest
            let neg: Vec<f64> = dir.iter().map(|x| -x).collect();
            let lowest = linalg::dot(&set.support(&neg), &dir);
            assert!((lowest - dd).abs() < 1e-6, "dir {dir:?}: {lowest} vs {dd}");
            assert!(sup >= dd - 1e-6);
            let ours = linalg::dot(&g.g, &dir);
            assert!(ours <= sup + 1e-10 && ours >= lowest - 1e-10);
        }
    }

    fn closed_loop_alpha(m: &UncertainClosedLoop, st: &UncertaintyStructure, d: &[f64]) -> f64 {
        let a = crate::lft::closed_loop_a(m, st, &DeltaPoint(d.to_vec())).unwrap();
        linalg::spectral_abscissa_value(&a).unwrap()
    }

    #[test]
    fn hinf_kappa_static_scalar() {
        // T_zw = delta - kappa at delta = 1, kappa = 0 -> d/dkappa |1 - kappa| = -1
        let plant = toy_static_plant();
        let cs = ControllerStructure::static_gain(1, 1);
        let st = UncertaintyStructure::new(vec![1]).unwrap();
        let g = subgrad_hinf_kappa(&plant, &cs, &[0.0], &st, &DeltaPoint(vec![1.0])).unwrap();
        assert!((g.g[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn hinf_kappa_masked_entries_absent() {
        let plant = toy_static_plant();
        let cs = ControllerStructure::new(
            DMatrix::from_element(1, 1, crate::lft::Entry::Fixed(-2.0)),
            DMatrix::from_element(1, 1, crate::lft::Entry::Free),
            DMatrix::from_element(1, 1, crate::lft::Entry::Fixed(1.0)),
            DMatrix::from_element(1, 1, crate::lft::Entry::Free),
        )
        .unwrap();
        let st = UncertaintyStructure::new(vec![1]).unwrap();
        let g = subgrad_hinf_kappa(&plant, &cs, &[0.5, 0.1], &st, &DeltaPoint(vec![0.3])).unwrap();
        assert_eq!(g.g.len(), 2);
    }

    #[test]
    fn wellposedness_examples() {
        let st = UncertaintyStructure::new(vec![1]).unwrap();
        let m0 = scalar_loop(-1.0, 1.0, 1.0, 0.0);
        for d in [-1.0, 0.0, 0.6] {
            assert_eq!(wellposedness_measure(&m0, &st, &DeltaPoint(vec![d])).unwrap().value, -1.0);
        }
        let m = scalar_loop(-1.0, 1.0, 1.0, 0.5);
        let w = wellposedness_measure(&m, &st, &DeltaPoint(vec![1.0])).unwrap();
        assert!((w.value + 2.0).abs() < 1e-14);
        assert_eq!(wellposedness_measure(&m, &st, &DeltaPoint(vec![0.0])).unwrap().value, -1.0);
        let w = wellposedness_measure(&m, &st, &DeltaPoint(vec![2.0])).unwrap();
        assert!(w.singular && w.value == f64::NEG_INFINITY);
    }
}
