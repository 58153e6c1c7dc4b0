//! State-space systems and linear fractional transformations.
//!
//! Plants carry three channel pairs: uncertainty `p -> q`, performance
//! `w -> z` and control `u -> y`. Uncertainty is the real block-diagonal
//! `Delta = diag(delta_1 I_{r_1}, ..., delta_m I_{r_m})` closed as `p = Delta q`;
//! the controller closes `u = K y`.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{dim, Error, Result};
use crate::linalg::{self, blocks, C64, CMat};

/// Real continuous-time state-space realization `(A, B, C, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(dim("A columns", n, a.ncols()));
        }
        if b.nrows() != n {
            return Err(dim("B rows", n, b.nrows()));
        }
        if c.ncols() != n {
            return Err(dim("C columns", n, c.ncols()));
        }
        if d.nrows() != c.nrows() {
            return Err(dim("D rows", c.nrows(), d.nrows()));
        }
        if d.ncols() != b.ncols() {
            return Err(dim("D columns", b.ncols(), d.ncols()));
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            if !linalg::all_finite(m) {
                return Err(Error::NonFinite(name.into()));
            }
        }
        Ok(Self { a, b, c, d })
    }

    /// Memoryless system `y = D u`.
    pub fn gain(d: DMatrix<f64>) -> Self {
        let (p, m) = d.shape();
        Self {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, m),
            c: DMatrix::zeros(p, 0),
            d,
        }
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Transfer matrix `C (sI - A)^{-1} B + D` at a complex point.
    pub fn eval(&self, s: C64) -> Result<CMat> {
        let n = self.order();
        let mut d = linalg::to_complex(&self.d);
        if n > 0 {
            let mut si_a = -linalg::to_complex(&self.a);
            for i in 0..n {
                si_a[(i, i)] += s;
            }
            let x = linalg::solve_c(&si_a, &linalg::to_complex(&self.b))?;
            d += linalg::to_complex(&self.c) * x;
        }
        Ok(d)
    }

    /// Frequency response at `s = j omega`; `omega = inf` returns `D`.
    pub fn freq_response(&self, omega: f64) -> Result<CMat> {
        if omega.is_infinite() {
            return Ok(linalg::to_complex(&self.d));
        }
        self.eval(C64::new(0.0, omega))
    }

    pub fn spectral_abscissa(&self) -> Result<f64> {
        linalg::spectral_abscissa_value(&self.a)
    }

    /// State coordinates change `x = T x'`.
    pub fn similarity(&self, t: &DMatrix<f64>) -> Result<Self> {
        let ti = linalg::inverse(t)?;
        Self::new(&ti * &self.a * t, &ti * &self.b, &self.c * t, self.d.clone())
    }

    fn select(&self, rows: Range<usize>, cols: Range<usize>) -> Self {
        let n = self.order();
        Self {
            a: self.a.clone(),
            b: self.b.view((0, cols.start), (n, cols.len())).into_owned(),
            c: self.c.view((rows.start, 0), (rows.len(), n)).into_owned(),
            d: self
                .d
                .view((rows.start, cols.start), (rows.len(), cols.len()))
                .into_owned(),
        }
    }
}

/// State-space system whose inputs and outputs are split into two channels.
/// Channel 1 holds the first `in1` inputs and `out1` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedSystem {
    pub sys: StateSpace,
    pub in1: usize,
    pub out1: usize,
}

impl PartitionedSystem {
    pub fn new(sys: StateSpace, in1: usize, out1: usize) -> Result<Self> {
        if in1 > sys.inputs() {
            return Err(dim("channel-1 input width", sys.inputs(), in1));
        }
        if out1 > sys.outputs() {
            return Err(dim("channel-1 output width", sys.outputs(), out1));
        }
        Ok(Self { sys, in1, out1 })
    }

    pub fn in2(&self) -> usize {
        self.sys.inputs() - self.in1
    }

    pub fn out2(&self) -> usize {
        self.sys.outputs() - self.out1
    }

    pub fn repartition(self, in1: usize, out1: usize) -> Result<Self> {
        Self::new(self.sys, in1, out1)
    }

    /// Exchange the roles of channel 1 and channel 2.
    pub fn swap_channels(&self) -> Self {
        let (n, i1, i2, o1, o2) = (self.sys.order(), self.in1, self.in2(), self.out1, self.out2());
        let s = &self.sys;
        let b = blocks(&[n], &[i2, i1], &[(0, 0, &self.b2()), (0, 1, &self.b1())]);
        let c = blocks(&[o2, o1], &[n], &[(0, 0, &self.c2()), (1, 0, &self.c1())]);
        let d = blocks(
            &[o2, o1],
            &[i2, i1],
            &[
                (0, 0, &self.d22()),
                (0, 1, &self.d21()),
                (1, 0, &self.d12()),
                (1, 1, &self.d11()),
            ],
        );
        Self {
            sys: StateSpace { a: s.a.clone(), b, c, d },
            in1: i2,
            out1: o2,
        }
    }

    pub fn b1(&self) -> DMatrix<f64> {
        self.sys.b.columns(0, self.in1).into_owned()
    }
    pub fn b2(&self) -> DMatrix<f64> {
        self.sys.b.columns(self.in1, self.in2()).into_owned()
    }
    pub fn c1(&self) -> DMatrix<f64> {
        self.sys.c.rows(0, self.out1).into_owned()
    }
    pub fn c2(&self) -> DMatrix<f64> {
        self.sys.c.rows(self.out1, self.out2()).into_owned()
    }
    pub fn d11(&self) -> DMatrix<f64> {
        self.sys.d.view((0, 0), (self.out1, self.in1)).into_owned()
    }
    pub fn d12(&self) -> DMatrix<f64> {
        self.sys.d.view((0, self.in1), (self.out1, self.in2())).into_owned()
    }
    pub fn d21(&self) -> DMatrix<f64> {
        self.sys.d.view((self.out1, 0), (self.out2(), self.in1)).into_owned()
    }
    pub fn d22(&self) -> DMatrix<f64> {
        self.sys
            .d
            .view((self.out1, self.in1), (self.out2(), self.in2()))
            .into_owned()
    }

    /// Channel 2 to channel 2 map with channel 1 left open.
    pub fn channel22(&self) -> StateSpace {
        self.sys
            .select(self.out1..self.sys.outputs(), self.in1..self.sys.inputs())
    }
}

/// Redheffer star product. The upper system's channel 2 is wired to the
/// lower system's channel 1 (`upper.out2 -> lower.in1`, `lower.out1 -> upper.in2`).
/// The result has inputs `(upper.in1, lower.in2)`, outputs `(upper.out1, lower.out2)`
/// and states `(x_upper, x_lower)`.
pub fn star_product(upper: &PartitionedSystem, lower: &PartitionedSystem) -> Result<PartitionedSystem> {
    if upper.out2() != lower.in1 {
        return Err(dim("star product: upper out2 vs lower in1", upper.out2(), lower.in1));
    }
    if upper.in2() != lower.out1 {
        return Err(dim("star product: upper in2 vs lower out1", upper.in2(), lower.out1));
    }
    let (nu, nl) = (upper.sys.order(), lower.sys.order());
    let (e1, v1, y1, r1) = (upper.in1, upper.in2(), upper.out1, upper.out2());
    let (v2, e2, r2, y2) = (lower.in1, lower.in2(), lower.out1, lower.out2());

    // I - D22^upper D11^lower must be invertible for the loop to be defined.
    let loop_matrix = DMatrix::identity(r1, r1) - upper.d22() * lower.d11();
    linalg::ensure_invertible(&loop_matrix, "star product interconnection")?;

    let a = blocks(&[nu, nl], &[nu, nl], &[(0, 0, &upper.sys.a), (1, 1, &lower.sys.a)]);
    let b_e = blocks(&[nu, nl], &[e1, e2], &[(0, 0, &upper.b1()), (1, 1, &lower.b2())]);
    let b_v = blocks(&[nu, nl], &[v1, v2], &[(0, 0, &upper.b2()), (1, 1, &lower.b1())]);
    let c_y = blocks(&[y1, y2], &[nu, nl], &[(0, 0, &upper.c1()), (1, 1, &lower.c2())]);
    let d_ye = blocks(&[y1, y2], &[e1, e2], &[(0, 0, &upper.d11()), (1, 1, &lower.d22())]);
    let d_yv = blocks(&[y1, y2], &[v1, v2], &[(0, 0, &upper.d12()), (1, 1, &lower.d21())]);
    // Internal signals v = (v1, v2) = (r2, r1).
    let c_w = blocks(&[r2, r1], &[nu, nl], &[(0, 1, &lower.c1()), (1, 0, &upper.c2())]);
    let d_we = blocks(&[r2, r1], &[e1, e2], &[(0, 1, &lower.d12()), (1, 0, &upper.d21())]);
    let d_wv = blocks(&[r2, r1], &[v1, v2], &[(0, 1, &lower.d11()), (1, 0, &upper.d22())]);

    let nv = v1 + v2;
    let closure = DMatrix::identity(nv, nv) - d_wv;
    let w_c = linalg::solve(&closure, &c_w)?;
    let w_d = linalg::solve(&closure, &d_we)?;
    let sys = StateSpace::new(
        &a + &b_v * &w_c,
        &b_e + &b_v * &w_d,
        &c_y + &d_yv * &w_c,
        &d_ye + &d_yv * &w_d,
    )?;
    PartitionedSystem::new(sys, e1, y1)
}

/// Block sizes `r_1..r_m` of the real repeated-scalar uncertainty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UncertaintyStructure {
    block_sizes: Vec<usize>,
}

impl UncertaintyStructure {
    pub fn new(block_sizes: Vec<usize>) -> Result<Self> {
        if block_sizes.is_empty() {
            return Err(Error::Invalid("uncertainty needs at least one block".into()));
        }
        if block_sizes.iter().any(|&r| r == 0) {
            return Err(Error::Invalid("uncertainty block sizes must be positive".into()));
        }
        Ok(Self { block_sizes })
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    /// Number of independent parameters `m`.
    pub fn params(&self) -> usize {
        self.block_sizes.len()
    }

    /// Total repetition `n_Delta`.
    pub fn size(&self) -> usize {
        self.block_sizes.iter().sum()
    }

    /// Rows/columns of `Delta` occupied by each parameter.
    pub fn index_sets(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.block_sizes
            .iter()
            .map(|&r| {
                let range = start..start + r;
                start += r;
                range
            })
            .collect()
    }

    pub fn param_map(&self) -> ParamMap {
        let n = self.size();
        ParamMap {
            base: DMatrix::zeros(n, n),
            coords: self
                .index_sets()
                .into_iter()
                .map(|r| r.map(|j| (j, j)).collect())
                .collect(),
        }
    }
}

/// Normalized uncertain-parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeltaPoint(pub Vec<f64>);

impl DeltaPoint {
    pub fn nominal(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn in_unit_box(&self) -> bool {
        self.0.iter().all(|d| d.abs() <= 1.0)
    }

    pub fn inf_norm(&self) -> f64 {
        linalg::inf_norm(&self.0)
    }
}

impl From<Vec<f64>> for DeltaPoint {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// `Delta = diag(delta_1 I_{r_1}, ..., delta_m I_{r_m})`.
pub fn build_delta_matrix(structure: &UncertaintyStructure, delta: &DeltaPoint) -> Result<DMatrix<f64>> {
    if delta.0.len() != structure.params() {
        return Err(dim("uncertain parameter vector", structure.params(), delta.0.len()));
    }
    let n = structure.size();
    let mut m = DMatrix::zeros(n, n);
    for (range, &v) in structure.index_sets().into_iter().zip(&delta.0) {
        for j in range {
            m[(j, j)] = v;
        }
    }
    Ok(m)
}

/// Affine map from a parameter vector to a static gain matrix:
/// `X(theta) = base + sum_k theta_k sum_{(a,b) in coords[k]} e_a e_b^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMap {
    pub base: DMatrix<f64>,
    pub coords: Vec<Vec<(usize, usize)>>,
}

impl ParamMap {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn gain(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        if theta.len() != self.len() {
            return Err(dim("parameter vector", self.len(), theta.len()));
        }
        let mut x = self.base.clone();
        for (k, entries) in self.coords.iter().enumerate() {
            for &(a, b) in entries {
                x[(a, b)] += theta[k];
            }
        }
        Ok(x)
    }
}

/// One entry of a controller mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Entry {
    Free,
    Fixed(f64),
}

/// Structured controller: masks for `A_K, B_K, C_K, D_K`.
///
/// Free entries are numbered blockwise (`A_K`, `B_K`, `C_K`, `D_K`), row-major
/// inside each block; `kappa` lists them in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerStructure {
    order: usize,
    n_y: usize,
    n_u: usize,
    ak: DMatrix<Entry>,
    bk: DMatrix<Entry>,
    ck: DMatrix<Entry>,
    dk: DMatrix<Entry>,
}

impl ControllerStructure {
    pub fn new(
        ak: DMatrix<Entry>,
        bk: DMatrix<Entry>,
        ck: DMatrix<Entry>,
        dk: DMatrix<Entry>,
    ) -> Result<Self> {
        let order = ak.nrows();
        let (n_u, n_y) = dk.shape();
        if ak.ncols() != order {
            return Err(dim("A_K mask columns", order, ak.ncols()));
        }
        if bk.shape() != (order, n_y) {
            return Err(dim("B_K mask size", order * n_y, bk.len()));
        }
        if ck.shape() != (n_u, order) {
            return Err(dim("C_K mask size", n_u * order, ck.len()));
        }
        for m in [&ak, &bk, &ck, &dk] {
            if m.iter().any(|e| matches!(e, Entry::Fixed(v) if !v.is_finite())) {
                return Err(Error::NonFinite("controller mask".into()));
            }
        }
        Ok(Self { order, n_y, n_u, ak, bk, ck, dk })
    }

    /// Dense controller of the given order, every entry free.
    pub fn full(order: usize, n_y: usize, n_u: usize) -> Self {
        Self {
            order,
            n_y,
            n_u,
            ak: DMatrix::from_element(order, order, Entry::Free),
            bk: DMatrix::from_element(order, n_y, Entry::Free),
            ck: DMatrix::from_element(n_u, order, Entry::Free),
            dk: DMatrix::from_element(n_u, n_y, Entry::Free),
        }
    }

    /// Static output feedback `u = D_K y`.
    pub fn static_gain(n_y: usize, n_u: usize) -> Self {
        Self::full(0, n_y, n_u)
    }

    /// SISO PID `kp + ki/s + kd s/(tau s + 1)` with fixed filter constant.
    /// States: integrator and derivative filter. Free parameters map to
    /// `(C_K[0], C_K[1], D_K)` = `(ki, -kd/tau^2, kp + kd/tau)`.
    pub fn pid(tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::Invalid("PID filter constant must be positive".into()));
        }
        use Entry::*;
        Self::new(
            DMatrix::from_row_slice(2, 2, &[Fixed(0.0), Fixed(0.0), Fixed(0.0), Fixed(-1.0 / tau)]),
            DMatrix::from_row_slice(2, 1, &[Fixed(1.0), Fixed(1.0)]),
            DMatrix::from_row_slice(1, 2, &[Free, Free]),
            DMatrix::from_row_slice(1, 1, &[Free]),
        )
    }

    pub fn order(&self) -> usize {
        self.order
    }
    pub fn inputs(&self) -> usize {
        self.n_y
    }
    pub fn outputs(&self) -> usize {
        self.n_u
    }

    pub fn masks(&self) -> [&DMatrix<Entry>; 4] {
        [&self.ak, &self.bk, &self.ck, &self.dk]
    }

    /// Number of free entries.
    pub fn param_count(&self) -> usize {
        self.masks()
            .iter()
            .map(|m| m.iter().filter(|e| matches!(e, Entry::Free)).count())
            .sum()
    }

    fn block_offsets(&self) -> [(usize, usize); 4] {
        let n = self.order;
        [(0, 0), (0, n), (n, 0), (n, n)]
    }

    /// Positions of free entries in the stacked gain `[[A_K, B_K], [C_K, D_K]]`.
    pub fn free_positions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (mask, (r0, c0)) in self.masks().into_iter().zip(self.block_offsets()) {
            for i in 0..mask.nrows() {
                for j in 0..mask.ncols() {
                    if mask[(i, j)] == Entry::Free {
                        out.push((r0 + i, c0 + j));
                    }
                }
            }
        }
        out
    }

    /// Affine map `kappa -> [[A_K, B_K], [C_K, D_K]]`.
    pub fn param_map(&self) -> ParamMap {
        let (n, nu, ny) = (self.order, self.n_u, self.n_y);
        let mut base = DMatrix::zeros(n + nu, n + ny);
        for (mask, (r0, c0)) in self.masks().into_iter().zip(self.block_offsets()) {
            for i in 0..mask.nrows() {
                for j in 0..mask.ncols() {
                    if let Entry::Fixed(v) = mask[(i, j)] {
                        base[(r0 + i, c0 + j)] = v;
                    }
                }
            }
        }
        ParamMap {
            base,
            coords: self.free_positions().into_iter().map(|p| vec![p]).collect(),
        }
    }

    /// Stacked gain `[[A_K, B_K], [C_K, D_K]]` for a parameter vector.
    pub fn gain_matrix(&self, kappa: &[f64]) -> Result<DMatrix<f64>> {
        if kappa.len() != self.param_count() {
            return Err(dim("controller parameter vector", self.param_count(), kappa.len()));
        }
        self.param_map().gain(kappa)
    }
}

/// Controller realization `K(kappa)`.
pub fn realize_controller(structure: &ControllerStructure, kappa: &[f64]) -> Result<StateSpace> {
    let g = structure.gain_matrix(kappa)?;
    let n = structure.order();
    let (nu, ny) = (structure.outputs(), structure.inputs());
    StateSpace::new(
        g.view((0, 0), (n, n)).into_owned(),
        g.view((0, n), (n, ny)).into_owned(),
        g.view((n, 0), (nu, n)).into_owned(),
        g.view((n, n), (nu, ny)).into_owned(),
    )
}

/// Widths of the three channel pairs of a plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channels {
    pub p: usize,
    pub w: usize,
    pub u: usize,
    pub q: usize,
    pub z: usize,
    pub y: usize,
}

/// Uncertain plant with inputs `(p, w, u)` and outputs `(q, z, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub sys: StateSpace,
    pub ch: Channels,
}

impl Plant {
    pub fn new(sys: StateSpace, ch: Channels) -> Result<Self> {
        if ch.p + ch.w + ch.u != sys.inputs() {
            return Err(dim("plant input channels p+w+u", sys.inputs(), ch.p + ch.w + ch.u));
        }
        if ch.q + ch.z + ch.y != sys.outputs() {
            return Err(dim("plant output channels q+z+y", sys.outputs(), ch.q + ch.z + ch.y));
        }
        if ch.p != ch.q {
            return Err(dim("uncertainty channel (q vs p)", ch.p, ch.q));
        }
        Ok(Self { sys, ch })
    }

    /// Partition with the control channel as channel 2.
    pub fn control_partition(&self) -> PartitionedSystem {
        PartitionedSystem {
            sys: self.sys.clone(),
            in1: self.ch.p + self.ch.w,
            out1: self.ch.q + self.ch.z,
        }
    }

    /// Partition with the uncertainty channel as channel 1.
    pub fn uncertainty_partition(&self) -> PartitionedSystem {
        PartitionedSystem {
            sys: self.sys.clone(),
            in1: self.ch.p,
            out1: self.ch.q,
        }
    }

    /// Rewrite the plant so that a dynamic controller of the given order
    /// becomes the static gain `[[A_K, B_K], [C_K, D_K]]` acting from
    /// `(x_K, y)` to `(dx_K/dt, u)`. States are ordered `(x, x_K)`.
    pub fn augment(&self, order: usize) -> Plant {
        let ch = self.ch;
        let n = self.sys.order();
        let nk = order;
        let s = &self.sys;
        let (ip, iw, iu) = (0..ch.p, ch.p..ch.p + ch.w, ch.p + ch.w..s.inputs());
        let (oq, oz, oy) = (0..ch.q, ch.q..ch.q + ch.z, ch.q + ch.z..s.outputs());
        let bcol = |r: &Range<usize>| s.b.columns(r.start, r.len()).into_owned();
        let crow = |r: &Range<usize>| s.c.rows(r.start, r.len()).into_owned();
        let dblk = |o: &Range<usize>, i: &Range<usize>| {
            s.d.view((o.start, i.start), (o.len(), i.len())).into_owned()
        };
        let eye = DMatrix::identity(nk, nk);

        let a = blocks(&[n, nk], &[n, nk], &[(0, 0, &s.a)]);
        let b = blocks(
            &[n, nk],
            &[ch.p, ch.w, nk, ch.u],
            &[(0, 0, &bcol(&ip)), (0, 1, &bcol(&iw)), (0, 3, &bcol(&iu)), (1, 2, &eye)],
        );
        let c = blocks(
            &[ch.q, ch.z, nk, ch.y],
            &[n, nk],
            &[(0, 0, &crow(&oq)), (1, 0, &crow(&oz)), (2, 1, &eye), (3, 0, &crow(&oy))],
        );
        let mut entries = Vec::new();
        let rows = [&oq, &oz, &oy];
        let cols = [&ip, &iw, &iu];
        let owned: Vec<(usize, usize, DMatrix<f64>)> = [(0usize, 0usize), (1, 1), (3, 2)]
            .iter()
            .flat_map(|&(ri, rsrc)| {
                [(0usize, 0usize), (1, 1), (3, 2)]
                    .iter()
                    .map(|&(ci, csrc)| (ri, ci, dblk(rows[rsrc], cols[csrc])))
                    .collect::<Vec<_>>()
            })
            .collect();
        for (ri, ci, m) in &owned {
            entries.push((*ri, *ci, m));
        }
        let d = blocks(&[ch.q, ch.z, nk, ch.y], &[ch.p, ch.w, nk, ch.u], &entries);
        Plant {
            sys: StateSpace { a, b, c, d },
            ch: Channels {
                u: ch.u + nk,
                y: ch.y + nk,
                ..ch
            },
        }
    }
}

/// `M = F_l(P, K)`: uncertainty channel `p -> q` (channel 1) and
/// performance channel `w -> z` (channel 2).
#[derive(Debug, Clone, PartialEq)]
pub struct UncertainClosedLoop {
    pub sys: PartitionedSystem,
}

impl UncertainClosedLoop {
    pub fn new(sys: PartitionedSystem) -> Result<Self> {
        if sys.in1 != sys.out1 {
            return Err(dim("uncertainty channel widths", sys.out1, sys.in1));
        }
        Ok(Self { sys })
    }

    pub fn n_delta(&self) -> usize {
        self.sys.in1
    }

    fn check(&self, structure: &UncertaintyStructure) -> Result<()> {
        if structure.size() != self.n_delta() {
            return Err(dim("uncertainty size vs channel width", self.n_delta(), structure.size()));
        }
        Ok(())
    }

    /// The closed loop as a parametric LFT in `delta`.
    pub fn delta_lft(&self, structure: &UncertaintyStructure) -> Result<ParametricLft> {
        self.check(structure)?;
        Ok(ParametricLft {
            sys: self.sys.clone(),
            map: structure.param_map(),
        })
    }
}

/// `F_l(P, K)`: close the control loop, keep uncertainty and performance open.
pub fn close_controller(plant: &Plant, controller: &StateSpace) -> Result<UncertainClosedLoop> {
    if controller.inputs() != plant.ch.y {
        return Err(dim("controller inputs vs measurements", plant.ch.y, controller.inputs()));
    }
    if controller.outputs() != plant.ch.u {
        return Err(dim("controller outputs vs controls", plant.ch.u, controller.outputs()));
    }
    let lower = PartitionedSystem::new(controller.clone(), plant.ch.y, plant.ch.u)?;
    let closed = star_product(&plant.control_partition(), &lower).map_err(|e| match e {
        Error::IllPosed { sigma_min, .. } => Error::IllPosed {
            context: "control loop I - D_yu D_K".into(),
            sigma_min,
        },
        other => other,
    })?;
    UncertainClosedLoop::new(closed.repartition(plant.ch.p, plant.ch.q)?)
}

/// Blocks of `[[0, I], [I, Delta]] * M`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyBlocks {
    pub t_zw: StateSpace,
    pub t_qw: StateSpace,
    pub t_zp: StateSpace,
}

pub fn close_uncertainty(
    m: &UncertainClosedLoop,
    structure: &UncertaintyStructure,
    delta: &DeltaPoint,
) -> Result<UncertaintyBlocks> {
    m.check(structure)?;
    let nd = structure.size();
    let dm = build_delta_matrix(structure, delta)?;
    let eye = DMatrix::identity(nd, nd);
    let upper = PartitionedSystem::new(
        StateSpace::gain(blocks(&[nd, nd], &[nd, nd], &[(0, 1, &eye), (1, 0, &eye), (1, 1, &dm)])),
        nd,
        nd,
    )?;
    let s = star_product(&upper, &m.sys).map_err(|e| match e {
        Error::IllPosed { sigma_min, .. } => Error::IllPosed {
            context: "uncertainty loop I - Delta D".into(),
            sigma_min,
        },
        other => other,
    })?;
    let (ni, no) = (s.sys.inputs(), s.sys.outputs());
    Ok(UncertaintyBlocks {
        t_zw: s.sys.select(nd..no, nd..ni),
        t_qw: s.sys.select(0..nd, nd..ni),
        t_zp: s.sys.select(nd..no, 0..nd),
    })
}

/// `A(delta) = A + B_p Delta (I - D_qp Delta)^{-1} C_q`.
pub fn closed_loop_a(
    m: &UncertainClosedLoop,
    structure: &UncertaintyStructure,
    delta: &DeltaPoint,
) -> Result<DMatrix<f64>> {
    m.delta_lft(structure)?.closed_a(&delta.0)
}

/// A partitioned system whose channel 1 is closed by a static gain that is
/// affine in a parameter vector: `F_u(sys, X(theta))` with `in1 = X out1`.
///
/// Both the uncertainty loop (`X = Delta(delta)`) and, after augmentation,
/// the controller loop (`X = [[A_K, B_K], [C_K, D_K]]`) take this form.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricLft {
    pub sys: PartitionedSystem,
    pub map: ParamMap,
}

/// Quantities of a closed parametric LFT shared by several evaluations.
#[derive(Debug, Clone)]
pub struct ClosedLft {
    pub gain: DMatrix<f64>,
    /// `(I - D11 X)^{-1}`
    pub left_inv: DMatrix<f64>,
    /// `(I - X D11)^{-1}`
    pub right_inv: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub perf: StateSpace,
}

impl ParametricLft {
    pub fn n_params(&self) -> usize {
        self.map.len()
    }

    /// Controller-side LFT at a fixed uncertainty point: uncertainty closed,
    /// static augmented controller gain as the parameterized block.
    pub fn controller(
        plant: &Plant,
        cstructure: &ControllerStructure,
        structure: &UncertaintyStructure,
        delta: &DeltaPoint,
    ) -> Result<Self> {
        if cstructure.inputs() != plant.ch.y || cstructure.outputs() != plant.ch.u {
            return Err(dim(
                "controller structure channels",
                plant.ch.y * plant.ch.u,
                cstructure.inputs() * cstructure.outputs(),
            ));
        }
        if structure.size() != plant.ch.p {
            return Err(dim("uncertainty size vs plant channel", plant.ch.p, structure.size()));
        }
        let aug = plant.augment(cstructure.order());
        let nd = structure.size();
        let dm = build_delta_matrix(structure, delta)?;
        let upper = PartitionedSystem::new(StateSpace::gain(dm), 0, 0)?;
        let closed = star_product(&upper, &aug.uncertainty_partition()).map_err(|e| match e {
            Error::IllPosed { sigma_min, .. } => Error::IllPosed {
                context: "uncertainty loop I - Delta D".into(),
                sigma_min,
            },
            other => other,
        })?;
        debug_assert_eq!(closed.sys.inputs(), aug.sys.inputs() - nd);
        // Channels after closing: inputs (w, u_aug), outputs (z, y_aug).
        let perf_first = closed.repartition(aug.ch.w, aug.ch.z)?;
        Ok(Self {
            sys: perf_first.swap_channels(),
            map: cstructure.param_map(),
        })
    }

    pub fn gain(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.map.gain(theta)
    }

    /// `I - D11 X(theta)`, the matrix whose invertibility is well-posedness.
    pub fn interconnection(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let x = self.gain(theta)?;
        let q = self.sys.out1;
        Ok(DMatrix::identity(q, q) - self.sys.d11() * x)
    }

    pub fn close(&self, theta: &[f64]) -> Result<ClosedLft> {
        let x = self.gain(theta)?;
        let (p, q) = (self.sys.in1, self.sys.out1);
        if x.shape() != (p, q) {
            return Err(dim("parameterized gain size", p * q, x.len()));
        }
        let d11 = self.sys.d11();
        let left = DMatrix::identity(q, q) - &d11 * &x;
        linalg::ensure_invertible(&left, "parameterized loop I - D11 X")?;
        let left_inv = linalg::inverse(&left)?;
        let right_inv = linalg::inverse(&(DMatrix::identity(p, p) - &x * &d11))?;
        // p = X q,  q = (I - D11 X)^{-1} (C1 x + D12 w)
        let xl = &x * &left_inv;
        let b1 = self.sys.b1();
        let d21 = self.sys.d21();
        let a = &self.sys.sys.a + &b1 * &xl * self.sys.c1();
        let b = self.sys.b2() + &b1 * &xl * self.sys.d12();
        let c = self.sys.c2() + &d21 * &xl * self.sys.c1();
        let d = self.sys.d22() + &d21 * &xl * self.sys.d12();
        let perf = StateSpace::new(a.clone(), b, c, d)?;
        Ok(ClosedLft {
            gain: x,
            left_inv,
            right_inv,
            a,
            perf,
        })
    }

    /// Closed-loop maps `w -> q` and `e -> z`, with `e` injected at the
    /// parameter output (`p = X q + e`). Both share the closed dynamics.
    pub fn loop_maps(&self, closed: &ClosedLft) -> Result<(StateSpace, StateSpace)> {
        let x = &closed.gain;
        let (l, r) = (&closed.left_inv, &closed.right_inv);
        let (c1, d12, d21) = (self.sys.c1(), self.sys.d12(), self.sys.d21());
        let xl = x * l;
        let qw = StateSpace::new(
            closed.a.clone(),
            closed.perf.b.clone(),
            l * &c1,
            l * &d12,
        )?;
        let ze = StateSpace::new(
            closed.a.clone(),
            self.sys.b1() * r,
            self.sys.c2() + &d21 * &xl * &c1,
            &d21 * r,
        )?;
        Ok((qw, ze))
    }

    pub fn closed_a(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.close(theta)?.a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Redheffer star product of two partitioned transfer matrices evaluated
    /// pointwise in the frequency domain.
    fn star_fr(u: &CMat, uin1: usize, uout1: usize, l: &CMat, lin1: usize, lout1: usize) -> CMat {
        let sub = |m: &CMat, r0: usize, r: usize, c0: usize, c: usize| m.view((r0, c0), (r, c)).into_owned();
        let (uo2, ui2) = (u.nrows() - uout1, u.ncols() - uin1);
        let (lo2, li2) = (l.nrows() - lout1, l.ncols() - lin1);
        let u11 = sub(u, 0, uout1, 0, uin1);
        let u12 = sub(u, 0, uout1, uin1, ui2);
        let u21 = sub(u, uout1, uo2, 0, uin1);
        let u22 = sub(u, uout1, uo2, uin1, ui2);
        let l11 = sub(l, 0, lout1, 0, lin1);
        let l12 = sub(l, 0, lout1, lin1, li2);
        let l21 = sub(l, lout1, lo2, 0, lin1);
        let l22 = sub(l, lout1, lo2, lin1, li2);
        let i1 = CMat::identity(uo2, uo2);
        let i2 = CMat::identity(lout1, lout1);
        let inv1 = (i1 - &u22 * &l11).try_inverse().unwrap();
        let inv2 = (i2 - &l11 * &u22).try_inverse().unwrap();
        let s11 = &u11 + &u12 * &l11 * &inv1 * &u21;
        let s12 = &u12 * &inv2 * &l12;
        let s21 = &l21 * &inv1 * &u21;
        let s22 = &l22 + &l21 * &u22 * &inv2 * &l12;
        let mut out = CMat::zeros(uout1 + lo2, uin1 + li2);
        out.view_mut((0, 0), s11.shape()).copy_from(&s11);
        out.view_mut((0, uin1), s12.shape()).copy_from(&s12);
        out.view_mut((uout1, 0), s21.shape()).copy_from(&s21);
        out.view_mut((uout1, uin1), s22.shape()).copy_from(&s22);
        out
    }

    #[test]
    fn star_with_identity_interconnection_is_transparent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_ss(&mut rng, 3, 3, 2);
        let lower = PartitionedSystem::new(g.clone(), 1, 1).unwrap();
        // upper [[0, I], [I, 0]] on a 1-wide channel
        let upper = PartitionedSystem::new(
            StateSpace::gain(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])),
            1,
            1,
        )
        .unwrap();
        let s = star_product(&upper, &lower).unwrap();
        for w in [0.0, 0.3, 1.0, 7.0] {
            let a = s.sys.freq_response(w).unwrap();
            let b = g.freq_response(w).unwrap();
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn zero_uncertainty_leaves_nominal_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_ss(&mut rng, 2, 3, 3);
        let m = UncertainClosedLoop::new(PartitionedSystem::new(g.clone(), 1, 1).unwrap()).unwrap();
        let st = UncertaintyStructure::new(vec![1]).unwrap();
        let blocks = close_uncertainty(&m, &st, &DeltaPoint(vec![0.0])).unwrap();
        let nominal = m.sys.channel22();
        for w in [0.0, 0.5, 2.0] {
            let a = blocks.t_zw.freq_response(w).unwrap();
            let b = nominal.freq_response(w).unwrap();
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn star_matches_frequency_domain_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let u = random_ss(&mut rng, 2, 2, 2);
            let l = random_ss(&mut rng, 1, 2, 2);
            let up = PartitionedSystem::new(u.clone(), 1, 1).unwrap();
            let lp = PartitionedSystem::new(l.clone(), 1, 1).unwrap();
            let s = star_product(&up, &lp).unwrap();
            assert_eq!(s.sys.order(), 3);
            let w = 1.0;
            let expect = star_fr(&u.freq_response(w).unwrap(), 1, 1, &l.freq_response(w).unwrap(), 1, 1);
            assert!((s.sys.freq_response(w).unwrap() - expect).norm() < 1e-10);
        }
    }

    #[test]
    fn singular_star_reports_sigma() {
        let up = PartitionedSystem::new(StateSpace::gain(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 2.0])), 1, 1).unwrap();
        let lo = PartitionedSystem::new(StateSpace::gain(DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 1.0, 0.0])), 1, 1).unwrap();
        match star_product(&up, &lo) {
            Err(Error::IllPosed { sigma_min, .. }) => assert!(sigma_min < 1e-12),
            other => panic!("expected ill-posed, got {other:?}"),
        }
    }

    #[test]
    fn delta_matrix_examples() {
        let s = UncertaintyStructure::new(vec![1]).unwrap();
        assert_eq!(build_delta_matrix(&s, &DeltaPoint(vec![0.0])).unwrap(), DMatrix::zeros(1, 1));
        let s = UncertaintyStructure::new(vec![1, 2]).unwrap();
        let d = build_delta_matrix(&s, &DeltaPoint(vec![0.5, -1.0])).unwrap();
        assert_eq!(d, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, -1.0, -1.0])));
        let s = UncertaintyStructure::new(vec![1, 1, 1, 6, 6, 6]).unwrap();
        let d = build_delta_matrix(&s, &DeltaPoint(vec![1.0; 6])).unwrap();
        assert_eq!(d, DMatrix::identity(21, 21));
        assert!(matches!(build_delta_matrix(&s, &DeltaPoint(vec![1.0; 2])), Err(Error::Dimension { .. })));
        assert!(UncertaintyStructure::new(vec![]).is_err());
        assert!(UncertaintyStructure::new(vec![1, 0]).is_err());
    }

    #[test]
    fn delta_matrix_is_linear() {
        let s = UncertaintyStructure::new(vec![2, 1, 3]).unwrap();
        let a = DeltaPoint(vec![0.3, -0.2, 0.9]);
        let b = DeltaPoint(vec![-0.7, 0.4, 0.1]);
        let sum = DeltaPoint(a.0.iter().zip(&b.0).map(|(x, y)| 2.0 * x + y).collect());
        let lhs = build_delta_matrix(&s, &sum).unwrap();
        let rhs = build_delta_matrix(&s, &a).unwrap() * 2.0 + build_delta_matrix(&s, &b).unwrap();
        assert!((lhs - rhs).norm() < 1e-15);
    }

    #[test]
    fn realize_controller_examples() {
        let cs = ControllerStructure::static_gain(2, 1);
        let k = realize_controller(&cs, &[0.0, 0.0]).unwrap();
        assert_eq!(k.order(), 0);
        assert_eq!(k.d, DMatrix::zeros(1, 2));
        assert!(matches!(realize_controller(&cs, &[0.0]), Err(Error::Dimension { .. })));

        let tau = 0.2;
        let pid = ControllerStructure::pid(tau).unwrap();
        assert_eq!(pid.param_count(), 3);
        let k = realize_controller(&pid, &[1.0, 2.0, 3.0]).unwrap();
        let mut poles: Vec<f64> = linalg::eigenvalues(&k.a).unwrap().iter().map(|l| l.re).collect();
        poles.sort_by(f64::total_cmp);
        assert!((poles[0] + 1.0 / tau).abs() < 1e-12);
        assert!(poles[1].abs() < 1e-12);

        let nx = 3;
        let (p2, m2) = (2, 1);
        let full = ControllerStructure::full(nx, p2, m2);
        assert_eq!(full.param_count(), nx * nx + nx * p2 + m2 * nx + m2 * p2);
    }

    #[test]
    fn realize_controller_is_affine() {
        let cs = ControllerStructure::pid(0.5).unwrap();
        let k1 = [0.3, -1.0, 2.0];
        let k2 = [1.5, 0.2, -0.7];
        let sum: Vec<f64> = k1.iter().zip(&k2).map(|(a, b)| a + b).collect();
        let g = |k: &[f64]| cs.gain_matrix(k).unwrap();
        let r = g(&sum) - g(&k1) - g(&k2) + g(&[0.0; 3]);
        assert!(r.norm() < 1e-15);
    }

    #[test]
    fn close_controller_zero_feedback_restricts_plant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ch = Channels { p: 1, w: 1, u: 1, q: 1, z: 1, y: 1 };
        let plant = Plant::new(random_ss(&mut rng, 2, 3, 3), ch).unwrap();
        let k = StateSpace::gain(DMatrix::zeros(1, 1));
        let m = close_controller(&plant, &k).unwrap();
        let g = plant.sys.freq_response(0.7).unwrap();
        let h = m.sys.sys.freq_response(0.7).unwrap();
        assert!((h - g.view((0, 0), (2, 2))).norm() < 1e-12);
    }

    #[test]
    fn close_controller_scalar_algebra() {
        // dx = -x + u, y = x, u = k y  ->  A = -1 + k
        let k = 2.5;
        let sys = StateSpace::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let plant = Plant::new(sys, Channels { p: 0, w: 0, u: 1, q: 0, z: 0, y: 1 }).unwrap();
        let m = close_controller(&plant, &StateSpace::gain(DMatrix::from_element(1, 1, k))).unwrap();
        assert!((m.sys.sys.a[(0, 0)] - (-1.0 + k)).abs() < 1e-15);
    }

    #[test]
    fn close_controller_ill_posed() {
        let sys = StateSpace::gain(DMatrix::from_element(1, 1, 2.0));
        let plant = Plant::new(sys, Channels { p: 0, w: 0, u: 1, q: 0, z: 0, y: 1 }).unwrap();
        let r = close_controller(&plant, &StateSpace::gain(DMatrix::from_element(1, 1, 0.5)));
        assert!(matches!(r, Err(Error::IllPosed { .. })));
    }

    #[test]
    fn loop_closures_commute() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let st = UncertaintyStructure::new(vec![1, 2]).unwrap();
        let ch = Channels { p: 3, w: 1, u: 1, q: 3, z: 2, y: 1 };
        let plant = Plant::new(random_ss(&mut rng, 3, 5, 6).scaled_d(0.3), ch).unwrap();
        let k = random_ss(&mut rng, 1, 1, 1).scaled_d(0.3);
        let delta = DeltaPoint(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        let a = close_uncertainty(&close_controller(&plant, &k).unwrap(), &st, &delta).unwrap().t_zw;
        let b = upper_then_lower(&plant, &st, &delta, &k);
        for _ in 0..10 {
            let w = 10f64.powf(rng.gen_range(-2.0..2.0));
            assert!((a.freq_response(w).unwrap() - b.freq_response(w).unwrap()).norm() < 1e-10);
        }
    }

    #[test]
    fn close_uncertainty_scalar_examples() {
        // D = 0: closed A = A + C delta B (here B_p = 1, C_q = 1)
        let m = scalar_loop(-1.0, 1.0, 1.0, 0.0);
        let st = UncertaintyStructure::new(vec![1]).unwrap();
        let blk = close_uncertainty(&m, &st, &DeltaPoint(vec![0.3])).unwrap();
        assert!((blk.t_zw.a[(0, 0)] - (-1.0 + 0.3)).abs() < 1e-15);
        // D = 0.5, delta = 1: A = -1 + 1/(1 - 0.5) = 1
        let m = scalar_loop(-1.0, 1.0, 1.0, 0.5);
        let blk = close_uncertainty(&m, &st, &DeltaPoint(vec![1.0])).unwrap();
        assert!((blk.t_zw.a[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((closed_loop_a(&m, &st, &DeltaPoint(vec![1.0])).unwrap()[(0, 0)] - 1.0).abs() < 1e-14);
        assert_eq!(closed_loop_a(&m, &st, &DeltaPoint(vec![0.0])).unwrap()[(0, 0)], -1.0);
        // singular at delta = 2
        assert!(matches!(close_uncertainty(&m, &st, &DeltaPoint(vec![2.0])), Err(Error::IllPosed { .. })));
        assert!(matches!(closed_loop_a(&m, &st, &DeltaPoint(vec![2.0])), Err(Error::IllPosed { .. })));
    }

    #[test]
    fn closed_loop_a_matches_close_uncertainty() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let st = UncertaintyStructure::new(vec![2, 1]).unwrap();
        for _ in 0..20 {
            let g = random_ss(&mut rng, 4, 4, 4).scaled_d(0.4);
            let m = UncertainClosedLoop::new(PartitionedSystem::new(g, 3, 3).unwrap()).unwrap();
            let delta = DeltaPoint(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            let a1 = closed_loop_a(&m, &st, &delta).unwrap();
            let a2 = close_uncertainty(&m, &st, &delta).unwrap().t_zw.a;
            assert!((a1 - a2).abs().max() < 1e-12);
        }
    }

    #[test]
    fn closed_loop_a_affine_per_coordinate_without_feedthrough() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let st = UncertaintyStructure::new(vec![1, 2]).unwrap();
        let g = random_ss(&mut rng, 3, 4, 4).scaled_d(0.0);
        let m = UncertainClosedLoop::new(PartitionedSystem::new(g, 3, 3).unwrap()).unwrap();
        let a = |d0: f64| closed_loop_a(&m, &st, &DeltaPoint(vec![d0, 0.4])).unwrap();
        let mid = a(0.25);
        let avg = (a(-0.5) + a(1.0)) * 0.5;
        assert!((mid - avg).norm() < 1e-12);
    }

    #[test]
    fn augmented_static_closure_matches_dynamic_controller() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ch = Channels { p: 2, w: 1, u: 1, q: 2, z: 1, y: 2 };
        let plant = Plant::new(random_ss(&mut rng, 3, 4, 5).scaled_d(0.3), ch).unwrap();
        let st = UncertaintyStructure::new(vec![1, 1]).unwrap();
        let cs = ControllerStructure::full(2, 2, 1);
        let kappa: Vec<f64> = (0..cs.param_count()).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let delta = DeltaPoint(vec![0.3, -0.6]);
        let lft = ParametricLft::controller(&plant, &cs, &st, &delta).unwrap();
        let via_aug = lft.close(&kappa).unwrap().perf;
        let k = realize_controller(&cs, &kappa).unwrap();
        let direct = close_uncertainty(&close_controller(&plant, &k).unwrap(), &st, &delta).unwrap().t_zw;
        for w in [0.0, 0.4, 3.0] {
            assert!((via_aug.freq_response(w).unwrap() - direct.freq_response(w).unwrap()).norm() < 1e-10);
        }
        assert!((via_aug.a - direct.a).norm() < 1e-12);
    }
}
