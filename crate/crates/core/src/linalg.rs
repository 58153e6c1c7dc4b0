//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;

/// Relative threshold below which an interconnection matrix counts as singular.
pub const SINGULAR_RATIO: f64 = 1e-12;

/// Assemble a dense matrix from blocks placed on a grid of row/column widths.
/// Blocks not listed are zero.
pub fn blocks(rows: &[usize], cols: &[usize], entries: &[(usize, usize, &DMatrix<f64>)]) -> DMatrix<f64> {
    let row_off: Vec<usize> = offsets(rows);
    let col_off: Vec<usize> = offsets(cols);
    let mut out = DMatrix::zeros(rows.iter().sum(), cols.iter().sum());
    for &(i, j, m) in entries {
        debug_assert_eq!(m.shape(), (rows[i], cols[j]));
        if m.nrows() > 0 && m.ncols() > 0 {
            out.view_mut((row_off[i], col_off[j]), (rows[i], cols[j]))
                .copy_from(m);
        }
    }
    out
}

fn offsets(widths: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    widths
        .iter()
        .map(|w| {
            let o = acc;
            acc += w;
            o
        })
        .collect()
}

pub fn to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(|x| C64::new(x, 0.0))
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Eigenvalues of a real square matrix via the real Schur form.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<C64>> {
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    if !all_finite(a) {
        return Err(Error::NonFinite("eigenvalue input".into()));
    }
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn spectral_abscissa_value(a: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Singular value decomposition with singular values sorted in decreasing
/// order. Returns `(sigma, U, V)` with `M = U diag(sigma) V^H`.
pub fn svd_sorted(m: &CMat) -> (Vec<f64>, CMat, CMat) {
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return (Vec::new(), CMat::zeros(m.nrows(), 0), CMat::zeros(m.ncols(), 0));
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut us = CMat::zeros(m.nrows(), k);
    let mut vs = CMat::zeros(m.ncols(), k);
    for (dst, &src) in order.iter().enumerate() {
        us.set_column(dst, &u.column(src));
        vs.set_column(dst, &v_t.row(src).transpose().map(|z| z.conj()));
    }
    (sigma, us, vs)
}

/// Largest singular value of a complex matrix (0 for empty matrices).
pub fn sigma_max(m: &CMat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .fold(0.0_f64, |acc, &s| acc.max(s))
}

pub fn sigma_max_real(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .fold(0.0_f64, |acc, &s| acc.max(s))
}

/// Extreme singular values `(sigma_min, sigma_max)` of a real square matrix.
pub fn sigma_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (1.0, 1.0);
    }
    let s = m.clone().singular_values();
    let hi = s.iter().fold(0.0_f64, |a, &x| a.max(x));
    let lo = s.iter().fold(f64::INFINITY, |a, &x| a.min(x));
    (lo, hi)
}

/// Fails with [`Error::IllPosed`] when `sigma_min(m) < 1e-12 * sigma_max(m)`.
pub fn ensure_invertible(m: &DMatrix<f64>, context: &str) -> Result<()> {
    let (lo, hi) = sigma_extremes(m);
    if !(lo >= SINGULAR_RATIO * hi) || hi == 0.0 {
        return Err(Error::IllPosed {
            context: context.into(),
            sigma_min: lo,
        });
    }
    Ok(())
}

pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() == 0 {
        return Ok(DMatrix::zeros(0, b.ncols()));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Numerical("singular linear system".into()))
}

pub fn solve_c(a: &CMat, b: &CMat) -> Result<CMat> {
    if a.nrows() == 0 {
        return Ok(CMat::zeros(0, b.ncols()));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Numerical("singular complex linear system".into()))
}

pub fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    solve(a, &DMatrix::identity(a.nrows(), a.nrows()))
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

/// Orthonormal basis of the largest-eigenvalue eigenspace of a Hermitian
/// matrix, returned as `(lambda_max, eigenvector)`.
pub fn hermitian_top(h: &CMat) -> (f64, DVector<C64>) {
    let herm = (h + h.adjoint()) * C64::new(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let (mut best, mut idx) = (f64::NEG_INFINITY, 0);
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > best {
            best = l;
            idx = i;
        }
    }
    (best, eig.eigenvectors.column(idx).into_owned())
}
