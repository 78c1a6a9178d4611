//! Dense complex helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;
pub type RVec = DVector<f64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .fold(0.0, |acc, (x, y)| acc.max((x - y).norm()))
}

/// Largest entrywise deviation from Hermitian symmetry.
pub fn hermitian_defect(m: &CMat) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn real_diag(d: &[f64]) -> CMat {
    CMat::from_diagonal(&CVec::from_iterator(d.len(), d.iter().map(|&x| c(x, 0.0))))
}

/// Column-major stacking of a matrix.
pub fn vec_cols(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

pub fn unvec(v: &CVec, rows: usize, cols: usize) -> CMat {
    assert_eq!(v.len(), rows * cols);
    CMat::from_column_slice(rows, cols, v.as_slice())
}

pub fn conj_vec(v: &CVec) -> CVec {
    v.map(|z| z.conj())
}

/// Rotates `v` so that its largest-magnitude entry is real and positive.
/// The first entry within a relative 1e-9 of the maximum wins, which keeps
/// the choice stable for eigenvectors with mirrored magnitudes.
pub fn fix_phase(mut v: CVec) -> CVec {
    let peak = v.iter().fold(0.0f64, |acc, z| acc.max(z.norm()));
    if peak == 0.0 {
        return v;
    }
    let idx = v
        .iter()
        .position(|z| z.norm() >= peak * (1.0 - 1e-9))
        .unwrap_or(0);
    let rot = v[idx].conj() / v[idx].norm();
    v *= rot;
    v[idx] = c(v[idx].re, 0.0);
    v
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted
/// descending and each eigenvector phase-normalized by [`fix_phase`].
pub fn hermitian_eigen_desc(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    let eig = nalgebra::SymmetricEigen::new(hermitian_part(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = fix_phase(eig.eigenvectors.column(src).into_owned());
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

/// Thin singular value decomposition with singular values sorted descending.
pub struct Svd {
    pub u: CMat,
    pub singular_values: Vec<f64>,
    /// Right singular vectors as columns.
    pub v: CMat,
}

pub fn svd_desc(m: &CMat) -> Result<Svd> {
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidInput("non-finite matrix entry".into()));
    }
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return Ok(Svd {
            u: CMat::zeros(m.nrows(), 0),
            singular_values: Vec::new(),
            v: CMat::zeros(m.ncols(), 0),
        });
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.ok_or_else(|| Error::numeric("svd", "missing U"))?;
    let v_t = svd.v_t.ok_or_else(|| Error::numeric("svd", "missing V"))?;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut su = CMat::zeros(m.nrows(), k);
    let mut sv = CMat::zeros(m.ncols(), k);
    let mut s = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        su.set_column(dst, &u.column(src));
        sv.set_column(dst, &v_t.row(src).adjoint());
        s.push(svd.singular_values[src]);
    }
    Ok(Svd {
        u: su,
        singular_values: s,
        v: sv,
    })
}

/// Solves `a x = b` for Hermitian positive definite `a`.
pub fn hpd_solve(a: &CMat, b: &CMat) -> Option<CMat> {
    let chol = nalgebra::Cholesky::new(hermitian_part(a))?;
    Some(chol.solve(b))
}

pub fn hpd_inverse(a: &CMat) -> Option<CMat> {
    let chol = nalgebra::Cholesky::new(hermitian_part(a))?;
    Some(chol.inverse())
}

/// `log2 det(a)` for Hermitian positive definite `a`.
pub fn hpd_log2_det(a: &CMat) -> Option<f64> {
    let chol = nalgebra::Cholesky::new(hermitian_part(a))?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        acc += 2.0 * l[(i, i)].re.log2();
    }
    Some(acc)
}

pub fn trace_re(m: &CMat) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

pub fn frob_norm_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// `‖m^H m − I‖_max` for a matrix with orthonormal columns.
pub fn semi_unitary_defect(m: &CMat) -> f64 {
    max_abs_diff(&(m.adjoint() * m), &identity(m.ncols()))
}
