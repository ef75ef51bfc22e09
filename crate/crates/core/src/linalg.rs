//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// `(m + mᵀ) / 2`, in place.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest absolute entry; NaN propagates as infinity so callers can treat it as blow-up.
pub fn max_norm(m: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0_f64;
    for v in m.iter() {
        if !v.is_finite() {
            return f64::INFINITY;
        }
        acc = acc.max(libm::fabs(*v));
    }
    acc
}

/// Largest absolute entry of `m - mᵀ`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut acc = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            acc = acc.max(libm::fabs(m[(i, j)] - m[(j, i)]));
        }
    }
    acc
}

/// Eigenvalues of the symmetric part, ascending. `None` if any is non-finite.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Option<DVector<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    let mut e = s.symmetric_eigenvalues();
    if e.iter().any(|v| !v.is_finite()) {
        return None;
    }
    e.as_mut_slice().sort_by(f64::total_cmp);
    Some(e)
}

pub fn min_eig(m: &DMatrix<f64>) -> Option<f64> {
    sym_eigenvalues(m).map(|e| e[0])
}

pub fn max_eig(m: &DMatrix<f64>) -> Option<f64> {
    sym_eigenvalues(m).map(|e| e[e.len() - 1])
}

/// Symmetric factor `S` with `S Sᵀ = m` for a PSD matrix; negative
/// eigenvalues from roundoff are clipped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = s.symmetric_eigen();
    let mut d = eig.eigenvalues.clone();
    for v in d.iter_mut() {
        *v = libm::sqrt(v.max(0.0));
    }
    let q = &eig.eigenvectors;
    Some(q * DMatrix::from_diagonal(&d) * q.transpose())
}

/// 2-norm condition number from the singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Column vector wrapped as an `n×1` matrix.
pub fn col(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

/// `⟨m x, y⟩` for dense `m`.
pub fn quad(m: &DMatrix<f64>, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    (m * x).dot(y)
}

/// `out += m · x` where `m` is column-major with `rows` rows.
#[inline]
pub fn gemv_acc(out: &mut [f64], m: &[f64], x: &[f64]) {
    let rows = out.len();
    for (j, xj) in x.iter().enumerate() {
        if *xj == 0.0 {
            continue;
        }
        let c = &m[j * rows..(j + 1) * rows];
        for (o, v) in out.iter_mut().zip(c) {
            *o += v * xj;
        }
    }
}
