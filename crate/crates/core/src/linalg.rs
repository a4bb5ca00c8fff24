//! Small dense linear-algebra helpers shared by the model, estimation and
//! inference modules. Everything here works on `nalgebra` dynamic matrices.

use nalgebra::{DMatrix, DVector};

/// Singular values below `RANK_RTOL * σ_max` count as zero.
pub const RANK_RTOL: f64 = 1e-9;

/// Numerical rank from the singular values.
pub fn rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    if max == 0.0 || !max.is_finite() {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_RTOL * max).count()
}

/// Horizontal concatenation `[a, b]`.
pub fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows(), "hcat row mismatch");
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// `𝒞(inner) ⊂ 𝒞(outer)`, decided by `rank([outer, inner]) == rank(outer)`.
pub fn column_space_contains(outer: &DMatrix<f64>, inner: &DMatrix<f64>) -> bool {
    if inner.ncols() == 0 {
        return true;
    }
    rank(&hcat(outer, inner)) == rank(outer)
}

/// Inverse of a symmetric positive definite matrix; `None` when singular.
///
/// Cholesky first, LU as a fallback for matrices that are numerically on the
/// edge of definiteness. The result is symmetrized.
pub fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if a.nrows() == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    let inv = match a.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => {
            if rank(a) < a.nrows() {
                return None;
            }
            a.clone().lu().try_inverse()?
        }
    };
    Some(symmetrize(&inv))
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Minimum-norm least-squares solution of `a x ≈ b`.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    svd.solve(b, RANK_RTOL * max.max(f64::MIN_POSITIVE))
        .expect("svd computed with both U and V")
}

/// `diag(v) · a`.
pub fn scale_rows(a: &DMatrix<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= v[i];
    }
    out
}

/// Orthogonal projector onto `𝒞(diag(√w) · x)`:
/// `D^{1/2} X (Xᵀ D X)⁻¹ Xᵀ D^{1/2}` with `D = diag(w)`.
///
/// `None` when `Xᵀ D X` is singular. An empty `x` gives the zero matrix.
pub fn weighted_projector(x: &DMatrix<f64>, w: &DVector<f64>) -> Option<DMatrix<f64>> {
    let k = x.nrows();
    if x.ncols() == 0 {
        return Some(DMatrix::zeros(k, k));
    }
    let sqrt_w = w.map(f64::sqrt);
    let xs = scale_rows(x, &sqrt_w);
    let gram = xs.transpose() * &xs;
    let inv = spd_inverse(&gram)?;
    Some(symmetrize(&(&xs * inv * xs.transpose())))
}

/// Largest absolute entry, `0` for an empty matrix.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Infinity norm of a vector, `0` for an empty one.
pub fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// `‖a² − a‖∞` (entrywise max).
pub fn idempotency_error(a: &DMatrix<f64>) -> f64 {
    max_abs(&(a * a - a))
}

/// `‖a − aᵀ‖∞` (entrywise max).
pub fn symmetry_error(a: &DMatrix<f64>) -> f64 {
    max_abs(&(a - a.transpose()))
}

/// Block-diagonal direct sum `a ⊕ b`.
pub fn direct_sum(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), (b.nrows(), b.ncols()))
        .copy_from(b);
    out
}
