//! The projector `T*` behind the limiting chi-square laws.
//!
//! Under the null, the standardized residual `√N D^{-1/2}(m̂ − m)/N` has
//! covariance `T* = I − A₀ − D^{1/2} X H Xᵀ D^{1/2}`, an orthogonal projector
//! whose trace is the goodness-of-fit degrees of freedom. For a nested pair
//! `M_{b+1} ⊂ M_b` the relevant projector is `T*_b = K_b − K_{b+1}` with
//!
//! ```text
//! K_j = A_{X_j} − A_{X_j} D^{1/2} L_j (L_jᵀ D^{1/2} A_{X_j} D^{1/2} L_j)⁻¹ L_jᵀ D^{1/2} A_{X_j}
//! ```
//!
//! where `A_X` is the `D`-weighted projector onto `𝒞(X)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimate::asymptotics;
use crate::linalg;
use crate::model::LmlcSpec;

#[derive(Debug, Clone)]
pub struct ProjectorBundle {
    /// Projector onto the sampling block `D^{1/2} X₀`.
    pub a0: DMatrix<f64>,
    pub tstar: DMatrix<f64>,
    /// `K_b` and `K_{b+1}` for nested bundles.
    pub k_b: Option<DMatrix<f64>>,
    pub k_b1: Option<DMatrix<f64>>,
}

impl ProjectorBundle {
    /// `trace(T*)`, the degrees of freedom of the limiting law.
    pub fn trace(&self) -> f64 {
        self.tstar.trace()
    }

    /// Nearest integer to the trace, if within `tol`.
    pub fn integral_trace(&self, tol: f64) -> Option<usize> {
        let tr = self.trace();
        let r = tr.round();
        ((tr - r).abs() <= tol && r >= 0.0).then_some(r as usize)
    }
}

fn m_star(spec: &LmlcSpec, theta: &DVector<f64>, total: f64) -> Result<DVector<f64>> {
    if !(total > 0.0) {
        return Err(Error::domain("N must be positive"));
    }
    Ok(spec.mean_vector(theta)? / total)
}

fn a0(spec: &LmlcSpec, ms: &DVector<f64>) -> Result<DMatrix<f64>> {
    linalg::weighted_projector(&spec.x0(), ms)
        .ok_or_else(|| Error::domain("sampling block is singular"))
}

/// `T*` of a single model at `θ`.
pub fn tstar(spec: &LmlcSpec, theta: &DVector<f64>, total: f64) -> Result<ProjectorBundle> {
    let info = asymptotics(spec, theta, total)?;
    let ms = &info.m_star;
    let sq = ms.map(f64::sqrt);
    let xs = linalg::scale_rows(spec.design(), &sq);
    let middle = &xs * &info.h_matrix * xs.transpose();
    let a0 = a0(spec, ms)?;
    let k = spec.k();
    let tstar = linalg::symmetrize(&(DMatrix::identity(k, k) - &a0 - middle));
    Ok(ProjectorBundle {
        a0,
        tstar,
        k_b: None,
        k_b1: None,
    })
}

/// `K_j` for one model at the weights `ms`.
fn k_matrix(spec: &LmlcSpec, ms: &DVector<f64>) -> Result<DMatrix<f64>> {
    let ax = linalg::weighted_projector(spec.design(), ms)
        .ok_or_else(|| Error::domain("X^T D X is singular"))?;
    let l = spec.l_matrix();
    if l.ncols() == 0 {
        return Ok(ax);
    }
    let m = &ax * linalg::scale_rows(&l, &ms.map(f64::sqrt));
    let inner = linalg::symmetrize(&(m.transpose() * &m));
    if linalg::rank(&inner) < inner.nrows() {
        return Err(Error::DegenerateConstraints(
            "L^T D^1/2 A_X D^1/2 L is singular".into(),
        ));
    }
    let inv = linalg::spd_inverse(&inner)
        .ok_or_else(|| Error::DegenerateConstraints("L^T D^1/2 A_X D^1/2 L is singular".into()))?;
    Ok(linalg::symmetrize(&(ax - &m * inv * m.transpose())))
}

/// `T*_b = K_b − K_{b+1}` for `inner ⊂ outer`, evaluated at `θ` of the inner
/// model.
pub fn tstar_nested(
    outer: &LmlcSpec,
    inner: &LmlcSpec,
    theta_inner: &DVector<f64>,
    total: f64,
) -> Result<ProjectorBundle> {
    if outer.k() != inner.k() {
        return Err(Error::dim("tstar_nested cell counts", outer.k(), inner.k()));
    }
    let ms = m_star(inner, theta_inner, total)?;
    let k_b = k_matrix(outer, &ms)?;
    let k_b1 = k_matrix(inner, &ms)?;
    Ok(ProjectorBundle {
        a0: a0(inner, &ms)?,
        tstar: linalg::symmetrize(&(&k_b - &k_b1)),
        k_b: Some(k_b),
        k_b1: Some(k_b1),
    })
}
