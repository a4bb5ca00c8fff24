//! Minimum φ-divergence estimation under the model constraints and the
//! asymptotic covariance matrices of the estimator.
//!
//! The estimator minimizes `D_φ(n, m(θ))` subject to `Lᵀ m(θ) = d(n)`. The
//! solver is a damped Newton method on the KKT system of the Lagrangian
//!
//! ```text
//! D_φ(n, m(θ)) + μᵀ (Lᵀ m(θ) − d(n))
//! ```
//!
//! with exact first and second derivatives. With `x_i = n_i / m_i`,
//!
//! ```text
//! ∇_θ D  = Xᵀ (m ⊙ s),          s_i = φ(x_i) − x_i φ'(x_i)
//! ∇²_θ L = Xᵀ diag(m ⊙ (s + x² φ''(x) + L μ)) X
//! J      = Lᵀ diag(m) X
//! ```
//!
//! When the exact Hessian gives a singular KKT matrix or no descent on the
//! residual norm, the step is recomputed with the scoring weights `m` in place
//! of the Hessian weights.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::divergence::{divergence_vec, PhiFunction};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{validate_spec, LmlcSpec};
use crate::table::ContingencyTable;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Bound on the scaled KKT residual, see [`FitResult::kkt_residual`].
    pub kkt_tolerance: f64,
    pub step_halving_max: usize,
    /// Added to zero cells before taking logs for the starting point.
    pub zero_cell_smoothing: f64,
    /// Run [`validate_spec`] against the table before fitting.
    pub validate: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            kkt_tolerance: 1e-8,
            step_halving_max: 30,
            zero_cell_smoothing: 0.5,
            validate: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: DVector<f64>,
    /// `exp(X θ̂)`.
    pub m_hat: DVector<f64>,
    /// Lagrange multipliers, one per column of `L`.
    pub multipliers: DVector<f64>,
    /// `D_φ(n, m̂)`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `max(‖∇D + Jᵀμ‖∞ / (1 + N), ‖Lᵀm̂ − d‖∞ / (1 + ‖d‖∞))`.
    pub kkt_residual: f64,
    pub phi: PhiFunction,
    pub spec: Arc<LmlcSpec>,
}

/// Everything the iteration needs at one `(θ, μ)`.
struct State {
    theta: DVector<f64>,
    mu: DVector<f64>,
    m: DVector<f64>,
    /// `s + x² φ''(x)` per cell.
    hess_weight: DVector<f64>,
    grad: DVector<f64>,
    jac: DMatrix<f64>,
    feas: DVector<f64>,
    objective: f64,
    merit: f64,
    kkt: f64,
}

struct Problem<'a> {
    x: &'a DMatrix<f64>,
    l: DMatrix<f64>,
    n: DVector<f64>,
    d: DVector<f64>,
    phi: &'a PhiFunction,
    stat_scale: f64,
    feas_scale: f64,
}

impl Problem<'_> {
    fn evaluate(&self, theta: DVector<f64>, mu: DVector<f64>) -> Option<State> {
        let m = (self.x * &theta).map(f64::exp);
        if m.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return None;
        }
        let k = m.len();
        let mut s = DVector::zeros(k);
        let mut hess_weight = DVector::zeros(k);
        let mut objective = 0.0;
        for i in 0..k {
            let x = self.n[i] / m[i];
            let value = self.phi.value(x);
            s[i] = if x == 0.0 {
                value
            } else {
                value - x * self.phi.derivative(x)
            };
            hess_weight[i] = s[i] + self.phi.curvature(x);
            objective += m[i] * value;
        }
        let ms = m.component_mul(&s);
        let grad = self.x.transpose() * &ms;
        let lt = self.l.transpose();
        let jac = &lt * linalg::scale_rows(self.x, &m);
        let feas = &lt * &m - &self.d;
        let stat = &grad + jac.transpose() * &mu;
        if !objective.is_finite() || stat.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let stat_n = linalg::max_abs_vec(&stat) / self.stat_scale;
        let feas_n = linalg::max_abs_vec(&feas) / self.feas_scale;
        let merit =
            ((stat / self.stat_scale).norm_squared() + (&feas / self.feas_scale).norm_squared())
                .sqrt();
        Some(State {
            theta,
            mu,
            m,
            hess_weight,
            grad,
            jac,
            feas,
            objective,
            merit,
            kkt: stat_n.max(feas_n),
        })
    }

    /// Newton direction for `(θ, μ)`; `scoring` swaps the Hessian weights for `m`.
    fn direction(&self, st: &State, scoring: bool) -> Option<(DVector<f64>, DVector<f64>)> {
        let t = st.theta.len();
        let q = st.mu.len();
        let w = if scoring {
            st.m.clone()
        } else {
            let lmu = &self.l * &st.mu;
            let w = st.m.component_mul(&(&st.hess_weight + lmu));
            if w.iter().any(|v| *v <= 0.0) {
                return None;
            }
            w
        };
        let xw = linalg::scale_rows(self.x, &w);
        let h = self.x.transpose() * xw;
        let mut kkt = DMatrix::zeros(t + q, t + q);
        kkt.view_mut((0, 0), (t, t)).copy_from(&h);
        kkt.view_mut((0, t), (t, q)).copy_from(&st.jac.transpose());
        kkt.view_mut((t, 0), (q, t)).copy_from(&st.jac);
        let mut rhs = DVector::zeros(t + q);
        rhs.rows_mut(0, t)
            .copy_from(&-(&st.grad + st.jac.transpose() * &st.mu));
        rhs.rows_mut(t, q).copy_from(&-&st.feas);
        let sol = kkt.lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((sol.rows(0, t).into_owned(), sol.rows(t, q).into_owned()))
    }

    fn line_search(&self, st: &State, dir: &(DVector<f64>, DVector<f64>), halvings: usize) -> Option<State> {
        let mut step = 1.0;
        for _ in 0..=halvings {
            let theta = &st.theta + &dir.0 * step;
            let mu = &st.mu + &dir.1 * step;
            if let Some(next) = self.evaluate(theta, mu) {
                if next.merit < st.merit {
                    return Some(next);
                }
            }
            step *= 0.5;
        }
        None
    }

    /// Least-squares multipliers for the current gradient.
    fn fit_multipliers(&self, theta: &DVector<f64>) -> DVector<f64> {
        let q = self.l.ncols();
        let zero = DVector::zeros(q);
        match self.evaluate(theta.clone(), zero.clone()) {
            Some(st) if q > 0 => linalg::lstsq(&st.jac.transpose(), &-&st.grad),
            _ => zero,
        }
    }
}

/// Minimum φ-divergence estimate of `spec` from the table `n`.
///
/// Non-convergence is reported through [`FitResult::converged`], never as an
/// error. Errors are raised for invalid inputs, a rank-deficient constraint
/// Jacobian and an objective that is `+∞` for every `θ`.
pub fn fit(
    spec: &LmlcSpec,
    n: &ContingencyTable,
    phi: &PhiFunction,
    options: &FitOptions,
) -> Result<FitResult> {
    fit_shared(Arc::new(spec.clone()), n, phi, options)
}

/// [`fit`] for a spec that is already shared.
pub fn fit_shared(
    spec: Arc<LmlcSpec>,
    n: &ContingencyTable,
    phi: &PhiFunction,
    options: &FitOptions,
) -> Result<FitResult> {
    if n.k() != spec.k() {
        return Err(Error::dim("fit table cells", spec.k(), n.k()));
    }
    if options.max_iterations == 0
        || !(options.kkt_tolerance > 0.0)
        || options.step_halving_max == 0
        || !(options.zero_cell_smoothing > 0.0)
    {
        return Err(Error::domain("fit options must all be positive"));
    }
    if options.validate {
        let violations = validate_spec(&spec, Some(n));
        if !violations.is_empty() {
            let msg: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(Error::domain(format!("invalid model: {}", msg.join("; "))));
        }
    }

    let nv = n.to_vector();
    let d = spec.d_vector(&nv)?;
    let total = nv.sum();
    let problem = Problem {
        x: spec.design(),
        l: spec.l_matrix(),
        d: d.clone(),
        n: nv.clone(),
        phi,
        stat_scale: 1.0 + total,
        feas_scale: 1.0 + linalg::max_abs_vec(&d),
    };

    let log_start = nv.map(|c| {
        if c > 0.0 {
            c.ln()
        } else {
            options.zero_cell_smoothing.ln()
        }
    });
    let theta0 = linalg::lstsq(spec.design(), &log_start);

    // m > 0 always, so the objective is infinite at one θ iff at every θ.
    let m0 = (spec.design() * &theta0).map(f64::exp);
    let obj0 = divergence_vec(&nv, &m0, phi)?;
    if obj0 == f64::INFINITY {
        return Err(Error::InfeasibleObjective(format!(
            "D_{phi}(n, m) is infinite for every m > 0 (zero cells with phi(0) = inf)"
        )));
    }

    let q = problem.l.ncols();
    if q > 0 {
        let jac = problem.l.transpose() * linalg::scale_rows(spec.design(), &m0);
        if linalg::rank(&jac) < q {
            return Err(Error::DegenerateConstraints(format!(
                "constraint Jacobian has rank {} < c + r = {q}",
                linalg::rank(&jac)
            )));
        }
    }

    let mut result = newton(&problem, theta0.clone(), options);
    if !result.as_ref().map_or(false, |r| r.0.kkt <= options.kkt_tolerance) && !phi.is_kullback()
    {
        // Retry from the maximum likelihood fit, which is usually much closer.
        let kl = PhiFunction::kullback();
        let kl_problem = Problem { phi: &kl, ..problem_clone(&problem) };
        if let Some((kl_state, _)) = newton(&kl_problem, theta0, options) {
            if let Some(retry) = newton(&problem, kl_state.theta, options) {
                let better = result.as_ref().map_or(true, |r| retry.0.kkt < r.0.kkt);
                if better {
                    result = Some(retry);
                }
            }
        }
    }

    let (state, iterations) = result.ok_or_else(|| {
        Error::InfeasibleObjective("objective not finite at the starting point".into())
    })?;
    let converged = state.kkt <= options.kkt_tolerance;
    if !converged {
        log::debug!(
            "fit did not converge: kkt residual {:.3e} after {iterations} iterations",
            state.kkt
        );
    }
    Ok(FitResult {
        theta_hat: state.theta,
        m_hat: state.m,
        multipliers: state.mu,
        objective: state.objective,
        iterations,
        converged,
        kkt_residual: state.kkt,
        phi: phi.clone(),
        spec,
    })
}

fn problem_clone<'a>(p: &Problem<'a>) -> Problem<'a> {
    Problem {
        x: p.x,
        l: p.l.clone(),
        n: p.n.clone(),
        d: p.d.clone(),
        phi: p.phi,
        stat_scale: p.stat_scale,
        feas_scale: p.feas_scale,
    }
}

/// Run the damped Newton iteration. Returns the last state and the number of
/// iterations, or `None` when the start is not evaluable.
fn newton(problem: &Problem, theta0: DVector<f64>, options: &FitOptions) -> Option<(State, usize)> {
    let mu0 = problem.fit_multipliers(&theta0);
    let mut st = problem
        .evaluate(theta0.clone(), mu0)
        .or_else(|| problem.evaluate(theta0, DVector::zeros(problem.l.ncols())))?;
    for iter in 0..options.max_iterations {
        if st.kkt <= options.kkt_tolerance {
            // One extra Newton step is nearly free in the quadratic regime.
            if let Some(dir) = problem.direction(&st, false) {
                if let Some(next) = problem.line_search(&st, &dir, 0) {
                    return Some((next, iter + 1));
                }
            }
            return Some((st, iter));
        }
        let mut next = None;
        for scoring in [false, true] {
            if let Some(dir) = problem.direction(&st, scoring) {
                next = problem.line_search(&st, &dir, options.step_halving_max);
                if next.is_some() {
                    break;
                }
            }
        }
        match next {
            Some(n) => st = n,
            None => return Some((st, iter + 1)),
        }
    }
    Some((st, options.max_iterations))
}

// ---------------------------------------------------------------------------
// Asymptotics

#[derive(Debug, Clone)]
pub struct AsymptoticInfo {
    /// `I_F(θ) = Xᵀ D_{m*} X`.
    pub fisher: DMatrix<f64>,
    /// `B(θ) = Xᵀ D_{m*} L`.
    pub b_matrix: DMatrix<f64>,
    /// `H = I_F⁻¹ − I_F⁻¹ B (Bᵀ I_F⁻¹ B)⁻¹ Bᵀ I_F⁻¹`.
    pub h_matrix: DMatrix<f64>,
    /// `Σ = D_{m*} X H Xᵀ D_{m*}`.
    pub sigma: DMatrix<f64>,
    /// `m(θ) / N`.
    pub m_star: DVector<f64>,
}

fn m_star(spec: &LmlcSpec, theta: &DVector<f64>, total: f64) -> Result<DVector<f64>> {
    if !(total > 0.0) {
        return Err(Error::domain("N must be positive"));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("theta must be finite"));
    }
    let m = spec.mean_vector(theta)? / total;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("mean vector overflow"));
    }
    Ok(m)
}

/// Asymptotic covariance of `√N (θ̂ − θ)` and of `√N (m̂ − m)/N` at `θ`.
pub fn asymptotics(spec: &LmlcSpec, theta: &DVector<f64>, total: f64) -> Result<AsymptoticInfo> {
    let ms = m_star(spec, theta, total)?;
    let x = spec.design();
    let dx = linalg::scale_rows(x, &ms);
    let fisher = linalg::symmetrize(&(x.transpose() * &dx));
    let fisher_inv = linalg::spd_inverse(&fisher)
        .ok_or_else(|| Error::domain("Fisher information is singular"))?;
    let b_matrix = dx.transpose() * spec.l_matrix();
    let h_matrix = if b_matrix.ncols() == 0 {
        fisher_inv
    } else {
        let fib = &fisher_inv * &b_matrix;
        let inner = linalg::symmetrize(&(b_matrix.transpose() * &fib));
        if linalg::rank(&inner) < inner.nrows() {
            return Err(Error::DegenerateConstraints(
                "B^T I_F^-1 B is singular".into(),
            ));
        }
        let inner_inv = linalg::spd_inverse(&inner).ok_or_else(|| {
            Error::DegenerateConstraints("B^T I_F^-1 B is singular".into())
        })?;
        linalg::symmetrize(&(&fisher_inv - &fib * inner_inv * fib.transpose()))
    };
    let sigma = linalg::symmetrize(&(&dx * &h_matrix * dx.transpose()));
    Ok(AsymptoticInfo {
        fisher,
        b_matrix,
        h_matrix,
        sigma,
        m_star: ms,
    })
}

/// `H` for a design arranged as `X = (L, W)`:
/// `(Xᵀ D X)⁻¹ − (Lᵀ D L)⁻¹ ⊕ 0`.
pub fn h_matrix_partitioned(spec: &LmlcSpec, theta: &DVector<f64>, total: f64) -> Result<DMatrix<f64>> {
    let l = spec.l_matrix();
    let q = l.ncols();
    let x = spec.design();
    if q > x.ncols()
        || linalg::max_abs(&(x.columns(0, q).into_owned() - &l)) > 1e-12
    {
        return Err(Error::domain(
            "design is not arranged as X = (L, W); see LmlcSpec::with_leading_constraints",
        ));
    }
    let ms = m_star(spec, theta, total)?;
    let gram = |a: &DMatrix<f64>| linalg::symmetrize(&(a.transpose() * linalg::scale_rows(a, &ms)));
    let xx = linalg::spd_inverse(&gram(x)).ok_or_else(|| Error::domain("X^T D X is singular"))?;
    let ll = linalg::spd_inverse(&gram(&l))
        .ok_or_else(|| Error::DegenerateConstraints("L^T D L is singular".into()))?;
    let pad = linalg::direct_sum(&ll, &DMatrix::zeros(x.ncols() - q, x.ncols() - q));
    Ok(linalg::symmetrize(&(xx - pad)))
}

/// `Σ = D^{1/2} (A_X − A_L) D^{1/2}`, valid when `𝒞(L) ⊂ 𝒞(X)`.
pub fn sigma_from_projectors(spec: &LmlcSpec, theta: &DVector<f64>, total: f64) -> Result<DMatrix<f64>> {
    let l = spec.l_matrix();
    if !linalg::column_space_contains(spec.design(), &l) {
        return Err(Error::domain("C(L) is not contained in C(X)"));
    }
    let ms = m_star(spec, theta, total)?;
    let ax = linalg::weighted_projector(spec.design(), &ms)
        .ok_or_else(|| Error::domain("X^T D X is singular"))?;
    let al = linalg::weighted_projector(&l, &ms)
        .ok_or_else(|| Error::DegenerateConstraints("L^T D L is singular".into()))?;
    let sq = ms.map(f64::sqrt);
    let diff = ax - al;
    let left = linalg::scale_rows(&diff, &sq);
    Ok(linalg::symmetrize(&linalg::scale_rows(&left.transpose(), &sq)))
}
