//! φ-divergence test statistics for goodness of fit and nested hypotheses.
//!
//! Every statistic is scaled by `2/φ''(1)` so that it is asymptotically
//! chi-square under the null. `φ₁` names the divergence used for the
//! statistic, `φ₂` the one used for estimation.

mod chisq;
mod projector;

pub use chisq::{chisq_cdf, chisq_pdf, chisq_quantile, chisq_sf, QUANTILE_TOLERANCE};
pub use projector::{tstar, tstar_nested, ProjectorBundle};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::divergence::{divergence_vec, PhiFunction};
use crate::error::{Error, Result};
use crate::estimate::{fit, FitOptions, FitResult};
use crate::model::{is_nested, LmlcSpec};
use crate::table::ContingencyTable;

/// Traces further than this from the closed-form df are a bug.
const DF_TRACE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestKind {
    GoodnessOfFit,
    NestedT,
    NestedS,
}

/// Which nested statistic to use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NestedForm {
    /// `D(m̂_b, m̂_{b+1})`.
    #[default]
    T,
    /// `D(n, m̂_{b+1}) − D(n, m̂_b)`.
    S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub kind: TestKind,
    #[serde(with = "infinite_as_null")]
    pub statistic: f64,
    /// Set when the divergence was `+∞`; such statistics always reject.
    pub infinite: bool,
    pub df: usize,
    pub p_value: f64,
    pub critical_value: f64,
    pub level_used: f64,
    pub reject: bool,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
}

impl TestReport {
    pub fn new(
        kind: TestKind,
        statistic: f64,
        df: usize,
        level: f64,
        phi1: &PhiFunction,
        phi2: &PhiFunction,
    ) -> Result<Self> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::domain(format!("test level {level} outside (0, 1)")));
        }
        if statistic.is_nan() {
            return Err(Error::domain("test statistic is NaN"));
        }
        let infinite = statistic == f64::INFINITY;
        let critical_value = chisq_quantile(1.0 - level, df)?;
        let p_value = chisq_sf(statistic, df)?;
        Ok(Self {
            kind,
            statistic,
            infinite,
            df,
            p_value,
            critical_value,
            level_used: level,
            reject: statistic > critical_value,
            lambda1: phi1.lambda(),
            lambda2: phi2.lambda(),
        })
    }
}

/// `(2/φ''(1)) D_φ(a, b)`.
pub fn scaled_divergence(a: &DVector<f64>, b: &DVector<f64>, phi: &PhiFunction) -> Result<f64> {
    Ok(2.0 / phi.second_derivative_at_one() * divergence_vec(a, b, phi)?)
}

fn require_converged(fit: &FitResult) -> Result<()> {
    if !fit.converged {
        return Err(Error::domain(format!(
            "fit of {} did not converge (kkt residual {:.3e})",
            fit.spec.kind(),
            fit.kkt_residual
        )));
    }
    Ok(())
}

/// `(2/φ₁''(1)) D_{φ₁}(n, m̂)`.
pub fn gof_statistic(n: &ContingencyTable, fit: &FitResult, phi1: &PhiFunction) -> Result<f64> {
    require_converged(fit)?;
    if n.k() != fit.m_hat.len() {
        return Err(Error::dim("gof_statistic table", fit.m_hat.len(), n.k()));
    }
    scaled_divergence(&n.to_vector(), &fit.m_hat, phi1)
}

/// Goodness-of-fit degrees of freedom `k − t + r`.
pub fn gof_df(spec: &LmlcSpec) -> Result<usize> {
    let df = (spec.k() + spec.r()) as isize - spec.t() as isize;
    if df <= 0 {
        return Err(Error::domain(format!("model leaves {df} degrees of freedom")));
    }
    Ok(df as usize)
}

/// Nested degrees of freedom `t_b − t_{b+1} − r_b + r_{b+1}`.
pub fn nested_df(outer: &LmlcSpec, inner: &LmlcSpec) -> Result<usize> {
    let df = outer.t() as isize - inner.t() as isize - outer.r() as isize + inner.r() as isize;
    if df <= 0 {
        return Err(Error::domain(format!("nested pair leaves {df} degrees of freedom")));
    }
    Ok(df as usize)
}

fn check_trace(bundle: &ProjectorBundle, df: usize, what: &str) -> Result<()> {
    let tr = bundle.trace();
    if (tr - df as f64).abs() > DF_TRACE_TOLERANCE {
        return Err(Error::Internal(format!(
            "{what}: trace(T*) = {tr:.10} disagrees with df = {df}"
        )));
    }
    Ok(())
}

/// Goodness-of-fit test from an existing fit.
pub fn gof_test_from_fit(
    fit: &FitResult,
    n: &ContingencyTable,
    phi1: &PhiFunction,
    alpha: f64,
) -> Result<TestReport> {
    let statistic = gof_statistic(n, fit, phi1)?;
    let df = gof_df(&fit.spec)?;
    let bundle = tstar(&fit.spec, &fit.theta_hat, n.total() as f64)?;
    check_trace(&bundle, df, "goodness of fit")?;
    TestReport::new(TestKind::GoodnessOfFit, statistic, df, alpha, phi1, &fit.phi)
}

/// Fit with `φ₂`, test with `φ₁` at level `alpha`.
pub fn gof_test(
    spec: &LmlcSpec,
    n: &ContingencyTable,
    phi1: &PhiFunction,
    phi2: &PhiFunction,
    alpha: f64,
) -> Result<TestReport> {
    let f = fit(spec, n, phi2, &FitOptions::default())?;
    gof_test_from_fit(&f, n, phi1, alpha)
}

fn check_pair(fit_b: &FitResult, fit_b1: &FitResult) -> Result<()> {
    require_converged(fit_b)?;
    require_converged(fit_b1)?;
    if !is_nested(&fit_b1.spec, &fit_b.spec)? {
        return Err(Error::domain(format!(
            "{} is not nested within {}",
            fit_b1.spec.kind(),
            fit_b.spec.kind()
        )));
    }
    Ok(())
}

/// `(2/φ₁''(1)) D_{φ₁}(m̂_b, m̂_{b+1})`, where `b` is the larger model.
pub fn nested_statistic_t(fit_b: &FitResult, fit_b1: &FitResult, phi1: &PhiFunction) -> Result<f64> {
    check_pair(fit_b, fit_b1)?;
    scaled_divergence(&fit_b.m_hat, &fit_b1.m_hat, phi1)
}

/// `(2/φ''(1)) [D_φ(n, m̂_{b+1}) − D_φ(n, m̂_b)]`; both fits must use `φ`.
pub fn nested_statistic_s(
    n: &ContingencyTable,
    fit_b: &FitResult,
    fit_b1: &FitResult,
    phi: &PhiFunction,
) -> Result<f64> {
    check_pair(fit_b, fit_b1)?;
    if &fit_b.phi != phi || &fit_b1.phi != phi {
        return Err(Error::domain("the S statistic needs both fits computed with phi"));
    }
    let nv = n.to_vector();
    let outer = scaled_divergence(&nv, &fit_b.m_hat, phi)?;
    let inner = scaled_divergence(&nv, &fit_b1.m_hat, phi)?;
    if inner == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    Ok(inner - outer)
}

/// Nested test from existing fits.
pub fn nested_test_from_fits(
    fit_b: &FitResult,
    fit_b1: &FitResult,
    n: &ContingencyTable,
    phi1: &PhiFunction,
    level: f64,
    form: NestedForm,
) -> Result<TestReport> {
    let (statistic, kind) = match form {
        NestedForm::T => (nested_statistic_t(fit_b, fit_b1, phi1)?, TestKind::NestedT),
        NestedForm::S => (nested_statistic_s(n, fit_b, fit_b1, phi1)?, TestKind::NestedS),
    };
    let df = nested_df(&fit_b.spec, &fit_b1.spec)?;
    let bundle = tstar_nested(&fit_b.spec, &fit_b1.spec, &fit_b1.theta_hat, n.total() as f64)?;
    check_trace(&bundle, df, "nested test")?;
    TestReport::new(kind, statistic, df, level, phi1, &fit_b1.phi)
}

/// Test `inner ⊂ outer` with `φ₂` fits of both models.
pub fn nested_test(
    outer: &LmlcSpec,
    inner: &LmlcSpec,
    n: &ContingencyTable,
    phi1: &PhiFunction,
    phi2: &PhiFunction,
    level: f64,
    form: NestedForm,
) -> Result<TestReport> {
    if !is_nested(inner, outer)? {
        return Err(Error::domain(format!("{} is not nested within {}", inner.kind(), outer.kind())));
    }
    let opts = FitOptions::default();
    let fit_b = fit(outer, n, phi2, &opts)?;
    let fit_b1 = fit(inner, n, phi2, &opts)?;
    nested_test_from_fits(&fit_b, &fit_b1, n, phi1, level, form)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub per_test: Vec<TestReport>,
    /// Index of the first rejected hypothesis, or `B` when all are accepted.
    pub b_star: usize,
    pub per_test_level: f64,
}

/// Level for each of the `B − 1` tests of a chain of `B` models.
pub fn sequential_level(alpha: f64, models: usize) -> Result<f64> {
    if models < 2 {
        return Err(Error::domain("a sequence needs at least two models"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha {alpha} outside (0, 1)")));
    }
    Ok(-((-alpha).ln_1p() / (models - 1) as f64).exp_m1())
}

/// Test `M_{b+1}` against `M_b` for `b = 1, …, B − 1`, stopping at the first
/// rejection. `chain[0]` is the largest model.
pub fn sequential_test(
    chain: &[LmlcSpec],
    n: &ContingencyTable,
    phi1: &PhiFunction,
    phi2: &PhiFunction,
    alpha: f64,
    form: NestedForm,
) -> Result<SequenceResult> {
    let level = sequential_level(alpha, chain.len())?;
    for (b, pair) in chain.windows(2).enumerate() {
        if !is_nested(&pair[1], &pair[0])? {
            return Err(Error::domain(format!(
                "model {} is not nested within model {}",
                b + 2,
                b + 1
            )));
        }
    }
    let opts = FitOptions::default();
    let mut per_test = Vec::new();
    let mut outer_fit = fit(&chain[0], n, phi2, &opts)?;
    let mut b_star = chain.len();
    for b in 1..chain.len() {
        let inner_fit = fit(&chain[b], n, phi2, &opts)?;
        let report = nested_test_from_fits(&outer_fit, &inner_fit, n, phi1, level, form)?;
        let reject = report.reject;
        per_test.push(report);
        if reject {
            b_star = b;
            break;
        }
        outer_fit = inner_fit;
    }
    Ok(SequenceResult {
        per_test,
        b_star,
        per_test_level: level,
    })
}

/// Serde adapter writing `+∞` as `null` and reading `null` back as `+∞`.
pub mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
