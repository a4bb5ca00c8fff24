//! φ-divergences between nonnegative vectors.
//!
//! For a convex generator `φ` with `φ(1) = φ'(1) = 0` and `φ''(1) > 0`,
//!
//! ```text
//! D_φ(a, b) = Σ b_i φ(a_i / b_i)
//! ```
//!
//! with the conventions `0 φ(0/0) = 0` and `0 φ(p/0) = p · lim_{u→∞} φ(u)/u`.
//! The vectors are not required to be probability vectors; expected cell
//! counts and observed counts are compared directly.
//!
//! The crate ships the Cressie–Read power family `φ_(λ)`:
//!
//! ```text
//! φ_(λ)(x) = (x^{λ+1} − x − λ(x − 1)) / (λ(λ + 1)),   λ(λ + 1) ≠ 0
//! φ_(0)(x)  = x log x − x + 1
//! φ_(−1)(x) = −log x + x − 1
//! ```
//!
//! `λ = 0` is the Kullback divergence and `λ = 1` is half of Pearson's
//! chi-square. Other convex generators can be plugged in through
//! [`Generator`].

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Within this distance of `0` or `−1` the power family switches to the
/// analytic limit.
pub const LIMIT_BRANCH_TOL: f64 = 1e-8;

/// A user-supplied convex generator.
///
/// Implementations must satisfy `φ(1) = φ'(1) = 0` and `φ''(1) > 0`.
pub trait Generator: Send + Sync + fmt::Debug {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
    fn second_derivative(&self, x: f64) -> f64;
    /// `lim_{u→∞} φ(u)/u`, possibly `+∞`.
    fn slope_at_infinity(&self) -> f64;
    fn second_derivative_at_one(&self) -> f64 {
        self.second_derivative(1.0)
    }
}

/// The divergence generator used by an estimator or a test statistic.
#[derive(Clone)]
pub enum PhiFunction {
    /// Power-divergence generator `φ_(λ)`.
    Power(f64),
    Custom(Arc<dyn Generator>),
}

impl fmt::Debug for PhiFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhiFunction::Power(l) => write!(f, "Power({l})"),
            PhiFunction::Custom(g) => write!(f, "Custom({g:?})"),
        }
    }
}

impl PartialEq for PhiFunction {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (PhiFunction::Power(a), PhiFunction::Power(b)) => a == b,
            (PhiFunction::Custom(a), PhiFunction::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Branch {
    Kullback,
    ReverseKullback,
    General(f64),
}

fn branch(lambda: f64) -> Branch {
    if lambda.abs() < LIMIT_BRANCH_TOL {
        Branch::Kullback
    } else if (lambda + 1.0).abs() < LIMIT_BRANCH_TOL {
        Branch::ReverseKullback
    } else {
        Branch::General(lambda)
    }
}

/// `φ_(λ)(x)` for `x ≥ 0`; `+∞` where the generator is unbounded at zero.
pub fn phi_power(lambda: f64, x: f64) -> f64 {
    match branch(lambda) {
        Branch::Kullback => {
            if x == 0.0 {
                1.0
            } else {
                x * x.ln() - x + 1.0
            }
        }
        Branch::ReverseKullback => {
            if x == 0.0 {
                f64::INFINITY
            } else {
                -x.ln() + x - 1.0
            }
        }
        Branch::General(l) => {
            if x == 0.0 {
                return if l > -1.0 { 1.0 / (l + 1.0) } else { f64::INFINITY };
            }
            // x^{λ+1} − x = x (x^λ − 1), written with expm1 to keep precision
            // for small |λ|.
            (x * (l * x.ln()).exp_m1() - l * (x - 1.0)) / (l * (l + 1.0))
        }
    }
}

fn phi_power_derivative(lambda: f64, x: f64) -> f64 {
    match branch(lambda) {
        Branch::Kullback => x.ln(),
        Branch::ReverseKullback => 1.0 - 1.0 / x,
        Branch::General(l) => {
            if x == 0.0 {
                return if l > 0.0 { -1.0 / l } else { f64::NEG_INFINITY };
            }
            (l * x.ln()).exp_m1() / l
        }
    }
}

fn phi_power_second_derivative(lambda: f64, x: f64) -> f64 {
    match branch(lambda) {
        Branch::Kullback => 1.0 / x,
        Branch::ReverseKullback => 1.0 / (x * x),
        Branch::General(l) => x.powf(l - 1.0),
    }
}

impl PhiFunction {
    pub fn power(lambda: f64) -> Self {
        PhiFunction::Power(lambda)
    }

    /// `φ_(0)`, the Kullback generator (maximum likelihood).
    pub fn kullback() -> Self {
        PhiFunction::Power(0.0)
    }

    /// `φ_(1)`, Pearson's generator.
    pub fn pearson() -> Self {
        PhiFunction::Power(1.0)
    }

    pub fn custom(g: impl Generator + 'static) -> Self {
        PhiFunction::Custom(Arc::new(g))
    }

    /// `λ` for members of the power family.
    pub fn lambda(&self) -> Option<f64> {
        match self {
            PhiFunction::Power(l) => Some(*l),
            PhiFunction::Custom(_) => None,
        }
    }

    /// True for `φ_(λ)` with `λ` inside the Kullback limit branch.
    pub fn is_kullback(&self) -> bool {
        matches!(self, PhiFunction::Power(l) if branch(*l) == Branch::Kullback)
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            PhiFunction::Power(l) => phi_power(*l, x),
            PhiFunction::Custom(g) => g.value(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            PhiFunction::Power(l) => phi_power_derivative(*l, x),
            PhiFunction::Custom(g) => g.derivative(x),
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match self {
            PhiFunction::Power(l) => phi_power_second_derivative(*l, x),
            PhiFunction::Custom(g) => g.second_derivative(x),
        }
    }

    /// `x² φ''(x)`, continuous at `x = 0` whenever the limit is finite.
    pub fn curvature(&self, x: f64) -> f64 {
        match self {
            PhiFunction::Power(l) => match branch(*l) {
                Branch::Kullback => x,
                Branch::ReverseKullback => 1.0,
                Branch::General(l) => {
                    if x == 0.0 {
                        if l > -1.0 {
                            0.0
                        } else {
                            f64::INFINITY
                        }
                    } else {
                        x.powf(l + 1.0)
                    }
                }
            },
            PhiFunction::Custom(g) => {
                if x == 0.0 {
                    0.0
                } else {
                    x * x * g.second_derivative(x)
                }
            }
        }
    }

    /// `φ''(1)`; equal to 1 across the power family.
    pub fn second_derivative_at_one(&self) -> f64 {
        match self {
            PhiFunction::Power(_) => 1.0,
            PhiFunction::Custom(g) => g.second_derivative_at_one(),
        }
    }

    /// `lim_{u→∞} φ(u)/u`.
    pub fn slope_at_infinity(&self) -> f64 {
        match self {
            PhiFunction::Power(l) => match branch(*l) {
                Branch::Kullback => f64::INFINITY,
                Branch::ReverseKullback => 1.0,
                Branch::General(l) if l > 0.0 => f64::INFINITY,
                Branch::General(l) => -1.0 / l,
            },
            PhiFunction::Custom(g) => g.slope_at_infinity(),
        }
    }

    /// One summand `b φ(a/b)` with the boundary conventions applied.
    pub fn term(&self, a: f64, b: f64) -> f64 {
        if b == 0.0 {
            if a == 0.0 {
                0.0
            } else {
                let slope = self.slope_at_infinity();
                if slope.is_infinite() {
                    f64::INFINITY
                } else {
                    a * slope
                }
            }
        } else {
            b * self.value(a / b)
        }
    }
}

impl fmt::Display for PhiFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhiFunction::Power(l) => write!(f, "phi_({l})"),
            PhiFunction::Custom(g) => write!(f, "{g:?}"),
        }
    }
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim("divergence", a.len(), b.len()));
    }
    for (i, &v) in a.iter().chain(b.iter()).enumerate() {
        if !(v >= 0.0) {
            let side = if i < a.len() { "first" } else { "second" };
            return Err(Error::domain(format!(
                "{side} argument has negative or NaN entry {v}"
            )));
        }
    }
    Ok(())
}

/// Parse a `λ` written as a decimal or a fraction such as `2/3` or `-1/2`.
pub fn parse_lambda(text: &str) -> Result<f64> {
    let t = text.trim();
    let bad = || Error::domain(format!("cannot parse lambda `{text}`"));
    let value = match t.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse().map_err(|_| bad())?;
            let den: f64 = den.trim().parse().map_err(|_| bad())?;
            if den == 0.0 {
                return Err(bad());
            }
            num / den
        }
        None => t.parse().map_err(|_| bad())?,
    };
    if !value.is_finite() {
        return Err(bad());
    }
    Ok(value)
}

/// `D_φ(a, b)`; may be `+∞`.
pub fn divergence(a: &[f64], b: &[f64], phi: &PhiFunction) -> Result<f64> {
    check_pair(a, b)?;
    Ok(a.iter().zip(b).map(|(&ai, &bi)| phi.term(ai, bi)).sum())
}

/// [`divergence`] on `nalgebra` vectors.
pub fn divergence_vec(a: &DVector<f64>, b: &DVector<f64>, phi: &PhiFunction) -> Result<f64> {
    divergence(a.as_slice(), b.as_slice(), phi)
}

/// Kullback divergence `Σ a_i log(a_i/b_i) − Σ a_i + Σ b_i`, evaluated
/// directly rather than through the generator.
pub fn kullback(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let mut acc = 0.0;
    for (&ai, &bi) in a.iter().zip(b) {
        if ai > 0.0 {
            if bi == 0.0 {
                return Ok(f64::INFINITY);
            }
            acc += ai * (ai / bi).ln();
        }
        acc += bi - ai;
    }
    Ok(acc)
}
