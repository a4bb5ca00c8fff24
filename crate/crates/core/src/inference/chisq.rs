//! Chi-square distribution function, survival function and quantile.

use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// Target accuracy of [`chisq_quantile`] in probability.
pub const QUANTILE_TOLERANCE: f64 = 1e-10;

fn check_df(df: usize) -> Result<f64> {
    if df == 0 {
        return Err(Error::domain("degrees of freedom must be positive"));
    }
    Ok(df as f64)
}

/// `P(χ²_df ≤ x) = P(df/2, x/2)`; zero for `x ≤ 0`.
pub fn chisq_cdf(x: f64, df: usize) -> Result<f64> {
    let k = check_df(df)?;
    if x.is_nan() {
        return Err(Error::domain("chisq_cdf of NaN"));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x == f64::INFINITY {
        return Ok(1.0);
    }
    Ok(gamma_lr(k / 2.0, x / 2.0))
}

/// `P(χ²_df > x)`, accurate in the upper tail.
pub fn chisq_sf(x: f64, df: usize) -> Result<f64> {
    let k = check_df(df)?;
    if x.is_nan() {
        return Err(Error::domain("chisq_sf of NaN"));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    if x == f64::INFINITY {
        return Ok(0.0);
    }
    Ok(gamma_ur(k / 2.0, x / 2.0))
}

pub fn chisq_pdf(x: f64, df: usize) -> Result<f64> {
    let k = check_df(df)?;
    if x < 0.0 {
        return Ok(0.0);
    }
    if x == 0.0 {
        return Ok(match df {
            1 => f64::INFINITY,
            2 => 0.5,
            _ => 0.0,
        });
    }
    let a = k / 2.0;
    Ok(((a - 1.0) * x.ln() - x / 2.0 - a * std::f64::consts::LN_2 - ln_gamma(a)).exp())
}

/// Inverse of [`chisq_cdf`]: bracket, bisect to [`QUANTILE_TOLERANCE`], then
/// polish with two Newton steps.
pub fn chisq_quantile(p: f64, df: usize) -> Result<f64> {
    check_df(df)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("quantile probability {p} outside (0, 1)")));
    }
    let mut lo = 0.0;
    let mut hi = (df as f64).max(1.0);
    while chisq_cdf(hi, df)? < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let c = chisq_cdf(mid, df)?;
        if (c - p).abs() <= QUANTILE_TOLERANCE * 1e-2 || hi - lo <= f64::EPSILON * hi {
            lo = mid;
            hi = mid;
            break;
        }
        if c < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut q = 0.5 * (lo + hi);
    for _ in 0..2 {
        let err = chisq_cdf(q, df)? - p;
        let dens = chisq_pdf(q, df)?;
        if dens > 0.0 && dens.is_finite() {
            let next = q - err / dens;
            if next > 0.0 && (chisq_cdf(next, df)? - p).abs() <= err.abs() {
                q = next;
            }
        }
    }
    Ok(q)
}
