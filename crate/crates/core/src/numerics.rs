//! Standard normal kernels and the inverse Mills ratio.
//!
//! The inverse Mills ratio `lambda(c) = phi(c) / Phi(c)` is evaluated as a
//! plain ratio while `Phi(c)` is comfortably representable, and through the
//! Laplace continued fraction for the normal tail below [`TAIL_SWITCH`].
//! Alongside `lambda` we keep `dee = 1 - lambda (c + lambda)`, the variance of
//! a standard normal truncated from below at `-c`, which the two-step
//! variance estimator consumes directly.

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument `lambda` is computed from the continued fraction.
pub const TAIL_SWITCH: f64 = -30.0;

const CF_DEPTH: usize = 80;

// Largest double strictly below one.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

/// Inverse Mills ratio at a point, together with the truncated variance `dee`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MillsValue {
    pub lambda: f64,
    pub dee: f64,
}

impl MillsValue {
    /// `lambda'(c) = -lambda (c + lambda) = dee - 1`.
    #[inline]
    pub fn derivative(&self) -> f64 {
        self.dee - 1.0
    }
}

fn check(c: f64) -> Result<f64> {
    if c.is_finite() {
        Ok(c)
    } else {
        Err(Error::Domain(c))
    }
}

/// Standard normal density.
pub fn normal_pdf(c: f64) -> Result<f64> {
    check(c).map(pdf)
}

/// Standard normal distribution function.
pub fn normal_cdf(c: f64) -> Result<f64> {
    check(c).map(cdf)
}

/// `ln Phi(c)`, finite for every finite `c`.
pub fn log_normal_cdf(c: f64) -> Result<f64> {
    check(c).map(ln_cdf)
}

pub fn inverse_mills(c: f64) -> Result<MillsValue> {
    check(c).map(mills)
}

pub fn inverse_mills_derivative(c: f64) -> Result<f64> {
    check(c).map(|c| mills(c).derivative())
}

#[inline]
pub(crate) fn pdf(c: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * c * c).exp()
}

#[inline]
pub(crate) fn cdf(c: f64) -> f64 {
    0.5 * libm::erfc(-c * std::f64::consts::FRAC_1_SQRT_2)
}

pub(crate) fn ln_cdf(c: f64) -> f64 {
    if c >= 0.0 {
        (-cdf(-c)).ln_1p()
    } else if c >= TAIL_SWITCH {
        cdf(c).ln()
    } else {
        // ln Phi = ln phi - ln lambda
        -0.5 * c * c - LN_SQRT_2PI - mills(c).lambda.ln()
    }
}

pub(crate) fn mills(c: f64) -> MillsValue {
    if c < TAIL_SWITCH {
        return tail_mills(-c);
    }
    // phi underflows before Phi does, so a zero ratio means "below the
    // smallest subnormal"; keep the sign information.
    let lambda = (pdf(c) / cdf(c)).max(f64::from_bits(1));
    let dee = (1.0 - lambda * (c + lambda)).min(ONE_MINUS_ULP);
    MillsValue { lambda, dee }
}

/// Laplace continued fraction for `x = -c >= 30`:
/// `Phi(-x) / phi(x) = 1/(x + 1/(x + 2/(x + 3/(x + ...))))`.
///
/// Writing `t = 1/(x + u)` and `u = 2/(x + ...)`, the ratio is `lambda = x + t`,
/// `c + lambda = t`, and `dee = t (u - t)` without cancellation.
fn tail_mills(x: f64) -> MillsValue {
    let mut v = 0.0;
    for k in (2..=CF_DEPTH).rev() {
        v = k as f64 / (x + v);
    }
    let u = v;
    let t = 1.0 / (x + u);
    MillsValue {
        lambda: x + t,
        dee: t * (u - t),
    }
}
