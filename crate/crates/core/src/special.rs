//! Principal-branch Lambert W and the exponential integral E1.

use std::f64::consts::E;

use crate::error::{Error, Result};

/// `1/e` split into a leading double and its rounding remainder so that
/// `z + 1/e` keeps full precision near the branch point.
const INV_E_HI: f64 = 0.367_879_441_171_442_33;
const INV_E_LO: f64 = -1.242_875_367_278_836_3e-17;

/// Slack below `-1/e` that is still treated as the branch point.
pub const BRANCH_SLACK: f64 = 1e-12;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Evaluation controls for the Maclaurin series of `W0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesControl {
    pub max_terms: usize,
    pub abs_tol: f64,
    pub max_newton_iters: usize,
}

impl Default for SeriesControl {
    fn default() -> Self {
        Self {
            max_terms: 100_000,
            abs_tol: 1e-17,
            max_newton_iters: 64,
        }
    }
}

impl SeriesControl {
    fn validate(&self) -> Result<()> {
        if self.max_terms == 0 || !(self.abs_tol > 0.0) {
            return Err(Error::Argument(format!(
                "series control needs max_terms >= 1 and abs_tol > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Principal branch `W0(z)` for real `z >= -1/e`: the `w >= -1` with `w e^w = z`.
///
/// Uses Halley refinement from a region-dependent starting guess; for `z`
/// within `1e-6` of `-1/e` the branch-point expansion in
/// `p = sqrt(2(ez + 1))` is returned directly.
pub fn lambert_w0(z: f64) -> Result<f64> {
    lambert_w0_with(z, &SeriesControl::default())
}

pub fn lambert_w0_with(z: f64, ctl: &SeriesControl) -> Result<f64> {
    if z.is_nan() {
        return Err(Error::domain("lambert_w0", "argument is NaN"));
    }
    // distance to the branch point, computed without cancellation
    let shifted = (z + INV_E_HI) + INV_E_LO;
    if shifted < -BRANCH_SLACK {
        return Err(Error::domain(
            "lambert_w0",
            format!("argument {z} lies below -1/e"),
        ));
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    if z == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    let shifted = shifted.max(0.0);
    if shifted <= 1e-6 {
        return Ok(branch_point_expansion((2.0 * E * shifted).sqrt()));
    }

    let mut w = initial_guess(z, shifted);
    for _ in 0..ctl.max_newton_iters {
        let ew = w.exp();
        let f = w * ew - z;
        let wp1 = w + 1.0;
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * w.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(w)
}

/// `W0(-(1 - offset)/e)` for `offset >= 0`, i.e. `W0(z)` parameterised by
/// `offset = 1 + e z`. Lets callers that know the distance to the branch
/// point pass it without first rounding `z`.
pub fn lambert_w0_branch_offset(offset: f64) -> Result<f64> {
    if offset.is_nan() || offset < -BRANCH_SLACK {
        return Err(Error::domain(
            "lambert_w0_branch_offset",
            format!("offset must be >= 0, got {offset}"),
        ));
    }
    let offset = offset.max(0.0);
    if offset <= E * 1e-6 {
        return Ok(branch_point_expansion((2.0 * offset).sqrt()));
    }
    lambert_w0(-(1.0 - offset) / E)
}

fn initial_guess(z: f64, shifted: f64) -> f64 {
    if z < -0.25 {
        branch_point_expansion((2.0 * E * shifted).sqrt())
    } else if z < 3.0 {
        // rational fit, exact slope at the origin
        z * (1.0 + 4.0 / 3.0 * z) / (1.0 + 7.0 / 3.0 * z + 5.0 / 6.0 * z * z)
    } else {
        let l1 = z.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    }
}

fn branch_point_expansion(p: f64) -> f64 {
    const C: [f64; 8] = [
        -1.0,
        1.0,
        -1.0 / 3.0,
        11.0 / 72.0,
        -43.0 / 540.0,
        769.0 / 17280.0,
        -221.0 / 8505.0,
        680_863.0 / 43_545_600.0,
    ];
    C.iter().rev().fold(0.0, |acc, &c| acc * p + c)
}

/// Partial sum of the Maclaurin series `sum_{n>=1} (-n)^(n-1) z^n / n!`.
///
/// Only valid for `|z| < 1/e`; kept as a reference for [`lambert_w0`].
pub fn lambert_w0_series(z: f64, ctl: &SeriesControl) -> Result<f64> {
    ctl.validate()?;
    if !(z.abs() < INV_E_HI) {
        return Err(Error::domain(
            "lambert_w0_series",
            format!("series diverges for |z| >= 1/e, got {z}"),
        ));
    }
    let mut term = z;
    let mut sum = 0.0;
    for n in 1..=ctl.max_terms {
        sum += term;
        if term.abs() < ctl.abs_tol {
            break;
        }
        // t_{n+1} / t_n = -z (1 + 1/n)^(n-1)
        let nf = n as f64;
        term *= -z * ((nf - 1.0) * (1.0 / nf).ln_1p()).exp();
    }
    Ok(sum)
}

/// Exponential integral `E1(x) = int_x^inf e^{-t}/t dt` for `x > 0`.
pub fn exp_integral_e1(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::domain(
            "exp_integral_e1",
            format!("argument must be > 0, got {x}"),
        ));
    }
    if x == f64::INFINITY {
        return Ok(0.0);
    }
    if x < 1.0 {
        Ok(e1_series(x))
    } else {
        Ok(e1_continued_fraction_scaled(x) * (-x).exp())
    }
}

/// `e^x E1(x)`, finite for large `x` where `E1` alone underflows.
pub fn exp_integral_e1_scaled(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::domain(
            "exp_integral_e1_scaled",
            format!("argument must be > 0, got {x}"),
        ));
    }
    if x == f64::INFINITY {
        return Ok(0.0);
    }
    if x < 1.0 {
        Ok(e1_series(x) * x.exp())
    } else {
        Ok(e1_continued_fraction_scaled(x))
    }
}

fn e1_series(x: f64) -> f64 {
    // E1(x) = -gamma - ln x - sum_{k>=1} (-x)^k / (k k!)
    let mut sum = 0.0;
    let mut fact_term = 1.0;
    for k in 1..200 {
        let kf = k as f64;
        fact_term *= -x / kf;
        let term = fact_term / kf;
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    -EULER_GAMMA - x.ln() - sum
}

fn e1_continued_fraction_scaled(x: f64) -> f64 {
    // modified Lentz evaluation of e^x E1(x)
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (an * d + b);
        c = b + an / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}
