//! Exact evaluation of a stopping policy: expected throughput, expected
//! power, per-slot success probability and expected packet delay.
//!
//! All three quantities obey the same backward recursion over the sensing
//! order. Writing `q_i = theta_i * ccdf(th_i)` for the probability of
//! stopping at position `i` once it is reached,
//!
//! ```text
//! U_i = theta_i c_i int_{th_i}^inf log(1 + P(g) g) f(g) dg + (1 - q_i) U_{i+1}
//! S_i = theta_i c_i int_{th_i}^inf P(g) f(g) dg            + (1 - q_i) S_{i+1}
//! p_i = q_i                                                + (1 - q_i) p_{i+1}
//! ```
//!
//! with `U_{M+1} = S_{M+1} = p_{M+1} = 0`. Rates are in nats per slot.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChannelEnsemble, FadingKind, FadingLaw, PowerRule, SlotTiming, StoppingPolicy};
use crate::quad;
use crate::special::exp_integral_e1_scaled;

const QUAD_TOL: f64 = 1e-13;

/// Policy performance at the head of the sensing order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticMetrics {
    /// Expected rate per slot (nats, normalised by the slot length).
    pub throughput: f64,
    pub avg_power: f64,
    pub success_prob: f64,
    /// `1 / success_prob` in slots; `+inf` when no slot can succeed.
    pub expected_delay: f64,
}

/// Recursion values for the channels `i..=M`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SuffixValues {
    pub throughput: f64,
    pub power: f64,
    pub success: f64,
}

/// Per-stage integrals over `gain > threshold`, before the `theta_i c_i`
/// weighting.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageIntegrals {
    /// `ccdf(threshold)`.
    pub stop_prob: f64,
    /// `int log(1 + P(g) g) f(g) dg`.
    pub rate: f64,
    /// `int P(g) f(g) dg`.
    pub power: f64,
}

/// Stage integrals, in closed form where the fading law has one.
pub fn stage_integrals(law: &FadingLaw, threshold: f64, rule: PowerRule) -> StageIntegrals {
    match law.kind() {
        FadingKind::Exponential => exponential_stage(law.mean_gain(), threshold, rule),
    }
}

fn exponential_stage(mean: f64, threshold: f64, rule: PowerRule) -> StageIntegrals {
    if threshold == f64::INFINITY {
        return StageIntegrals::default();
    }
    let stop_prob = (-threshold / mean).exp();
    match rule {
        PowerRule::ConstantOne => {
            // int_a^inf ln(1+g) f = e^{-a/m} [ln(1+a) + e^x E1(x)], x = (1+a)/m
            let scaled = exp_integral_e1_scaled((1.0 + threshold) / mean).unwrap_or(0.0);
            StageIntegrals {
                stop_prob,
                rate: stop_prob * (threshold.ln_1p() + scaled),
                power: stop_prob,
            }
        }
        PowerRule::WaterFilling { level } => {
            // power is zero below the cutoff 1/level
            let lower = threshold.max(1.0 / level);
            let tail = (-lower / mean).exp();
            if tail == 0.0 {
                return StageIntegrals {
                    stop_prob,
                    rate: 0.0,
                    power: 0.0,
                };
            }
            let scaled = exp_integral_e1_scaled(lower / mean).unwrap_or(0.0);
            StageIntegrals {
                stop_prob,
                rate: tail * ((lower * level).ln() + scaled),
                power: (tail * (level - scaled / mean)).max(0.0),
            }
        }
    }
}

/// Stage integrals by adaptive quadrature, valid for any fading law.
pub fn stage_integrals_quadrature(
    law: &FadingLaw,
    threshold: f64,
    rule: PowerRule,
) -> StageIntegrals {
    if threshold == f64::INFINITY {
        return StageIntegrals::default();
    }
    let scale = law.mean_gain();
    let lower = match rule {
        PowerRule::ConstantOne => threshold,
        PowerRule::WaterFilling { level } => threshold.max(1.0 / level),
    };
    let rate = quad::integrate_to_infinity(
        |g| (rule.power(g) * g).ln_1p() * law.pdf_unchecked(g),
        lower,
        scale,
        QUAD_TOL,
    );
    let power = quad::integrate_to_infinity(
        |g| rule.power(g) * law.pdf_unchecked(g),
        lower,
        scale,
        QUAD_TOL,
    );
    StageIntegrals {
        stop_prob: law.ccdf_unchecked(threshold),
        rate,
        power,
    }
}

/// One backward step of the three recursions.
pub fn step_back(
    theta: f64,
    remaining: f64,
    stage: &StageIntegrals,
    next: &SuffixValues,
) -> SuffixValues {
    let stop = theta * stage.stop_prob;
    let carry = 1.0 - stop;
    SuffixValues {
        throughput: theta * remaining * stage.rate + carry * next.throughput,
        power: theta * remaining * stage.power + carry * next.power,
        success: stop + carry * next.success,
    }
}

/// Recursion values for every suffix: entry `k` covers positions `k+1..=M`
/// (0-based `k`), and entry `M` is the all-zero terminal value.
pub fn suffix_values(
    policy: &StoppingPolicy,
    ens: &ChannelEnsemble,
    timing: &SlotTiming,
) -> Result<Vec<SuffixValues>> {
    policy.check(ens)?;
    timing.check(ens)?;
    let m = ens.count();
    let mut out = vec![SuffixValues::default(); m + 1];
    for k in (0..m).rev() {
        let stage = stage_integrals(ens.fading(), policy.thresholds()[k], policy.power_rule());
        out[k] = step_back(
            ens.free_prob()[k],
            timing.remaining_fraction(k + 1),
            &stage,
            &out[k + 1],
        );
    }
    Ok(out)
}

/// Full evaluation of a policy.
pub fn evaluate(
    policy: &StoppingPolicy,
    ens: &ChannelEnsemble,
    timing: &SlotTiming,
) -> Result<AnalyticMetrics> {
    let head = suffix_values(policy, ens, timing)?[0];
    Ok(AnalyticMetrics {
        throughput: head.throughput,
        avg_power: head.power,
        success_prob: head.success,
        expected_delay: delay_from_success(head.success).unwrap_or(f64::INFINITY),
    })
}

/// Probability that a slot is not blocked.
pub fn success_probability(policy: &StoppingPolicy, ens: &ChannelEnsemble) -> Result<f64> {
    policy.check(ens)?;
    let law = ens.fading();
    Ok(policy
        .thresholds()
        .iter()
        .zip(ens.free_prob())
        .rev()
        .fold(0.0, |next, (&th, &theta)| {
            let stop = theta * law.ccdf_unchecked(th);
            stop + (1.0 - stop) * next
        }))
}

/// Mean number of slots per packet, `1 / p_1`.
pub fn expected_delay(policy: &StoppingPolicy, ens: &ChannelEnsemble) -> Result<f64> {
    delay_from_success(success_probability(policy, ens)?)
}

pub fn delay_from_success(success: f64) -> Result<f64> {
    if success > 0.0 {
        Ok(1.0 / success)
    } else {
        Err(Error::InfiniteDelay)
    }
}

/// Largest achievable success probability, reached with all thresholds at 0.
pub fn max_success_probability(ens: &ChannelEnsemble) -> f64 {
    1.0 - ens.free_prob().iter().map(|t| 1.0 - t).product::<f64>()
}

/// Smallest expected delay any policy can achieve.
pub fn min_expected_delay(ens: &ChannelEnsemble) -> Result<f64> {
    delay_from_success(max_success_probability(ens))
}

pub fn expected_power(
    policy: &StoppingPolicy,
    ens: &ChannelEnsemble,
    timing: &SlotTiming,
) -> Result<f64> {
    Ok(suffix_values(policy, ens, timing)?[0].power)
}

pub fn expected_throughput(
    policy: &StoppingPolicy,
    ens: &ChannelEnsemble,
    timing: &SlotTiming,
) -> Result<f64> {
    Ok(suffix_values(policy, ens, timing)?[0].throughput)
}
