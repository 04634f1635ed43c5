//! Optimal thresholds and Lagrange multipliers.
//!
//! Two problems are solved, both by back-substitution over the sensing
//! order for fixed multipliers and bisection on the multipliers:
//!
//! * unit power on the chosen channel, maximising throughput subject to
//!   `p_1 >= 1/d_max` ([`solve_two_level`]);
//! * water-filling power, maximising throughput subject to
//!   `S_1 <= p_avg` and `p_1 >= 1/d_max` ([`solve_optimal`]), with the
//!   delay multiplier in the outer loop and the power multiplier inside.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::analytic::{
    self, max_success_probability, stage_integrals, step_back, AnalyticMetrics, SuffixValues,
};
use crate::error::{Error, Result};
use crate::model::{
    check_delay_bound, ChannelEnsemble, Constraints, PowerRule, SlotTiming, StoppingPolicy,
};
use crate::special::lambert_w0_branch_offset;

/// Lagrange multipliers of the power (`lambda_p`) and delay (`lambda_d`)
/// constraints.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DualPoint {
    pub lambda_p: f64,
    pub lambda_d: f64,
}

impl DualPoint {
    pub fn new(lambda_p: f64, lambda_d: f64) -> Result<Self> {
        if !(lambda_p >= 0.0 && lambda_d >= 0.0) || !lambda_p.is_finite() || !lambda_d.is_finite() {
            return Err(Error::Argument(format!(
                "multipliers must be finite and >= 0, got ({lambda_p}, {lambda_d})"
            )));
        }
        Ok(Self { lambda_p, lambda_d })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverControl {
    /// Residual tolerance for both multiplier searches.
    pub tol: f64,
    pub max_bisection_iters: usize,
    pub bracket_growth: f64,
    pub max_bracket_expansions: usize,
}

impl Default for SolverControl {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_bisection_iters: 200,
            bracket_growth: 2.0,
            max_bracket_expansions: 80,
        }
    }
}

impl SolverControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.bracket_growth > 1.0) || self.max_bisection_iters == 0 {
            return Err(Error::Argument(format!(
                "solver control needs tol > 0, bracket_growth > 1 and at least one iteration, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayStatus {
    Active,
    Inactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerStatus {
    Active,
    Inactive,
    /// The problem has no power constraint (unit power).
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintStatus {
    pub delay: DelayStatus,
    pub power: PowerStatus,
}

/// Constraint slacks at the returned point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `S_1 - p_avg`; `None` without a power constraint.
    pub power_slack: Option<f64>,
    /// `p_1 - 1/d_max`.
    pub delay_slack: f64,
    /// Largest per-channel stationarity residual.
    pub stationarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Iterations {
    pub outer: usize,
    pub inner_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub policy: StoppingPolicy,
    pub duals: DualPoint,
    pub metrics: AnalyticMetrics,
    pub residuals: Residuals,
    pub iterations: Iterations,
    pub status: ConstraintStatus,
}

impl SolveReport {
    /// `lambda_p * |power slack|` and `lambda_d * |delay slack|`.
    pub fn complementary_slackness(&self) -> (f64, f64) {
        (
            self.duals.lambda_p * self.residuals.power_slack.unwrap_or(0.0).abs(),
            self.duals.lambda_d * self.residuals.delay_slack.abs(),
        )
    }
}

// ---------------------------------------------------------------------------
// Bisection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Bisection for a monotone `f` on `[lo, hi]`.
///
/// When `f(lo)` and `f(hi)` share a sign the bracket slides upward,
/// `(lo, hi) <- (hi, hi + growth * (hi - lo))`, up to
/// `max_bracket_expansions` times.
/// Stops once `|f(x)| <= tol` or the bracket is narrower than
/// `tol * max(1, |x|)`.
pub fn bisect<F>(mut f: F, lo: f64, hi: f64, ctl: &SolverControl) -> Result<Root>
where
    F: FnMut(f64) -> f64,
{
    ctl.validate()?;
    if !(lo < hi) {
        return Err(Error::Argument(format!("empty bracket [{lo}, {hi}]")));
    }
    let (mut lo, mut hi) = (lo, hi);
    let mut f_lo = f(lo);
    if f_lo.abs() <= ctl.tol {
        return Ok(Root {
            x: lo,
            residual: f_lo,
            iterations: 0,
        });
    }
    let mut f_hi = f(hi);
    let mut expansions = 0;
    while f_hi.abs() > ctl.tol && f_lo.signum() == f_hi.signum() {
        if expansions == ctl.max_bracket_expansions || !f_hi.is_finite() {
            return Err(Error::NoBracket { lo, hi, f_lo, f_hi });
        }
        let width = hi - lo;
        lo = hi;
        f_lo = f_hi;
        hi = lo + ctl.bracket_growth * width;
        f_hi = f(hi);
        expansions += 1;
    }
    if f_hi.abs() <= ctl.tol {
        return Ok(Root {
            x: hi,
            residual: f_hi,
            iterations: 0,
        });
    }

    let mut best = if f_lo.abs() < f_hi.abs() {
        (lo, f_lo)
    } else {
        (hi, f_hi)
    };
    for it in 1..=ctl.max_bisection_iters {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid.abs() < best.1.abs() {
            best = (mid, f_mid);
        }
        if f_mid.abs() <= ctl.tol || hi - lo <= ctl.tol * mid.abs().max(1.0) {
            return Ok(Root {
                x: best.0,
                residual: best.1,
                iterations: it,
            });
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NonConvergence {
        what: "bisection",
        iterations: ctl.max_bisection_iters,
        residual: best.1,
    })
}

// ---------------------------------------------------------------------------
// Two-level (unit power) thresholds
// ---------------------------------------------------------------------------

/// Threshold for one stage of the unit-power problem given the suffix.
fn two_level_threshold(lambda_d: f64, remaining: f64, next: &SuffixValues) -> f64 {
    let exponent = (next.throughput - lambda_d * (1.0 - next.success)) / remaining;
    if exponent <= 0.0 {
        0.0
    } else {
        exponent.exp_m1()
    }
}

fn two_level_pass(
    lambda_d: f64,
    ens: &ChannelEnsemble,
    timing: &SlotTiming,
) -> (Vec<f64>, SuffixValues) {
    let m = ens.count();
    let mut thresholds = vec![0.0; m];
    let mut next = SuffixValues::default();
    for k in (0..m).rev() {
        let c = timing.remaining_fraction(k + 1);
        let th = two_level_threshold(lambda_d, c, &next);
        let stage = stage_integrals(ens.fading(), th, PowerRule::ConstantOne);
        next = step_back(ens.free_prob()[k], c, &stage, &next);
        thresholds[k] = th;
    }
    (thresholds, next)
}

/// Unit-power thresholds for a fixed delay multiplier, by back-substitution
/// from the last channel:
/// `th_i = [exp((U_{i+1} - lambda_d (1 - p_{i+1})) / c_i) - 1]^+`.
pub fn thresholds_two_level(
    lambda_d: f64,
    ens: &ChannelEnsemble,
    timing: &SlotTiming,
) -> Result<StoppingPolicy> {
    if !(lambda_d >= 0.0 && lambda_d.is_finite()) {
        return Err(Error::Argument(format!(
            "delay multiplier must be finite and >= 0, got {lambda_d}"
        )));
    }
    timing.check(ens)?;
    StoppingPolicy::constant_power(two_level_pass(lambda_d, ens, timing).0)
}

/// Maximises unit-power throughput subject to `E[D] <= d_max`.
///
/// `d_max = +inf` gives the unconstrained baseline.
pub fn solve_two_level(
    ens: &ChannelEnsemble,
    timing: &SlotTiming,
    d_max: f64,
    ctl: &SolverControl,
) -> Result<SolveReport> {
    ctl.validate()?;
    check_delay_bound(d_max)?;
    timing.check(ens)?;
    let target = 1.0 / d_max;
    check_delay_feasible(ens, d_max, ctl)?;

    let (_, head) = two_level_pass(0.0, ens, timing);
    let (lambda_d, iterations) = if head.success >= target - ctl.tol {
        (0.0, Iterations::default())
    } else {
        let hi = initial_lambda_d_cap(ens, timing, 1.0);
        let root = bisect(
            |l| two_level_pass(l, ens, timing).1.success - target,
            0.0,
            hi,
            ctl,
        )
        .map_err(|e| as_non_convergence(e, "delay multiplier search"))?;
        (
            root.x,
            Iterations {
                outer: root.iterations,
                inner_total: 0,
            },
        )
    };
    let policy = thresholds_two_level(lambda_d, ens, timing)?;
    let duals = DualPoint {
        lambda_p: 0.0,
        lambda_d,
    };
    build_report(policy, duals, ens, timing, d_max, None, iterations)
}

/// Two-level solution without the delay constraint.
pub fn solve_unconstrained(
    ens: &ChannelEnsemble,
    timing: &SlotTiming,
    ctl: &SolverControl,
) -> Result<SolveReport> {
    solve_two_level(ens, timing, f64::INFINITY, ctl)
}

fn check_delay_feasible(ens: &ChannelEnsemble, d_max: f64, ctl: &SolverControl) -> Result<()> {
    let p_max = max_success_probability(ens);
    if 1.0 / d_max > p_max + ctl.tol {
        return Err(Error::Infeasible {
            d_max,
            min_delay: 1.0 / p_max,
        });
    }
    Ok(())
}

/// Scale of the delay multiplier: the largest per-slot utility on offer.
fn initial_lambda_d_cap(ens: &ChannelEnsemble, timing: &SlotTiming, power: f64) -> f64 {
    let c1 = timing.remaining_fraction(1);
    (c1 * (1.0 + power * 10.0 * ens.fading().mean_gain()).ln()).max(1.0)
}

fn as_non_convergence(err: Error, what: &'static str) -> Error {
    match err {
        Error::NoBracket { f_hi, .. } => Error::NonConvergence {
            what,
            iterations: 0,
            residual: f_hi,
        },
        Error::NonConvergence {
            iterations,
            residual,
            ..
        } => Error::NonConvergence {
            what,
            iterations,
            residual,
        },
        other => other,
    }
}

// ---------------------------------------------------------------------------
// Water-filling power control
// ---------------------------------------------------------------------------

/// `P(gamma) = (1/lambda_p - 1/gamma)^+`.
pub fn waterfilling_power(gamma: f64, lambda_p: f64) -> Result<f64> {
    if !(gamma > 0.0) || !(lambda_p > 0.0) {
        return Err(Error::domain(
            "waterfilling_power",
            format!("gain and multiplier must be > 0, got gamma = {gamma}, lambda_p = {lambda_p}"),
        ));
    }
    Ok((1.0 / lambda_p - 1.0 / gamma).max(0.0))
}

/// Left side of the threshold equation under water-filling,
/// `Y(g) = c (ln(g/lambda_p) - lambda_p (1/lambda_p - 1/g)^+)`; strictly
/// increasing in `g > 0`.
pub fn gamma_finding_lhs(gamma: f64, lambda_p: f64, remaining: f64) -> f64 {
    let ratio = gamma / lambda_p;
    let cut = if gamma > lambda_p {
        1.0 - lambda_p / gamma
    } else {
        0.0
    };
    remaining * (ratio.ln() - cut)
}

/// Right side of the threshold equation at position `i`:
/// `U_{i+1} - lambda_p S_{i+1} - lambda_d (1 - p_{i+1})`.
fn stationarity_rhs(duals: &DualPoint, next: &SuffixValues) -> f64 {
    next.throughput - duals.lambda_p * next.power - duals.lambda_d * (1.0 - next.success)
}

/// Unique root of `Y(g) = rhs`.
///
/// For `rhs >= 0` the root is `-lambda_p / W0(-exp(-rhs/c - 1)) >= lambda_p`.
/// For `rhs < 0` it lies below the cutoff, `lambda_p exp(rhs/c)`, where the
/// user stops but transmits at zero power.
fn waterfilling_threshold(rhs: f64, lambda_p: f64, remaining: f64) -> Result<f64> {
    let x = rhs / remaining;
    if x < 0.0 {
        return Ok(lambda_p * x.exp());
    }
    // 1 + e z with z = -exp(-x - 1)
    let offset = -(-x).exp_m1();
    let w = lambert_w0_branch_offset(offset)?;
    if w == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-lambda_p / w)
}

fn waterfilling_pass(
    duals: &DualPoint,
    ens: &ChannelEnsemble,
    timing: &SlotTiming,
) -> Result<(Vec<f64>, SuffixValues)> {
    let rule = PowerRule::water_filling(1.0 / duals.lambda_p)?;
    let m = ens.count();
    let mut thresholds = vec![0.0; m];
    let mut next = SuffixValues::default();
    for k in (0..m).rev() {
        let c = timing.remaining_fraction(k + 1);
        let th = waterfilling_threshold(stationarity_rhs(duals, &next), duals.lambda_p, c)?;
        let stage = stage_integrals(ens.fading(), th, rule);
        next = step_back(ens.free_prob()[k], c, &stage, &next);
        thresholds[k] = th;
    }
    Ok((thresholds, next))
}

/// Water-filling thresholds for fixed multipliers, by back-substitution.
pub fn thresholds_waterfilling(
    duals: &DualPoint,
    ens: &ChannelEnsemble,
    timing: &SlotTiming,
) -> Result<StoppingPolicy> {
    if !(duals.lambda_p > 0.0 && duals.lambda_p.is_finite()) {
        return Err(Error::domain(
            "thresholds_waterfilling",
            format!("power multiplier must be > 0, got {}", duals.lambda_p),
        ));
    }
    DualPoint::new(duals.lambda_p, duals.lambda_d)?;
    timing.check(ens)?;
    let (thresholds, _) = waterfilling_pass(duals, ens, timing)?;
    StoppingPolicy::new(thresholds, PowerRule::water_filling(1.0 / duals.lambda_p)?)
}

const LAMBDA_P_FLOOR: f64 = 1e-12;

/// Power multiplier meeting `S_1 = p_avg` for a fixed delay multiplier.
/// Searches `ln lambda_p` so the bracket can span many decades.
fn solve_lambda_p(
    lambda_d: f64,
    p_avg: f64,
    ens: &ChannelEnsemble,
    timing: &SlotTiming,
    ctl: &SolverControl,
) -> Result<Root> {
    let failed = Cell::new(None);
    let residual = |log_lp: f64| {
        let duals = DualPoint {
            lambda_p: log_lp.exp(),
            lambda_d,
        };
        match waterfilling_pass(&duals, ens, timing) {
            Ok((_, head)) => (head.power - p_avg) / p_avg,
            Err(e) => {
                failed.set(Some(e));
                f64::NAN
            }
        }
    };
    let lo = LAMBDA_P_FLOOR.ln();
    let hi = (1e3 / p_avg).max(1.0).ln();
    let root = bisect(residual, lo, hi, ctl);
    if let Some(e) = failed.take() {
        return Err(e);
    }
    let root = root.map_err(|e| as_non_convergence(e, "power multiplier search"))?;
    Ok(Root {
        x: root.x.exp(),
        ..root
    })
}

/// Maximises throughput over thresholds and water-filling power subject to
/// `S_1 <= p_avg` and `E[D] <= d_max`.
///
/// The power constraint is always active (throughput increases with
/// power), so `lambda_p > 0`. The delay multiplier is first tried at zero;
/// only if that violates the delay bound is it bisected, each candidate
/// re-solving `lambda_p` and re-running the full back-substitution.
pub fn solve_optimal(
    ens: &ChannelEnsemble,
    timing: &SlotTiming,
    constraints: &Constraints,
    ctl: &SolverControl,
) -> Result<SolveReport> {
    ctl.validate()?;
    let constraints = Constraints::new(constraints.p_avg, constraints.d_max)?;
    timing.check(ens)?;
    let Constraints { p_avg, d_max } = constraints;
    let target = 1.0 / d_max;
    check_delay_feasible(ens, d_max, ctl)?;

    let inner_total = Cell::new(0usize);
    let inner = |lambda_d: f64| -> Result<(DualPoint, SuffixValues)> {
        let root = solve_lambda_p(lambda_d, p_avg, ens, timing, ctl)?;
        inner_total.set(inner_total.get() + root.iterations);
        let duals = DualPoint {
            lambda_p: root.x,
            lambda_d,
        };
        let (_, head) = waterfilling_pass(&duals, ens, timing)?;
        Ok((duals, head))
    };

    let (duals0, head0) = inner(0.0)?;
    let (duals, outer) = if head0.success >= target - ctl.tol {
        (duals0, 0)
    } else {
        let failed = Cell::new(None);
        let residual = |lambda_d: f64| match inner(lambda_d) {
            Ok((_, head)) => head.success - target,
            Err(e) => {
                failed.set(Some(e));
                f64::NAN
            }
        };
        let hi = initial_lambda_d_cap(ens, timing, p_avg);
        let root = bisect(residual, 0.0, hi, ctl);
        if let Some(e) = failed.take() {
            return Err(e);
        }
        let root = root.map_err(|e| as_non_convergence(e, "delay multiplier search"))?;
        (inner(root.x)?.0, root.iterations)
    };

    let policy = thresholds_waterfilling(&duals, ens, timing)?;
    build_report(
        policy,
        duals,
        ens,
        timing,
        d_max,
        Some(p_avg),
        Iterations {
            outer,
            inner_total: inner_total.get(),
        },
    )
}

// ---------------------------------------------------------------------------
// Residuals
// ---------------------------------------------------------------------------

/// Per-channel residual of the stationarity condition that defines each
/// threshold, evaluated on the policy's own suffix values.
///
/// Unit power: `c_i ln(1 + th_i) = U_{i+1} - lambda_d (1 - p_{i+1})`, or a
/// nonpositive right side when `th_i = 0`. Water-filling:
/// `Y(th_i) = U_{i+1} - lambda_p S_{i+1} - lambda_d (1 - p_{i+1})`.
pub fn stationarity_residuals(
    policy: &StoppingPolicy,
    duals: &DualPoint,
    ens: &ChannelEnsemble,
    timing: &SlotTiming,
) -> Result<Vec<f64>> {
    let suffix = analytic::suffix_values(policy, ens, timing)?;
    let out = policy
        .thresholds()
        .iter()
        .enumerate()
        .map(|(k, &th)| {
            let c = timing.remaining_fraction(k + 1);
            let next = &suffix[k + 1];
            match policy.power_rule() {
                PowerRule::ConstantOne => {
                    let rhs = next.throughput - duals.lambda_d * (1.0 - next.success);
                    if th == 0.0 {
                        rhs.max(0.0)
                    } else if th.is_infinite() {
                        0.0
                    } else {
                        (c * th.ln_1p() - rhs).abs()
                    }
                }
                PowerRule::WaterFilling { level } => {
                    let lambda_p = 1.0 / level;
                    let rhs = stationarity_rhs(
                        &DualPoint {
                            lambda_p,
                            lambda_d: duals.lambda_d,
                        },
                        next,
                    );
                    if th.is_infinite() {
                        0.0
                    } else {
                        (gamma_finding_lhs(th, lambda_p, c) - rhs).abs()
                    }
                }
            }
        })
        .collect();
    Ok(out)
}

fn build_report(
    policy: StoppingPolicy,
    duals: DualPoint,
    ens: &ChannelEnsemble,
    timing: &SlotTiming,
    d_max: f64,
    p_avg: Option<f64>,
    iterations: Iterations,
) -> Result<SolveReport> {
    let metrics = analytic::evaluate(&policy, ens, timing)?;
    let stationarity = stationarity_residuals(&policy, &duals, ens, timing)?
        .into_iter()
        .fold(0.0, f64::max);
    let residuals = Residuals {
        power_slack: p_avg.map(|p| metrics.avg_power - p),
        delay_slack: metrics.success_prob - 1.0 / d_max,
        stationarity,
    };
    let status = ConstraintStatus {
        delay: if duals.lambda_d > 0.0 {
            DelayStatus::Active
        } else {
            DelayStatus::Inactive
        },
        power: match p_avg {
            None => PowerStatus::Absent,
            Some(_) if duals.lambda_p > 0.0 => PowerStatus::Active,
            Some(_) => PowerStatus::Inactive,
        },
    };
    Ok(SolveReport {
        policy,
        duals,
        metrics,
        residuals,
        iterations,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{evaluate, min_expected_delay, success_probability};
    use crate::model::FadingLaw;
    use crate::quad;
    use proptest::prelude::*;

    fn reference_instance(mean: f64) -> (ChannelEnsemble, SlotTiming) {
        let ens =
            ChannelEnsemble::homogeneous(10, 0.1, FadingLaw::exponential(mean).unwrap()).unwrap();
        let timing = SlotTiming::for_ensemble(0.05, &ens).unwrap();
        (ens, timing)
    }

    fn instance(theta: Vec<f64>, mean: f64, tau: f64) -> (ChannelEnsemble, SlotTiming) {
        let ens = ChannelEnsemble::new(theta, FadingLaw::exponential(mean).unwrap()).unwrap();
        let timing = SlotTiming::for_ensemble(tau, &ens).unwrap();
        (ens, timing)
    }

    #[test]
    fn bisect_examples() {
        let ctl = SolverControl {
            tol: 1e-12,
            ..Default::default()
        };
        let r = bisect(|x| x - 2.0, 0.0, 10.0, &ctl).unwrap();
        assert!((r.x - 2.0).abs() < 1e-11);
        let r = bisect(|x: f64| (-x).exp() - 0.5, 0.0, 10.0, &ctl).unwrap();
        assert!((r.x - std::f64::consts::LN_2).abs() < 1e-11);
        // bracket must be grown to reach the root
        let r = bisect(|x| x - 100.0, 0.0, 1.0, &ctl).unwrap();
        assert!((r.x - 100.0).abs() < 1e-9);
        assert!(matches!(
            bisect(|x: f64| x * x + 1.0, 0.0, 1.0, &ctl),
            Err(Error::NoBracket { .. })
        ));
        assert!(bisect(|x| x, 1.0, 0.0, &ctl).is_err());
    }

    #[test]
    fn last_threshold_is_zero_for_any_multiplier() {
        let (ens, timing) = reference_instance(1.0);
        for lambda_d in [0.0, 0.3, 5.0, 100.0] {
            let p = thresholds_two_level(lambda_d, &ens, &timing).unwrap();
            assert_eq!(p.thresholds()[9], 0.0);
        }
        let (one, t1) = instance(vec![0.7], 1.0, 0.05);
        assert_eq!(
            thresholds_two_level(0.0, &one, &t1).unwrap().thresholds(),
            &[0.0]
        );
        assert!(thresholds_two_level(-1.0, &one, &t1).is_err());
    }

    /// Stage-by-stage grid search over thresholds, exploiting that the
    /// optimal suffix does not depend on earlier thresholds.
    fn grid_dp(ens: &ChannelEnsemble, timing: &SlotTiming, step: f64, top: f64) -> (f64, f64) {
        let law = ens.fading();
        let (mut u, mut p) = (0.0, 0.0);
        let n = (top / step).round() as usize;
        for k in (0..ens.count()).rev() {
            let theta = ens.free_prob()[k];
            let c = timing.remaining_fraction(k + 1);
            let mut best = (f64::NEG_INFINITY, 0.0);
            for j in 0..=n {
                let th = j as f64 * step;
                let rate = quad::integrate_to_infinity(
                    |g: f64| g.ln_1p() * law.pdf(g).unwrap(),
                    th,
                    law.mean_gain(),
                    1e-12,
                );
                let stop = theta * law.ccdf(th).unwrap();
                let value = theta * c * rate + (1.0 - stop) * u;
                if value > best.0 {
                    best = (value, stop + (1.0 - stop) * p);
                }
            }
            u = best.0;
            p = best.1;
        }
        (u, p)
    }

    #[test]
    fn unconstrained_thresholds_match_grid_search() {
        // the M=10 instance truncated to its last three channels' structure
        let (ens, timing) = instance(vec![0.1; 3], 1.0, 0.05);
        let policy = thresholds_two_level(0.0, &ens, &timing).unwrap();
        let m = evaluate(&policy, &ens, &timing).unwrap();
        let (u, p) = grid_dp(&ens, &timing, 0.01, 10.0);
        assert!(m.throughput >= u - 1e-12, "solver below grid optimum");
        assert!((m.throughput - u).abs() < 1e-4, "{} vs {}", m.throughput, u);
        assert!((m.success_prob - p).abs() < 1e-2);
    }

    #[test]
    fn loose_delay_bound_is_inactive() {
        let (ens, timing) = reference_instance(1.0);
        let ctl = SolverControl::default();
        let report = solve_two_level(&ens, &timing, 1e6, &ctl).unwrap();
        let free = thresholds_two_level(0.0, &ens, &timing).unwrap();
        assert_eq!(report.policy, free);
        assert_eq!(report.status.delay, DelayStatus::Inactive);
        assert_eq!(report.status.power, PowerStatus::Absent);
        assert_eq!(report.duals.lambda_d, 0.0);
    }

    #[test]
    fn minimum_delay_bound_forces_zero_thresholds() {
        let (ens, timing) = reference_instance(1.0);
        let ctl = SolverControl::default();
        let d_min = min_expected_delay(&ens).unwrap();
        let report = solve_two_level(&ens, &timing, d_min, &ctl).unwrap();
        assert!(report.policy.thresholds().iter().all(|&t| t <= 1e-6));
        let p_max = 1.0 - 0.9f64.powi(10);
        assert!((report.metrics.success_prob - p_max).abs() < 1e-9);
        assert_eq!(report.status.delay, DelayStatus::Active);
    }

    #[test]
    fn infeasible_delay_bound_is_reported() {
        let (ens, timing) = reference_instance(1.0);
        let err = solve_two_level(&ens, &timing, 1.5, &SolverControl::default()).unwrap_err();
        match err {
            Error::Infeasible { min_delay, .. } => assert!((min_delay - 1.535_34).abs() < 1e-5),
            other => panic!("unexpected {other:?}"),
        }
        let c = Constraints::new(0.5, 1.5).unwrap();
        assert!(matches!(
            solve_optimal(&ens, &timing, &c, &SolverControl::default()),
            Err(Error::Infeasible { .. })
        ));
        assert!(solve_two_level(&ens, &timing, 0.9, &SolverControl::default()).is_err());
    }

    #[test]
    fn delay_constrained_gap_is_small_at_unit_gain() {
        let (ens, timing) = reference_instance(1.0);
        let ctl = SolverControl::default();
        let free = solve_unconstrained(&ens, &timing, &ctl).unwrap();
        let bound = solve_two_level(&ens, &timing, 1.54, &ctl).unwrap();
        let gap = (free.metrics.throughput - bound.metrics.throughput) / free.metrics.throughput;
        assert!(gap > 0.0 && gap < 0.04, "gap {gap}");
        assert!((bound.metrics.expected_delay - 1.54).abs() < 1e-6);
        assert!(free.metrics.expected_delay > 1.54);
    }

    #[test]
    fn generic_bisection_reproduces_solver_multiplier() {
        let (ens, timing) = reference_instance(1.0);
        let ctl = SolverControl {
            tol: 1e-12,
            ..Default::default()
        };
        let report = solve_two_level(&ens, &timing, 1.54, &ctl).unwrap();
        let root = bisect(
            |l| {
                let p = thresholds_two_level(l, &ens, &timing).unwrap();
                success_probability(&p, &ens).unwrap() - 1.0 / 1.54
            },
            0.0,
            50.0,
            &ctl,
        )
        .unwrap();
        assert!((root.x - report.duals.lambda_d).abs() < 1e-8 * root.x.max(1.0));
    }

    #[test]
    fn waterfilling_power_examples() {
        assert_eq!(waterfilling_power(0.7, 0.7).unwrap(), 0.0);
        assert!((waterfilling_power(2.0, 0.5).unwrap() - 1.5).abs() < 1e-15);
        assert!((waterfilling_power(1e9, 0.5).unwrap() - 2.0).abs() < 1e-8);
        assert!(waterfilling_power(0.0, 0.5).is_err());
        assert!(waterfilling_power(1.0, 0.0).is_err());
    }

    #[test]
    fn last_waterfilling_threshold_is_the_cutoff() {
        let (ens, timing) = reference_instance(2.0);
        for lp in [0.05, 0.4, 3.0] {
            let d = DualPoint::new(lp, 0.0).unwrap();
            let p = thresholds_waterfilling(&d, &ens, &timing).unwrap();
            assert!((p.thresholds()[9] - lp).abs() < 1e-14 * lp.max(1.0));
            assert!(p.thresholds().iter().all(|&t| t >= lp * (1.0 - 1e-12)));
        }
        let zero = DualPoint::new(0.0, 0.0).unwrap();
        assert!(matches!(
            thresholds_waterfilling(&zero, &ens, &timing),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn waterfilling_thresholds_solve_their_equation() {
        let (ens, timing) = instance(vec![0.3, 0.6, 0.2, 0.8, 0.4], 1.7, 0.04);
        for (lp, ld) in [(0.3, 0.0), (0.8, 0.4), (0.1, 2.0), (1.5, 0.05)] {
            let d = DualPoint::new(lp, ld).unwrap();
            let policy = thresholds_waterfilling(&d, &ens, &timing).unwrap();
            let suffix = analytic::suffix_values(&policy, &ens, &timing).unwrap();
            for (k, &th) in policy.thresholds().iter().enumerate() {
                let c = timing.remaining_fraction(k + 1);
                let rhs = stationarity_rhs(&d, &suffix[k + 1]);
                assert!((gamma_finding_lhs(th, lp, c) - rhs).abs() <= 1e-9);
                // independent root of Y(g) = rhs by bisection
                let (mut lo, mut hi) = if rhs >= 0.0 {
                    (lp, lp * 1e6)
                } else {
                    (lp * 1e-12, lp)
                };
                for _ in 0..300 {
                    let mid = 0.5 * (lo + hi);
                    if gamma_finding_lhs(mid, lp, c) > rhs {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                assert!((0.5 * (lo + hi) - th).abs() <= 1e-8 * th.max(1.0), "k={k}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn threshold_equation_lhs_is_increasing(
            gamma in 1e-3f64..50.0,
            rel in 1e-6f64..2.0,
            lambda_p in 1e-3f64..10.0,
            c in 0.05f64..1.0,
        ) {
            let delta = gamma * rel;
            prop_assert!(gamma_finding_lhs(gamma + delta, lambda_p, c) > gamma_finding_lhs(gamma, lambda_p, c));
        }
    }

    #[test]
    fn success_is_monotone_in_delay_multiplier() {
        let (ens, timing) = reference_instance(3.0);
        let mut prev = 0.0;
        for j in 0..100 {
            let l = j as f64 * 0.05;
            let p = success_probability(&thresholds_two_level(l, &ens, &timing).unwrap(), &ens)
                .unwrap();
            assert!(p >= prev - 1e-15, "lambda_d = {l}");
            prev = p;
        }
    }

    #[test]
    fn power_is_monotone_in_power_multiplier() {
        let (ens, timing) = reference_instance(1.0);
        for ld in [0.0, 2.0, 8.0] {
            let mut prev = f64::INFINITY;
            for j in 1..=100 {
                let lp = 0.02 * j as f64;
                let d = DualPoint::new(lp, ld).unwrap();
                let policy = thresholds_waterfilling(&d, &ens, &timing).unwrap();
                let s = evaluate(&policy, &ens, &timing).unwrap().avg_power;
                assert!(s <= prev + 1e-12, "lambda_p = {lp}, lambda_d = {ld}");
                prev = s;
            }
        }
    }

    /// Closed-form-free S_1 for a single always-free channel with
    /// threshold at the cutoff: `c int_lp^inf (1/lp - 1/g) e^{-g/m}/m dg`.
    fn single_channel_power(lp: f64, mean: f64, c: f64) -> f64 {
        c * quad::integrate_to_infinity(
            |g: f64| (1.0 / lp - 1.0 / g) * (-g / mean).exp() / mean,
            lp,
            mean,
            1e-14,
        )
    }

    #[test]
    fn single_channel_reduces_to_classic_waterfilling() {
        let (ens, timing) = instance(vec![1.0], 1.0, 0.05);
        let ctl = SolverControl {
            tol: 1e-11,
            ..Default::default()
        };
        let c = Constraints::new(1.0, 1e6).unwrap();
        let report = solve_optimal(&ens, &timing, &c, &ctl).unwrap();
        let (mut lo, mut hi) = (1e-6, 50.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if single_channel_power(mid, 1.0, 0.95) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert!(
            (report.duals.lambda_p - oracle).abs() < 1e-8,
            "{} vs {oracle}",
            report.duals.lambda_p
        );
        assert!((report.policy.thresholds()[0] - report.duals.lambda_p).abs() < 1e-12);
        assert_eq!(report.status.delay, DelayStatus::Inactive);
        assert_eq!(report.status.power, PowerStatus::Active);

        let doubled =
            solve_optimal(&ens, &timing, &Constraints::new(2.0, 1e6).unwrap(), &ctl).unwrap();
        assert!(doubled.metrics.throughput > report.metrics.throughput);
    }

    #[test]
    fn optimal_power_meets_both_constraints() {
        let (ens, timing) = reference_instance(1.0);
        let ctl = SolverControl {
            tol: 1e-11,
            ..Default::default()
        };
        let two = solve_two_level(&ens, &timing, 1.54, &ctl).unwrap();
        let c = Constraints::new(two.metrics.avg_power, 1.54).unwrap();
        let opt = solve_optimal(&ens, &timing, &c, &ctl).unwrap();
        assert_eq!(opt.status.power, PowerStatus::Active);
        assert_eq!(opt.status.delay, DelayStatus::Active);
        assert!((opt.metrics.avg_power - c.p_avg).abs() <= 1e-10 * c.p_avg);
        assert!((opt.metrics.expected_delay - 1.54).abs() < 1e-8);
        assert!(opt.metrics.throughput > two.metrics.throughput);
        let (cs_p, cs_d) = opt.complementary_slackness();
        assert!(cs_p <= 1e-8 && cs_d <= 1e-8);
        assert!(opt.residuals.stationarity <= 1e-8);
    }

    #[test]
    fn two_level_grid_oracle_with_delay_constraint() {
        let (ens, timing) = instance(vec![0.4, 0.6], 1.0, 0.05);
        let ctl = SolverControl {
            tol: 1e-12,
            ..Default::default()
        };
        let free = solve_unconstrained(&ens, &timing, &ctl).unwrap();
        let p_max = max_success_probability(&ens);
        let d_max = 2.0 / (free.metrics.success_prob + p_max);
        let report = solve_two_level(&ens, &timing, d_max, &ctl).unwrap();
        assert_eq!(report.status.delay, DelayStatus::Active);
        let law = ens.fading();
        let step = 0.02;
        let grid: Vec<_> = (0..=400)
            .map(|j| stage_integrals(law, j as f64 * step, PowerRule::ConstantOne))
            .collect();
        let (c1, c2) = (timing.remaining_fraction(1), timing.remaining_fraction(2));
        let (t1, t2) = (0.4, 0.6);
        let mut best = f64::NEG_INFINITY;
        for a in &grid {
            for b in &grid {
                let u2 = t2 * c2 * b.rate;
                let p2 = t2 * b.stop_prob;
                let q1 = t1 * a.stop_prob;
                let p = q1 + (1.0 - q1) * p2;
                if p >= 1.0 / d_max {
                    best = best.max(t1 * c1 * a.rate + (1.0 - q1) * u2);
                }
            }
        }
        assert!(report.metrics.throughput >= best - 1e-9);
        assert!(report.metrics.throughput - best < 1e-3);
    }
}
