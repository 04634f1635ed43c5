//! Experiment configuration, sweep orchestration and result emission.
//!
//! A config is one JSON document; see `configs/` for the shipped examples
//! and the README for the schema. Every sweep point (one mean gain) is
//! solved for each requested mode, optionally simulated, and turned into
//! one [`ResultRow`] per mode. Points run concurrently; rows come back
//! ordered by (mean gain, mode).

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::min_expected_delay;
use crate::error::Error;
use crate::model::{ChannelEnsemble, Constraints, FadingKind, FadingLaw, SlotTiming};
use crate::sim;
use crate::solver::{self, SolveReport, SolverControl};

pub const CONFIG_SCHEMA: &str = "stopsense.config.v1";

/// Process exit codes.
pub mod exit_code {
    pub const SUCCESS: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const INFEASIBLE: i32 = 3;
    pub const NON_CONVERGENCE: i32 = 4;
    pub const IO: i32 = 5;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    TwoLevelUnconstrained,
    TwoLevelConstrained,
    OptimalPower,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::TwoLevelUnconstrained => "two_level_unconstrained",
            Mode::TwoLevelConstrained => "two_level_constrained",
            Mode::OptimalPower => "optimal_power",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| format!("unknown mode '{s}'"))
    }
}

/// A scalar broadcast to every channel, or one value per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Theta {
    Scalar(f64),
    PerChannel(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeanGains {
    Single(f64),
    Sweep(Vec<f64>),
}

impl MeanGains {
    pub fn values(&self) -> Vec<f64> {
        match self {
            MeanGains::Single(g) => vec![*g],
            MeanGains::Sweep(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayRule {
    /// The smallest delay the channels allow.
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DelayBound {
    Slots(f64),
    Rule(DelayRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerRuleSpec {
    /// Use the delay-constrained unit-power solution's average power.
    MatchTwoLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PowerBudget {
    Value(f64),
    Rule(PowerRuleSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FadingConfig {
    pub kind: FadingKind,
    pub mean_gain: MeanGains,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelsConfig {
    pub count: usize,
    pub theta: Theta,
    pub fading: FadingConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub tau_over_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsConfig {
    #[serde(default)]
    pub p_avg: Option<PowerBudget>,
    #[serde(default)]
    pub d_max: Option<DelayBound>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverControl::default();
        Self {
            tol: d.tol,
            max_iters: d.max_bisection_iters,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub enabled: bool,
    pub slots: u64,
    pub seed: u64,
    /// Packets in the per-packet delay trace; 0 skips the trace.
    pub packets: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            slots: 1_000_000,
            seed: 1,
            packets: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub channels: ChannelsConfig,
    pub timing: TimingConfig,
    #[serde(default)]
    pub constraints: ConstraintsConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    pub modes: Vec<Mode>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Read(#[from] std::io::Error),
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.schema != CONFIG_SCHEMA {
            return invalid(format!(
                "unsupported schema '{}', expected '{CONFIG_SCHEMA}'",
                self.schema
            ));
        }
        if self.modes.is_empty() {
            return invalid("at least one mode is required".into());
        }
        let gains = self.channels.fading.mean_gain.values();
        if gains.is_empty() {
            return invalid("the mean-gain sweep list is empty".into());
        }
        for &g in &gains {
            FadingLaw::new(self.channels.fading.kind, g)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let ens = self
            .ensemble(gains[0])
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        SlotTiming::for_ensemble(self.timing.tau_over_t, &ens)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let needs_delay = self
            .modes
            .iter()
            .any(|m| matches!(m, Mode::TwoLevelConstrained | Mode::OptimalPower));
        match self.constraints.d_max {
            None if needs_delay => {
                return invalid("constrained modes need constraints.d_max".into())
            }
            Some(DelayBound::Slots(d)) if d.is_nan() || d < 1.0 => {
                return invalid(format!("d_max must be >= 1 slot, got {d}"))
            }
            _ => {}
        }
        if self.modes.contains(&Mode::OptimalPower) {
            match self.constraints.p_avg {
                None => return invalid("optimal_power needs constraints.p_avg".into()),
                Some(PowerBudget::Value(p)) if !(p > 0.0 && p.is_finite()) => {
                    return invalid(format!("p_avg must be positive, got {p}"))
                }
                _ => {}
            }
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iters == 0 {
            return invalid("solver.tol must be > 0 and solver.max_iters >= 1".into());
        }
        if self.simulation.enabled && self.simulation.slots == 0 {
            return invalid("simulation.slots must be >= 1".into());
        }
        Ok(())
    }

    pub fn ensemble(&self, mean_gain: f64) -> crate::Result<ChannelEnsemble> {
        let law = FadingLaw::new(self.channels.fading.kind, mean_gain)?;
        let theta = match &self.channels.theta {
            Theta::Scalar(t) => vec![*t; self.channels.count],
            Theta::PerChannel(v) => {
                if v.len() != self.channels.count {
                    return Err(Error::Argument(format!(
                        "theta has {} entries but channels.count is {}",
                        v.len(),
                        self.channels.count
                    )));
                }
                v.clone()
            }
        };
        ChannelEnsemble::new(theta, law)
    }

    pub fn solver_control(&self) -> SolverControl {
        SolverControl {
            tol: self.solver.tol,
            max_bisection_iters: self.solver.max_iters,
            ..SolverControl::default()
        }
    }

    /// Requested modes, deduplicated, in output order.
    pub fn ordered_modes(&self) -> Vec<Mode> {
        let mut modes = self.modes.clone();
        modes.sort();
        modes.dedup();
        modes
    }
}

// ---------------------------------------------------------------------------
// Rows
// ---------------------------------------------------------------------------

/// Serde helpers writing non-finite numbers as strings.
mod finite_or_marker {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&super::format_number(*v))
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad number '{other}'"))),
            },
        }
    }

    pub mod vec {
        use serde::ser::SerializeSeq;
        use serde::{Deserialize, Deserializer, Serializer};

        #[derive(serde::Serialize, Deserialize)]
        struct Item(#[serde(with = "super")] f64);

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v {
                seq.serialize_element(&Item(*x))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Ok(Vec::<Item>::deserialize(d)?
                .into_iter()
                .map(|i| i.0)
                .collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimColumns {
    pub slots: u64,
    pub throughput: f64,
    pub throughput_se: f64,
    pub power: f64,
    pub power_se: f64,
    pub success: f64,
    pub success_se: f64,
    #[serde(with = "finite_or_marker")]
    pub delay: f64,
    #[serde(with = "finite_or_marker")]
    pub delay_se: f64,
    pub packets: Option<u64>,
    pub packet_delay: Option<f64>,
    pub packet_delay_se: Option<f64>,
}

/// One (mean gain, mode) result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub mean_gain: f64,
    pub mode: Mode,
    #[serde(with = "finite_or_marker")]
    pub d_max: f64,
    pub p_avg: Option<f64>,
    pub throughput: f64,
    pub avg_power: f64,
    pub success_prob: f64,
    #[serde(with = "finite_or_marker")]
    pub expected_delay: f64,
    pub sim: Option<SimColumns>,
    pub lambda_p: f64,
    pub lambda_d: f64,
    pub iter_outer: usize,
    pub iter_inner: usize,
    pub seed: u64,
    /// Solve (and simulate) time in seconds, only when timing is requested.
    pub wall_time_s: Option<f64>,
    #[serde(with = "finite_or_marker::vec")]
    pub thresholds: Vec<f64>,
    /// `(U - U_baseline) / U_baseline` in comparison runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_throughput_vs_baseline: Option<f64>,
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub simulate: bool,
    pub record_wall_time: bool,
    /// Append throughput gaps relative to the first requested mode.
    pub compare: bool,
}

/// A sweep point that produced no rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFailure {
    pub mean_gain: f64,
    pub mode: Mode,
    pub error: Error,
}

impl PointFailure {
    pub fn exit_code(&self) -> i32 {
        match self.error {
            Error::Infeasible { .. } => exit_code::INFEASIBLE,
            Error::NonConvergence { .. } | Error::NoBracket { .. } => exit_code::NON_CONVERGENCE,
            _ => exit_code::CONFIG,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<PointFailure>,
}

impl RunOutput {
    pub fn exit_code(&self) -> i32 {
        self.failures
            .first()
            .map_or(exit_code::SUCCESS, PointFailure::exit_code)
    }
}

/// Solves (and optionally simulates) every sweep point and mode.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> RunOutput {
    let gains = config.channels.fading.mean_gain.values();
    let modes = if opts.compare {
        // baseline first, as listed
        let mut m = config.modes.clone();
        m.dedup();
        m
    } else {
        config.ordered_modes()
    };
    let results: Vec<Result<Vec<ResultRow>, PointFailure>> = gains
        .par_iter()
        .map(|&g| run_point(config, g, &modes, opts))
        .collect();
    let mut out = RunOutput::default();
    for r in results {
        match r {
            Ok(rows) => out.rows.extend(rows),
            Err(f) => out.failures.push(f),
        }
    }
    out
}

fn run_point(
    config: &ExperimentConfig,
    mean_gain: f64,
    modes: &[Mode],
    opts: &RunOptions,
) -> Result<Vec<ResultRow>, PointFailure> {
    let fail = |mode: Mode| {
        move |error: Error| PointFailure {
            mean_gain,
            mode,
            error,
        }
    };
    let first = modes[0];
    let ens = config.ensemble(mean_gain).map_err(fail(first))?;
    let timing = SlotTiming::for_ensemble(config.timing.tau_over_t, &ens).map_err(fail(first))?;
    let ctl = config.solver_control();
    let d_max = match config.constraints.d_max {
        Some(DelayBound::Slots(d)) => d,
        Some(DelayBound::Rule(DelayRule::Min)) => min_expected_delay(&ens).map_err(fail(first))?,
        None => f64::INFINITY,
    };

    let mut paired_power = None;
    let mut rows = Vec::with_capacity(modes.len());
    for &mode in modes {
        let started = Instant::now();
        let (report, row_d_max, p_avg) = match mode {
            Mode::TwoLevelUnconstrained => (
                solver::solve_unconstrained(&ens, &timing, &ctl),
                f64::INFINITY,
                None,
            ),
            Mode::TwoLevelConstrained => {
                let r = solver::solve_two_level(&ens, &timing, d_max, &ctl);
                if let Ok(r) = &r {
                    paired_power = Some(r.metrics.avg_power);
                }
                (r, d_max, None)
            }
            Mode::OptimalPower => {
                let p_avg = match config.constraints.p_avg {
                    Some(PowerBudget::Value(p)) => p,
                    _ => match paired_power {
                        Some(p) => p,
                        None => {
                            solver::solve_two_level(&ens, &timing, d_max, &ctl)
                                .map_err(fail(mode))?
                                .metrics
                                .avg_power
                        }
                    },
                };
                let c = Constraints::new(p_avg, d_max).map_err(fail(mode))?;
                (
                    solver::solve_optimal(&ens, &timing, &c, &ctl),
                    d_max,
                    Some(p_avg),
                )
            }
        };
        let report = report.map_err(fail(mode))?;
        let sim = if opts.simulate {
            Some(simulate_row(config, &report, &ens, &timing).map_err(fail(mode))?)
        } else {
            None
        };
        let wall = started.elapsed().as_secs_f64();
        rows.push(make_row(
            mean_gain,
            mode,
            row_d_max,
            p_avg,
            &report,
            sim,
            config.simulation.seed,
            opts.record_wall_time.then_some(wall),
        ));
    }
    if opts.compare {
        let base = rows[0].throughput;
        for r in &mut rows {
            r.rel_throughput_vs_baseline = Some((r.throughput - base) / base);
        }
    }
    Ok(rows)
}

fn simulate_row(
    config: &ExperimentConfig,
    report: &SolveReport,
    ens: &ChannelEnsemble,
    timing: &SlotTiming,
) -> crate::Result<SimColumns> {
    let s = &config.simulation;
    let est = sim::simulate(&report.policy, ens, timing, s.slots, s.seed)?;
    let (packets, packet_delay, packet_delay_se) = if s.packets > 0 {
        let trace = sim::packet_delay_trace(&report.policy, ens, timing, s.packets, s.seed)?;
        let n = trace.len() as f64;
        let mean = trace.iter().sum::<u64>() as f64 / n;
        let var = trace
            .iter()
            .map(|&d| (d as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0).max(1.0);
        (Some(s.packets), Some(mean), Some((var / n).sqrt()))
    } else {
        (None, None, None)
    };
    Ok(SimColumns {
        slots: est.slots,
        throughput: est.throughput_mean,
        throughput_se: est.throughput_se,
        power: est.power_mean,
        power_se: est.power_se,
        success: est.success_rate,
        success_se: est.success_se,
        delay: est.delay_mean,
        delay_se: est.delay_se,
        packets,
        packet_delay,
        packet_delay_se,
    })
}

#[allow(clippy::too_many_arguments)]
fn make_row(
    mean_gain: f64,
    mode: Mode,
    d_max: f64,
    p_avg: Option<f64>,
    report: &SolveReport,
    sim: Option<SimColumns>,
    seed: u64,
    wall_time_s: Option<f64>,
) -> ResultRow {
    ResultRow {
        mean_gain,
        mode,
        d_max,
        p_avg,
        throughput: report.metrics.throughput,
        avg_power: report.metrics.avg_power,
        success_prob: report.metrics.success_prob,
        expected_delay: report.metrics.expected_delay,
        sim,
        lambda_p: report.duals.lambda_p,
        lambda_d: report.duals.lambda_d,
        iter_outer: report.iterations.outer,
        iter_inner: report.iterations.inner_total,
        seed,
        wall_time_s,
        thresholds: report.policy.thresholds().to_vec(),
        rel_throughput_vs_baseline: None,
    }
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    JsonLines,
}

pub const CSV_COLUMNS: [&str; 27] = [
    "mean_gain",
    "mode",
    "d_max",
    "p_avg",
    "throughput",
    "avg_power",
    "success_prob",
    "expected_delay",
    "sim_slots",
    "sim_throughput",
    "sim_throughput_se",
    "sim_power",
    "sim_power_se",
    "sim_success",
    "sim_success_se",
    "sim_delay",
    "sim_delay_se",
    "sim_packets",
    "sim_packet_delay",
    "sim_packet_delay_se",
    "lambda_p",
    "lambda_d",
    "iter_outer",
    "iter_inner",
    "seed",
    "wall_time_s",
    "thresholds",
];

/// Extra column present in comparison output.
pub const COMPARE_COLUMN: &str = "rel_throughput_vs_baseline";

/// Nine significant digits, fixed notation for moderate magnitudes,
/// `inf`/`-inf`/`nan` for non-finite values.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_owned()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        s
    }
}

fn opt<T, F: Fn(&T) -> String>(v: Option<T>, f: F) -> String {
    v.as_ref().map(f).unwrap_or_default()
}

fn csv_line(row: &ResultRow, compare: bool) -> String {
    let n = |x: f64| format_number(x);
    let s = row.sim.as_ref();
    let mut fields = vec![
        n(row.mean_gain),
        row.mode.as_str().to_owned(),
        n(row.d_max),
        opt(row.p_avg, |&v| n(v)),
        n(row.throughput),
        n(row.avg_power),
        n(row.success_prob),
        n(row.expected_delay),
        opt(s, |s| s.slots.to_string()),
        opt(s, |s| n(s.throughput)),
        opt(s, |s| n(s.throughput_se)),
        opt(s, |s| n(s.power)),
        opt(s, |s| n(s.power_se)),
        opt(s, |s| n(s.success)),
        opt(s, |s| n(s.success_se)),
        opt(s, |s| n(s.delay)),
        opt(s, |s| n(s.delay_se)),
        opt(s.and_then(|s| s.packets), |p| p.to_string()),
        opt(s.and_then(|s| s.packet_delay), |&v| n(v)),
        opt(s.and_then(|s| s.packet_delay_se), |&v| n(v)),
        n(row.lambda_p),
        n(row.lambda_d),
        row.iter_outer.to_string(),
        row.iter_inner.to_string(),
        row.seed.to_string(),
        opt(row.wall_time_s, |&v| n(v)),
    ];
    let joined: Vec<String> = row.thresholds.iter().map(|&t| n(t)).collect();
    fields.push(format!("\"{}\"", joined.join(";")));
    if compare {
        fields.push(opt(row.rel_throughput_vs_baseline, |&v| n(v)));
    }
    fields.join(",")
}

/// Renders rows as CSV (header first, LF endings) or JSON lines.
pub fn render(rows: &[ResultRow], format: OutputFormat) -> String {
    let compare = rows.iter().any(|r| r.rel_throughput_vs_baseline.is_some());
    let mut out = String::new();
    match format {
        OutputFormat::Csv => {
            out.push_str(&CSV_COLUMNS.join(","));
            if compare {
                out.push(',');
                out.push_str(COMPARE_COLUMN);
            }
            out.push('\n');
            for r in rows {
                out.push_str(&csv_line(r, compare));
                out.push('\n');
            }
        }
        OutputFormat::JsonLines => {
            for r in rows {
                let line = serde_json::to_string(r).expect("rows serialise");
                let _ = writeln!(out, "{line}");
            }
        }
    }
    out
}

/// Writes rendered rows to `dest`.
pub fn emit<W: Write>(
    rows: &[ResultRow],
    format: OutputFormat,
    dest: &mut W,
) -> std::io::Result<()> {
    if rows.is_empty() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "no rows to emit",
        ));
    }
    dest.write_all(render(rows, format).as_bytes())?;
    dest.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_config(modes: &str, extra: &str) -> ExperimentConfig {
        let text = format!(
            r#"{{
                "schema": "{CONFIG_SCHEMA}",
                "channels": {{"count": 10, "theta": 0.1,
                              "fading": {{"kind": "exponential", "mean_gain": [1.0, 10.0]}}}},
                "timing": {{"tau_over_t": 0.05}},
                "constraints": {{"d_max": 1.54, "p_avg": "match_two_level"}},
                "modes": {modes}
                {extra}
            }}"#
        );
        ExperimentConfig::from_json(&text).unwrap()
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(1.535_339_932_787_629_6), "1.53533993");
        assert_eq!(format_number(0.0), "0");
        assert_eq!(format_number(2.0), "2");
        assert_eq!(format_number(1e-7), "1e-7");
        assert_eq!(format_number(123_456_789_012.0), "1.23456789e11");
        assert_eq!(format_number(-0.000_123_456_789_01), "-0.000123456789");
        assert_eq!(format_number(f64::INFINITY), "inf");
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [
            Mode::TwoLevelUnconstrained,
            Mode::TwoLevelConstrained,
            Mode::OptimalPower,
        ] {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!("fastest".parse::<Mode>().is_err());
    }

    #[test]
    fn config_validation() {
        let ok = reference_config(r#"["two_level_constrained"]"#, "");
        assert_eq!(ok.channels.count, 10);
        let bad = r#"{"schema": "v0", "channels": {"count": 1, "theta": 1.0,
            "fading": {"kind": "exponential", "mean_gain": 1.0}},
            "timing": {"tau_over_t": 0.05}, "modes": ["two_level_unconstrained"]}"#;
        assert!(matches!(
            ExperimentConfig::from_json(bad),
            Err(ConfigError::Invalid(_))
        ));
        let no_delay = bad
            .replace("v0", CONFIG_SCHEMA)
            .replace("two_level_unconstrained", "two_level_constrained");
        assert!(ExperimentConfig::from_json(&no_delay).is_err());
        let empty_sweep = bad
            .replace("v0", CONFIG_SCHEMA)
            .replace("\"mean_gain\": 1.0", "\"mean_gain\": []");
        assert!(ExperimentConfig::from_json(&empty_sweep).is_err());
        let typo = bad
            .replace("v0", CONFIG_SCHEMA)
            .replace("tau_over_t", "tau");
        assert!(matches!(
            ExperimentConfig::from_json(&typo),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn rows_come_back_in_gain_then_mode_order() {
        let cfg = reference_config(
            r#"["optimal_power", "two_level_unconstrained", "two_level_constrained"]"#,
            "",
        );
        let out = run(&cfg, &RunOptions::default());
        assert!(out.failures.is_empty());
        let keys: Vec<_> = out.rows.iter().map(|r| (r.mean_gain, r.mode)).collect();
        assert_eq!(keys.len(), 6);
        assert_eq!(keys[0], (1.0, Mode::TwoLevelUnconstrained));
        assert_eq!(keys[2], (1.0, Mode::OptimalPower));
        assert_eq!(keys[3], (10.0, Mode::TwoLevelUnconstrained));
        // paired power budget
        assert_eq!(out.rows[2].p_avg, Some(out.rows[1].avg_power));
        assert_eq!(out.exit_code(), 0);
    }

    #[test]
    fn infeasible_point_yields_no_rows_and_exit_three() {
        let mut cfg = reference_config(
            r#"["two_level_unconstrained", "two_level_constrained"]"#,
            "",
        );
        cfg.constraints.d_max = Some(DelayBound::Slots(1.4));
        let out = run(&cfg, &RunOptions::default());
        assert!(out.rows.is_empty());
        assert_eq!(out.failures.len(), 2);
        assert_eq!(out.exit_code(), exit_code::INFEASIBLE);
    }

    #[test]
    fn csv_and_json_lines() {
        let cfg = reference_config(r#"["two_level_constrained"]"#, "");
        let mut out = run(&cfg, &RunOptions::default());
        out.rows.truncate(1);
        let csv = render(&out.rows, OutputFormat::Csv);
        assert_eq!(csv.lines().count(), 2);
        assert!(!csv.contains('\r'));
        let mut reader = csv::Reader::from_reader(csv.as_bytes());
        assert_eq!(reader.headers().unwrap().len(), CSV_COLUMNS.len());
        for rec in reader.records() {
            let rec = rec.unwrap();
            assert_eq!(rec.len(), CSV_COLUMNS.len());
            assert_eq!(rec[26].split(';').count(), 10);
        }
        let jl = render(&out.rows, OutputFormat::JsonLines);
        let back: ResultRow = serde_json::from_str(jl.lines().next().unwrap()).unwrap();
        assert_eq!(back, out.rows[0]);

        let mut sink = Vec::new();
        assert!(emit(&[], OutputFormat::Csv, &mut sink).is_err());
    }

    #[test]
    fn unconstrained_rows_round_trip_infinite_bound() {
        let cfg = reference_config(r#"["two_level_unconstrained"]"#, "");
        let out = run(&cfg, &RunOptions::default());
        let line = render(&out.rows[..1], OutputFormat::JsonLines);
        assert!(line.contains("\"d_max\":\"inf\""));
        let back: ResultRow = serde_json::from_str(line.trim_end()).unwrap();
        assert_eq!(back, out.rows[0]);
    }
}
