//! Problem-instance data shared by the evaluators, solvers and simulator.
//!
//! Channels are indexed by their position in the sensing order. Public
//! accessors take 1-based positions (`1..=M`) where the position carries
//! meaning (the remaining-slot fraction `c_i = 1 - i * tau/T`), and plain
//! slices elsewhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distribution family of the per-channel power gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadingKind {
    /// Rayleigh amplitude, exponentially distributed power gain.
    Exponential,
}

/// I.i.d. fading law of the channel gain (SNR per unit power, unit noise).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingLaw {
    kind: FadingKind,
    mean_gain: f64,
}

impl FadingLaw {
    pub fn new(kind: FadingKind, mean_gain: f64) -> Result<Self> {
        if !(mean_gain > 0.0 && mean_gain.is_finite()) {
            return Err(Error::Argument(format!(
                "mean gain must be positive and finite, got {mean_gain}"
            )));
        }
        Ok(Self { kind, mean_gain })
    }

    pub fn exponential(mean_gain: f64) -> Result<Self> {
        Self::new(FadingKind::Exponential, mean_gain)
    }

    pub fn kind(&self) -> FadingKind {
        self.kind
    }

    pub fn mean_gain(&self) -> f64 {
        self.mean_gain
    }

    /// Density of the gain at `x >= 0`.
    pub fn pdf(&self, x: f64) -> Result<f64> {
        check_gain_arg("pdf", x)?;
        Ok(self.pdf_unchecked(x))
    }

    /// Survival function `Pr[gain > x]` for `x >= 0`; `x = +inf` gives 0.
    pub fn ccdf(&self, x: f64) -> Result<f64> {
        check_gain_arg("ccdf", x)?;
        Ok(self.ccdf_unchecked(x))
    }

    pub(crate) fn pdf_unchecked(&self, x: f64) -> f64 {
        match self.kind {
            FadingKind::Exponential => (-x / self.mean_gain).exp() / self.mean_gain,
        }
    }

    pub(crate) fn ccdf_unchecked(&self, x: f64) -> f64 {
        match self.kind {
            FadingKind::Exponential => (-x / self.mean_gain).exp(),
        }
    }
}

fn check_gain_arg(function: &'static str, x: f64) -> Result<()> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::domain(
            function,
            format!("gain must be >= 0, got {x}"),
        ));
    }
    Ok(())
}

/// The `M` channels in sensing order with their free probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEnsemble {
    free_prob: Vec<f64>,
    fading: FadingLaw,
}

impl ChannelEnsemble {
    pub fn new(free_prob: Vec<f64>, fading: FadingLaw) -> Result<Self> {
        if free_prob.is_empty() {
            return Err(Error::Argument("at least one channel is required".into()));
        }
        if let Some((i, &t)) = free_prob
            .iter()
            .enumerate()
            .find(|(_, &t)| !(t > 0.0 && t <= 1.0))
        {
            return Err(Error::Argument(format!(
                "free probability of channel {} must lie in (0, 1], got {t}",
                i + 1
            )));
        }
        Ok(Self { free_prob, fading })
    }

    /// `count` channels sharing the same free probability.
    pub fn homogeneous(count: usize, theta: f64, fading: FadingLaw) -> Result<Self> {
        Self::new(vec![theta; count], fading)
    }

    pub fn count(&self) -> usize {
        self.free_prob.len()
    }

    pub fn free_prob(&self) -> &[f64] {
        &self.free_prob
    }

    pub fn fading(&self) -> &FadingLaw {
        &self.fading
    }

    /// Same channels under a different fading law.
    pub fn with_fading(&self, fading: FadingLaw) -> Self {
        Self {
            free_prob: self.free_prob.clone(),
            fading,
        }
    }
}

/// Sensing time as a fraction of the slot length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotTiming {
    tau_over_t: f64,
    channels: usize,
}

impl SlotTiming {
    /// Requires `0 < channels * tau_over_t < 1` so every `c_i` is in (0, 1).
    pub fn new(tau_over_t: f64, channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Argument("at least one channel is required".into()));
        }
        if !(tau_over_t > 0.0 && channels as f64 * tau_over_t < 1.0) {
            return Err(Error::Argument(format!(
                "sensing fraction must satisfy 0 < M*tau/T < 1, got tau/T = {tau_over_t} with M = {channels}"
            )));
        }
        Ok(Self {
            tau_over_t,
            channels,
        })
    }

    pub fn for_ensemble(tau_over_t: f64, ens: &ChannelEnsemble) -> Result<Self> {
        Self::new(tau_over_t, ens.count())
    }

    pub fn tau_over_t(&self) -> f64 {
        self.tau_over_t
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `c_i = 1 - i * tau/T` for the 1-based position `i`.
    pub fn remaining_fraction(&self, position: usize) -> f64 {
        1.0 - position as f64 * self.tau_over_t
    }

    /// `[c_1, ..., c_M]`.
    pub fn fractions(&self) -> Vec<f64> {
        (1..=self.channels)
            .map(|i| self.remaining_fraction(i))
            .collect()
    }

    pub(crate) fn check(&self, ens: &ChannelEnsemble) -> Result<()> {
        if self.channels != ens.count() {
            return Err(Error::Argument(format!(
                "timing was built for {} channels but the ensemble has {}",
                self.channels,
                ens.count()
            )));
        }
        Ok(())
    }
}

/// Average-power budget and average-delay bound (in slots).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub p_avg: f64,
    pub d_max: f64,
}

impl Constraints {
    pub fn new(p_avg: f64, d_max: f64) -> Result<Self> {
        if !(p_avg > 0.0 && p_avg.is_finite()) {
            return Err(Error::Argument(format!(
                "average power budget must be positive, got {p_avg}"
            )));
        }
        check_delay_bound(d_max)?;
        Ok(Self { p_avg, d_max })
    }
}

pub(crate) fn check_delay_bound(d_max: f64) -> Result<()> {
    // +inf is allowed and means "no delay constraint"
    if d_max.is_nan() || d_max < 1.0 {
        return Err(Error::Argument(format!(
            "delay bound must be >= 1 slot, got {d_max}"
        )));
    }
    Ok(())
}

/// How much power is spent once the user stops on a channel with gain `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum PowerRule {
    /// Unit power on the chosen channel.
    ConstantOne,
    /// `P(gamma) = (level - 1/gamma)^+`, with `level = 1/lambda_P`.
    WaterFilling { level: f64 },
}

impl PowerRule {
    pub fn water_filling(level: f64) -> Result<Self> {
        if !(level > 0.0 && level.is_finite()) {
            return Err(Error::Argument(format!(
                "water level must be positive and finite, got {level}"
            )));
        }
        Ok(PowerRule::WaterFilling { level })
    }

    pub fn power(&self, gamma: f64) -> f64 {
        match *self {
            PowerRule::ConstantOne => 1.0,
            PowerRule::WaterFilling { level } => {
                if gamma <= 0.0 {
                    0.0
                } else {
                    (level - 1.0 / gamma).max(0.0)
                }
            }
        }
    }
}

/// Per-channel gain thresholds plus the power rule applied after stopping.
///
/// The user stops on position `i` when the channel is free and its gain is
/// strictly above `thresholds[i-1]`. An infinite threshold always skips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingPolicy {
    thresholds: Vec<f64>,
    power_rule: PowerRule,
}

impl StoppingPolicy {
    pub fn new(thresholds: Vec<f64>, power_rule: PowerRule) -> Result<Self> {
        if let Some(t) = thresholds.iter().find(|t| t.is_nan() || **t < 0.0) {
            return Err(Error::Argument(format!(
                "thresholds must be >= 0 (or +inf), got {t}"
            )));
        }
        if let PowerRule::WaterFilling { level } = power_rule {
            PowerRule::water_filling(level)?;
        }
        Ok(Self {
            thresholds,
            power_rule,
        })
    }

    pub fn constant_power(thresholds: Vec<f64>) -> Result<Self> {
        Self::new(thresholds, PowerRule::ConstantOne)
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn power_rule(&self) -> PowerRule {
        self.power_rule
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub(crate) fn check(&self, ens: &ChannelEnsemble) -> Result<()> {
        if self.thresholds.len() != ens.count() {
            return Err(Error::LengthMismatch {
                expected: ens.count(),
                got: self.thresholds.len(),
            });
        }
        Ok(())
    }
}
