//! Monte Carlo slot simulator.
//!
//! Each slot draws a fresh free/busy state and gain for every channel, scans
//! the channels in sensing order and stops at the first free channel whose
//! gain exceeds its threshold. Nothing here uses the analytic recursions.
//!
//! Work is split into a fixed number of batches. Batch `b` owns the
//! ChaCha8 stream `b` of the generator seeded with `seed`, so results depend
//! only on `(seed, inputs)` and not on how many threads run the batches.
//! Standard errors are batch-means estimates.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::success_probability;
use crate::error::{Error, Result};
use crate::model::{ChannelEnsemble, FadingKind, FadingLaw, PowerRule, SlotTiming, StoppingPolicy};

/// Upper bound on the number of batches a run is split into.
pub const MAX_BATCHES: usize = 64;

/// Slots simulated for a single packet before declaring its delay infinite.
pub const PACKET_SLOT_CAP: u64 = 10_000_000;

// packet traces use a disjoint range of generator streams
const TRACE_STREAM_BASE: u64 = 1 << 32;

/// What happened in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotOutcome {
    /// 1-based position of the channel used; `None` for a blocked slot.
    pub stop_index: Option<usize>,
    /// `c_k log(1 + P gamma_k)`, or 0.
    pub rate: f64,
    /// `c_k P`, or 0.
    pub power_used: f64,
}

/// Sample means with batch-means standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimEstimates {
    pub slots: u64,
    pub throughput_mean: f64,
    pub throughput_se: f64,
    pub power_mean: f64,
    pub power_se: f64,
    pub success_rate: f64,
    pub success_se: f64,
    /// Slots per packet including the successful one (`1 / success_rate`);
    /// `+inf` when no slot succeeded.
    pub delay_mean: f64,
    /// Delta-method error of `delay_mean`.
    pub delay_se: f64,
    /// Blocked slots per packet, `delay_mean - 1`.
    pub wasted_slots_mean: f64,
}

impl SimEstimates {
    pub fn delay_is_infinite(&self) -> bool {
        self.delay_mean.is_infinite()
    }
}

struct SlotSampler<'a> {
    thresholds: &'a [f64],
    free_prob: &'a [f64],
    fractions: Vec<f64>,
    rule: PowerRule,
    law: FadingLaw,
}

impl<'a> SlotSampler<'a> {
    fn new(
        policy: &'a StoppingPolicy,
        ens: &'a ChannelEnsemble,
        timing: &SlotTiming,
    ) -> Result<Self> {
        policy.check(ens)?;
        timing.check(ens)?;
        Ok(Self {
            thresholds: policy.thresholds(),
            free_prob: ens.free_prob(),
            fractions: timing.fractions(),
            rule: policy.power_rule(),
            law: *ens.fading(),
        })
    }

    fn draw_gain<R: Rng>(&self, rng: &mut R) -> f64 {
        match self.law.kind() {
            FadingKind::Exponential => {
                let e: f64 = Exp1.sample(rng);
                e * self.law.mean_gain()
            }
        }
    }

    /// Draws all states and gains for the slot, then scans.
    fn sample<R: Rng>(&self, rng: &mut R, free: &mut [bool], gains: &mut [f64]) -> SlotOutcome {
        for (k, (f, g)) in free.iter_mut().zip(gains.iter_mut()).enumerate() {
            *f = rng.random::<f64>() < self.free_prob[k];
            *g = self.draw_gain(rng);
        }
        for k in 0..self.thresholds.len() {
            if free[k] && gains[k] > self.thresholds[k] {
                let c = self.fractions[k];
                let p = self.rule.power(gains[k]);
                return SlotOutcome {
                    stop_index: Some(k + 1),
                    rate: c * (p * gains[k]).ln_1p(),
                    power_used: c * p,
                };
            }
        }
        SlotOutcome {
            stop_index: None,
            rate: 0.0,
            power_used: 0.0,
        }
    }

    fn run_batch(&self, rng: &mut ChaCha8Rng, slots: u64) -> BatchSums {
        let m = self.thresholds.len();
        let (mut free, mut gains) = (vec![false; m], vec![0.0; m]);
        let mut sums = BatchSums {
            slots,
            ..Default::default()
        };
        for _ in 0..slots {
            let o = self.sample(rng, &mut free, &mut gains);
            sums.rate += o.rate;
            sums.power += o.power_used;
            sums.successes += u64::from(o.stop_index.is_some());
        }
        sums
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct BatchSums {
    slots: u64,
    rate: f64,
    power: f64,
    successes: u64,
}

fn batch_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Splits `total` into `count` sizes differing by at most one.
fn batch_sizes(total: u64, count: usize) -> Vec<u64> {
    let count = count as u64;
    (0..count)
        .map(|b| total / count + u64::from(b < total % count))
        .collect()
}

fn batch_count(total: u64) -> usize {
    (total.min(MAX_BATCHES as u64)) as usize
}

fn mean_and_se(batch_means: &[f64], overall: f64) -> f64 {
    let b = batch_means.len();
    if b < 2 {
        return 0.0;
    }
    let ss: f64 = batch_means.iter().map(|m| (m - overall).powi(2)).sum();
    (ss / (b as f64 * (b as f64 - 1.0))).sqrt()
}

/// Simulates `slots` slots under `policy`.
pub fn simulate(
    policy: &StoppingPolicy,
    ens: &ChannelEnsemble,
    timing: &SlotTiming,
    slots: u64,
    seed: u64,
) -> Result<SimEstimates> {
    if slots == 0 {
        return Err(Error::Argument("at least one slot is required".into()));
    }
    let sampler = SlotSampler::new(policy, ens, timing)?;
    let sizes = batch_sizes(slots, batch_count(slots));
    let batches: Vec<BatchSums> = sizes
        .par_iter()
        .enumerate()
        .map(|(b, &n)| sampler.run_batch(&mut batch_rng(seed, b as u64), n))
        .collect();
    Ok(merge(&batches))
}

fn merge(batches: &[BatchSums]) -> SimEstimates {
    let total = batches
        .iter()
        .fold(BatchSums::default(), |acc, b| BatchSums {
            slots: acc.slots + b.slots,
            rate: acc.rate + b.rate,
            power: acc.power + b.power,
            successes: acc.successes + b.successes,
        });
    let n = total.slots as f64;
    let throughput_mean = total.rate / n;
    let power_mean = total.power / n;
    let success_rate = total.successes as f64 / n;
    let per_batch = |f: fn(&BatchSums) -> f64| -> Vec<f64> {
        batches.iter().map(|b| f(b) / b.slots as f64).collect()
    };
    let throughput_se = mean_and_se(&per_batch(|b| b.rate), throughput_mean);
    let power_se = mean_and_se(&per_batch(|b| b.power), power_mean);
    let success_se = mean_and_se(&per_batch(|b| b.successes as f64), success_rate);
    let (delay_mean, delay_se) = if total.successes == 0 {
        (f64::INFINITY, f64::INFINITY)
    } else {
        (
            1.0 / success_rate,
            success_se / (success_rate * success_rate),
        )
    };
    SimEstimates {
        slots: total.slots,
        throughput_mean,
        throughput_se,
        power_mean,
        power_se,
        success_rate,
        success_se,
        delay_mean,
        delay_se,
        wasted_slots_mean: delay_mean - 1.0,
    }
}

/// The per-slot outcomes that [`simulate`] aggregates, in batch order.
pub fn slot_outcomes(
    policy: &StoppingPolicy,
    ens: &ChannelEnsemble,
    timing: &SlotTiming,
    slots: u64,
    seed: u64,
) -> Result<Vec<SlotOutcome>> {
    if slots == 0 {
        return Err(Error::Argument("at least one slot is required".into()));
    }
    let sampler = SlotSampler::new(policy, ens, timing)?;
    let m = ens.count();
    let (mut free, mut gains) = (vec![false; m], vec![0.0; m]);
    let mut out = Vec::with_capacity(slots as usize);
    for (b, n) in batch_sizes(slots, batch_count(slots))
        .into_iter()
        .enumerate()
    {
        let mut rng = batch_rng(seed, b as u64);
        out.extend((0..n).map(|_| sampler.sample(&mut rng, &mut free, &mut gains)));
    }
    Ok(out)
}

/// Number of slots each of `packets` consecutive packets needed, counting
/// the successful slot.
pub fn packet_delay_trace(
    policy: &StoppingPolicy,
    ens: &ChannelEnsemble,
    timing: &SlotTiming,
    packets: u64,
    seed: u64,
) -> Result<Vec<u64>> {
    if packets == 0 {
        return Err(Error::Argument("at least one packet is required".into()));
    }
    let sampler = SlotSampler::new(policy, ens, timing)?;
    if success_probability(policy, ens)? == 0.0 {
        return Err(Error::InfiniteDelay);
    }
    let m = ens.count();
    let sizes = batch_sizes(packets, batch_count(packets));
    let batches: Vec<Result<Vec<u64>>> = sizes
        .par_iter()
        .enumerate()
        .map(|(b, &n)| {
            let mut rng = batch_rng(seed, TRACE_STREAM_BASE + b as u64);
            let (mut free, mut gains) = (vec![false; m], vec![0.0; m]);
            (0..n)
                .map(|_| {
                    for slot in 1..=PACKET_SLOT_CAP {
                        let o = sampler.sample(&mut rng, &mut free, &mut gains);
                        if o.stop_index.is_some() {
                            return Ok(slot);
                        }
                    }
                    Err(Error::InfiniteDelay)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(packets as usize);
    for batch in batches {
        out.extend(batch?);
    }
    Ok(out)
}
