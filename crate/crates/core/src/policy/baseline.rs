//! Fixed-threshold reference schemes: binary scheduling with constant power,
//! and binary scheduling with CSI water-filling (variable rate, BSP).

use crate::channel::FsmcChannel;
use crate::dynamics::SystemParams;
use crate::error::{Error, Result};

use super::argmax_last;

/// `K * eta * (1 - eta)^(K-1)` with `eta` the stationary transmit probability.
pub fn binary_scheduling_objective(channel: &FsmcChannel, threshold: usize, users: usize) -> f64 {
    let eta = channel.prob_at_or_above(threshold);
    users as f64 * eta * (1.0 - eta).powi(users as i32 - 1)
}

/// Threshold maximizing the stationary probability that exactly one user transmits.
pub fn baseline_binary_scheduling(channel: &FsmcChannel, users: usize) -> Result<usize> {
    if users == 0 {
        return Err(Error::invalid("user count must be positive"));
    }
    argmax_last(channel.len(), |g| Ok(binary_scheduling_objective(channel, g, users)))
}

/// Water-filling power per CSI state under a fixed threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableRate {
    pub threshold: usize,
    /// Water level in watts.
    pub level_w: f64,
    pub xi_tilde: f64,
    /// Transmit power for each CSI state (zero below the threshold).
    pub powers: Vec<f64>,
    pub avg_power_w: f64,
    /// Selection metric: network throughput in bits/s for the symmetric
    /// variant, the user's own decoupled objective for BSP.
    pub score: f64,
}

fn level_coefficient(channel: &FsmcChannel, threshold: usize, users: usize, params: &SystemParams) -> f64 {
    params.bandwidth_hz * params.tau_s * channel.prob_below(threshold).powi(users as i32 - 1)
        / (params.mean_packet_bits * std::f64::consts::LN_2)
}

fn powers_for_level(channel: &FsmcChannel, threshold: usize, level: f64, params: &SystemParams) -> Vec<f64> {
    (0..channel.len())
        .map(|h| {
            if h < threshold {
                return 0.0;
            }
            let g = channel.gain(h);
            (level - params.noise_power() / g).clamp(0.0, params.max_power(g))
        })
        .collect()
}

fn average_power(channel: &FsmcChannel, powers: &[f64]) -> f64 {
    channel.stationary().iter().zip(powers).map(|(p, w)| p * w).sum()
}

/// Water-filling power for a given multiplier `xi_tilde`:
/// `(W tau Pr{others silent} / (Nb xi ln 2) - N0 W / H)^+` above the threshold.
pub fn water_filling_power(
    channel: &FsmcChannel,
    threshold: usize,
    users: usize,
    xi_tilde: f64,
    params: &SystemParams,
) -> Vec<f64> {
    let level = level_coefficient(channel, threshold, users, params) / xi_tilde;
    powers_for_level(channel, threshold, level, params)
}

fn rate_bits(channel: &FsmcChannel, h: usize, power: f64, params: &SystemParams) -> f64 {
    params.bandwidth_hz * (power * channel.gain(h) / params.noise_power()).ln_1p() / std::f64::consts::LN_2
}

/// Calibrate the water level so the stationary average power equals `budget_w`.
pub fn variable_rate_for_threshold(
    channel: &FsmcChannel,
    threshold: usize,
    users: usize,
    budget_w: f64,
    params: &SystemParams,
) -> Result<VariableRate> {
    if !(budget_w > 0.0) {
        return Err(Error::invalid("power budget must be positive"));
    }
    let eta = channel.prob_at_or_above(threshold);
    let max_noise = (threshold..channel.len())
        .map(|h| params.noise_power() / channel.gain(h))
        .fold(0.0, f64::max);
    let (mut lo, mut hi) = (0.0, max_noise + budget_w / eta);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if average_power(channel, &powers_for_level(channel, threshold, mid, params)) < budget_w {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let level = 0.5 * (lo + hi);
    let powers = powers_for_level(channel, threshold, level, params);
    let others_silent = (1.0 - eta).powi(users as i32 - 1);
    let throughput: f64 = (threshold..channel.len())
        .map(|h| channel.stationary()[h] * rate_bits(channel, h, powers[h], params))
        .sum::<f64>()
        * users as f64
        * others_silent;
    Ok(VariableRate {
        threshold,
        level_w: level,
        xi_tilde: level_coefficient(channel, threshold, users, params) / level,
        avg_power_w: average_power(channel, &powers),
        powers,
        score: throughput,
    })
}

/// Variable-rate baseline: the threshold with the highest steady-state throughput.
pub fn baseline_variable_rate(
    channel: &FsmcChannel,
    users: usize,
    budget_w: f64,
    params: &SystemParams,
) -> Result<VariableRate> {
    let candidates: Vec<VariableRate> = (0..channel.len())
        .map(|g| variable_rate_for_threshold(channel, g, users, budget_w, params))
        .collect::<Result<_>>()?;
    let best = argmax_last(candidates.len(), |g| Ok(candidates[g].score))?;
    Ok(candidates[best].clone())
}

/// Per-user binary scheduling with water-filling power for heterogeneous users.
/// User `k` maximizes `eta_k (1 - eta_k)^(K-1) E[rate | transmit]`.
pub fn baseline_bsp(channels: &[FsmcChannel], budgets_w: &[f64], params: &SystemParams) -> Result<Vec<VariableRate>> {
    if channels.len() != budgets_w.len() {
        return Err(Error::invalid("one power budget per user"));
    }
    let users = channels.len();
    channels
        .iter()
        .zip(budgets_w)
        .map(|(ch, &budget)| {
            let candidates: Vec<VariableRate> = (0..ch.len())
                .map(|g| {
                    let mut vr = variable_rate_for_threshold(ch, g, users, budget, params)?;
                    let eta = ch.prob_at_or_above(g);
                    let rate: f64 = (g..ch.len())
                        .map(|h| ch.stationary()[h] * rate_bits(ch, h, vr.powers[h], params))
                        .sum();
                    // eta * E[rate | transmit] = sum over the transmit region
                    vr.score = (1.0 - eta).powi(users as i32 - 1) * rate;
                    Ok(vr)
                })
                .collect::<Result<_>>()?;
            let best = argmax_last(candidates.len(), |g| Ok(candidates[g].score))?;
            Ok(candidates[best].clone())
        })
        .collect()
}
