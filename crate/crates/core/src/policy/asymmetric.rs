//! Product-fairness thresholds for heterogeneous users, decoupled into one
//! scalar search per user.

use crate::channel::{FsmcChannel, TransmissionEvent};
use crate::dynamics::Feedback;
use crate::error::{Error, Result};

use super::{argmax_last, PolicyMode, ThresholdPolicy};

/// Posterior probability that user `k` transmitted in the previous slot given
/// the previous thresholds and feedback. Zero after an idle slot.
pub fn rho(z_prev: Feedback, thresholds_prev: &[usize], channels: &[FsmcChannel], k: usize) -> Result<f64> {
    let users = channels.len();
    if thresholds_prev.len() != users || k >= users {
        return Err(Error::invalid("threshold vector must have one entry per user"));
    }
    let eta: Vec<f64> = (0..users)
        .map(|i| channels[i].prob_at_or_above(thresholds_prev[i]))
        .collect();
    let others_silent = |j: usize| -> f64 {
        (0..users).filter(|&i| i != j).map(|i| 1.0 - eta[i]).product()
    };
    match z_prev {
        Feedback::Nak => Ok(0.0),
        Feedback::Ack => {
            let den: f64 = (0..users).map(|j| eta[j] * others_silent(j)).sum();
            if den <= 0.0 {
                return Err(Error::null_event("ACK impossible under the previous thresholds"));
            }
            Ok(eta[k] * others_silent(k) / den)
        }
        Feedback::Collision => {
            let none: f64 = eta.iter().map(|e| 1.0 - e).product();
            let single: f64 = (0..users).map(|j| eta[j] * others_silent(j)).sum();
            let den = 1.0 - none - single;
            if den <= 1e-300 {
                return Err(Error::null_event("collision impossible under the previous thresholds"));
            }
            Ok((eta[k] * (1.0 - others_silent(k)) / den).clamp(0.0, 1.0))
        }
    }
}

/// Per-user objective for a candidate threshold `gamma_cur` of user `k`.
pub fn asymmetric_objective(
    z_prev: Feedback,
    thresholds_prev: &[usize],
    gamma_cur: usize,
    channels: &[FsmcChannel],
    k: usize,
) -> Result<f64> {
    let users = channels.len() as i32;
    let ch = &channels[k];
    let gp = thresholds_prev[k];
    if gamma_cur >= ch.len() || gp >= ch.len() {
        return Err(Error::invalid("threshold outside the channel alphabet"));
    }
    let u = ch.next_transmit_prob(gp, gamma_cur, TransmissionEvent::Silent);
    let z = ch.next_transmit_prob(gp, gamma_cur, TransmissionEvent::Transmitted);
    let alone = |p: f64| p * (1.0 - p).powi(users - 1);
    if z_prev == Feedback::Nak {
        return Ok(alone(u));
    }
    let r = rho(z_prev, thresholds_prev, channels, k)?;
    Ok((1.0 - r) * alone(u) + r * alone(z))
}

/// Next threshold vector given the previous one and the feedback.
pub fn asymmetric_threshold(
    thresholds_prev: &[usize],
    z_prev: Feedback,
    channels: &[FsmcChannel],
) -> Result<Vec<usize>> {
    if channels.len() < 2 {
        return Err(Error::invalid("asymmetric policy needs at least two users"));
    }
    (0..channels.len())
        .map(|k| {
            argmax_last(channels[k].len(), |g| {
                asymmetric_objective(z_prev, thresholds_prev, g, channels, k)
            })
        })
        .collect()
}

/// Automaton over the threshold vectors reachable from "everyone at the top
/// state". Feedback values that are impossible under a vector leave it as is.
pub fn asymmetric_policy(channels: &[FsmcChannel]) -> Result<ThresholdPolicy> {
    let initial: Vec<usize> = channels.iter().map(|c| c.top()).collect();
    ThresholdPolicy::explore(PolicyMode::Asymmetric, initial, |prev, z| {
        match asymmetric_threshold(prev, z, channels) {
            Err(Error::NullEvent(_)) => Ok(prev.to_vec()),
            other => other,
        }
    })
}
