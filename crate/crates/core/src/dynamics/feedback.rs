use crate::channel::{multi_transmit_prob, FsmcChannel, TransmissionEvent};
use crate::error::{Error, Result};

use super::{Feedback, FeedbackDist};

/// Map the number of *other* current transmitters to feedback, given the
/// user's own current decision. `others[m]` is `Pr{M = m}` for m = 0, 1, >= 2.
fn feedback_from_others(others: [f64; 3], b_cur: TransmissionEvent) -> FeedbackDist {
    if b_cur.transmitted() {
        [0.0, others[0], others[1] + others[2]]
    } else {
        others
    }
}

/// `Pr{M = 0}`, `Pr{M = 1}`, `Pr{M >= 2}` where `a` users transmit with
/// probability `zeta` each and `s` users with probability `upsilon` each.
fn others_count(a: usize, s: usize, zeta: f64, upsilon: f64) -> [f64; 3] {
    let zb = 1.0 - zeta;
    let ub = 1.0 - upsilon;
    let p0 = zb.powi(a as i32) * ub.powi(s as i32);
    let mut p1 = 0.0;
    if a > 0 {
        p1 += a as f64 * zeta * zb.powi(a as i32 - 1) * ub.powi(s as i32);
    }
    if s > 0 {
        p1 += s as f64 * upsilon * ub.powi(s as i32 - 1) * zb.powi(a as i32);
    }
    let p2 = if a + s < 2 { 0.0 } else { (1.0 - p0 - p1).max(0.0) };
    [p0, p1, p2]
}

/// Symmetric-network feedback kernel `Pr{Z_m | Z_{m-1}, B_{m-1}, B_m}`.
///
/// The previous feedback and the user's own previous event pin down how many
/// of the other `K - 1` users transmitted last slot (exactly, or as a
/// binomial mixture after a collision). Those users transmit again with
/// probability `zeta`, the rest with `upsilon`.
pub fn feedback_kernel_symmetric(
    z_prev: Feedback,
    b_prev: TransmissionEvent,
    b_cur: TransmissionEvent,
    threshold_prev: usize,
    threshold_cur: usize,
    users: usize,
    channel: &FsmcChannel,
) -> Result<FeedbackDist> {
    if users == 0 {
        return Err(Error::invalid("user count must be positive"));
    }
    if threshold_prev >= channel.len() || threshold_cur >= channel.len() {
        return Err(Error::invalid("threshold outside the channel alphabet"));
    }
    let others = users - 1;
    let mix: Vec<(usize, f64)> = match (z_prev, b_prev) {
        (Feedback::Nak, TransmissionEvent::Transmitted) => {
            return Err(Error::null_event("NAK after own transmission"));
        }
        (Feedback::Nak, _) | (Feedback::Ack, TransmissionEvent::Transmitted) => vec![(0, 1.0)],
        (Feedback::Ack, TransmissionEvent::Silent) => {
            if others < 1 {
                return Err(Error::null_event("ACK without any transmitter"));
            }
            vec![(1, 1.0)]
        }
        (Feedback::Collision, b) => {
            let at_least = if b.transmitted() { 1 } else { 2 };
            if others < at_least {
                return Err(Error::null_event(format!(
                    "collision needs {at_least} other transmitters, only {others} users"
                )));
            }
            (at_least..=others)
                .map(|a| multi_transmit_prob(channel, threshold_prev, others, a, at_least).map(|w| (a, w)))
                .collect::<Result<_>>()?
        }
    };

    let zeta = channel.next_transmit_prob(threshold_prev, threshold_cur, TransmissionEvent::Transmitted);
    let upsilon = channel.next_transmit_prob(threshold_prev, threshold_cur, TransmissionEvent::Silent);
    let mut count = [0.0; 3];
    for (a, w) in mix {
        let c = others_count(a, others - a, zeta, upsilon);
        for m in 0..3 {
            count[m] += w * c[m];
        }
    }
    Ok(feedback_from_others(count, b_cur))
}

/// Asymmetric-network feedback kernel for user `k`.
///
/// Each other user `i` transmitted last slot with prior probability
/// `eta_i = Pr{H_i >= gamma_i}`; given that, it transmits now with `zeta_i`,
/// otherwise with `upsilon_i`. The joint law of (previous count, current
/// count) over the other users is built by a small dynamic program and then
/// conditioned on the previous count implied by `(z_prev, b_prev)`.
pub fn feedback_kernel_asymmetric(
    z_prev: Feedback,
    b_prev: TransmissionEvent,
    b_cur: TransmissionEvent,
    thresholds_prev: &[usize],
    thresholds_cur: &[usize],
    channels: &[FsmcChannel],
    k: usize,
) -> Result<FeedbackDist> {
    let users = channels.len();
    if thresholds_prev.len() != users || thresholds_cur.len() != users || k >= users {
        return Err(Error::invalid("threshold vectors must have one entry per user"));
    }
    // w[p][c]: p, c = previous / current transmitter count among others, capped at 2
    let mut w = [[0.0f64; 3]; 3];
    w[0][0] = 1.0;
    for i in (0..users).filter(|&i| i != k) {
        let ch = &channels[i];
        let (gp, gc) = (thresholds_prev[i], thresholds_cur[i]);
        if gp >= ch.len() || gc >= ch.len() {
            return Err(Error::invalid(format!("threshold outside user {i}'s alphabet")));
        }
        let eta = ch.prob_at_or_above(gp);
        let zeta = ch.next_transmit_prob(gp, gc, TransmissionEvent::Transmitted);
        let upsilon = ch.next_transmit_prob(gp, gc, TransmissionEvent::Silent);
        let steps = [
            (1, 1, eta * zeta),
            (1, 0, eta * (1.0 - zeta)),
            (0, 1, (1.0 - eta) * upsilon),
            (0, 0, (1.0 - eta) * (1.0 - upsilon)),
        ];
        let mut next = [[0.0f64; 3]; 3];
        for p in 0..3 {
            for c in 0..3 {
                if w[p][c] == 0.0 {
                    continue;
                }
                for &(dp, dc, prob) in &steps {
                    next[(p + dp).min(2)][(c + dc).min(2)] += w[p][c] * prob;
                }
            }
        }
        w = next;
    }

    let allowed: &[usize] = match (z_prev, b_prev) {
        (Feedback::Nak, TransmissionEvent::Transmitted) => {
            return Err(Error::null_event("NAK after own transmission"));
        }
        (Feedback::Nak, _) | (Feedback::Ack, TransmissionEvent::Transmitted) => &[0],
        (Feedback::Ack, TransmissionEvent::Silent) => &[1],
        (Feedback::Collision, TransmissionEvent::Transmitted) => &[1, 2],
        (Feedback::Collision, TransmissionEvent::Silent) => &[2],
    };
    let mut count = [0.0; 3];
    for &p in allowed {
        for c in 0..3 {
            count[c] += w[p][c];
        }
    }
    let mass: f64 = count.iter().sum();
    if mass <= 0.0 {
        return Err(Error::null_event(format!(
            "previous feedback {z_prev} incompatible with the previous thresholds"
        )));
    }
    count.iter_mut().for_each(|x| *x /= mass);
    Ok(feedback_from_others(count, b_cur))
}
