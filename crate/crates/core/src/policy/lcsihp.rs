//! "Larger CSI higher priority": pick the common threshold that maximizes
//! the probability that exactly one user transmits, given last slot's
//! threshold and feedback.

use crate::channel::{multi_transmit_prob, FsmcChannel, TransmissionEvent};
use crate::dynamics::Feedback;
use crate::error::{Error, Result};

use super::{argmax_last, PolicyMode, ThresholdPolicy};

/// `Pr{only one user transmits | gamma_prev, z_prev}` for a candidate `gamma_cur`.
pub fn lcsihp_objective(
    gamma_prev: usize,
    z_prev: Feedback,
    gamma_cur: usize,
    users: usize,
    channel: &FsmcChannel,
) -> Result<f64> {
    if users == 0 {
        return Err(Error::invalid("user count must be positive"));
    }
    if gamma_prev >= channel.len() || gamma_cur >= channel.len() {
        return Err(Error::invalid("threshold outside the channel alphabet"));
    }
    let k = users as i32;
    let u = channel.next_transmit_prob(gamma_prev, gamma_cur, TransmissionEvent::Silent);
    let z = channel.next_transmit_prob(gamma_prev, gamma_cur, TransmissionEvent::Transmitted);
    let (ub, zb) = (1.0 - u, 1.0 - z);
    Ok(match z_prev {
        Feedback::Nak => k as f64 * u * ub.powi(k - 1),
        Feedback::Ack => {
            let mut v = z * ub.powi(k - 1);
            if users >= 2 {
                v += (k - 1) as f64 * zb * u * ub.powi(k - 2);
            }
            v
        }
        Feedback::Collision => {
            let mut v = 0.0;
            for n in 2..=users {
                let w = multi_transmit_prob(channel, gamma_prev, users, n, 2)?;
                let ni = n as i32;
                let mut term = n as f64 * z * zb.powi(ni - 1) * ub.powi(k - ni);
                if n < users {
                    term += (k - ni) as f64 * zb.powi(ni) * u * ub.powi(k - ni - 1);
                }
                v += w * term;
            }
            v
        }
    })
}

/// Next common threshold under LCSIHP. With a single user there is no
/// contention and the lowest threshold is used.
pub fn lcsihp_threshold(
    gamma_prev: usize,
    z_prev: Feedback,
    users: usize,
    channel: &FsmcChannel,
) -> Result<usize> {
    if users == 1 {
        return Ok(0);
    }
    argmax_last(channel.len(), |g| lcsihp_objective(gamma_prev, z_prev, g, users, channel))
}

/// Full LCSIHP automaton: common state `c` is the threshold index itself and
/// the first slot follows the top state.
pub fn lcsihp_policy(users: usize, channel: &FsmcChannel) -> Result<ThresholdPolicy> {
    let j = channel.len();
    let mut next = Vec::with_capacity(j);
    for g in 0..j {
        let mut row = [0; 3];
        for z in Feedback::ALL {
            row[z.index()] = lcsihp_threshold(g, z, users, channel)?;
        }
        next.push(row);
    }
    let states = (0..j).map(|g| vec![g; users]).collect();
    ThresholdPolicy::new(PolicyMode::Symmetric, users, states, next, j - 1)
}
