//! Transition kernels of a user's local state: feedback, service and queue.

mod belief;
mod feedback;

use serde::{Deserialize, Serialize};

use crate::channel::{FsmcChannel, TransmissionEvent};
use crate::error::{Error, Result};
use crate::policy::{PolicyMode, ThresholdPolicy};

pub use belief::{belief_other_csi, propagate_belief, JointBelief};
pub use feedback::{feedback_kernel_asymmetric, feedback_kernel_symmetric};

/// Common feedback broadcast by the access point at the end of a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    /// Idle slot.
    Nak = 0,
    /// Exactly one transmitter.
    Ack = 1,
    /// Two or more transmitters.
    Collision = 2,
}

/// Probability vector over `Feedback`, indexed by `Feedback as usize`.
pub type FeedbackDist = [f64; 3];

impl Feedback {
    pub const ALL: [Feedback; 3] = [Feedback::Nak, Feedback::Ack, Feedback::Collision];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Collision-channel feedback for a given number of transmitters.
    pub fn from_transmitters(n: usize) -> Self {
        match n {
            0 => Feedback::Nak,
            1 => Feedback::Ack,
            _ => Feedback::Collision,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Feedback::Nak => "nak",
            Feedback::Ack => "ack",
            Feedback::Collision => "col",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "nak" | "0" => Some(Feedback::Nak),
            "ack" | "1" => Some(Feedback::Ack),
            "col" | "e" | "collision" => Some(Feedback::Collision),
            _ => None,
        }
    }
}

impl std::fmt::Display for Feedback {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Physical and traffic parameters shared by all users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub tau_s: f64,
    pub bandwidth_hz: f64,
    pub noise_w_per_hz: f64,
    pub lambda_pkts_per_s: f64,
    pub mean_packet_bits: f64,
    pub buffer_pkts: usize,
    pub users: usize,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau_s", self.tau_s),
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_w_per_hz", self.noise_w_per_hz),
            ("mean_packet_bits", self.mean_packet_bits),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda_pkts_per_s >= 0.0 && self.lambda_pkts_per_s.is_finite()) {
            return Err(Error::invalid("lambda_pkts_per_s must be non-negative"));
        }
        if self.arrival_prob() >= 1.0 {
            return Err(Error::invalid(format!(
                "lambda*tau = {} must be below 1",
                self.arrival_prob()
            )));
        }
        if self.buffer_pkts < 1 {
            return Err(Error::invalid("buffer_pkts must be at least 1"));
        }
        if self.users < 1 {
            return Err(Error::invalid("users must be at least 1"));
        }
        Ok(())
    }

    /// Per-slot arrival probability `lambda * tau`.
    pub fn arrival_prob(&self) -> f64 {
        self.lambda_pkts_per_s * self.tau_s
    }

    /// Noise power `N0 * W` in watts.
    pub fn noise_power(&self) -> f64 {
        self.noise_w_per_hz * self.bandwidth_hz
    }

    /// Largest power whose service probability keeps `lambda*tau + mu*tau <= 1`.
    pub fn max_power(&self, gain: f64) -> f64 {
        let bits_per_slot = self.mean_packet_bits / (self.bandwidth_hz * self.tau_s);
        let exponent = (1.0 - self.arrival_prob()) * bits_per_slot;
        (exponent.exp2() - 1.0) * self.noise_power() / gain
    }

    /// Service rate in packets/s of a slot with power `power` on gain `gain`,
    /// before conditioning on the feedback.
    pub fn link_rate(&self, gain: f64, power: f64) -> f64 {
        if power <= 0.0 {
            return 0.0;
        }
        self.bandwidth_hz / self.mean_packet_bits * (power * gain / self.noise_power()).ln_1p()
            / std::f64::consts::LN_2
    }
}

/// Mean packet service rate (packets/s): nonzero only on a successful slot.
pub fn service_rate(gain: f64, power: f64, z: Feedback, params: &SystemParams) -> f64 {
    if z != Feedback::Ack {
        return 0.0;
    }
    params.link_rate(gain, power)
}

/// Distribution of the next queue length as `(q', probability)` pairs,
/// merged so each `q'` appears once.
pub fn queue_kernel(q: usize, mu: f64, params: &SystemParams) -> Result<Vec<(usize, f64)>> {
    let n = params.buffer_pkts;
    if q > n {
        return Err(Error::invalid(format!("queue length {q} exceeds buffer {n}")));
    }
    let up = params.arrival_prob();
    let down = mu * params.tau_s;
    if up + down > 1.0 + 1e-12 {
        return Err(Error::TimeScaleViolation { total: up + down });
    }
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(3);
    let mut add = |target: usize, p: f64| {
        if let Some(slot) = out.iter_mut().find(|(t, _)| *t == target) {
            slot.1 += p;
        } else {
            out.push((target, p));
        }
    };
    add((q + 1).min(n), up);
    add(q.saturating_sub(1), down);
    add(q, (1.0 - up - down).max(0.0));
    out.retain(|&(_, p)| p > 0.0);
    out.sort_by_key(|&(t, _)| t);
    Ok(out)
}

/// The user's own transmission event in the previous slot, inferred from the
/// reduced state. A NAK means nobody transmitted, so a user above its
/// threshold that sees NAK must have been idle with an empty buffer.
pub fn own_prev_event(h_prev: usize, threshold_prev: usize, z_prev: Feedback) -> TransmissionEvent {
    if h_prev < threshold_prev || z_prev == Feedback::Nak {
        TransmissionEvent::Silent
    } else {
        TransmissionEvent::Transmitted
    }
}

/// Per-user local state at the start of a slot. `common` is the index of the
/// previous slot's threshold state in the policy automaton.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LocalState {
    pub q: usize,
    pub h_prev: usize,
    pub common: usize,
    pub z_prev: Feedback,
    pub h_cur: usize,
}

/// Parameters plus per-user channels. Symmetric networks repeat one channel.
#[derive(Debug, Clone)]
pub struct Network {
    pub params: SystemParams,
    pub channels: Vec<FsmcChannel>,
}

impl Network {
    pub fn new(params: SystemParams, channels: Vec<FsmcChannel>) -> Result<Self> {
        params.validate()?;
        if channels.len() != params.users {
            return Err(Error::invalid(format!(
                "{} channels for {} users",
                channels.len(),
                params.users
            )));
        }
        Ok(Network { params, channels })
    }

    pub fn symmetric(params: SystemParams, channel: FsmcChannel) -> Result<Self> {
        let channels = vec![channel; params.users];
        Self::new(params, channels)
    }

    pub fn users(&self) -> usize {
        self.params.users
    }

    pub fn channel(&self, k: usize) -> &FsmcChannel {
        &self.channels[k]
    }

    /// Feedback distribution for user `k` in the slot that follows common
    /// state `c_prev` and feedback `z_prev`.
    pub fn feedback_kernel(
        &self,
        k: usize,
        policy: &ThresholdPolicy,
        c_prev: usize,
        z_prev: Feedback,
        b_prev: TransmissionEvent,
        b_cur: TransmissionEvent,
    ) -> Result<FeedbackDist> {
        let c_cur = policy.next(c_prev, z_prev);
        match policy.mode {
            PolicyMode::Symmetric => feedback_kernel_symmetric(
                z_prev,
                b_prev,
                b_cur,
                policy.threshold(c_prev, k),
                policy.threshold(c_cur, k),
                self.users(),
                &self.channels[k],
            ),
            PolicyMode::Asymmetric => feedback_kernel_asymmetric(
                z_prev,
                b_prev,
                b_cur,
                policy.thresholds(c_prev),
                policy.thresholds(c_cur),
                &self.channels,
                k,
            ),
        }
    }
}

/// One-slot transition of user `k`'s local state under power `power`.
///
/// Power is forced to zero when the current CSI is below the threshold.
pub fn local_state_kernel(
    state: &LocalState,
    power: f64,
    policy: &ThresholdPolicy,
    network: &Network,
    k: usize,
) -> Result<Vec<(LocalState, f64)>> {
    let channel = network.channel(k);
    let gamma_prev = policy.threshold(state.common, k);
    let c_cur = policy.next(state.common, state.z_prev);
    let gamma_cur = policy.threshold(c_cur, k);
    let b_prev = own_prev_event(state.h_prev, gamma_prev, state.z_prev);
    let b_cur = TransmissionEvent::from_threshold(state.h_cur, gamma_cur);
    let power = if b_cur.transmitted() { power.max(0.0) } else { 0.0 };
    let zdist = network.feedback_kernel(k, policy, state.common, state.z_prev, b_prev, b_cur)?;

    let mut out = Vec::new();
    for z in Feedback::ALL {
        let pz = zdist[z.index()];
        if pz <= 0.0 {
            continue;
        }
        let mu = service_rate(channel.gain(state.h_cur), power, z, &network.params);
        for (q_next, pq) in queue_kernel(state.q, mu, &network.params)? {
            for (h_next, &ph) in channel.row(state.h_cur).iter().enumerate() {
                if ph <= 0.0 {
                    continue;
                }
                out.push((
                    LocalState {
                        q: q_next,
                        h_prev: state.h_cur,
                        common: c_cur,
                        z_prev: z,
                        h_cur: h_next,
                    },
                    pz * pq * ph,
                ));
            }
        }
    }
    Ok(out)
}
