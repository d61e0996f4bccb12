//! Slot-level Monte Carlo simulation of the K-user network running
//! synthesized policies online.

mod capture;
mod metrics;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::FsmcChannel;
use crate::dynamics::{Feedback, SystemParams};
use crate::error::{Error, Result};
use crate::policy::SynthesizedPolicy;

pub use capture::{capture_decode, Transmission};
pub use metrics::{aggregate_runs, Conservation, SimMetrics, UserMetrics};

const BATCHES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every user always has a (possibly virtual) packet to send.
    Dominant,
    /// Users with an empty buffer stay silent.
    Actual,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Dominant => "dominant",
            Mode::Actual => "actual",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ChannelModel {
    /// A slot succeeds iff exactly one user transmits.
    Collision,
    /// Users back their rate off by `beta` and may survive a collision.
    Capture { beta: f64 },
}

impl ChannelModel {
    pub fn label(self) -> String {
        match self {
            ChannelModel::Collision => "collision".into(),
            ChannelModel::Capture { beta } => format!("capture({beta})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub params: SystemParams,
    pub channels: Vec<FsmcChannel>,
    pub policy: SynthesizedPolicy,
    pub mode: Mode,
    pub channel_model: ChannelModel,
    pub horizon: u64,
    pub warmup: u64,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let k = self.params.users;
        if self.channels.len() != k || self.policy.users.len() != k || self.policy.thresholds.users != k {
            return Err(Error::invalid("channels, power rules and thresholds must cover every user"));
        }
        if self.horizon <= self.warmup {
            return Err(Error::invalid("horizon must exceed warmup"));
        }
        if self.horizon - self.warmup < BATCHES as u64 {
            return Err(Error::invalid(format!("need at least {BATCHES} measured slots")));
        }
        if let ChannelModel::Capture { beta } = self.channel_model {
            if !(beta > 0.0 && beta <= 1.0) {
                return Err(Error::invalid(format!("capture beta must lie in (0, 1], got {beta}")));
            }
        }
        for (c, s) in self.policy.thresholds.states.iter().enumerate() {
            for (u, &g) in s.iter().enumerate() {
                if g >= self.channels[u].len() {
                    return Err(Error::invalid(format!("threshold {g} of user {u} in state {c} out of range")));
                }
            }
        }
        Ok(())
    }

    /// Everything but the seed, for checking that runs can be pooled.
    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}|K={}|N={}|lambda={}|tau={}|W={}|N0={}|Nb={}|T={}|warmup={}",
            self.policy.name,
            self.mode.label(),
            self.channel_model.label(),
            self.params.users,
            self.params.buffer_pkts,
            self.params.lambda_pkts_per_s,
            self.params.tau_s,
            self.params.bandwidth_hz,
            self.params.noise_w_per_hz,
            self.params.mean_packet_bits,
            self.horizon,
            self.warmup,
        )
    }
}

/// State of the network at the start of a slot, plus what happened in it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotRecord {
    pub slot: u64,
    pub queues: Vec<usize>,
    pub csi: Vec<usize>,
    pub common: usize,
    pub powers: Vec<f64>,
    pub transmitted: Vec<bool>,
    pub feedback: Feedback,
}

fn cumulative(row: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    row.iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

fn draw(cdf: &[f64], u: f64) -> usize {
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

pub fn run_episode(config: &SimConfig) -> Result<SimMetrics> {
    simulate(config, None)
}

/// Like [`run_episode`] but also returns every slot of the episode.
pub fn run_episode_with_trajectory(config: &SimConfig) -> Result<(SimMetrics, Vec<SlotRecord>)> {
    let mut traj = Vec::with_capacity(config.horizon as usize);
    let m = simulate(config, Some(&mut traj))?;
    Ok((m, traj))
}

fn simulate(config: &SimConfig, mut trajectory: Option<&mut Vec<SlotRecord>>) -> Result<SimMetrics> {
    config.validate()?;
    let params = &config.params;
    let k = params.users;
    let n = params.buffer_pkts;
    let policy = &config.policy.thresholds;
    let up = params.arrival_prob();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // Under capture every user transmits at a backed-off rate.
    let rate_scale = match config.channel_model {
        ChannelModel::Collision => 1.0,
        ChannelModel::Capture { beta } => beta,
    };

    let rows: Vec<Vec<Vec<f64>>> = config
        .channels
        .iter()
        .map(|ch| ch.transition().iter().map(|r| cumulative(r)).collect())
        .collect();
    let stationary: Vec<Vec<f64>> = config.channels.iter().map(|ch| cumulative(ch.stationary())).collect();

    let mut q = vec![0usize; k];
    let mut h_prev: Vec<usize> = stationary.iter().map(|cdf| draw(cdf, rng.random::<f64>())).collect();
    let mut c_prev = policy.initial;
    let mut z_prev = match config.mode {
        Mode::Actual => Feedback::Nak,
        Mode::Dominant => Feedback::from_transmitters(
            (0..k).filter(|&u| h_prev[u] >= policy.threshold(c_prev, u)).count(),
        ),
    };

    let measured = config.horizon - config.warmup;
    let batch_len = measured / BATCHES as u64;
    let mut queue_sum = vec![0u64; k];
    let mut batch_sum = vec![vec![0u64; BATCHES]; k];
    let mut power_sum = vec![0.0f64; k];
    let mut per_user = vec![
        UserMetrics {
            avg_queue: 0.0,
            avg_queue_se: 0.0,
            avg_delay_slots: 0.0,
            drop_prob: 0.0,
            avg_power_w: 0.0,
            arrivals: 0,
            accepted: 0,
            dropped: 0,
            departures: 0,
            transmissions: 0,
        };
        k
    ];
    let mut conservation = vec![Conservation::default(); k];

    let mut h_cur = vec![0usize; k];
    let mut power = vec![0.0f64; k];
    let mut transmit = vec![false; k];
    let mut served = vec![false; k];
    let mut tx: Vec<Transmission> = Vec::with_capacity(k);

    for slot in 0..config.horizon {
        let c_cur = policy.next(c_prev, z_prev);
        tx.clear();
        for u in 0..k {
            h_cur[u] = draw(&rows[u][h_prev[u]], rng.random::<f64>());
            let gamma = policy.threshold(c_cur, u);
            transmit[u] = h_cur[u] >= gamma && (config.mode == Mode::Dominant || q[u] > 0);
            power[u] = 0.0;
            if transmit[u] {
                // A virtual packet is sent at the power of a one-packet buffer.
                let q_lookup = if config.mode == Mode::Dominant { q[u].max(1) } else { q[u] };
                let gain = config.channels[u].gain(h_cur[u]);
                let p = config.policy.users[u]
                    .rule
                    .power(q_lookup, h_prev[u], c_prev, z_prev, h_cur[u])?;
                power[u] = p.min(params.max_power(gain)).max(0.0);
                tx.push(Transmission {
                    user: u,
                    power: power[u],
                    gain,
                });
            }
        }
        let z = Feedback::from_transmitters(tx.len());
        served.iter_mut().for_each(|s| *s = false);
        match config.channel_model {
            ChannelModel::Collision => {
                if tx.len() == 1 {
                    served[tx[0].user] = true;
                }
            }
            ChannelModel::Capture { beta } => {
                for u in capture_decode(&tx, params, beta) {
                    served[u] = true;
                }
            }
        }

        if let Some(t) = trajectory.as_deref_mut() {
            t.push(SlotRecord {
                slot,
                queues: q.clone(),
                csi: h_cur.clone(),
                common: c_cur,
                powers: power.clone(),
                transmitted: transmit.clone(),
                feedback: z,
            });
        }

        let measuring = slot >= config.warmup;
        let batch = if measuring {
            (((slot - config.warmup) / batch_len.max(1)) as usize).min(BATCHES - 1)
        } else {
            0
        };
        for u in 0..k {
            if measuring {
                queue_sum[u] += q[u] as u64;
                batch_sum[u][batch] += q[u] as u64;
                power_sum[u] += power[u];
                if transmit[u] {
                    per_user[u].transmissions += 1;
                }
            }
            let mu_tau = if served[u] {
                params.link_rate(config.channels[u].gain(h_cur[u]), power[u]) * params.tau_s * rate_scale
            } else {
                0.0
            };
            let x: f64 = rng.random();
            if x < up {
                if measuring {
                    per_user[u].arrivals += 1;
                }
                if q[u] < n {
                    q[u] += 1;
                    conservation[u].accepted += 1;
                    if measuring {
                        per_user[u].accepted += 1;
                    }
                } else if measuring {
                    per_user[u].dropped += 1;
                }
            } else if x < up + mu_tau && q[u] > 0 {
                q[u] -= 1;
                conservation[u].departures += 1;
                if measuring {
                    per_user[u].departures += 1;
                }
            }
        }

        h_prev.copy_from_slice(&h_cur);
        c_prev = c_cur;
        z_prev = z;
    }

    let slots = measured as f64;
    let last_batch = measured - batch_len * (BATCHES as u64 - 1);
    let batch_sizes: Vec<f64> = (0..BATCHES)
        .map(|b| if b + 1 == BATCHES { last_batch } else { batch_len } as f64)
        .collect();
    let mut network_batches = vec![0.0; BATCHES];
    for u in 0..k {
        let means: Vec<f64> = (0..BATCHES).map(|b| batch_sum[u][b] as f64 / batch_sizes[b]).collect();
        for (nb, m) in network_batches.iter_mut().zip(&means) {
            *nb += m / k as f64;
        }
        let m = &mut per_user[u];
        m.avg_queue = queue_sum[u] as f64 / slots;
        m.avg_queue_se = metrics::mean_se(&means).1;
        m.avg_delay_slots = metrics::ratio(m.avg_queue, m.accepted as f64 / slots);
        m.drop_prob = metrics::ratio(m.dropped as f64, m.arrivals as f64);
        m.avg_power_w = power_sum[u] / slots;
        conservation[u].final_queue = q[u];
    }
    let avg_queue = per_user.iter().map(|m| m.avg_queue).sum::<f64>() / k as f64;
    let accepted: u64 = per_user.iter().map(|m| m.accepted).sum();
    let arrivals: u64 = per_user.iter().map(|m| m.arrivals).sum();
    let dropped: u64 = per_user.iter().map(|m| m.dropped).sum();
    let departures: u64 = per_user.iter().map(|m| m.departures).sum();
    let avg_delay_slots = metrics::ratio(avg_queue * k as f64, accepted as f64 / slots);
    let throughput = departures as f64 / slots;
    Ok(SimMetrics {
        config_key: config.key(),
        seeds: vec![config.seed],
        slots: measured,
        tau_s: params.tau_s,
        mean_packet_bits: params.mean_packet_bits,
        avg_queue,
        avg_queue_se: metrics::mean_se(&network_batches).1,
        avg_delay_slots,
        avg_delay_ms: avg_delay_slots * params.tau_s * 1e3,
        throughput_pkts_per_slot: throughput,
        throughput_bits_per_s: throughput / params.tau_s * params.mean_packet_bits,
        drop_prob: metrics::ratio(dropped as f64, arrivals as f64),
        avg_power_w: power_sum.iter().sum::<f64>() / slots / k as f64,
        per_user,
        conservation,
    })
}
