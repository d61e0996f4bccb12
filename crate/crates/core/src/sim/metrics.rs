use serde::Serialize;

use crate::error::{Error, Result};

/// Per-user counters and estimates over the measured slots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserMetrics {
    pub avg_queue: f64,
    pub avg_queue_se: f64,
    pub avg_delay_slots: f64,
    pub drop_prob: f64,
    pub avg_power_w: f64,
    pub arrivals: u64,
    pub accepted: u64,
    pub dropped: u64,
    pub departures: u64,
    pub transmissions: u64,
}

/// Whole-episode bookkeeping for one user, warmup included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub struct Conservation {
    pub initial_queue: usize,
    pub final_queue: usize,
    pub accepted: u64,
    pub departures: u64,
}

impl Conservation {
    /// `accepted = departures + final - initial`.
    pub fn holds(&self) -> bool {
        self.accepted + self.initial_queue as u64 == self.departures + self.final_queue as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimMetrics {
    /// Identifies everything about the run except its seed.
    pub config_key: String,
    pub seeds: Vec<u64>,
    pub slots: u64,
    pub tau_s: f64,
    pub mean_packet_bits: f64,
    /// Mean over users of the time-average queue length, in packets.
    pub avg_queue: f64,
    pub avg_queue_se: f64,
    /// Network-wide Little's law: total queue over total accepted rate.
    pub avg_delay_slots: f64,
    pub avg_delay_ms: f64,
    pub throughput_pkts_per_slot: f64,
    pub throughput_bits_per_s: f64,
    /// Dropped over offered arrivals, all users.
    pub drop_prob: f64,
    /// Mean over users of the time-average transmit power.
    pub avg_power_w: f64,
    pub per_user: Vec<UserMetrics>,
    pub conservation: Vec<Conservation>,
}

pub(crate) fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub(crate) fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl SimMetrics {
    pub fn runs(&self) -> usize {
        self.seeds.len()
    }

    /// Little's law delay of user `k` in milliseconds.
    pub fn user_delay_ms(&self, k: usize) -> f64 {
        self.per_user[k].avg_delay_slots * self.tau_s * 1e3
    }
}

/// Pool runs that differ only in their seed. Means are taken in seed order;
/// standard errors come from the spread between runs.
pub fn aggregate_runs(runs: &[SimMetrics]) -> Result<SimMetrics> {
    let first = runs
        .first()
        .ok_or_else(|| Error::invalid("no runs to aggregate"))?;
    for r in runs {
        if r.config_key != first.config_key || r.per_user.len() != first.per_user.len() || r.slots != first.slots {
            return Err(Error::ConfigMismatch(format!("{} vs {}", first.config_key, r.config_key)));
        }
    }
    if runs.len() == 1 {
        return Ok(first.clone());
    }
    let mut sorted: Vec<&SimMetrics> = runs.iter().collect();
    sorted.sort_by_key(|r| r.seeds.clone());

    let pool = |f: &dyn Fn(&SimMetrics) -> f64| -> (f64, f64) {
        let xs: Vec<f64> = sorted.iter().map(|r| f(r)).collect();
        mean_se(&xs)
    };
    let users = first.per_user.len();
    let per_user: Vec<UserMetrics> = (0..users)
        .map(|k| {
            let sum = |f: &dyn Fn(&UserMetrics) -> u64| sorted.iter().map(|r| f(&r.per_user[k])).sum::<u64>();
            let (avg_queue, avg_queue_se) = pool(&|r| r.per_user[k].avg_queue);
            let accepted = sum(&|u| u.accepted);
            let arrivals = sum(&|u| u.arrivals);
            let dropped = sum(&|u| u.dropped);
            let slots = first.slots as f64 * sorted.len() as f64;
            UserMetrics {
                avg_queue,
                avg_queue_se,
                avg_delay_slots: ratio(avg_queue, accepted as f64 / slots),
                drop_prob: ratio(dropped as f64, arrivals as f64),
                avg_power_w: pool(&|r| r.per_user[k].avg_power_w).0,
                arrivals,
                accepted,
                dropped,
                departures: sum(&|u| u.departures),
                transmissions: sum(&|u| u.transmissions),
            }
        })
        .collect();
    let (avg_queue, avg_queue_se) = pool(&|r| r.avg_queue);
    let slots = first.slots as f64 * sorted.len() as f64;
    let accepted: u64 = per_user.iter().map(|u| u.accepted).sum();
    let arrivals: u64 = per_user.iter().map(|u| u.arrivals).sum();
    let dropped: u64 = per_user.iter().map(|u| u.dropped).sum();
    let departures: u64 = per_user.iter().map(|u| u.departures).sum();
    let avg_delay_slots = ratio(avg_queue * users as f64, accepted as f64 / slots);
    let throughput = departures as f64 / slots;
    Ok(SimMetrics {
        config_key: first.config_key.clone(),
        seeds: sorted.iter().flat_map(|r| r.seeds.iter().copied()).collect(),
        slots: first.slots,
        tau_s: first.tau_s,
        mean_packet_bits: first.mean_packet_bits,
        avg_queue,
        avg_queue_se,
        avg_delay_slots,
        avg_delay_ms: avg_delay_slots * first.tau_s * 1e3,
        throughput_pkts_per_slot: throughput,
        throughput_bits_per_s: throughput / first.tau_s * first.mean_packet_bits,
        drop_prob: ratio(dropped as f64, arrivals as f64),
        avg_power_w: pool(&|r| r.avg_power_w).0,
        per_user,
        conservation: sorted.iter().flat_map(|r| r.conservation.iter().copied()).collect(),
    })
}
