//! Finite-state Markov channel (FSMC) model and the CSI probability
//! primitives shared by the kernels, the threshold policies and the solver.
//!
//! Channel states are addressed by index `0..J` in increasing gain order. A
//! threshold is also a state index: a user transmits in a slot iff its current
//! state index is `>= threshold`, so threshold `0` means "always transmit".

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph;

/// Row-sum tolerance accepted on input matrices.
pub const INPUT_ROW_TOLERANCE: f64 = 1e-9;

const TABLE1_JSON: &str = include_str!("../fixtures/table1.json");

/// Whether a user transmitted (CSI at or above its threshold) in a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransmissionEvent {
    Silent,
    Transmitted,
}

impl TransmissionEvent {
    pub fn from_threshold(state: usize, threshold: usize) -> Self {
        if state >= threshold {
            TransmissionEvent::Transmitted
        } else {
            TransmissionEvent::Silent
        }
    }

    pub fn transmitted(self) -> bool {
        self == TransmissionEvent::Transmitted
    }
}

/// Which side of a threshold to condition on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// States strictly below the threshold.
    Below,
    /// States at or above the threshold.
    Above,
}

/// Raw channel description as found in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub states: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FsmcChannel {
    states: Vec<f64>,
    transition: Vec<Vec<f64>>,
    stationary: Vec<f64>,
    /// `tail[g] = sum_{j >= g} pi_j`, with `tail[J] = 0`.
    #[serde(skip)]
    tail: Vec<f64>,
}

impl FsmcChannel {
    /// Validate a gain alphabet and transition matrix and compute the
    /// stationary distribution.
    pub fn new(states: Vec<f64>, transition: Vec<Vec<f64>>) -> Result<Self> {
        let j = states.len();
        if j == 0 {
            return Err(Error::invalid("channel needs at least one state"));
        }
        if states.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("channel gains must be positive and finite"));
        }
        if states.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("channel gains must be strictly increasing"));
        }
        if transition.len() != j {
            return Err(Error::invalid(format!(
                "transition matrix has {} rows, expected {j}",
                transition.len()
            )));
        }
        let mut normalized = Vec::with_capacity(j);
        for (i, row) in transition.iter().enumerate() {
            normalized.push(normalize_row(i, row, j)?);
        }
        let stationary = stationary_distribution(&normalized)?;
        let mut tail = vec![0.0; j + 1];
        for g in (0..j).rev() {
            tail[g] = tail[g + 1] + stationary[g];
        }
        Ok(FsmcChannel {
            states,
            transition: normalized,
            stationary,
            tail,
        })
    }

    pub fn from_spec(spec: &ChannelSpec) -> Result<Self> {
        Self::new(spec.states.clone(), spec.transition.clone())
    }

    /// Memoryless channel: every transition row equals `probs`.
    pub fn iid(states: Vec<f64>, probs: &[f64]) -> Result<Self> {
        let rows = vec![probs.to_vec(); states.len()];
        Self::new(states, rows)
    }

    pub fn spec(&self) -> ChannelSpec {
        ChannelSpec {
            states: self.states.clone(),
            transition: self.transition.clone(),
        }
    }

    /// Number of gain states `J`.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn top(&self) -> usize {
        self.states.len() - 1
    }

    pub fn gains(&self) -> &[f64] {
        &self.states
    }

    pub fn gain(&self, state: usize) -> f64 {
        self.states[state]
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.transition[state]
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// Stationary probability of transmitting under `threshold`.
    pub fn prob_at_or_above(&self, threshold: usize) -> f64 {
        self.tail[threshold.min(self.len())]
    }

    pub fn prob_below(&self, threshold: usize) -> f64 {
        1.0 - self.prob_at_or_above(threshold)
    }

    /// One-slot transmit probability of a user whose previous event under
    /// `threshold_prev` is `prev`, when the current threshold is `threshold_cur`.
    ///
    /// Same as [`transmission_event_prob`] except that a silent user under
    /// threshold `0` (possible only through an empty buffer) carries no CSI
    /// information, so the stationary prior is propagated instead.
    pub fn next_transmit_prob(
        &self,
        threshold_prev: usize,
        threshold_cur: usize,
        prev: TransmissionEvent,
    ) -> f64 {
        if prev == TransmissionEvent::Silent && threshold_prev == 0 {
            return self.prob_at_or_above(threshold_cur);
        }
        event_prob_unchecked(self, threshold_prev, threshold_cur, prev)
    }

    /// Bundled ten-state channel models: `user` is 1 or 2.
    pub fn table1(user: usize) -> Result<Self> {
        let key = match user {
            1 => "user1",
            2 => "user2",
            _ => return Err(Error::invalid(format!("bundled channel models are users 1 and 2, not {user}"))),
        };
        Self::fixture(key)
    }

    /// Look up a bundled fixture by name (`table1_user1`, `table1_user2`, or the
    /// bare `user1`/`user2`).
    pub fn fixture(name: &str) -> Result<Self> {
        let key = name.strip_prefix("table1_").unwrap_or(name);
        let file: ChannelFile = serde_json::from_str(TABLE1_JSON)?;
        let spec = file
            .channels
            .get(key)
            .ok_or_else(|| Error::invalid(format!("unknown channel fixture `{name}`")))?;
        Self::from_spec(spec)
    }

    /// Published stationary row for a bundled channel model.
    pub fn table1_published_stationary(user: usize) -> Result<Vec<f64>> {
        let file: ChannelFile = serde_json::from_str(TABLE1_JSON)?;
        file.published_stationary
            .get(&format!("user{user}"))
            .cloned()
            .ok_or_else(|| Error::invalid(format!("no published stationary row for user {user}")))
    }
}

/// Channel configuration file: a map of named channels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelFile {
    #[serde(default)]
    pub description: String,
    pub channels: BTreeMap<String, ChannelSpec>,
    #[serde(default)]
    pub published_stationary: BTreeMap<String, Vec<f64>>,
}

impl ChannelFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn channel(&self, name: &str) -> Result<FsmcChannel> {
        let spec = self
            .channels
            .get(name)
            .ok_or_else(|| Error::invalid(format!("channel `{name}` not in file")))?;
        FsmcChannel::from_spec(spec)
    }
}

fn normalize_row(i: usize, row: &[f64], j: usize) -> Result<Vec<f64>> {
    if row.len() != j {
        return Err(Error::invalid(format!("row {i} has {} entries, expected {j}", row.len())));
    }
    if row.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
        return Err(Error::invalid(format!("row {i} has a negative or non-finite entry")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > INPUT_ROW_TOLERANCE {
        return Err(Error::invalid(format!("row {i} sums to {sum}, not 1")));
    }
    Ok(row.iter().map(|p| p / sum).collect())
}

/// Stationary distribution of an irreducible row-stochastic matrix, by a
/// direct solve of `(P^T - I) v = 0` with one equation replaced by `sum v = 1`.
pub fn stationary_distribution(transition: &[Vec<f64>]) -> Result<Vec<f64>> {
    let j = transition.len();
    if j == 0 || transition.iter().any(|r| r.len() != j) {
        return Err(Error::invalid("transition matrix must be square and non-empty"));
    }
    for (i, row) in transition.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&p| p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > INPUT_ROW_TOLERANCE {
            return Err(Error::invalid(format!("row {i} is not a probability vector")));
        }
    }
    let successors: Vec<Vec<usize>> = transition
        .iter()
        .map(|row| (0..j).filter(|&c| row[c] > 0.0).collect())
        .collect();
    let classes = graph::decompose(&successors);
    if !classes.is_irreducible() {
        return Err(Error::NoUniqueStationary(format!(
            "{} recurrent classes, {} transient states",
            classes.recurrent.len(),
            classes.transient.len()
        )));
    }

    let mut a = DMatrix::<f64>::zeros(j, j);
    for r in 0..j {
        for c in 0..j {
            a[(r, c)] = transition[c][r] - if r == c { 1.0 } else { 0.0 };
        }
    }
    for c in 0..j {
        a[(j - 1, c)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(j);
    b[j - 1] = 1.0;
    let v = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("stationary system".into()))?;
    let mut pi: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= total);
    Ok(pi)
}

/// Stationary distribution restricted to one side of `threshold` and
/// renormalized. Returns `(state, probability)` pairs in state order.
pub fn conditioned_distribution(
    channel: &FsmcChannel,
    threshold: usize,
    side: Side,
) -> Result<Vec<(usize, f64)>> {
    let range = match side {
        Side::Below => 0..threshold.min(channel.len()),
        Side::Above => threshold.min(channel.len())..channel.len(),
    };
    let mass: f64 = range.clone().map(|i| channel.stationary[i]).sum();
    if range.is_empty() || mass <= 0.0 {
        return Err(Error::null_event(format!(
            "no channel state {} threshold {threshold}",
            match side {
                Side::Below => "below",
                Side::Above => "at or above",
            }
        )));
    }
    Ok(range.map(|i| (i, channel.stationary[i] / mass)).collect())
}

/// Probability that a user transmits in the current slot given its previous
/// transmission event: `upsilon` after a silent slot, `zeta` after a
/// transmitted slot.
pub fn transmission_event_prob(
    channel: &FsmcChannel,
    threshold_prev: usize,
    threshold_cur: usize,
    prev: TransmissionEvent,
) -> Result<f64> {
    let side = match prev {
        TransmissionEvent::Silent => Side::Below,
        TransmissionEvent::Transmitted => Side::Above,
    };
    let prior = conditioned_distribution(channel, threshold_prev, side)?;
    Ok(propagate_above(channel, &prior, threshold_cur))
}

fn event_prob_unchecked(
    channel: &FsmcChannel,
    threshold_prev: usize,
    threshold_cur: usize,
    prev: TransmissionEvent,
) -> f64 {
    let range = match prev {
        TransmissionEvent::Silent => 0..threshold_prev.min(channel.len()),
        TransmissionEvent::Transmitted => threshold_prev.min(channel.len())..channel.len(),
    };
    let mass: f64 = range.clone().map(|i| channel.stationary[i]).sum();
    let mut acc = 0.0;
    for i in range {
        let row_tail: f64 = channel.transition[i][threshold_cur.min(channel.len())..].iter().sum();
        acc += channel.stationary[i] * row_tail;
    }
    (acc / mass).clamp(0.0, 1.0)
}

fn propagate_above(channel: &FsmcChannel, prior: &[(usize, f64)], threshold_cur: usize) -> f64 {
    let from = threshold_cur.min(channel.len());
    let p: f64 = prior
        .iter()
        .map(|&(i, w)| w * channel.transition[i][from..].iter().sum::<f64>())
        .sum();
    p.clamp(0.0, 1.0)
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Unconditional probability that exactly `k` of `users` transmit under
/// threshold `threshold`, each independently with its stationary probability.
pub fn binomial_transmit_prob(channel: &FsmcChannel, threshold: usize, users: usize, k: usize) -> f64 {
    let q = channel.prob_at_or_above(threshold);
    binomial(users, k) * q.powi(k as i32) * (1.0 - q).powi((users - k.min(users)) as i32)
}

/// Probability that exactly `k` of `users` transmit under `threshold`, given
/// that at least `at_least` of them transmit.
pub fn multi_transmit_prob(
    channel: &FsmcChannel,
    threshold: usize,
    users: usize,
    k: usize,
    at_least: usize,
) -> Result<f64> {
    if !(at_least <= k && k <= users) {
        return Err(Error::invalid(format!(
            "need at_least <= k <= users, got {at_least} <= {k} <= {users}"
        )));
    }
    let excluded: f64 = (0..at_least)
        .map(|i| binomial_transmit_prob(channel, threshold, users, i))
        .sum();
    let mass = 1.0 - excluded;
    if mass <= 1e-300 {
        return Err(Error::null_event(format!(
            "at least {at_least} of {users} users transmitting under threshold {threshold}"
        )));
    }
    Ok(binomial_transmit_prob(channel, threshold, users, k) / mass)
}
