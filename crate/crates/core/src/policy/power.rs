use std::sync::Arc;

use crate::dynamics::Feedback;
use crate::error::{Error, Result};

use super::ThresholdPolicy;

/// Dense power lookup over `(q, h_prev, common, z_prev, h_cur)`.
/// Entries that were never set are misses.
#[derive(Debug, Clone)]
pub struct PowerTable {
    pub buffer: usize,
    pub channel_states: usize,
    pub common_states: usize,
    values: Vec<f64>,
}

impl PowerTable {
    pub fn new(buffer: usize, channel_states: usize, common_states: usize) -> Self {
        let len = (buffer + 1) * channel_states * common_states * 3 * channel_states;
        PowerTable {
            buffer,
            channel_states,
            common_states,
            values: vec![f64::NAN; len],
        }
    }

    fn index(&self, q: usize, h_prev: usize, common: usize, z: Feedback, h_cur: usize) -> Option<usize> {
        let j = self.channel_states;
        if q > self.buffer || h_prev >= j || h_cur >= j || common >= self.common_states {
            return None;
        }
        Some((((q * j + h_prev) * self.common_states + common) * 3 + z.index()) * j + h_cur)
    }

    pub fn set(&mut self, q: usize, h_prev: usize, common: usize, z: Feedback, h_cur: usize, power: f64) {
        let i = self
            .index(q, h_prev, common, z, h_cur)
            .expect("power table index out of range");
        self.values[i] = power;
    }

    pub fn get(&self, q: usize, h_prev: usize, common: usize, z: Feedback, h_cur: usize) -> Option<f64> {
        self.index(q, h_prev, common, z, h_cur)
            .map(|i| self.values[i])
            .filter(|v| !v.is_nan())
    }

    pub fn lookup(&self, q: usize, h_prev: usize, common: usize, z: Feedback, h_cur: usize) -> Result<f64> {
        self.get(q, h_prev, common, z, h_cur).ok_or_else(|| {
            Error::PolicyMiss(format!(
                "q={q} h_prev={h_prev} common={common} z_prev={z} h_cur={h_cur}"
            ))
        })
    }

    /// Every stored entry in index order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize, Feedback, usize, f64)> + '_ {
        let j = self.channel_states;
        let c = self.common_states;
        self.values.iter().enumerate().filter(|(_, v)| !v.is_nan()).map(move |(i, &v)| {
            let h_cur = i % j;
            let rest = i / j;
            let z = Feedback::from_index(rest % 3).expect("feedback index");
            let rest = rest / 3;
            let common = rest % c;
            let rest = rest / c;
            (rest / j, rest % j, common, z, h_cur, v)
        })
    }

    pub fn len(&self) -> usize {
        self.values.iter().filter(|v| !v.is_nan()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl PartialEq for PowerTable {
    fn eq(&self, other: &Self) -> bool {
        self.buffer == other.buffer
            && self.channel_states == other.channel_states
            && self.common_states == other.common_states
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a == b || (a.is_nan() && b.is_nan()))
    }
}

/// How a user picks its transmit power once it has decided to transmit.
#[derive(Debug, Clone, PartialEq)]
pub enum PowerRule {
    Table(Arc<PowerTable>),
    Fixed(f64),
    /// One power per current CSI state.
    PerCsi(Vec<f64>),
}

impl PowerRule {
    pub fn power(&self, q: usize, h_prev: usize, common: usize, z_prev: Feedback, h_cur: usize) -> Result<f64> {
        match self {
            PowerRule::Table(t) => t.lookup(q, h_prev, common, z_prev, h_cur),
            PowerRule::Fixed(p) => Ok(*p),
            PowerRule::PerCsi(v) => v
                .get(h_cur)
                .copied()
                .ok_or_else(|| Error::PolicyMiss(format!("no power for CSI state {h_cur}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRule {
    pub xi: f64,
    pub theta: f64,
    pub rule: PowerRule,
}

/// Complete online policy: a threshold automaton plus one power rule per user.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedPolicy {
    pub name: String,
    pub thresholds: ThresholdPolicy,
    pub users: Vec<UserRule>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_roundtrip_and_miss() {
        let mut t = PowerTable::new(2, 3, 2);
        t.set(1, 2, 1, Feedback::Collision, 0, 0.5);
        t.set(0, 0, 0, Feedback::Nak, 2, 0.0);
        assert_eq!(t.lookup(1, 2, 1, Feedback::Collision, 0).unwrap(), 0.5);
        assert!(matches!(t.lookup(1, 2, 1, Feedback::Ack, 0), Err(Error::PolicyMiss(_))));
        let e: Vec<_> = t.entries().collect();
        assert_eq!(e, vec![(0, 0, 0, Feedback::Nak, 2, 0.0), (1, 2, 1, Feedback::Collision, 0, 0.5)]);
    }
}
