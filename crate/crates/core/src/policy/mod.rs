//! Threshold control policies driven by common feedback, the per-user power
//! rules executed online, and the baseline schemes.

mod asymmetric;
mod baseline;
mod lcsihp;
mod power;
mod table_format;

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::dynamics::Feedback;
use crate::error::{Error, Result};

pub use asymmetric::{asymmetric_objective, asymmetric_policy, asymmetric_threshold, rho};
pub use baseline::{
    baseline_binary_scheduling, baseline_bsp, baseline_variable_rate, binary_scheduling_objective,
    variable_rate_for_threshold, water_filling_power, VariableRate,
};
pub use lcsihp::{lcsihp_objective, lcsihp_policy, lcsihp_threshold};
pub use power::{PowerRule, PowerTable, SynthesizedPolicy, UserRule};
pub use table_format::{read_policy_table, write_policy_table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// One common threshold; every user sees the same statistics.
    Symmetric,
    /// Per-user thresholds over heterogeneous channels.
    Asymmetric,
}

impl PolicyMode {
    pub fn label(self) -> &'static str {
        match self {
            PolicyMode::Symmetric => "symmetric",
            PolicyMode::Asymmetric => "asymmetric",
        }
    }
}

/// Deterministic threshold automaton over common information.
///
/// Common state `c` stands for the threshold vector `states[c]` used in the
/// previous slot; after feedback `z` the next slot uses `states[next[c][z]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdPolicy {
    pub mode: PolicyMode,
    pub users: usize,
    pub states: Vec<Vec<usize>>,
    pub next: Vec<[usize; 3]>,
    pub initial: usize,
}

impl ThresholdPolicy {
    pub fn new(
        mode: PolicyMode,
        users: usize,
        states: Vec<Vec<usize>>,
        next: Vec<[usize; 3]>,
        initial: usize,
    ) -> Result<Self> {
        if states.is_empty() || states.len() != next.len() {
            return Err(Error::invalid("threshold automaton needs one transition row per state"));
        }
        if states.iter().any(|s| s.len() != users) {
            return Err(Error::invalid("every common state needs one threshold per user"));
        }
        if initial >= states.len() || next.iter().flatten().any(|&c| c >= states.len()) {
            return Err(Error::invalid("threshold automaton refers to an unknown state"));
        }
        Ok(ThresholdPolicy {
            mode,
            users,
            states,
            next,
            initial,
        })
    }

    /// Policy that never changes its thresholds.
    pub fn constant(mode: PolicyMode, thresholds: Vec<usize>) -> Self {
        let users = thresholds.len();
        ThresholdPolicy {
            mode,
            users,
            states: vec![thresholds],
            next: vec![[0; 3]],
            initial: 0,
        }
    }

    /// Build an automaton from a feedback map by exploring the threshold
    /// vectors reachable from `initial`.
    pub fn explore<F>(mode: PolicyMode, initial: Vec<usize>, mut step: F) -> Result<Self>
    where
        F: FnMut(&[usize], Feedback) -> Result<Vec<usize>>,
    {
        let users = initial.len();
        let mut index: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        let mut states = vec![initial.clone()];
        let mut next: Vec<[usize; 3]> = vec![[0; 3]];
        index.insert(initial, 0);
        let mut queue = VecDeque::from([0usize]);
        while let Some(c) = queue.pop_front() {
            for z in Feedback::ALL {
                let target = step(&states[c].clone(), z)?;
                let id = match index.get(&target) {
                    Some(&id) => id,
                    None => {
                        let id = states.len();
                        index.insert(target.clone(), id);
                        states.push(target);
                        next.push([0; 3]);
                        queue.push_back(id);
                        id
                    }
                };
                next[c][z.index()] = id;
            }
        }
        Self::new(mode, users, states, next, 0)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn thresholds(&self, c: usize) -> &[usize] {
        &self.states[c]
    }

    pub fn threshold(&self, c: usize, k: usize) -> usize {
        self.states[c][k]
    }

    pub fn next(&self, c: usize, z: Feedback) -> usize {
        self.next[c][z.index()]
    }

    /// Common states reachable from the initial state, in discovery order.
    pub fn reachable(&self) -> Vec<usize> {
        let mut seen = vec![false; self.len()];
        let mut order = vec![self.initial];
        seen[self.initial] = true;
        let mut i = 0;
        while i < order.len() {
            for &c in &self.next[order[i]] {
                if !seen[c] {
                    seen[c] = true;
                    order.push(c);
                }
            }
            i += 1;
        }
        order
    }

    /// True when the next thresholds never depend on the feedback or history.
    pub fn is_constant(&self) -> bool {
        let reach = self.reachable();
        let first = &self.states[self.initial];
        reach.iter().all(|&c| &self.states[c] == first)
    }
}

/// Index of the largest maximizer of `objective` over `0..len` (ties go to
/// the largest argument).
pub(crate) fn argmax_last<F>(len: usize, mut objective: F) -> Result<usize>
where
    F: FnMut(usize) -> Result<f64>,
{
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for g in 0..len {
        let v = objective(g)?;
        if v >= best_val {
            best = g;
            best_val = v;
        }
    }
    Ok(best)
}
