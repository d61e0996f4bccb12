use crate::channel::FsmcChannel;
use crate::error::{Error, Result};

use super::Feedback;

/// Joint distribution over the CSI of every user except `owner`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointBelief {
    pub owner: usize,
    /// Users covered, in increasing order (all indices except `owner`).
    pub users: Vec<usize>,
    /// One entry per joint realization; `states[r][i]` is the state of `users[i]`.
    pub states: Vec<Vec<usize>>,
    pub probs: Vec<f64>,
}

impl JointBelief {
    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Marginal of one covered user.
    pub fn marginal(&self, user: usize, channels: &[FsmcChannel]) -> Option<Vec<f64>> {
        let pos = self.users.iter().position(|&u| u == user)?;
        let mut m = vec![0.0; channels[user].len()];
        for (s, p) in self.states.iter().zip(&self.probs) {
            m[s[pos]] += p;
        }
        Some(m)
    }
}

fn product_support(users: &[usize], channels: &[FsmcChannel]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::with_capacity(users.len())];
    for &u in users {
        let mut next = Vec::with_capacity(out.len() * channels[u].len());
        for prefix in &out {
            for s in 0..channels[u].len() {
                let mut v = prefix.clone();
                v.push(s);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// Belief about the other users' previous-slot CSI held by user `k`.
///
/// The known information `(h_prev, thresholds_prev, z_prev)` enters only
/// through a normalizer that cancels, so the belief is the product of the
/// other users' stationary distributions.
pub fn belief_other_csi(
    _h_prev: usize,
    _thresholds_prev: &[usize],
    _z_prev: Feedback,
    channels: &[FsmcChannel],
    k: usize,
) -> Result<JointBelief> {
    if k >= channels.len() {
        return Err(Error::invalid(format!("user {k} out of range")));
    }
    let users: Vec<usize> = (0..channels.len()).filter(|&i| i != k).collect();
    let states = product_support(&users, channels);
    let mut probs: Vec<f64> = states
        .iter()
        .map(|s| s.iter().zip(&users).map(|(&j, &u)| channels[u].stationary()[j]).product())
        .collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(JointBelief {
        owner: k,
        users,
        states,
        probs,
    })
}

/// Push a belief through one slot of every covered user's channel.
pub fn propagate_belief(belief: &JointBelief, channels: &[FsmcChannel]) -> JointBelief {
    let states = product_support(&belief.users, channels);
    let index = |s: &[usize]| {
        s.iter()
            .zip(&belief.users)
            .fold(0usize, |acc, (&j, &u)| acc * channels[u].len() + j)
    };
    let mut probs = vec![0.0; states.len()];
    for (from, &w) in belief.states.iter().zip(&belief.probs) {
        if w == 0.0 {
            continue;
        }
        for to in &states {
            let p: f64 = from
                .iter()
                .zip(to)
                .zip(&belief.users)
                .map(|((&i, &j), &u)| channels[u].row(i)[j])
                .product();
            if p > 0.0 {
                probs[index(to)] += w * p;
            }
        }
    }
    JointBelief {
        owner: belief.owner,
        users: belief.users.clone(),
        states,
        probs,
    }
}
