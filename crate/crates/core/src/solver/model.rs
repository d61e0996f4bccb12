//! The queue-free part `Phi = (H_prev, common, Z_prev)` of a user's reduced
//! state and its transition structure.

use std::collections::HashMap;

use crate::channel::TransmissionEvent;
use crate::dynamics::{own_prev_event, Feedback, Network};
use crate::error::{Error, Result};
use crate::graph::{self, ClassDecomposition};
use crate::policy::ThresholdPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Phi {
    pub h: usize,
    pub common: usize,
    pub z: Feedback,
}

/// One realization of the current CSI from a `Phi` state.
#[derive(Debug, Clone)]
pub struct Branch {
    pub h: usize,
    pub prob: f64,
    pub gain: f64,
    pub transmit: bool,
    /// `(successor Phi index, Pr{Z})` for each feedback value with positive probability.
    pub next: Vec<(usize, f64)>,
    /// Successor on ACK and its probability, when the user transmits and can succeed.
    pub ack: Option<(usize, f64)>,
}

/// Transition structure of `Phi` for one user under a fixed threshold policy.
#[derive(Debug, Clone)]
pub struct PhiModel {
    pub user: usize,
    pub phis: Vec<Phi>,
    index: HashMap<Phi, usize>,
    pub branches: Vec<Vec<Branch>>,
    /// Offset of each state's first branch in a flat branch array.
    pub branch_offset: Vec<usize>,
    pub total_branches: usize,
    pub classes: ClassDecomposition,
    /// Distribution of the first slot's `Phi`: `H ~ pi`, the policy's initial
    /// common state and `Z = NAK`.
    pub start: Vec<f64>,
}

/// Enumerate every structurally possible `Phi` whose common state is
/// reachable from the policy's initial state, and wire up the transitions.
///
/// States a dominant-mode user can never visit (e.g. above threshold after an
/// idle slot) are kept: an actual-mode user with an empty buffer lands there.
pub fn build_phi_chain(network: &Network, policy: &ThresholdPolicy, k: usize) -> Result<PhiModel> {
    if k >= network.users() || policy.users != network.users() {
        return Err(Error::invalid("user index or policy size does not match the network"));
    }
    let channel = network.channel(k);
    let j = channel.len();
    if policy.states.iter().any(|s| s[k] >= j) {
        return Err(Error::invalid(format!("policy threshold outside user {k}'s alphabet")));
    }
    let mut commons = policy.reachable();
    commons.sort_unstable();

    let mut phis = Vec::new();
    for h in 0..j {
        for &c in &commons {
            for z in Feedback::ALL {
                let b_prev = own_prev_event(h, policy.threshold(c, k), z);
                match network.feedback_kernel(k, policy, c, z, b_prev, TransmissionEvent::Silent) {
                    Ok(_) => phis.push(Phi { h, common: c, z }),
                    Err(Error::NullEvent(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }
    let index: HashMap<Phi, usize> = phis.iter().enumerate().map(|(i, &p)| (p, i)).collect();

    let mut branches = Vec::with_capacity(phis.len());
    for phi in &phis {
        let c_cur = policy.next(phi.common, phi.z);
        let gamma_cur = policy.threshold(c_cur, k);
        let b_prev = own_prev_event(phi.h, policy.threshold(phi.common, k), phi.z);
        let mut list = Vec::new();
        for (h, &prob) in channel.row(phi.h).iter().enumerate() {
            if prob <= 0.0 {
                continue;
            }
            let b_cur = TransmissionEvent::from_threshold(h, gamma_cur);
            let zd = network.feedback_kernel(k, policy, phi.common, phi.z, b_prev, b_cur)?;
            let mut next = Vec::with_capacity(3);
            let mut ack = None;
            for z in Feedback::ALL {
                let pz = zd[z.index()];
                if pz <= 0.0 {
                    continue;
                }
                let target = Phi { h, common: c_cur, z };
                let t = *index.get(&target).ok_or_else(|| {
                    Error::invalid(format!("successor {target:?} of {phi:?} is not a valid state"))
                })?;
                next.push((t, pz));
                if z == Feedback::Ack && b_cur.transmitted() {
                    ack = Some((t, pz));
                }
            }
            list.push(Branch {
                h,
                prob,
                gain: channel.gain(h),
                transmit: b_cur.transmitted(),
                next,
                ack,
            });
        }
        branches.push(list);
    }

    let mut branch_offset = Vec::with_capacity(phis.len());
    let mut total = 0;
    for b in &branches {
        branch_offset.push(total);
        total += b.len();
    }
    let successors: Vec<Vec<usize>> = branches
        .iter()
        .map(|bs| {
            let mut s: Vec<usize> = bs.iter().flat_map(|b| b.next.iter().map(|&(t, _)| t)).collect();
            s.sort_unstable();
            s.dedup();
            s
        })
        .collect();
    let classes = graph::decompose(&successors);
    let mut start = vec![0.0; phis.len()];
    for (h, &w) in channel.stationary().iter().enumerate() {
        let phi = Phi { h, common: policy.initial, z: Feedback::Nak };
        if let Some(&i) = index.get(&phi) {
            start[i] = w;
        }
    }
    let mass: f64 = start.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::invalid("initial common state has no valid start"));
    }
    start.iter_mut().for_each(|w| *w /= mass);
    Ok(PhiModel {
        user: k,
        phis,
        index,
        branches,
        branch_offset,
        total_branches: total,
        classes,
        start,
    })
}

impl PhiModel {
    pub fn len(&self) -> usize {
        self.phis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phis.is_empty()
    }

    pub fn index_of(&self, phi: &Phi) -> Option<usize> {
        self.index.get(phi).copied()
    }

    /// Dense row-stochastic matrix of the `Phi` chain.
    pub fn transition_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut t = vec![vec![0.0; n]; n];
        for (i, bs) in self.branches.iter().enumerate() {
            for b in bs {
                for &(s, pz) in &b.next {
                    t[i][s] += b.prob * pz;
                }
            }
        }
        t
    }

    /// Probability of ending up in each recurrent class, from every state.
    /// Row `i` is the distribution for `Phi` state `i`.
    pub fn absorption(&self) -> Result<Vec<Vec<f64>>> {
        let n = self.len();
        let classes = &self.classes.recurrent;
        let mut class_of = vec![usize::MAX; n];
        for (c, members) in classes.iter().enumerate() {
            for &i in members {
                class_of[i] = c;
            }
        }
        let mut out = vec![vec![0.0; classes.len()]; n];
        for i in 0..n {
            if class_of[i] != usize::MAX {
                out[i][class_of[i]] = 1.0;
            }
        }
        let trans = &self.classes.transient;
        if trans.is_empty() {
            return Ok(out);
        }
        let t = self.transition_matrix();
        let m = trans.len();
        let a = nalgebra::DMatrix::from_fn(m, m, |r, c| {
            let id = if r == c { 1.0 } else { 0.0 };
            id - t[trans[r]][trans[c]]
        });
        let b = nalgebra::DMatrix::from_fn(m, classes.len(), |r, c| {
            classes[c].iter().map(|&j| t[trans[r]][j]).sum::<f64>()
        });
        let x = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Singular("absorption system".into()))?;
        for (r, &i) in trans.iter().enumerate() {
            for c in 0..classes.len() {
                out[i][c] = x[(r, c)];
            }
        }
        Ok(out)
    }

    /// States reachable from any state whose common component is `initial`.
    pub fn reachable_from_common(&self, initial: usize) -> Vec<usize> {
        let mut seen = vec![false; self.len()];
        let mut stack: Vec<usize> = (0..self.len())
            .filter(|&i| self.phis[i].common == initial)
            .collect();
        for &s in &stack {
            seen[s] = true;
        }
        while let Some(i) = stack.pop() {
            for b in &self.branches[i] {
                for &(s, _) in &b.next {
                    if !seen[s] {
                        seen[s] = true;
                        stack.push(s);
                    }
                }
            }
        }
        (0..self.len()).filter(|&i| seen[i]).collect()
    }

    /// Stationary probability that the user transmits, for the recurrent class
    /// containing the most probable start. Used by the fixed-power baselines.
    pub fn stationary_transmit_prob(&self) -> Result<f64> {
        let class = self
            .classes
            .recurrent
            .first()
            .ok_or_else(|| Error::NoUniqueStationary("no recurrent class".into()))?;
        let t = self.transition_matrix();
        let sub: Vec<Vec<f64>> = class
            .iter()
            .map(|&i| class.iter().map(|&j| t[i][j]).collect())
            .collect();
        let pi = crate::channel::stationary_distribution(&sub)?;
        Ok(class
            .iter()
            .zip(&pi)
            .map(|(&i, w)| w * self.branches[i].iter().filter(|b| b.transmit).map(|b| b.prob).sum::<f64>())
            .sum())
    }
}
