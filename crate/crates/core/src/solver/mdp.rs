//! Average-cost MDP over the reduced state `(q, Phi)` of one user.

use crate::dynamics::SystemParams;
use crate::error::{Error, Result};

use super::linalg::SparseSystem;
use super::model::PhiModel;

/// Closed-form power minimizing `xi P + Pr{ACK} (W tau / Nb) log2(1 + P H / N0 W) delta`,
/// clipped to `[0, P_max(H)]`.
pub fn optimal_power(delta: f64, p_ack: f64, gain: f64, xi: f64, params: &SystemParams) -> Result<f64> {
    if !(xi > 0.0) {
        return Err(Error::invalid(format!("Lagrange multiplier must be positive, got {xi}")));
    }
    if p_ack <= 0.0 || delta >= 0.0 {
        return Ok(0.0);
    }
    let level = -params.bandwidth_hz * params.tau_s * p_ack * delta
        / (params.mean_packet_bits * xi * std::f64::consts::LN_2);
    Ok((level - params.noise_power() / gain).clamp(0.0, params.max_power(gain)))
}

/// One user's MDP for a fixed multiplier.
pub struct Problem<'a> {
    pub model: &'a PhiModel,
    pub params: &'a SystemParams,
    pub xi: f64,
    /// Power cap per flat branch index.
    pmax: Vec<f64>,
}

/// Entry in the convergence log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRecord {
    pub phase: Phase,
    pub iteration: usize,
    pub span: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    PolicyIteration,
    ValueIteration,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::PolicyIteration => "pi",
            Phase::ValueIteration => "rvi",
        }
    }
}

impl<'a> Problem<'a> {
    pub fn new(model: &'a PhiModel, params: &'a SystemParams, xi: f64) -> Result<Self> {
        if !(xi > 0.0 && xi.is_finite()) {
            return Err(Error::invalid(format!("Lagrange multiplier must be positive, got {xi}")));
        }
        let pmax = model
            .branches
            .iter()
            .flat_map(|bs| bs.iter().map(|b| params.max_power(b.gain)))
            .collect();
        Ok(Problem { model, params, xi, pmax })
    }

    pub fn phi_count(&self) -> usize {
        self.model.len()
    }

    pub fn levels(&self) -> usize {
        self.params.buffer_pkts + 1
    }

    pub fn state_count(&self) -> usize {
        self.levels() * self.phi_count()
    }

    pub fn state(&self, q: usize, phi: usize) -> usize {
        q * self.phi_count() + phi
    }

    pub fn power_index(&self, q: usize, phi: usize, b: usize) -> usize {
        q * self.model.total_branches + self.model.branch_offset[phi] + b
    }

    pub fn power_len(&self) -> usize {
        self.levels() * self.model.total_branches
    }

    fn service(&self, gain: f64, power: f64) -> f64 {
        self.params.link_rate(gain, power) * self.params.tau_s
    }

    /// Expected one-slot cost and `E[V(next)]` at `(q, phi)` under `powers`.
    fn backup(&self, q: usize, phi: usize, powers: &[f64], v: &[f64]) -> f64 {
        let n = self.params.buffer_pkts;
        let up = self.params.arrival_prob();
        let (qu, qd) = ((q + 1).min(n), q.saturating_sub(1));
        let mut total = q as f64;
        for (b, br) in self.model.branches[phi].iter().enumerate() {
            let p = powers[self.power_index(q, phi, b)];
            let mut acc = self.xi * p;
            for &(t, pz) in &br.next {
                acc += pz * (up * v[self.state(qu, t)] + (1.0 - up) * v[self.state(q, t)]);
            }
            if let Some((t, pa)) = br.ack {
                if p > 0.0 {
                    acc += pa * self.service(br.gain, p) * (v[self.state(qd, t)] - v[self.state(q, t)]);
                }
            }
            total += br.prob * acc;
        }
        total
    }

    /// Greedy powers with respect to `v` at every state of `phis`.
    fn water_fill(&self, delta: f64, p_ack: f64, gain: f64, flat: usize) -> f64 {
        if delta >= 0.0 {
            return 0.0;
        }
        let level = -self.params.bandwidth_hz * self.params.tau_s * p_ack * delta
            / (self.params.mean_packet_bits * self.xi * std::f64::consts::LN_2);
        (level - self.params.noise_power() / gain).clamp(0.0, self.pmax[flat])
    }

    pub fn improve_into(&self, v: &[f64], phis: &[usize], powers: &mut [f64]) -> Result<()> {
        for q in 0..self.levels() {
            let qd = q.saturating_sub(1);
            for &phi in phis {
                for (b, br) in self.model.branches[phi].iter().enumerate() {
                    let p = match (br.transmit, br.ack) {
                        (true, Some((t, pa))) if q > 0 => {
                            let delta = v[self.state(qd, t)] - v[self.state(q, t)];
                            self.water_fill(delta, pa, br.gain, self.model.branch_offset[phi] + b)
                        }
                        _ => 0.0,
                    };
                    powers[self.power_index(q, phi, b)] = p;
                }
            }
        }
        Ok(())
    }

    pub fn improve(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut powers = vec![0.0; self.power_len()];
        let all: Vec<usize> = (0..self.phi_count()).collect();
        self.improve_into(v, &all, &mut powers)?;
        Ok(powers)
    }

    /// Bellman operator restricted to `phis`: returns `(TV, greedy powers)`,
    /// with entries outside `phis` left at zero.
    pub fn bellman(&self, v: &[f64], phis: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut powers = vec![0.0; self.power_len()];
        self.improve_into(v, phis, &mut powers)?;
        let mut tv = vec![0.0; self.state_count()];
        for q in 0..self.levels() {
            for &phi in phis {
                tv[self.state(q, phi)] = self.backup(q, phi, &powers, v);
            }
        }
        Ok((tv, powers))
    }

    /// Largest `|TV - V - theta|` over `phis`, for checking a solution.
    pub fn bellman_residual(&self, v: &[f64], theta: f64, phis: &[usize]) -> Result<f64> {
        let (tv, _) = self.bellman(v, phis)?;
        let mut worst: f64 = 0.0;
        for q in 0..self.levels() {
            for &phi in phis {
                let s = self.state(q, phi);
                worst = worst.max((tv[s] - v[s] - theta).abs());
            }
        }
        Ok(worst)
    }

    pub fn stage_cost(&self, q: usize, phi: usize, powers: &[f64]) -> f64 {
        q as f64 + self.xi * self.expected_power(q, phi, powers)
    }

    pub fn expected_power(&self, q: usize, phi: usize, powers: &[f64]) -> f64 {
        self.model.branches[phi]
            .iter()
            .enumerate()
            .map(|(b, br)| br.prob * powers[self.power_index(q, phi, b)])
            .sum()
    }

    /// `sum_{s'} P(s -> s') v(s')` for `s = (q, phi)`.
    pub fn apply_transition(&self, q: usize, phi: usize, powers: &[f64], v: &[f64]) -> f64 {
        self.backup(q, phi, powers, v) - self.stage_cost(q, phi, powers)
    }

    /// `I - P` restricted to `rows x rows` (a set closed under the chain, or a
    /// transient set whose outflow is dropped). State `(q, rows[i])` sits at
    /// index `q * rows.len() + i`.
    pub fn identity_minus_p(&self, rows: &[usize], powers: &[f64]) -> SparseSystem {
        let f = self.phi_count();
        let m = rows.len();
        let mut local = vec![usize::MAX; f];
        for (i, &r) in rows.iter().enumerate() {
            local[r] = i;
        }
        // Phi moves without service, then the served part at each level
        let mut t: Vec<(usize, usize, f64)> = Vec::new();
        for (i, &phi) in rows.iter().enumerate() {
            for br in &self.model.branches[phi] {
                for &(s, pz) in &br.next {
                    if local[s] != usize::MAX {
                        t.push((i, local[s], br.prob * pz));
                    }
                }
            }
        }
        let n = self.params.buffer_pkts;
        let up = self.params.arrival_prob();
        let mut a = SparseSystem::new((n + 1) * m);
        for q in 0..=n {
            let base = q * m;
            for i in 0..m {
                a.add(base + i, base + i, 1.0);
            }
            let stay = if q == n { 1.0 } else { 1.0 - up };
            for &(i, j, v) in &t {
                a.add(base + i, base + j, -stay * v);
                if q < n {
                    a.add(base + i, base + m + j, -up * v);
                }
            }
            if q > 0 {
                for (i, &phi) in rows.iter().enumerate() {
                    for (b, br) in self.model.branches[phi].iter().enumerate() {
                        if let Some((s, pa)) = br.ack {
                            let p = powers[self.power_index(q, phi, b)];
                            if p > 0.0 && local[s] != usize::MAX {
                                let v = br.prob * pa * self.service(br.gain, p);
                                a.add(base + i, base + local[s], v);
                                a.add(base + i, base - m + local[s], -v);
                            }
                        }
                    }
                }
            }
        }
        a
    }
}

/// Exact evaluation of a fixed power policy on a closed set of `Phi` states.
///
/// Solves `(I - P + 1 e_r^T) h = c` by Sherman-Morrison around the sparse
/// `A = I - P + e_r e_r^T`, so `theta = h_r` and the relative values are
/// `h - h_r`. Also returns the stationary distribution from `A^T y = e_r`
/// when asked. Entries outside `rows` are zero.
pub fn evaluate_closed(
    problem: &Problem,
    powers: &[f64],
    rows: &[usize],
    reference: (usize, usize),
    with_omega: bool,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let f = problem.phi_count();
    let levels = problem.levels();
    let (q_ref, phi_ref) = reference;
    let r_loc = rows
        .iter()
        .position(|&r| r == phi_ref)
        .ok_or_else(|| Error::invalid("reference state outside the evaluated set"))?;
    let m = rows.len();
    let r = q_ref * m + r_loc;
    let mut a = problem.identity_minus_p(rows, powers);
    a.add(r, r, 1.0);
    let lu = a.factor()?;

    let mut cost = vec![0.0; levels * m];
    for q in 0..levels {
        for (i, &phi) in rows.iter().enumerate() {
            cost[q * m + i] = problem.stage_cost(q, phi, powers);
        }
    }
    let mut ones = vec![1.0; levels * m];
    ones[r] = 0.0;
    let sol = lu.solve(&[cost, ones])?;
    let (x_r, y_r) = (sol[0][r], sol[1][r]);
    if (1.0 + y_r).abs() < 1e-300 {
        return Err(Error::Singular("rank-one update breaks down".into()));
    }
    let scale = x_r / (1.0 + y_r);
    let theta = x_r - scale * y_r;
    let mut h = vec![0.0; levels * f];
    for q in 0..levels {
        for (i, &phi) in rows.iter().enumerate() {
            let k = q * m + i;
            h[q * f + phi] = sol[0][k] - scale * sol[1][k] - theta;
        }
    }

    if !with_omega {
        return Ok((theta, h, Vec::new()));
    }
    let mut e = vec![0.0; levels * m];
    e[r] = 1.0;
    let y = lu.solve_transpose(&[e])?.remove(0);
    let mut omega = vec![0.0; levels * f];
    let mut total = 0.0;
    for q in 0..levels {
        for (i, &phi) in rows.iter().enumerate() {
            let w = y[q * m + i].max(0.0);
            omega[q * f + phi] = w;
            total += w;
        }
    }
    if !(total > 0.0) {
        return Err(Error::Singular("stationary system has no positive solution".into()));
    }
    omega.iter_mut().for_each(|w| *w /= total);
    Ok((theta, h, omega))
}
