//! Independent oracles shared by the integration tests. None of these call
//! the kernels, solvers or threshold rules they are used to check.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saloha::dynamics::LocalState;
use saloha::{Feedback, FsmcChannel, SystemParams, ThresholdPolicy};

pub fn params(users: usize, buffer: usize, lambda: f64) -> SystemParams {
    SystemParams {
        tau_s: 1e-3,
        bandwidth_hz: 1000.0,
        noise_w_per_hz: 1e-3,
        lambda_pkts_per_s: lambda,
        mean_packet_bits: 1000.0,
        buffer_pkts: buffer,
        users,
    }
}

pub fn user1() -> FsmcChannel {
    FsmcChannel::table1(1).unwrap()
}

pub fn user2() -> FsmcChannel {
    FsmcChannel::table1(2).unwrap()
}

/// Small non-i.i.d. two-state channel.
pub fn two_state() -> FsmcChannel {
    FsmcChannel::new(vec![0.5, 2.0], vec![vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap()
}

pub fn z_of(count: usize) -> Feedback {
    match count {
        0 => Feedback::Nak,
        1 => Feedback::Ack,
        _ => Feedback::Collision,
    }
}

fn z_allows(z: Feedback, count: usize) -> bool {
    match z {
        Feedback::Nak => count == 0,
        Feedback::Ack => count == 1,
        Feedback::Collision => count >= 2,
    }
}

/// Odometer over the other users' `(h_prev, h_cur)` pairs.
fn for_each_joint(channels: &[FsmcChannel], others: &[usize], mut f: impl FnMut(&[usize], &[usize], f64)) {
    let n = others.len();
    let mut prev = vec![0usize; n];
    let mut cur = vec![0usize; n];
    loop {
        let mut w = 1.0;
        for (i, &u) in others.iter().enumerate() {
            let ch = &channels[u];
            w *= ch.stationary()[prev[i]] * ch.transition()[prev[i]][cur[i]];
        }
        if w > 0.0 {
            f(&prev, &cur, w);
        }
        // advance
        let mut i = 0;
        loop {
            if i == n {
                return;
            }
            let j = channels[others[i]].len();
            cur[i] += 1;
            if cur[i] < j {
                break;
            }
            cur[i] = 0;
            prev[i] += 1;
            if prev[i] < j {
                break;
            }
            prev[i] = 0;
            i += 1;
        }
    }
}

/// Feedback law for user `k` by brute-force enumeration of the other users'
/// previous and current CSI: each other user starts from its stationary law,
/// moves one step, and transmits whenever its CSI clears its threshold. The
/// previous slot is conditioned on the total transmitter count implied by
/// `z_prev`. `None` when that conditioning event has probability zero.
pub fn joint_feedback(
    channels: &[FsmcChannel],
    k: usize,
    prev_thresholds: &[usize],
    cur_thresholds: &[usize],
    z_prev: Feedback,
    self_prev: bool,
    self_cur: bool,
) -> Option<[f64; 3]> {
    let others: Vec<usize> = (0..channels.len()).filter(|&i| i != k).collect();
    let mut out = [0.0; 3];
    let mut mass = 0.0;
    for_each_joint(channels, &others, |prev, cur, w| {
        let n_prev = self_prev as usize + others.iter().zip(prev).filter(|(&u, &h)| h >= prev_thresholds[u]).count();
        if !z_allows(z_prev, n_prev) {
            return;
        }
        let n_cur = self_cur as usize + others.iter().zip(cur).filter(|(&u, &h)| h >= cur_thresholds[u]).count();
        out[z_of(n_cur).index()] += w;
        mass += w;
    });
    if mass <= 0.0 {
        return None;
    }
    out.iter_mut().for_each(|p| *p /= mass);
    Some(out)
}

/// `(W / Nb) log2(1 + P H / N0 W)`, written out here rather than borrowed.
pub fn rate(params: &SystemParams, gain: f64, power: f64) -> f64 {
    let snr = power * gain / (params.noise_w_per_hz * params.bandwidth_hz);
    params.bandwidth_hz / params.mean_packet_bits * (1.0 + snr).log2()
}

/// One-slot kernel of user `k`'s local state, assembled from
/// [`joint_feedback`], a birth-death queue step and the channel row.
pub fn joint_local_kernel(
    channels: &[FsmcChannel],
    policy: &ThresholdPolicy,
    params: &SystemParams,
    k: usize,
    s: &LocalState,
    power: f64,
) -> Option<BTreeMap<LocalState, f64>> {
    let ch = &channels[k];
    let gp = policy.thresholds(s.common).to_vec();
    let c_cur = policy.next(s.common, s.z_prev);
    let gc = policy.thresholds(c_cur).to_vec();
    // a NAK means nobody sent, including this user
    let self_prev = s.h_prev >= gp[k] && s.z_prev != Feedback::Nak;
    let self_cur = s.h_cur >= gc[k];
    let zd = joint_feedback(channels, k, &gp, &gc, s.z_prev, self_prev, self_cur)?;
    let p = if self_cur { power } else { 0.0 };
    let up = params.lambda_pkts_per_s * params.tau_s;
    let mut out = BTreeMap::new();
    for z in Feedback::ALL {
        let pz = zd[z.index()];
        if pz <= 0.0 {
            continue;
        }
        let down = if z == Feedback::Ack && p > 0.0 { rate(params, ch.gain(s.h_cur), p) * params.tau_s } else { 0.0 };
        let n = params.buffer_pkts;
        let mut q_moves: Vec<(usize, f64)> = vec![((s.q + 1).min(n), up), (s.q.saturating_sub(1), down), (s.q, 1.0 - up - down)];
        q_moves.retain(|&(_, w)| w > 0.0);
        for (q, pq) in q_moves {
            for (h, &ph) in ch.row(s.h_cur).iter().enumerate() {
                if ph <= 0.0 {
                    continue;
                }
                let next = LocalState {
                    q,
                    h_prev: s.h_cur,
                    common: c_cur,
                    z_prev: z,
                    h_cur: h,
                };
                *out.entry(next).or_insert(0.0) += pz * pq * ph;
            }
        }
    }
    Some(out)
}

/// Monte Carlo estimate of the symmetric feedback kernel. The tally is
/// indexed `[z_prev][self_prev][self_cur][z_cur]`.
pub fn mc_feedback_counts(
    channel: &FsmcChannel,
    users: usize,
    gamma_prev: usize,
    gamma_cur: usize,
    samples: u64,
    seed: u64,
) -> [[[[u64; 3]; 2]; 2]; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cdf = |p: &[f64]| {
        let mut acc = 0.0;
        p.iter()
            .map(|x| {
                acc += x;
                acc
            })
            .collect::<Vec<f64>>()
    };
    let pi = cdf(channel.stationary());
    let rows: Vec<Vec<f64>> = channel.transition().iter().map(|r| cdf(r)).collect();
    let draw = |c: &[f64], u: f64| c.iter().position(|&x| u < x).unwrap_or(c.len() - 1);
    let mut tally = [[[[0u64; 3]; 2]; 2]; 3];
    for _ in 0..samples {
        let mut n_prev = 0;
        let mut n_cur = 0;
        let mut self_prev = false;
        let mut self_cur = false;
        for u in 0..users {
            let hp = draw(&pi, rng.random());
            let hc = draw(&rows[hp], rng.random());
            let (bp, bc) = (hp >= gamma_prev, hc >= gamma_cur);
            n_prev += bp as usize;
            n_cur += bc as usize;
            if u == 0 {
                self_prev = bp;
                self_cur = bc;
            }
        }
        tally[z_of(n_prev).index()][self_prev as usize][self_cur as usize][z_of(n_cur).index()] += 1;
    }
    tally
}

/// `|estimate - p| <= 3 SE`, with the binomial SE taken at the model value.
/// Zero-probability cells must be empty.
pub fn within_3se(count: u64, total: u64, p: f64) -> bool {
    if total == 0 {
        return true;
    }
    let est = count as f64 / total as f64;
    if p <= 0.0 || p >= 1.0 {
        return (est - p).abs() == 0.0;
    }
    let se = (p * (1.0 - p) / total as f64).sqrt();
    (est - p).abs() <= 3.0 * se
}

/// Grid minimizer of `xi P + p_ack (W tau / Nb) log2(1 + P H / N0 W) delta`
/// over `points` equally spaced powers in `[0, pmax]`.
pub fn grid_power(delta: f64, p_ack: f64, gain: f64, xi: f64, params: &SystemParams, pmax: f64, points: usize) -> (f64, f64) {
    let f = |p: f64| xi * p + p_ack * params.tau_s * rate(params, gain, p) * delta;
    let step = pmax / (points - 1) as f64;
    let mut best = (0.0, f(0.0));
    for i in 1..points {
        let p = i as f64 * step;
        let v = f(p);
        if v < best.1 {
            best = (p, v);
        }
    }
    (best.0, step)
}

/// Recurrent classes by mutual reachability: `i` is recurrent iff it can
/// get back from everything it can reach.
pub fn reachability_classes(successors: &[Vec<usize>]) -> (Vec<Vec<usize>>, Vec<usize>) {
    let n = successors.len();
    let reach: Vec<BTreeSet<usize>> = (0..n)
        .map(|s| {
            let mut seen = BTreeSet::from([s]);
            let mut stack = vec![s];
            while let Some(i) = stack.pop() {
                for &j in &successors[i] {
                    if seen.insert(j) {
                        stack.push(j);
                    }
                }
            }
            seen
        })
        .collect();
    let mut classes: Vec<Vec<usize>> = Vec::new();
    let mut transient = Vec::new();
    for i in 0..n {
        if reach[i].iter().all(|&j| reach[j].contains(&i)) {
            if !classes.iter().any(|c| c.contains(&i)) {
                classes.push(reach[i].iter().copied().collect());
            }
        } else {
            transient.push(i);
        }
    }
    classes.sort();
    (classes, transient)
}

/// `Pr{exactly one of K users transmits now | z_prev}` for a symmetric
/// network where every user's previous CSI is stationary, by a count
/// recursion over users on the joint (previous, current) transmit events.
pub fn exactly_one_prob(channel: &FsmcChannel, users: usize, gamma_prev: usize, gamma_cur: usize, z_prev: Feedback) -> Option<f64> {
    let j = channel.len();
    let mut pair = [[0.0; 2]; 2];
    for hp in 0..j {
        for hc in 0..j {
            pair[(hp >= gamma_prev) as usize][(hc >= gamma_cur) as usize] +=
                channel.stationary()[hp] * channel.transition()[hp][hc];
        }
    }
    // dist[p][c]: exact previous count p, current count c capped at 2
    let mut dist = vec![[0.0f64; 3]; users + 1];
    dist[0][0] = 1.0;
    for _ in 0..users {
        let mut next = vec![[0.0f64; 3]; users + 1];
        for p in 0..=users {
            for c in 0..3 {
                let w = dist[p][c];
                if w == 0.0 {
                    continue;
                }
                for bp in 0..2 {
                    for bc in 0..2 {
                        if p + bp <= users {
                            next[p + bp][(c + bc).min(2)] += w * pair[bp][bc];
                        }
                    }
                }
            }
        }
        dist = next;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, row) in dist.iter().enumerate() {
        if z_allows(z_prev, p) {
            num += row[1];
            den += row.iter().sum::<f64>();
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Average cost of user `k` over the full local state
/// `(q, H_prev, common, Z_prev, H_cur)`, by policy iteration with exact
/// dense evaluation and golden-section improvement. Transitions come from
/// [`joint_local_kernel`]. Returns `(theta, number of states)`.
pub fn full_state_theta(channels: &[FsmcChannel], policy: &ThresholdPolicy, params: &SystemParams, k: usize, xi: f64) -> (f64, usize) {
    let ch = &channels[k];
    let pmax = |s: &LocalState| {
        let g = ch.gain(s.h_cur);
        let room = 1.0 - params.lambda_pkts_per_s * params.tau_s;
        let snr = (room * params.mean_packet_bits / (params.bandwidth_hz * params.tau_s)).exp2() - 1.0;
        snr * params.noise_w_per_hz * params.bandwidth_hz / g
    };
    let decides = |s: &LocalState| s.h_cur >= policy.threshold(policy.next(s.common, s.z_prev), k) && s.q > 0;
    let kernel = |s: &LocalState, p: f64| joint_local_kernel(channels, policy, params, k, s, p).expect("reachable state has a kernel");

    // reachable closure from the first slot
    let mut states: Vec<LocalState> = Vec::new();
    let mut index: HashMap<LocalState, usize> = HashMap::new();
    for hp in 0..ch.len() {
        for hc in 0..ch.len() {
            if ch.stationary()[hp] * ch.transition()[hp][hc] > 0.0 {
                let s = LocalState { q: 0, h_prev: hp, common: policy.initial, z_prev: Feedback::Nak, h_cur: hc };
                if index.insert(s, states.len()).is_none() {
                    states.push(s);
                }
            }
        }
    }
    let mut i = 0;
    while i < states.len() {
        let s = states[i];
        let probe = if decides(&s) { 0.5 * pmax(&s).min(1.0) } else { 0.0 };
        for (t, _) in kernel(&s, probe) {
            if let std::collections::hash_map::Entry::Vacant(e) = index.entry(t) {
                e.insert(states.len());
                states.push(t);
            }
        }
        i += 1;
    }
    let n = states.len();
    let cost = |s: &LocalState, p: f64| s.q as f64 + xi * p;
    let reference = states.iter().position(|s| s.q == params.buffer_pkts).unwrap();

    let evaluate = |powers: &[f64]| -> (f64, Vec<f64>) {
        // unknowns: h with h[reference] replaced by theta
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut b = DVector::<f64>::zeros(n);
        for (r, s) in states.iter().enumerate() {
            a[(r, r)] += 1.0;
            for (t, w) in kernel(s, powers[r]) {
                a[(r, index[&t])] -= w;
            }
            b[r] = cost(s, powers[r]);
        }
        for r in 0..n {
            a[(r, reference)] = 1.0;
        }
        let x = a.lu().solve(&b).expect("evaluation system");
        let theta = x[reference];
        let mut h: Vec<f64> = x.iter().copied().collect();
        h[reference] = 0.0;
        (theta, h)
    };

    let mut powers = vec![0.0; n];
    let mut theta = f64::NAN;
    for _ in 0..100 {
        let (t, h) = evaluate(&powers);
        theta = t;
        let span = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - h.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut moved: f64 = 0.0;
        for (r, s) in states.iter().enumerate() {
            if !decides(s) {
                continue;
            }
            let q_of = |p: f64| cost(s, p) + kernel(s, p).iter().map(|(t, w)| w * h[index[t]]).sum::<f64>();
            let hi = pmax(s).min(span / xi + 1.0);
            let (mut lo, mut up) = (0.0, hi);
            let g = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..200 {
                let m1 = up - g * (up - lo);
                let m2 = lo + g * (up - lo);
                if q_of(m1) <= q_of(m2) {
                    up = m2;
                } else {
                    lo = m1;
                }
            }
            let mut best = 0.5 * (lo + up);
            for cand in [0.0, hi] {
                if q_of(cand) < q_of(best) {
                    best = cand;
                }
            }
            if q_of(best) < q_of(powers[r]) - 1e-14 {
                moved = moved.max((best - powers[r]).abs());
                powers[r] = best;
            }
        }
        if moved < 1e-13 {
            break;
        }
    }
    (theta, n)
}
