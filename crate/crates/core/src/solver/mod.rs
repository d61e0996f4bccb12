//! Per-user average-cost MDP on the reduced state `(q, Phi)`, its solvers and
//! the Lagrange-multiplier calibration.

mod calibrate;
pub mod linalg;
pub mod mdp;
pub mod model;

use serde::{Deserialize, Serialize};

use crate::dynamics::SystemParams;
use crate::error::{Error, Result};
use crate::policy::{PowerTable, ThresholdPolicy};

pub use calibrate::{calibrate_lagrange, Calibration};
pub use mdp::{evaluate_closed, optimal_power, ConvergenceRecord, Phase, Problem};
pub use model::{build_phi_chain, Branch, Phi, PhiModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Policy iteration with exact evaluation, certified by a final RVI sweep.
    #[default]
    PolicyIteration,
    /// Relative value iteration only.
    ValueIteration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub method: Method,
    /// RVI stops once `span(TV - V)` drops below this.
    pub span_tol: f64,
    pub max_iterations: usize,
    pub max_policy_iterations: usize,
    /// Policy iteration stops when no power moves by more than this, relative.
    pub policy_tol: f64,
    /// Calibration stops when `|P - P0| / P0` is below this.
    pub calibration_tol: f64,
    pub xi_bracket: (f64, f64),
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            method: Method::PolicyIteration,
            span_tol: 1e-9,
            max_iterations: 1_000_000,
            max_policy_iterations: 200,
            policy_tol: 1e-10,
            calibration_tol: 1e-2,
            xi_bracket: (1e-7, 1e4),
        }
    }
}

/// Solution of one user's MDP at a fixed multiplier.
#[derive(Debug, Clone)]
pub struct UserSolution {
    pub xi: f64,
    /// Average cost `E[q] + xi E[P]` from the start distribution.
    pub theta: f64,
    /// Average cost of each recurrent class of `Phi`.
    pub class_theta: Vec<f64>,
    /// Relative values, indexed by `q * |Phi| + phi`.
    pub values: Vec<f64>,
    /// Power per `(q, Phi, branch)`, see [`Problem::power_index`].
    pub powers: Vec<f64>,
    /// Stationary distribution over `(q, Phi)` from the start distribution.
    pub omega: Vec<f64>,
    pub avg_power: f64,
    pub avg_queue: f64,
    pub log: Vec<ConvergenceRecord>,
}

impl UserSolution {
    pub fn recurrent_classes(&self) -> usize {
        self.class_theta.len()
    }
}

struct Component {
    theta: f64,
    values: Vec<f64>,
    powers: Vec<f64>,
    omega: Vec<f64>,
}

fn max_change(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut change: f64 = 0.0;
    let mut scale: f64 = 1.0;
    for (x, y) in a.iter().zip(b) {
        change = change.max((x - y).abs());
        scale = scale.max(y.abs());
    }
    (change, scale)
}

fn relative_value_iteration(
    problem: &Problem,
    rows: &[usize],
    reference: usize,
    mut v: Vec<f64>,
    options: &SolverOptions,
    log: &mut Vec<ConvergenceRecord>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut span = f64::INFINITY;
    for it in 1..=options.max_iterations {
        let (mut tv, powers) = problem.bellman(&v, rows)?;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for q in 0..problem.levels() {
            for &phi in rows {
                let s = problem.state(q, phi);
                let d = tv[s] - v[s];
                lo = lo.min(d);
                hi = hi.max(d);
            }
        }
        span = hi - lo;
        let theta = tv[reference];
        for q in 0..problem.levels() {
            for &phi in rows {
                tv[problem.state(q, phi)] -= theta;
            }
        }
        v = tv;
        let done = span < options.span_tol;
        if done || it == 1 || it % 1000 == 0 {
            log.push(ConvergenceRecord {
                phase: Phase::ValueIteration,
                iteration: it,
                span,
                theta,
            });
        }
        if done {
            return Ok((v, powers));
        }
        if !span.is_finite() {
            break;
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: options.max_iterations,
        span,
    })
}

/// Solve on a closed set of `Phi` states.
fn solve_component(
    problem: &Problem,
    rows: &[usize],
    reference: (usize, usize),
    init: Option<&[f64]>,
    options: &SolverOptions,
    log: &mut Vec<ConvergenceRecord>,
) -> Result<Component> {
    let r = problem.state(reference.0, reference.1);
    let start_v = match options.method {
        Method::PolicyIteration => {
            let mut powers = vec![0.0; problem.power_len()];
            if let Some(v) = init {
                problem.improve_into(v, rows, &mut powers)?;
            }
            let mut values = Vec::new();
            for it in 1..=options.max_policy_iterations {
                let (theta, v, _) = evaluate_closed(problem, &powers, rows, reference, false)?;
                let mut next = vec![0.0; problem.power_len()];
                problem.improve_into(&v, rows, &mut next)?;
                let (change, scale) = max_change(&powers, &next);
                log.push(ConvergenceRecord {
                    phase: Phase::PolicyIteration,
                    iteration: it,
                    span: change,
                    theta,
                });
                powers = next;
                values = v;
                if change <= options.policy_tol * scale {
                    break;
                }
            }
            values
        }
        Method::ValueIteration => {
            let mut v = vec![0.0; problem.state_count()];
            if let Some(w) = init {
                for q in 0..problem.levels() {
                    for &phi in rows {
                        let s = problem.state(q, phi);
                        v[s] = w[s] - w[r];
                    }
                }
            }
            v
        }
    };
    let (_, powers) = relative_value_iteration(problem, rows, r, start_v, options, log)?;
    let (theta, values, omega) = evaluate_closed(problem, &powers, rows, reference, true)?;
    Ok(Component {
        theta,
        values,
        powers,
        omega,
    })
}

/// Values on transient `Phi` states once every recurrent class is solved:
/// `(I - P_TT) V_T = c_T - g_T + P_TR V_R`, improved until the powers settle.
fn solve_transient(
    problem: &Problem,
    trans: &[usize],
    gain: &[f64],
    values: &mut [f64],
    powers: &mut [f64],
    options: &SolverOptions,
    log: &mut Vec<ConvergenceRecord>,
) -> Result<()> {
    let f = problem.phi_count();
    let levels = problem.levels();
    problem.improve_into(values, trans, powers)?;
    for it in 1..=options.max_policy_iterations {
        let mut v0 = values.to_vec();
        for q in 0..levels {
            for &phi in trans {
                v0[problem.state(q, phi)] = 0.0;
            }
        }
        let m = trans.len();
        let mut rhs = vec![0.0; levels * m];
        for q in 0..levels {
            for (i, &phi) in trans.iter().enumerate() {
                rhs[q * m + i] = problem.stage_cost(q, phi, powers) - gain[phi]
                    + problem.apply_transition(q, phi, powers, &v0);
            }
        }
        let sol = problem.identity_minus_p(trans, powers).factor()?.solve(&[rhs])?.remove(0);
        for q in 0..levels {
            for (i, &phi) in trans.iter().enumerate() {
                values[q * f + phi] = sol[q * m + i];
            }
        }
        let mut next = powers.to_vec();
        problem.improve_into(values, trans, &mut next)?;
        let (change, scale) = max_change(powers, &next);
        powers.copy_from_slice(&next);
        log.push(ConvergenceRecord {
            phase: Phase::PolicyIteration,
            iteration: it,
            span: change,
            theta: f64::NAN,
        });
        if change <= options.policy_tol * scale {
            break;
        }
    }
    Ok(())
}

/// Solve one user's MDP at multiplier `xi`. `warm` seeds the iteration with
/// relative values from a nearby multiplier.
pub fn solve_user(
    model: &PhiModel,
    params: &SystemParams,
    xi: f64,
    options: &SolverOptions,
    warm: Option<&[f64]>,
) -> Result<UserSolution> {
    let problem = Problem::new(model, params, xi)?;
    let f = problem.phi_count();
    let classes = &model.classes.recurrent;
    if classes.is_empty() {
        return Err(Error::NoUniqueStationary("Phi chain has no recurrent class".into()));
    }
    let absorption = model.absorption()?;
    let weights: Vec<f64> = (0..classes.len())
        .map(|c| model.start.iter().zip(&absorption).map(|(s, a)| s * a[c]).sum())
        .collect();
    let mut log = Vec::new();

    if params.arrival_prob() == 0.0 {
        // Queues never grow: every power is zero and the cost is zero.
        let t = model.transition_matrix();
        let mut omega = vec![0.0; problem.state_count()];
        for (c, members) in classes.iter().enumerate() {
            let sub: Vec<Vec<f64>> = members
                .iter()
                .map(|&i| members.iter().map(|&j| t[i][j]).collect())
                .collect();
            let pi = crate::channel::stationary_distribution(&sub)?;
            for (&i, w) in members.iter().zip(pi) {
                omega[i] += weights[c] * w;
            }
        }
        return Ok(UserSolution {
            xi,
            theta: 0.0,
            class_theta: vec![0.0; classes.len()],
            values: vec![0.0; problem.state_count()],
            powers: vec![0.0; problem.power_len()],
            omega,
            avg_power: 0.0,
            avg_queue: 0.0,
            log,
        });
    }

    // With positive arrivals a full buffer is recurrent, while an empty one
    // may not be, so the reference sits at q = N.
    let q_ref = params.buffer_pkts;
    let (values, powers, omega, class_theta) = if classes.len() == 1 {
        let rows: Vec<usize> = (0..f).collect();
        let comp = solve_component(&problem, &rows, (q_ref, classes[0][0]), warm, options, &mut log)?;
        (comp.values, comp.powers, comp.omega, vec![comp.theta])
    } else {
        let mut values = vec![0.0; problem.state_count()];
        let mut powers = vec![0.0; problem.power_len()];
        let mut omega = vec![0.0; problem.state_count()];
        let mut class_theta = Vec::with_capacity(classes.len());
        for (c, members) in classes.iter().enumerate() {
            let comp = solve_component(&problem, members, (q_ref, members[0]), warm, options, &mut log)?;
            for q in 0..problem.levels() {
                for &phi in members {
                    let s = problem.state(q, phi);
                    values[s] = comp.values[s];
                    omega[s] = weights[c] * comp.omega[s];
                }
                for &phi in members {
                    for b in 0..model.branches[phi].len() {
                        let i = problem.power_index(q, phi, b);
                        powers[i] = comp.powers[i];
                    }
                }
            }
            class_theta.push(comp.theta);
        }
        let trans = &model.classes.transient;
        if !trans.is_empty() {
            let gain: Vec<f64> = absorption
                .iter()
                .map(|a| a.iter().zip(&class_theta).map(|(w, t)| w * t).sum())
                .collect();
            solve_transient(&problem, trans, &gain, &mut values, &mut powers, options, &mut log)?;
        }
        (values, powers, omega, class_theta)
    };

    let mut avg_power = 0.0;
    let mut avg_queue = 0.0;
    for q in 0..problem.levels() {
        for phi in 0..f {
            let w = omega[problem.state(q, phi)];
            if w > 0.0 {
                avg_power += w * problem.expected_power(q, phi, &powers);
                avg_queue += w * q as f64;
            }
        }
    }
    let theta = weights.iter().zip(&class_theta).map(|(w, t)| w * t).sum();
    Ok(UserSolution {
        xi,
        theta,
        class_theta,
        values,
        powers,
        omega,
        avg_power,
        avg_queue,
        log,
    })
}

/// Lay a solution out as a lookup table over `(q, H_prev, common, Z_prev, H_cur)`.
/// Only transmitting branches get an entry.
pub fn power_table(
    model: &PhiModel,
    policy: &ThresholdPolicy,
    channel_states: usize,
    buffer: usize,
    solution: &UserSolution,
) -> PowerTable {
    let mut table = PowerTable::new(buffer, channel_states, policy.len());
    for q in 0..=buffer {
        for (i, phi) in model.phis.iter().enumerate() {
            for (b, br) in model.branches[i].iter().enumerate() {
                if br.transmit {
                    let p = solution.powers[q * model.total_branches + model.branch_offset[i] + b];
                    table.set(q, phi.h, phi.common, phi.z, br.h, p);
                }
            }
        }
    }
    table
}
