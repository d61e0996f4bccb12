use crate::dynamics::SystemParams;
use crate::error::{Error, Result};

use super::{solve_user, PhiModel, SolverOptions, UserSolution};

/// Outcome of the multiplier search.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub xi: f64,
    pub solution: UserSolution,
    /// The budget cannot be spent even at the smallest multiplier tried.
    pub saturated: bool,
    /// `(xi, average power)` for every solve, in order.
    pub steps: Vec<(f64, f64)>,
}

const XI_FLOOR: f64 = 1e-15;
const XI_CEIL: f64 = 1e15;

/// Find `xi` with `E[P] = budget` by bisection on `log xi`. Average power is
/// non-increasing in `xi`.
pub fn calibrate_lagrange(
    model: &PhiModel,
    params: &SystemParams,
    budget: f64,
    options: &SolverOptions,
) -> Result<Calibration> {
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::invalid(format!("power budget must be positive, got {budget}")));
    }
    let mut steps = Vec::new();
    let solve = |steps: &mut Vec<(f64, f64)>, xi: f64, warm: Option<&[f64]>| -> Result<UserSolution> {
        let s = solve_user(model, params, xi, options, warm)?;
        log::debug!("user {} xi={xi:e} avg_power={:.6e}", model.user, s.avg_power);
        steps.push((xi, s.avg_power));
        Ok(s)
    };
    let close = |p: f64| (p - budget).abs() / budget < options.calibration_tol;

    let (mut lo, mut hi) = options.xi_bracket;
    let mut s_lo = solve(&mut steps, lo, None)?;
    while s_lo.avg_power < budget && lo > XI_FLOOR {
        hi = lo;
        lo = (lo * 1e-2).max(XI_FLOOR);
        s_lo = solve(&mut steps, lo, Some(&s_lo.values))?;
    }
    if s_lo.avg_power < budget && !close(s_lo.avg_power) {
        log::warn!("user {}: budget {budget} W unreachable, using xi={lo:e}", model.user);
        return Ok(Calibration {
            xi: lo,
            solution: s_lo,
            saturated: true,
            steps,
        });
    }
    if close(s_lo.avg_power) {
        return Ok(Calibration {
            xi: lo,
            solution: s_lo,
            saturated: false,
            steps,
        });
    }
    let mut s_hi = solve(&mut steps, hi, Some(&s_lo.values))?;
    while s_hi.avg_power > budget && hi < XI_CEIL {
        hi = (hi * 1e2).min(XI_CEIL);
        s_hi = solve(&mut steps, hi, Some(&s_hi.values))?;
    }
    if s_hi.avg_power > budget && !close(s_hi.avg_power) {
        return Err(Error::BracketFailure(format!(
            "average power {} W still above {budget} W at xi={hi:e}",
            s_hi.avg_power
        )));
    }
    if close(s_hi.avg_power) {
        return Ok(Calibration {
            xi: hi,
            solution: s_hi,
            saturated: false,
            steps,
        });
    }

    let mut last = s_hi;
    loop {
        let mid = (lo * hi).sqrt();
        let s = solve(&mut steps, mid, Some(&last.values))?;
        let p = s.avg_power;
        let done = close(p) || hi / lo - 1.0 < 1e-12;
        if p > budget {
            lo = mid;
        } else {
            hi = mid;
        }
        last = s;
        if done {
            return Ok(Calibration {
                xi: mid,
                solution: last,
                saturated: false,
                steps,
            });
        }
    }
}
