//! C ABI over the `saloha` crate.
//!
//! Objects cross the boundary as opaque handles that the caller frees with the
//! matching `*_free` function. Every fallible call returns a [`SalohaStatus`];
//! the message of the last failure on the calling thread is available from
//! [`saloha_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use saloha::dynamics::Feedback;
use saloha::policy::{lcsihp_policy, lcsihp_threshold, write_policy_table, PowerRule, SynthesizedPolicy, UserRule};
use saloha::sim::{run_episode, ChannelModel, Mode, SimConfig};
use saloha::solver::{build_phi_chain, calibrate_lagrange, optimal_power, power_table, SolverOptions};
use saloha::{Error, FsmcChannel, Network, SystemParams};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SalohaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    NoUniqueStationary = 3,
    NullEvent = 4,
    TimeScaleViolation = 5,
    ConvergenceFailure = 6,
    Singular = 7,
    BracketFailure = 8,
    PolicyMiss = 9,
    Io = 10,
    Parse = 11,
    Panic = 12,
}

/// Simulator mode.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SalohaMode {
    Dominant = 0,
    Actual = 1,
}

/// System parameters, field for field as in `saloha::SystemParams`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SalohaParams {
    pub tau_s: f64,
    pub bandwidth_hz: f64,
    pub noise_w_per_hz: f64,
    pub lambda_pkts_per_s: f64,
    pub mean_packet_bits: f64,
    pub buffer_pkts: usize,
    pub users: usize,
}

impl From<&SalohaParams> for SystemParams {
    fn from(p: &SalohaParams) -> Self {
        SystemParams {
            tau_s: p.tau_s,
            bandwidth_hz: p.bandwidth_hz,
            noise_w_per_hz: p.noise_w_per_hz,
            lambda_pkts_per_s: p.lambda_pkts_per_s,
            mean_packet_bits: p.mean_packet_bits,
            buffer_pkts: p.buffer_pkts,
            users: p.users,
        }
    }
}

/// Network-level simulation results.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SalohaMetrics {
    pub avg_queue: f64,
    pub avg_queue_se: f64,
    pub avg_delay_slots: f64,
    pub throughput_pkts_per_slot: f64,
    pub drop_prob: f64,
    pub avg_power_w: f64,
}

/// Opaque finite-state Markov channel.
pub struct SalohaChannel(FsmcChannel);

/// Opaque synthesized policy for a symmetric network.
pub struct SalohaPolicy {
    policy: SynthesizedPolicy,
    channel_states: usize,
    buffer: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SalohaStatus {
    match err {
        Error::InvalidInput(_) | Error::ConfigMismatch(_) | Error::Stage { .. } => SalohaStatus::InvalidInput,
        Error::NoUniqueStationary(_) => SalohaStatus::NoUniqueStationary,
        Error::NullEvent(_) => SalohaStatus::NullEvent,
        Error::TimeScaleViolation { .. } => SalohaStatus::TimeScaleViolation,
        Error::ConvergenceFailure { .. } => SalohaStatus::ConvergenceFailure,
        Error::Singular(_) => SalohaStatus::Singular,
        Error::BracketFailure(_) => SalohaStatus::BracketFailure,
        Error::PolicyMiss(_) => SalohaStatus::PolicyMiss,
        Error::Io { .. } => SalohaStatus::Io,
        Error::Parse { .. } | Error::Json(_) => SalohaStatus::Parse,
    }
}

/// Run `f`, turning errors and panics into a status code.
fn guard<F: FnOnce() -> Result<(), Error>>(f: F) -> SalohaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SalohaStatus::Ok,
        Ok(Err(e)) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("panic inside saloha".into());
            SalohaStatus::Panic
        }
    }
}

macro_rules! check_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            set_error(format!("{} is null", stringify!($p)));
            return SalohaStatus::NullPointer;
        })+
    };
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn saloha_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn saloha_status_str(status: SalohaStatus) -> *const c_char {
    let s: &'static CStr = match status {
        SalohaStatus::Ok => c"ok",
        SalohaStatus::NullPointer => c"null pointer",
        SalohaStatus::InvalidInput => c"invalid input",
        SalohaStatus::NoUniqueStationary => c"no unique stationary distribution",
        SalohaStatus::NullEvent => c"conditioning on a null event",
        SalohaStatus::TimeScaleViolation => c"slot too coarse for the service rate",
        SalohaStatus::ConvergenceFailure => c"solver did not converge",
        SalohaStatus::Singular => c"singular linear system",
        SalohaStatus::BracketFailure => c"cannot bracket the Lagrange multiplier",
        SalohaStatus::PolicyMiss => c"policy table miss",
        SalohaStatus::Io => c"i/o error",
        SalohaStatus::Parse => c"parse error",
        SalohaStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Build a channel from `j` gains and a row-major `j x j` transition matrix.
///
/// # Safety
/// `states` must point to `j` doubles and `transition` to `j * j` doubles.
#[no_mangle]
pub unsafe extern "C" fn saloha_channel_new(
    states: *const f64,
    transition: *const f64,
    j: usize,
    out: *mut *mut SalohaChannel,
) -> SalohaStatus {
    check_null!(states, transition, out);
    guard(|| {
        let s = std::slice::from_raw_parts(states, j).to_vec();
        let flat = std::slice::from_raw_parts(transition, j * j);
        let rows = flat.chunks(j.max(1)).map(<[f64]>::to_vec).collect();
        let ch = FsmcChannel::new(s, rows)?;
        *out = Box::into_raw(Box::new(SalohaChannel(ch)));
        Ok(())
    })
}

/// One of the two bundled ten-state channel models (`user` is 1 or 2).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn saloha_channel_table1(user: u32, out: *mut *mut SalohaChannel) -> SalohaStatus {
    check_null!(out);
    guard(|| {
        let ch = FsmcChannel::table1(user as usize)?;
        *out = Box::into_raw(Box::new(SalohaChannel(ch)));
        Ok(())
    })
}

/// # Safety
/// `channel` must come from a `saloha_channel_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn saloha_channel_free(channel: *mut SalohaChannel) {
    if !channel.is_null() {
        drop(Box::from_raw(channel));
    }
}

/// Number of CSI states, or 0 for a null handle.
///
/// # Safety
/// `channel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn saloha_channel_len(channel: *const SalohaChannel) -> usize {
    channel.as_ref().map_or(0, |c| c.0.len())
}

/// Copy the stationary distribution into `out[0..len]`.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn saloha_channel_stationary(
    channel: *const SalohaChannel,
    out: *mut f64,
    len: usize,
) -> SalohaStatus {
    check_null!(channel, out);
    guard(|| {
        let pi = (*channel).0.stationary();
        if len != pi.len() {
            return Err(Error::InvalidInput(format!("buffer holds {len} entries, channel has {}", pi.len())));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(pi);
        Ok(())
    })
}

/// LCSIHP threshold for previous threshold `gamma_prev` and feedback `z_prev`
/// (0 = NAK, 1 = ACK, 2 = collision).
///
/// # Safety
/// `channel` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn saloha_lcsihp_threshold(
    channel: *const SalohaChannel,
    gamma_prev: usize,
    z_prev: u32,
    users: usize,
    out: *mut usize,
) -> SalohaStatus {
    check_null!(channel, out);
    guard(|| {
        let z = Feedback::from_index(z_prev as usize)
            .ok_or_else(|| Error::InvalidInput(format!("feedback code {z_prev} is not 0, 1 or 2")))?;
        *out = lcsihp_threshold(gamma_prev, z, users, &(*channel).0)?;
        Ok(())
    })
}

/// Closed-form power for a given value difference `delta`.
///
/// # Safety
/// `params` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn saloha_optimal_power(
    delta: f64,
    p_ack: f64,
    gain: f64,
    xi: f64,
    params: *const SalohaParams,
    out: *mut f64,
) -> SalohaStatus {
    check_null!(params, out);
    guard(|| {
        *out = optimal_power(delta, p_ack, gain, xi, &SystemParams::from(&*params))?;
        Ok(())
    })
}

/// LCSIHP thresholds plus the calibrated optimal power table for a symmetric
/// network of `params.users` users sharing `channel`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn saloha_synthesize_symmetric(
    channel: *const SalohaChannel,
    params: *const SalohaParams,
    budget_w: f64,
    out: *mut *mut SalohaPolicy,
) -> SalohaStatus {
    check_null!(channel, params, out);
    guard(|| {
        let ch = &(*channel).0;
        let params = SystemParams::from(&*params);
        let network = Network::symmetric(params.clone(), ch.clone())?;
        let thresholds = lcsihp_policy(params.users, ch)?;
        let model = build_phi_chain(&network, &thresholds, 0)?;
        let cal = calibrate_lagrange(&model, &params, budget_w, &SolverOptions::default())?;
        let table = Arc::new(power_table(&model, &thresholds, ch.len(), params.buffer_pkts, &cal.solution));
        let rule = UserRule {
            xi: cal.xi,
            theta: cal.solution.theta,
            rule: PowerRule::Table(table),
        };
        let policy = SynthesizedPolicy {
            name: "proposed".into(),
            thresholds,
            users: vec![rule; params.users],
        };
        *out = Box::into_raw(Box::new(SalohaPolicy {
            policy,
            channel_states: ch.len(),
            buffer: params.buffer_pkts,
        }));
        Ok(())
    })
}

/// # Safety
/// `policy` must come from [`saloha_synthesize_symmetric`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn saloha_policy_free(policy: *mut SalohaPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Calibrated Lagrange multiplier and average cost of user `user`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn saloha_policy_multiplier(
    policy: *const SalohaPolicy,
    user: usize,
    xi: *mut f64,
    theta: *mut f64,
) -> SalohaStatus {
    check_null!(policy, xi, theta);
    guard(|| {
        let p = &*policy;
        let rule = p
            .policy
            .users
            .get(user)
            .ok_or_else(|| Error::InvalidInput(format!("no user {user}")))?;
        *xi = rule.xi;
        *theta = rule.theta;
        Ok(())
    })
}

/// Look up the transmit power of `user` in local state
/// `(q, h_prev, common, z_prev, h_cur)`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn saloha_policy_power(
    policy: *const SalohaPolicy,
    user: usize,
    q: usize,
    h_prev: usize,
    common: usize,
    z_prev: u32,
    h_cur: usize,
    out: *mut f64,
) -> SalohaStatus {
    check_null!(policy, out);
    guard(|| {
        let z = Feedback::from_index(z_prev as usize)
            .ok_or_else(|| Error::InvalidInput(format!("feedback code {z_prev} is not 0, 1 or 2")))?;
        let p = &*policy;
        let rule = p
            .policy
            .users
            .get(user)
            .ok_or_else(|| Error::InvalidInput(format!("no user {user}")))?;
        *out = rule.rule.power(q, h_prev, common, z, h_cur)?;
        Ok(())
    })
}

/// Policy in the text table format. Free the string with [`saloha_string_free`].
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn saloha_policy_table(policy: *const SalohaPolicy, out: *mut *mut c_char) -> SalohaStatus {
    check_null!(policy, out);
    guard(|| {
        let p = &*policy;
        let mut buf = Vec::new();
        write_policy_table(&p.policy, p.channel_states, p.buffer, &mut buf)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        let s = CString::new(buf).map_err(|e| Error::InvalidInput(e.to_string()))?;
        *out = s.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn saloha_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Simulate `policy` on the collision channel with every user on `channel`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn saloha_simulate(
    policy: *const SalohaPolicy,
    channel: *const SalohaChannel,
    params: *const SalohaParams,
    mode: SalohaMode,
    horizon: u64,
    warmup: u64,
    seed: u64,
    out: *mut SalohaMetrics,
) -> SalohaStatus {
    check_null!(policy, channel, params, out);
    guard(|| {
        let params = SystemParams::from(&*params);
        let config = SimConfig {
            channels: vec![(*channel).0.clone(); params.users],
            params,
            policy: (*policy).policy.clone(),
            mode: match mode {
                SalohaMode::Dominant => Mode::Dominant,
                SalohaMode::Actual => Mode::Actual,
            },
            channel_model: ChannelModel::Collision,
            horizon,
            warmup,
            seed,
        };
        let m = run_episode(&config)?;
        *out = SalohaMetrics {
            avg_queue: m.avg_queue,
            avg_queue_se: m.avg_queue_se,
            avg_delay_slots: m.avg_delay_slots,
            throughput_pkts_per_slot: m.throughput_pkts_per_slot,
            drop_prob: m.drop_prob,
            avg_power_w: m.avg_power_w,
        };
        Ok(())
    })
}
