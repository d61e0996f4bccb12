//! Experiment specs and the synthesis/simulation pipeline behind the CLI.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSpec, FsmcChannel};
use crate::dynamics::{Network, SystemParams};
use crate::error::{Error, Result};
use crate::policy::{
    asymmetric_policy, baseline_binary_scheduling, baseline_bsp, baseline_variable_rate, lcsihp_policy,
    read_policy_table, write_policy_table, PolicyMode, PowerRule, SynthesizedPolicy, ThresholdPolicy, UserRule,
};
use crate::sim::{aggregate_runs, run_episode, ChannelModel, Mode, SimConfig, SimMetrics};
use crate::solver::{build_phi_chain, calibrate_lagrange, power_table, Method, SolverOptions};

pub const CSV_VERSION_LINE: &str = "# saloha-metrics v1";

pub const CSV_COLUMNS: [&str; 24] = [
    "policy",
    "users",
    "lambda_pkts_per_s",
    "snr_db",
    "seed",
    "mode",
    "channel_model",
    "avg_queue_pkts",
    "avg_queue_se",
    "avg_delay_slots",
    "avg_delay_ms",
    "throughput_pkts_per_slot",
    "throughput_bits_per_s",
    "drop_prob",
    "avg_power_w",
    "per_user_avg_queue",
    "per_user_drop_prob",
    "per_user_avg_power_w",
    "xi",
    "theta",
    "reduced_states",
    "recurrent_classes",
    "model_avg_power_w",
    "saturated",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Symmetric,
    Asymmetric,
    /// Symmetric synthesis, evaluated on the capture-effect channel.
    Capture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Proposed,
    BinaryScheduling,
    LcsihpFixedPower,
    VariableRate,
    Bsp,
}

impl PolicyKind {
    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Proposed => "proposed",
            PolicyKind::BinaryScheduling => "binary_scheduling",
            PolicyKind::LcsihpFixedPower => "lcsihp_fixed_power",
            PolicyKind::VariableRate => "variable_rate",
            PolicyKind::Bsp => "bsp",
        }
    }
}

/// Where a user's channel model comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelEntry {
    /// A bundled model, e.g. `table1_user1`.
    Fixture(String),
    /// `(1 - weight) P_a + weight P_b` over the shared gain alphabet of two fixtures.
    Mix { a: String, b: String, weight: f64 },
    Inline(ChannelSpec),
}

impl ChannelEntry {
    pub fn build(&self) -> Result<FsmcChannel> {
        match self {
            ChannelEntry::Fixture(name) => FsmcChannel::fixture(name),
            ChannelEntry::Inline(spec) => FsmcChannel::from_spec(spec),
            ChannelEntry::Mix { a, b, weight } => {
                if !(0.0..=1.0).contains(weight) {
                    return Err(Error::invalid(format!("mixing weight {weight} outside [0, 1]")));
                }
                let (ca, cb) = (FsmcChannel::fixture(a)?, FsmcChannel::fixture(b)?);
                if ca.gains() != cb.gains() {
                    return Err(Error::invalid(format!("`{a}` and `{b}` have different gain states")));
                }
                let rows = ca
                    .transition()
                    .iter()
                    .zip(cb.transition())
                    .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (1.0 - weight) * x + weight * y).collect())
                    .collect();
                FsmcChannel::new(ca.gains().to_vec(), rows)
            }
        }
    }
}

fn default_horizon() -> u64 {
    1_000_000
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_modes() -> Vec<Mode> {
    vec![Mode::Actual]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    #[serde(default = "default_horizon")]
    pub horizon_slots: u64,
    /// Defaults to a tenth of the horizon.
    #[serde(default)]
    pub warmup_slots: Option<u64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    #[serde(default)]
    pub capture_beta: Option<f64>,
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec {
            horizon_slots: default_horizon(),
            warmup_slots: None,
            seeds: default_seeds(),
            modes: default_modes(),
            capture_beta: None,
        }
    }
}

impl SimSpec {
    pub fn warmup(&self) -> u64 {
        self.warmup_slots.unwrap_or(self.horizon_slots / 10)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default)]
    pub method: Method,
    #[serde(default = "SolverSpec::default_span_tol")]
    pub span_tol: f64,
    #[serde(default = "SolverSpec::default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "SolverSpec::default_calibration_tol")]
    pub calibration_tol: f64,
}

impl SolverSpec {
    fn default_span_tol() -> f64 {
        1e-9
    }
    fn default_max_iterations() -> usize {
        1_000_000
    }
    fn default_calibration_tol() -> f64 {
        1e-2
    }

    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            method: self.method,
            span_tol: self.span_tol,
            max_iterations: self.max_iterations,
            calibration_tol: self.calibration_tol,
            ..SolverOptions::default()
        }
    }
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec {
            method: Method::default(),
            span_tol: Self::default_span_tol(),
            max_iterations: Self::default_max_iterations(),
            calibration_tol: Self::default_calibration_tol(),
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    #[serde(default = "default_true")]
    pub tables: bool,
    #[serde(default = "default_true")]
    pub logs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub scenario: Scenario,
    pub users: usize,
    /// One entry shared by every user, or one per user.
    pub channels: Vec<ChannelEntry>,
    pub buffer_pkts: usize,
    pub tau_s: f64,
    pub bandwidth_hz: f64,
    pub noise_w_per_hz: f64,
    pub lambda_pkts_per_s: f64,
    pub mean_packet_bits: f64,
    pub snr_db: Vec<f64>,
    #[serde(default)]
    pub users_sweep: Vec<usize>,
    #[serde(default)]
    pub lambda_sweep: Vec<f64>,
    pub policies: Vec<PolicyKind>,
    #[serde(default)]
    pub sim: SimSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    pub output: OutputSpec,
}

/// One `(K, lambda, SNR)` combination of the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub users: usize,
    pub lambda: f64,
    pub snr_db: f64,
}

impl SweepPoint {
    fn tag(&self) -> String {
        format!("K{}_lambda{}_snr{}", self.users, self.lambda, self.snr_db)
    }
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: ExperimentSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("experiment name `{}` is not a plain file stem", self.name));
        }
        if self.policies.is_empty() {
            return bad("policy list is empty".into());
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return bad("snr_db sweep must be a non-empty list of numbers".into());
        }
        let mut seen = Vec::new();
        for p in &self.policies {
            if seen.contains(p) {
                return bad(format!("policy `{}` listed twice", p.label()));
            }
            seen.push(*p);
        }
        match self.scenario {
            Scenario::Symmetric | Scenario::Capture => {
                if self.channels.len() != 1 {
                    return bad("symmetric scenarios take exactly one channel entry".into());
                }
                if self.policies.contains(&PolicyKind::Bsp) {
                    return bad("bsp is only defined for the asymmetric scenario".into());
                }
            }
            Scenario::Asymmetric => {
                if self.channels.len() != self.users {
                    return bad(format!(
                        "asymmetric scenario needs one channel per user ({} given, {} users)",
                        self.channels.len(),
                        self.users
                    ));
                }
                if !self.users_sweep.is_empty() {
                    return bad("users_sweep needs a shared channel".into());
                }
            }
        }
        match (self.scenario, self.sim.capture_beta) {
            (Scenario::Capture, Some(b)) if b > 0.0 && b <= 1.0 => {}
            (Scenario::Capture, _) => return bad("capture scenario needs capture_beta in (0, 1]".into()),
            (_, Some(_)) => return bad("capture_beta only applies to the capture scenario".into()),
            _ => {}
        }
        if self.sim.seeds.is_empty() || self.sim.modes.is_empty() {
            return bad("sim needs at least one seed and one mode".into());
        }
        if self.sim.horizon_slots <= self.sim.warmup() {
            return bad("sim horizon must exceed the warmup".into());
        }
        for ch in &self.channels {
            ch.build()?;
        }
        for p in self.points() {
            self.params(&p).validate()?;
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<SweepPoint> {
        let users = if self.users_sweep.is_empty() { vec![self.users] } else { self.users_sweep.clone() };
        let lambdas = if self.lambda_sweep.is_empty() {
            vec![self.lambda_pkts_per_s]
        } else {
            self.lambda_sweep.clone()
        };
        let mut out = Vec::new();
        for &k in &users {
            for &l in &lambdas {
                for &s in &self.snr_db {
                    out.push(SweepPoint {
                        users: k,
                        lambda: l,
                        snr_db: s,
                    });
                }
            }
        }
        out
    }

    pub fn params(&self, point: &SweepPoint) -> SystemParams {
        SystemParams {
            tau_s: self.tau_s,
            bandwidth_hz: self.bandwidth_hz,
            noise_w_per_hz: self.noise_w_per_hz,
            lambda_pkts_per_s: point.lambda,
            mean_packet_bits: self.mean_packet_bits,
            buffer_pkts: self.buffer_pkts,
            users: point.users,
        }
    }

    pub fn channels_for(&self, users: usize) -> Result<Vec<FsmcChannel>> {
        if self.channels.len() == 1 {
            let ch = self.channels[0].build()?;
            Ok(vec![ch; users])
        } else {
            self.channels.iter().map(ChannelEntry::build).collect()
        }
    }

    /// `P0 = N0 W 10^(SNR/10)`.
    pub fn budget_w(&self, point: &SweepPoint) -> f64 {
        self.noise_w_per_hz * self.bandwidth_hz * 10f64.powf(point.snr_db / 10.0)
    }

    pub fn channel_model(&self) -> ChannelModel {
        match (self.scenario, self.sim.capture_beta) {
            (Scenario::Capture, Some(beta)) => ChannelModel::Capture { beta },
            _ => ChannelModel::Collision,
        }
    }

    fn mode(&self) -> PolicyMode {
        match self.scenario {
            Scenario::Asymmetric => PolicyMode::Asymmetric,
            _ => PolicyMode::Symmetric,
        }
    }

    pub fn table_path(&self, point: &SweepPoint, kind: PolicyKind) -> PathBuf {
        self.output
            .dir
            .join("tables")
            .join(format!("{}_{}_{}.tbl", self.name, kind.label(), point.tag()))
    }

    /// Solver diagnostics stored next to each table, so `simulate` reports
    /// the same columns as `run`.
    pub fn info_path(&self, point: &SweepPoint, kind: PolicyKind) -> PathBuf {
        self.table_path(point, kind).with_extension("info.json")
    }

    pub fn log_path(&self, point: &SweepPoint, kind: PolicyKind) -> PathBuf {
        self.output
            .dir
            .join("logs")
            .join(format!("{}_{}_{}.log", self.name, kind.label(), point.tag()))
    }

    pub fn csv_path(&self) -> PathBuf {
        self.output.dir.join(format!("{}.csv", self.name))
    }
}

/// Offline diagnostics for one user's power rule.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UserInfo {
    pub xi: Option<f64>,
    pub theta: Option<f64>,
    pub reduced_states: Option<usize>,
    pub recurrent_classes: Option<usize>,
    pub model_avg_power_w: Option<f64>,
    pub saturated: bool,
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub point: SweepPoint,
    pub kind: PolicyKind,
    pub policy: SynthesizedPolicy,
    pub info: Vec<UserInfo>,
    /// Convergence log, one line per record.
    pub log: String,
}

fn fixed_rule(power: f64) -> UserRule {
    UserRule {
        xi: f64::NAN,
        theta: f64::NAN,
        rule: PowerRule::Fixed(power),
    }
}

fn threshold_automaton(spec: &ExperimentSpec, users: usize, channels: &[FsmcChannel]) -> Result<ThresholdPolicy> {
    match spec.mode() {
        PolicyMode::Symmetric => lcsihp_policy(users, &channels[0]),
        PolicyMode::Asymmetric => asymmetric_policy(channels),
    }
}

/// Build one policy for one sweep point.
pub fn synthesize(spec: &ExperimentSpec, point: &SweepPoint, kind: PolicyKind) -> Result<Synthesis> {
    let params = spec.params(point);
    let k = point.users;
    let channels = spec.channels_for(k)?;
    let budget = spec.budget_w(point);
    let mode = spec.mode();
    let mut log = String::new();
    let mut info = vec![UserInfo::default(); k];
    let name = kind.label().to_string();

    let policy = match kind {
        PolicyKind::Proposed => {
            let thresholds = threshold_automaton(spec, k, &channels)?;
            let network = Network::new(params.clone(), channels.clone())?;
            let options = spec.solver.options();
            let solved: Vec<usize> = if mode == PolicyMode::Symmetric { vec![0] } else { (0..k).collect() };
            let mut rules: Vec<UserRule> = Vec::with_capacity(k);
            for &u in &solved {
                let model = build_phi_chain(&network, &thresholds, u)?;
                let cal = calibrate_lagrange(&model, &params, budget, &options)?;
                let sol = &cal.solution;
                let _ = writeln!(log, "# user {u}: {} Phi states, {} recurrent classes", model.len(), sol.recurrent_classes());
                for (xi, p) in &cal.steps {
                    let _ = writeln!(log, "calibrate xi={xi:e} avg_power_w={p:.9e}");
                }
                for r in &sol.log {
                    let _ = writeln!(
                        log,
                        "{} iteration={} span={:e} theta={}",
                        r.phase.label(),
                        r.iteration,
                        r.span,
                        r.theta
                    );
                }
                let table = power_table(&model, &thresholds, channels[u].len(), params.buffer_pkts, sol);
                rules.push(UserRule {
                    xi: cal.xi,
                    theta: sol.theta,
                    rule: PowerRule::Table(Arc::new(table)),
                });
                info[u] = UserInfo {
                    xi: Some(cal.xi),
                    theta: Some(sol.theta),
                    reduced_states: Some(model.len() * (params.buffer_pkts + 1)),
                    recurrent_classes: Some(sol.recurrent_classes()),
                    model_avg_power_w: Some(sol.avg_power),
                    saturated: cal.saturated,
                };
            }
            if mode == PolicyMode::Symmetric {
                // Symmetric users share one table.
                let shared = rules.pop().expect("one solved user");
                rules = vec![shared; k];
                info = vec![info[0].clone(); k];
            }
            SynthesizedPolicy {
                name,
                thresholds,
                users: rules,
            }
        }
        PolicyKind::BinaryScheduling => {
            let mut gammas = Vec::with_capacity(k);
            let mut rules = Vec::with_capacity(k);
            for ch in &channels {
                let g = baseline_binary_scheduling(ch, k)?;
                gammas.push(g);
                rules.push(fixed_rule(budget / ch.prob_at_or_above(g)));
            }
            SynthesizedPolicy {
                name,
                thresholds: ThresholdPolicy::constant(mode, gammas),
                users: rules,
            }
        }
        PolicyKind::LcsihpFixedPower => {
            let thresholds = threshold_automaton(spec, k, &channels)?;
            let network = Network::new(params.clone(), channels.clone())?;
            let mut rules = Vec::with_capacity(k);
            for u in 0..k {
                let model = build_phi_chain(&network, &thresholds, u)?;
                let eta = model.stationary_transmit_prob()?;
                if !(eta > 0.0) {
                    return Err(Error::invalid(format!("user {u} never transmits under the threshold policy")));
                }
                rules.push(fixed_rule(budget / eta));
            }
            SynthesizedPolicy {
                name,
                thresholds,
                users: rules,
            }
        }
        PolicyKind::VariableRate => {
            let mut gammas = Vec::with_capacity(k);
            let mut rules = Vec::with_capacity(k);
            for ch in &channels {
                let vr = baseline_variable_rate(ch, k, budget, &params)?;
                gammas.push(vr.threshold);
                rules.push(UserRule {
                    xi: vr.xi_tilde,
                    theta: f64::NAN,
                    rule: PowerRule::PerCsi(vr.powers),
                });
            }
            SynthesizedPolicy {
                name,
                thresholds: ThresholdPolicy::constant(mode, gammas),
                users: rules,
            }
        }
        PolicyKind::Bsp => {
            let vrs = baseline_bsp(&channels, &vec![budget; k], &params)?;
            SynthesizedPolicy {
                name,
                thresholds: ThresholdPolicy::constant(mode, vrs.iter().map(|v| v.threshold).collect()),
                users: vrs
                    .into_iter()
                    .map(|v| UserRule {
                        xi: v.xi_tilde,
                        theta: f64::NAN,
                        rule: PowerRule::PerCsi(v.powers),
                    })
                    .collect(),
            }
        }
    };
    Ok(Synthesis {
        point: *point,
        kind,
        policy,
        info,
        log,
    })
}

/// Pipeline-wide knobs coming from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub jobs: usize,
    pub seed_offset: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
            seed_offset: 0,
        }
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
}

fn tasks(spec: &ExperimentSpec) -> Vec<(SweepPoint, PolicyKind)> {
    spec.points()
        .into_iter()
        .flat_map(|p| spec.policies.iter().map(move |&k| (p, k)))
        .collect()
}

/// Offline phase for every sweep point and policy, in spec order.
pub fn synthesize_all(spec: &ExperimentSpec, opts: &RunOptions) -> Result<Vec<Synthesis>> {
    let work = tasks(spec);
    pool(opts.jobs)?.install(|| {
        work.par_iter()
            .map(|(p, kind)| {
                log::info!("synthesizing {} at {}", kind.label(), p.tag());
                synthesize(spec, p, *kind).map_err(|e| {
                    Error::stage("synthesis", format!("{} at {}: {e}", kind.label(), p.tag()))
                })
            })
            .collect::<Result<Vec<_>>>()
    })
}

/// Write the policy tables and convergence logs of a synthesis run.
pub fn write_synthesis(spec: &ExperimentSpec, syntheses: &[Synthesis]) -> Result<()> {
    let io = |p: &Path, e| Error::stage("output", Error::io(p, e));
    for s in syntheses {
        if spec.output.tables {
            let path = spec.table_path(&s.point, s.kind);
            let j = spec.channels_for(s.point.users)?[0].len();
            let mut buf = Vec::new();
            write_policy_table(&s.policy, j, spec.buffer_pkts, &mut buf).map_err(|e| io(&path, e))?;
            write_file(&path, &buf).map_err(|e| io(&path, e))?;
            let path = spec.info_path(&s.point, s.kind);
            let json = serde_json::to_vec_pretty(&s.info).map_err(|e| Error::stage("output", e))?;
            write_file(&path, &json).map_err(|e| io(&path, e))?;
        }
        if spec.output.logs && !s.log.is_empty() {
            let path = spec.log_path(&s.point, s.kind);
            write_file(&path, s.log.as_bytes()).map_err(|e| io(&path, e))?;
        }
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    f.flush()
}

/// Read back policy tables written by [`write_synthesis`].
pub fn load_syntheses(spec: &ExperimentSpec) -> Result<Vec<Synthesis>> {
    tasks(spec)
        .into_iter()
        .map(|(point, kind)| {
            let path = spec.table_path(&point, kind);
            let text = fs::read_to_string(&path).map_err(|e| Error::stage("simulation", Error::io(&path, e)))?;
            let policy = read_policy_table(&text).map_err(|e| Error::stage("simulation", e))?;
            if policy.users.len() != point.users {
                return Err(Error::stage(
                    "simulation",
                    format!("{} holds {} users, expected {}", path.display(), policy.users.len(), point.users),
                ));
            }
            let info_path = spec.info_path(&point, kind);
            let info: Vec<UserInfo> = match fs::read_to_string(&info_path) {
                Ok(text) => serde_json::from_str(&text)
                    .map_err(|e| Error::stage("simulation", format!("{}: {e}", info_path.display())))?,
                // tables written by hand carry no diagnostics
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => vec![UserInfo::default(); point.users],
                Err(e) => return Err(Error::stage("simulation", Error::io(&info_path, e))),
            };
            if info.len() != point.users {
                return Err(Error::stage(
                    "simulation",
                    format!("{} holds {} users, expected {}", info_path.display(), info.len(), point.users),
                ));
            }
            Ok(Synthesis {
                point,
                kind,
                policy,
                info,
                log: String::new(),
            })
        })
        .collect()
}

/// Simulation results for one policy at one sweep point and mode.
#[derive(Debug, Clone)]
pub struct RunGroup {
    pub point: SweepPoint,
    pub kind: PolicyKind,
    pub mode: Mode,
    pub runs: Vec<SimMetrics>,
    pub pooled: SimMetrics,
    pub info: Vec<UserInfo>,
}

/// Online phase: every synthesized policy, mode and seed.
pub fn simulate_all(spec: &ExperimentSpec, syntheses: &[Synthesis], opts: &RunOptions) -> Result<Vec<RunGroup>> {
    let mut work = Vec::new();
    for i in 0..syntheses.len() {
        for &mode in &spec.sim.modes {
            for &seed in &spec.sim.seeds {
                work.push((i, mode, seed.wrapping_add(opts.seed_offset)));
            }
        }
    }
    let channels: Vec<Vec<FsmcChannel>> = syntheses
        .iter()
        .map(|s| spec.channels_for(s.point.users))
        .collect::<Result<_>>()?;
    let results: Vec<SimMetrics> = pool(opts.jobs)?.install(|| {
        work.par_iter()
            .map(|&(i, mode, seed)| {
                let s = &syntheses[i];
                let config = SimConfig {
                    params: spec.params(&s.point),
                    channels: channels[i].clone(),
                    policy: s.policy.clone(),
                    mode,
                    channel_model: spec.channel_model(),
                    horizon: spec.sim.horizon_slots,
                    warmup: spec.sim.warmup(),
                    seed,
                };
                run_episode(&config).map_err(|e| {
                    Error::stage(
                        "simulation",
                        format!("{} at {} ({}, seed {seed}): {e}", s.kind.label(), s.point.tag(), mode.label()),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let per_group = spec.sim.seeds.len();
    let mut groups = Vec::new();
    let mut it = results.into_iter();
    for s in syntheses {
        for &mode in &spec.sim.modes {
            let runs: Vec<SimMetrics> = it.by_ref().take(per_group).collect();
            let pooled = aggregate_runs(&runs)?;
            groups.push(RunGroup {
                point: s.point,
                kind: s.kind,
                mode,
                runs,
                pooled,
                info: s.info.clone(),
            });
        }
    }
    Ok(groups)
}

fn join<T, F: Fn(&T) -> String>(xs: &[T], f: F) -> String {
    xs.iter().map(f).collect::<Vec<_>>().join(";")
}

fn opt_join<T: ToString + Copy>(info: &[UserInfo], f: impl Fn(&UserInfo) -> Option<T>) -> String {
    if info.iter().all(|u| f(u).is_none()) {
        return String::new();
    }
    join(info, |u| f(u).map_or(String::new(), |v| v.to_string()))
}

fn csv_record(spec: &ExperimentSpec, g: &RunGroup, m: &SimMetrics, seed: &str) -> Vec<String> {
    vec![
        g.kind.label().to_string(),
        g.point.users.to_string(),
        g.point.lambda.to_string(),
        g.point.snr_db.to_string(),
        seed.to_string(),
        g.mode.label().to_string(),
        spec.channel_model().label(),
        m.avg_queue.to_string(),
        m.avg_queue_se.to_string(),
        m.avg_delay_slots.to_string(),
        m.avg_delay_ms.to_string(),
        m.throughput_pkts_per_slot.to_string(),
        m.throughput_bits_per_s.to_string(),
        m.drop_prob.to_string(),
        m.avg_power_w.to_string(),
        join(&m.per_user, |u| u.avg_queue.to_string()),
        join(&m.per_user, |u| u.drop_prob.to_string()),
        join(&m.per_user, |u| u.avg_power_w.to_string()),
        opt_join(&g.info, |u| u.xi),
        opt_join(&g.info, |u| u.theta),
        opt_join(&g.info, |u| u.reduced_states),
        opt_join(&g.info, |u| u.recurrent_classes),
        opt_join(&g.info, |u| u.model_avg_power_w),
        if g.info.iter().any(|u| u.xi.is_some() || u.saturated) {
            join(&g.info, |u| u.saturated.to_string())
        } else {
            String::new()
        },
    ]
}

/// Render the metrics CSV: one row per seed, then the pooled row of each group.
pub fn render_csv(spec: &ExperimentSpec, groups: &[RunGroup]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::stage("output", e);
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for g in groups {
        for r in &g.runs {
            w.write_record(csv_record(spec, g, r, &r.seeds[0].to_string())).map_err(csv_err)?;
        }
        w.write_record(csv_record(spec, g, &g.pooled, "pooled")).map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| Error::stage("output", e.to_string()))?;
    let body = String::from_utf8(body).map_err(|e| Error::stage("output", e))?;
    Ok(format!("{CSV_VERSION_LINE}\n{body}"))
}

pub fn write_csv(spec: &ExperimentSpec, groups: &[RunGroup]) -> Result<PathBuf> {
    let text = render_csv(spec, groups)?;
    let path = spec.csv_path();
    write_file(&path, text.as_bytes()).map_err(|e| Error::stage("output", Error::io(&path, e)))?;
    Ok(path)
}

/// `run`: synthesis, tables, simulation and CSV.
pub fn run_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<Vec<RunGroup>> {
    let syntheses = synthesize_all(spec, opts)?;
    write_synthesis(spec, &syntheses)?;
    let groups = simulate_all(spec, &syntheses, opts)?;
    write_csv(spec, &groups)?;
    Ok(groups)
}

/// Parse a metrics CSV written by [`write_csv`] into header and records.
pub fn read_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let body = text
        .strip_prefix(CSV_VERSION_LINE)
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing metrics CSV version line".into(),
        })?
        .trim_start_matches(['\r', '\n']);
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r
        .headers()
        .map_err(|e| Error::Parse {
            line: 2,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            line: i + 3,
            message: e.to_string(),
        })?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}
