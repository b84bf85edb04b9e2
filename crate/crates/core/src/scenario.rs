//! Scenario files: the on-disk description of a deployment and its traffic.
//!
//! Scenarios are TOML with a strict schema (unknown fields are rejected) and
//! a version header so the corpus stays diffable. Times are given in
//! milliseconds, buffers in MB, rates either directly in MB/s or as
//! kpps × packet size. Everything is converted to SI seconds/MB here so the
//! rest of the crate never sees file units.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::graph::{Chain, ChainId, Element, ProcessingGraph};
use crate::placement::CostModel;
use crate::profile::ElementProfile;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    // The message carries the cause itself, so the field must not act as the
    // error's `source()` (thiserror treats a field literally named `source`
    // that way): chain-printing consumers such as anyhow's `{:#}` would
    // otherwise repeat the cause.
    #[error("cannot read {path}: {cause}")]
    Io { path: String, cause: std::io::Error },
    #[error("{path}: {cause}")]
    Parse { path: String, cause: Box<toml::de::Error> },
    #[error("unsupported scenario version {0}; this build reads version {SCENARIO_VERSION}")]
    Version(u32),
    #[error("invalid scenario:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

/// Fully resolved scenario: names replaced by ids, units converted.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub graph: ProcessingGraph,
    pub num_vms: usize,
    pub cost: CostModel,
    pub scheduler: SchedulerSettings,
    pub scaler: ScalerSettings,
    /// Simulated wall-clock length in seconds.
    pub duration: f64,
    /// Piecewise-constant traffic program, sorted by time (seconds).
    pub traffic: Vec<TrafficStep>,
    pub seed: u64,
    pub experiment: ExperimentSettings,
}

#[derive(Clone, Debug)]
pub struct SchedulerSettings {
    /// Scheduling period T in seconds.
    pub period: f64,
    /// Per-element buffer capacity in MB.
    pub buffer_capacity: f64,
    pub share_floor: f64,
    pub smoothing: f64,
}

#[derive(Clone, Debug)]
pub struct ScalerSettings {
    /// Scheduling periods an element must wait between scale events.
    pub cooldown_periods: u64,
    /// Expected throughput = observed arrivals × this factor.
    pub headroom: f64,
    /// One-off latency cost (seconds) for cohorts disturbed by a migration
    /// or replica split.
    pub migration_penalty: f64,
    /// Recurring per-period latency cost (seconds) on replica cohorts under
    /// the traditional scale-out baseline.
    pub sync_penalty: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrafficStep {
    /// Seconds from simulation start.
    pub time: f64,
    pub chain: ChainId,
    /// New offered rate in MB/s.
    pub throughput: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentSettings {
    pub trials: usize,
    /// Uniform per-chain throughput sampling range (MB/s).
    pub theta_min: f64,
    pub theta_max: f64,
}

const fn default_version_probe() -> u32 {
    0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default = "default_version_probe")]
    version: u32,
    #[serde(default)]
    seed: u64,
    profiles: Vec<RawProfile>,
    elements: Vec<RawElement>,
    chains: Vec<RawChain>,
    vms: RawVms,
    #[serde(default)]
    cost: RawCost,
    #[serde(default)]
    scheduler: RawScheduler,
    #[serde(default)]
    scaler: RawScaler,
    #[serde(default)]
    sim: RawSim,
    #[serde(default)]
    traffic: Vec<RawTrafficStep>,
    #[serde(default)]
    experiment: RawExperiment,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    label: String,
    intercept: f64,
    slope: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawElement {
    name: String,
    profile: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChain {
    name: String,
    elements: Vec<String>,
    #[serde(default)]
    throughput_mbps: Option<f64>,
    #[serde(default)]
    rate_kpps: Option<f64>,
    #[serde(default)]
    packet_bytes: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVms {
    count: usize,
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawCost {
    inter_vm_delay_ms: f64,
    intra_vm_delay_ms: f64,
}

impl Default for RawCost {
    fn default() -> Self {
        RawCost { inter_vm_delay_ms: 1.0, intra_vm_delay_ms: 0.003 }
    }
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawScheduler {
    period_ms: f64,
    buffer_capacity_mb: f64,
    share_floor: f64,
    smoothing: f64,
}

impl Default for RawScheduler {
    fn default() -> Self {
        RawScheduler { period_ms: 10.0, buffer_capacity_mb: 1.0, share_floor: 0.001, smoothing: 0.0 }
    }
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawScaler {
    cooldown_periods: u64,
    headroom: f64,
    migration_penalty_ms: f64,
    sync_penalty_ms: f64,
}

impl Default for RawScaler {
    fn default() -> Self {
        RawScaler {
            cooldown_periods: 100,
            headroom: 1.1,
            migration_penalty_ms: 2.0,
            sync_penalty_ms: 0.5,
        }
    }
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawSim {
    duration_ms: f64,
}

impl Default for RawSim {
    fn default() -> Self {
        RawSim { duration_ms: 1000.0 }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrafficStep {
    time_ms: f64,
    chain: String,
    #[serde(default)]
    throughput_mbps: Option<f64>,
    #[serde(default)]
    rate_kpps: Option<f64>,
    #[serde(default)]
    packet_bytes: Option<f64>,
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawExperiment {
    trials: usize,
    theta_min_mbps: f64,
    theta_max_mbps: f64,
}

impl Default for RawExperiment {
    fn default() -> Self {
        RawExperiment { trials: 1000, theta_min_mbps: 20.0, theta_max_mbps: 72.0 }
    }
}

/// MB/s from either a direct rate or kpps × packet size. `what` names the
/// offending item in diagnostics.
fn resolve_rate(
    mbps: Option<f64>,
    kpps: Option<f64>,
    packet_bytes: Option<f64>,
    what: &str,
    problems: &mut Vec<String>,
) -> f64 {
    match (mbps, kpps, packet_bytes) {
        (Some(v), None, None) => v,
        // kpps × 1000 pkt/s × bytes/pkt ÷ 1e6 B/MB
        (None, Some(k), Some(b)) => k * b / 1000.0,
        (None, Some(_), None) | (None, None, Some(_)) => {
            problems.push(format!("{what}: rate_kpps and packet_bytes go together"));
            0.0
        }
        (None, None, None) => {
            problems.push(format!(
                "{what}: needs either throughput_mbps or rate_kpps + packet_bytes"
            ));
            0.0
        }
        _ => {
            problems.push(format!(
                "{what}: give either throughput_mbps or rate_kpps + packet_bytes, not both"
            ));
            0.0
        }
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|cause| ScenarioError::Io { path: path.display().to_string(), cause })?;
    parse_scenario(&text, &path.display().to_string())
}

pub fn parse_scenario(text: &str, origin: &str) -> Result<Scenario, ScenarioError> {
    let raw: RawScenario = toml::from_str(text)
        .map_err(|cause| ScenarioError::Parse { path: origin.into(), cause: Box::new(cause) })?;
    if raw.version != SCENARIO_VERSION {
        return Err(ScenarioError::Version(raw.version));
    }
    let mut problems = Vec::new();

    let mut profiles: Vec<(String, ElementProfile)> = Vec::new();
    for p in &raw.profiles {
        if profiles.iter().any(|(label, _)| *label == p.label) {
            problems.push(format!("profile '{}' is defined twice", p.label));
            continue;
        }
        match ElementProfile::new(&p.label, p.intercept, p.slope) {
            Ok(profile) => profiles.push((p.label.clone(), profile)),
            Err(e) => problems.push(format!("profile '{}': {e}", p.label)),
        }
    }

    let mut elements = Vec::new();
    for e in &raw.elements {
        if raw.elements.iter().filter(|other| other.name == e.name).count() > 1
            && !problems.iter().any(|p| p.contains(&format!("element '{}'", e.name)))
        {
            problems.push(format!("element '{}' is defined twice", e.name));
        }
        match profiles.iter().find(|(label, _)| *label == e.profile) {
            Some((_, profile)) => {
                elements.push(Element { name: e.name.clone(), profile: profile.clone() })
            }
            None => problems.push(format!("element '{}': unknown profile '{}'", e.name, e.profile)),
        }
    }

    let element_id = |name: &str| elements.iter().position(|e| e.name == name);

    let mut chains = Vec::new();
    for c in &raw.chains {
        if raw.chains.iter().filter(|other| other.name == c.name).count() > 1
            && !problems.iter().any(|p| p.contains(&format!("chain '{}'", c.name)))
        {
            problems.push(format!("chain '{}' is defined twice", c.name));
        }
        let mut ids = Vec::with_capacity(c.elements.len());
        for name in &c.elements {
            match element_id(name) {
                Some(i) => ids.push(crate::graph::ElementId(i)),
                None => {
                    problems.push(format!("chain '{}': unknown element '{}'", c.name, name));
                }
            }
        }
        let throughput = resolve_rate(
            c.throughput_mbps,
            c.rate_kpps,
            c.packet_bytes,
            &format!("chain '{}'", c.name),
            &mut problems,
        );
        chains.push(Chain { name: c.name.clone(), elements: ids, throughput });
    }

    let graph = ProcessingGraph::new(elements, chains);
    for violation in graph.validate() {
        problems.push(violation.to_string());
    }

    if raw.vms.count == 0 {
        problems.push("vms.count must be at least 1".into());
    }

    let cost_ok = raw.cost.inter_vm_delay_ms.is_finite()
        && raw.cost.intra_vm_delay_ms.is_finite()
        && raw.cost.intra_vm_delay_ms >= 0.0
        && raw.cost.inter_vm_delay_ms > raw.cost.intra_vm_delay_ms;
    if !cost_ok {
        problems.push(format!(
            "cost: inter_vm_delay_ms ({}) must exceed intra_vm_delay_ms ({}) and both be finite",
            raw.cost.inter_vm_delay_ms, raw.cost.intra_vm_delay_ms
        ));
    }

    if !(raw.scheduler.period_ms > 0.0 && raw.scheduler.period_ms.is_finite()) {
        problems.push("scheduler.period_ms must be positive".into());
    }
    if !(raw.scheduler.buffer_capacity_mb > 0.0 && raw.scheduler.buffer_capacity_mb.is_finite()) {
        problems.push("scheduler.buffer_capacity_mb must be positive".into());
    }
    if !(0.0..1.0).contains(&raw.scheduler.share_floor) {
        problems.push("scheduler.share_floor must be in [0, 1)".into());
    }
    if !(0.0..1.0).contains(&raw.scheduler.smoothing) {
        problems.push("scheduler.smoothing must be in [0, 1)".into());
    }
    if !(raw.scaler.headroom >= 1.0 && raw.scaler.headroom.is_finite()) {
        problems.push("scaler.headroom must be at least 1".into());
    }
    if !(raw.scaler.migration_penalty_ms >= 0.0 && raw.scaler.migration_penalty_ms.is_finite()) {
        problems.push("scaler.migration_penalty_ms must be non-negative".into());
    }
    if !(raw.scaler.sync_penalty_ms >= 0.0 && raw.scaler.sync_penalty_ms.is_finite()) {
        problems.push("scaler.sync_penalty_ms must be non-negative".into());
    }
    if !(raw.sim.duration_ms >= 0.0 && raw.sim.duration_ms.is_finite()) {
        problems.push("sim.duration_ms must be non-negative".into());
    }

    let mut traffic = Vec::with_capacity(raw.traffic.len());
    let mut last_time = 0.0f64;
    for (i, step) in raw.traffic.iter().enumerate() {
        let what = format!("traffic step {i}");
        let chain = match graph.chain_by_name(&step.chain) {
            Some(j) => j,
            None => {
                problems.push(format!("{what}: unknown chain '{}'", step.chain));
                ChainId(0)
            }
        };
        if !(step.time_ms >= 0.0 && step.time_ms.is_finite()) {
            problems.push(format!("{what}: time_ms must be non-negative"));
        }
        if step.time_ms < last_time {
            problems.push(format!("{what}: times must be non-decreasing"));
        }
        last_time = step.time_ms;
        let throughput =
            resolve_rate(step.throughput_mbps, step.rate_kpps, step.packet_bytes, &what, &mut problems);
        if throughput < 0.0 || !throughput.is_finite() {
            problems.push(format!("{what}: throughput must be non-negative"));
        }
        traffic.push(TrafficStep { time: step.time_ms / 1000.0, chain, throughput });
    }

    if raw.experiment.trials == 0 {
        problems.push("experiment.trials must be at least 1".into());
    }
    if !(raw.experiment.theta_min_mbps >= 0.0
        && raw.experiment.theta_min_mbps <= raw.experiment.theta_max_mbps
        && raw.experiment.theta_max_mbps.is_finite())
    {
        problems.push("experiment: need 0 <= theta_min_mbps <= theta_max_mbps".into());
    }

    if !problems.is_empty() {
        return Err(ScenarioError::Invalid(problems));
    }

    Ok(Scenario {
        graph,
        num_vms: raw.vms.count,
        cost: CostModel::new(
            raw.cost.inter_vm_delay_ms / 1000.0,
            raw.cost.intra_vm_delay_ms / 1000.0,
        ),
        scheduler: SchedulerSettings {
            period: raw.scheduler.period_ms / 1000.0,
            buffer_capacity: raw.scheduler.buffer_capacity_mb,
            share_floor: raw.scheduler.share_floor,
            smoothing: raw.scheduler.smoothing,
        },
        scaler: ScalerSettings {
            cooldown_periods: raw.scaler.cooldown_periods,
            headroom: raw.scaler.headroom,
            migration_penalty: raw.scaler.migration_penalty_ms / 1000.0,
            sync_penalty: raw.scaler.sync_penalty_ms / 1000.0,
        },
        duration: raw.sim.duration_ms / 1000.0,
        traffic,
        seed: raw.seed,
        experiment: ExperimentSettings {
            trials: raw.experiment.trials,
            theta_min: raw.experiment.theta_min_mbps,
            theta_max: raw.experiment.theta_max_mbps,
        },
    })
}
