//! Deterministic fluid simulator for a consolidated deployment.
//!
//! Time advances in fixed scheduling periods. Traffic is fluid: every period
//! each chain injects `rate × T` MB at its head, elements drain their queues
//! at the speed their CPU share buys, co-located hand-offs happen within the
//! period, and whatever a full buffer cannot hold is dropped. Everything
//! downstream of the seeded inputs is a pure function of the scenario, so two
//! runs of the same scenario produce bit-identical metrics.
//!
//! Chains at runtime are *branches*. A branch remembers which scenario chain
//! it descends from and what fraction of that chain's offered traffic it
//! carries, so replica splits can stack: splitting a branch just multiplies
//! fractions. A branch's path is a list of hops — `Process` hops do work,
//! `Forward` hops only relay at a pinned VM. The traditional scale-out
//! baseline uses a `Forward` hop to model traffic that still enters the
//! original element's VM before detouring to the replica, which is what
//! makes its crossing count (and latency) worse than a direct reroute.
//!
//! Delayed bytes are charged where they physically occur: each inter-VM hop
//! a period's flow takes holds those bytes up for the inter-VM delay, so the
//! accumulated total is Σ flow × t_d over crossings. Per-cohort latency is
//! queueing (backlog ahead of the cohort over the service it actually got)
//! plus per-hop delays plus any migration or sync penalties in effect.
//!
//! Service is work-conserving across a VM: capacity one element leaves idle
//! is offered (a period late) to co-residents that still hold backlog. The
//! share rebalance alone converges onto the arrival rates, which pins buffer
//! *growth* at zero but would leave any backlog built during a transient
//! standing forever.

mod experiment;

pub use experiment::{run_placement_experiment, ExperimentReport, PolicyStats, TrialRecord};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ChainId, Element, ElementId, GraphError, ProcessingGraph, VmId};
use crate::placement::{
    greedy_place, optimize_placement, random_place, split_overloaded, total_delayed_bytes,
    Placement, PlacementError,
};
use crate::profile::ProfileError;
use crate::scaler::{
    apply_decision, greedy_scale_out, push_aside_scale_up, required_resource, DeploymentState,
    PushAsideOutcome, ScalerError, ScalingDecision,
};
use crate::scenario::Scenario;
use crate::scheduler::{SchedulerError, SchedulerState};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Scaler(#[from] ScalerError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

/// How the deployment is placed and how it reacts to overload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Consolidated placement; scale up by pushing borders aside first,
    /// replicate onto spare capacity only when that fails.
    Coco,
    /// Consolidated placement, but every overload buys a fresh VM, splits
    /// the element 50/50 and bounces replica traffic through the original
    /// VM, paying migration and per-period sync penalties.
    TraditionalScaleOut,
    /// Chain-order first-fit placement with the consolidation ladder.
    GreedyPlace,
    /// Random feasible placement with the consolidation ladder.
    RandomPlace,
}

impl Policy {
    pub const ALL: [Policy; 4] =
        [Policy::Coco, Policy::TraditionalScaleOut, Policy::GreedyPlace, Policy::RandomPlace];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Coco => "coco",
            Policy::TraditionalScaleOut => "traditional_scale_out",
            Policy::GreedyPlace => "greedy_place",
            Policy::RandomPlace => "random_place",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown policy '{s}' (try coco, traditional_scale_out, greedy_place or random_place)"))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingEvent {
    pub period: u64,
    pub time: f64,
    pub target: String,
    /// "push_aside", "scale_out", "new_vm" or "skipped".
    pub action: String,
    pub theta_expected: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub period: u64,
    pub time: f64,
    pub chain: String,
    pub latency_ms: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VmRecord {
    pub period: u64,
    pub time: f64,
    pub vms_in_use: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchedRecord {
    pub period: u64,
    pub time: f64,
    pub element: String,
    pub vm: usize,
    /// Share in force while the period ran.
    pub share: f64,
    /// Closing buffer in MB.
    pub buffer_mb: f64,
    pub dropped_mb: f64,
    /// Buffer-change ratio the VM's scheduler solved for at period end.
    pub c: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainLatency {
    pub chain: String,
    pub latency_ms: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BranchRecord {
    pub chain: String,
    pub source: String,
    pub fraction: f64,
    pub crossings: usize,
    pub synced: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ElementPlacement {
    pub element: String,
    pub vm: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimMetrics {
    pub policy: String,
    pub periods: u64,
    pub period_seconds: f64,
    pub duration_seconds: f64,
    pub vm_pool: usize,
    pub final_vms_in_use: usize,
    /// Σ over periods and inter-VM hops of (MB moved × inter-VM delay).
    pub delayed_byte_seconds: f64,
    /// Σ Θ·t_d over crossings of the final deployment (MB held up per second
    /// of operation).
    pub final_delayed_bytes: f64,
    pub dropped_mb: f64,
    /// Worst per-element |injected − served − dropped − buffered| relative
    /// to what the element saw; a self-check that the fluid book-keeping
    /// conserves bytes.
    pub max_conservation_error: f64,
    /// Last period's per-chain latency (worst branch of each chain).
    pub steady_latency_ms: Vec<ChainLatency>,
    pub scaling_events: Vec<ScalingEvent>,
    pub branches: Vec<BranchRecord>,
    pub final_placement: Vec<ElementPlacement>,
    pub latency_series: Vec<LatencyRecord>,
    pub vm_series: Vec<VmRecord>,
    pub sched_series: Vec<SchedRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PathHop {
    Process(ElementId),
    /// Pure relay at a pinned VM; no queueing, no service.
    Forward(VmId),
}

#[derive(Clone, Debug)]
struct Branch {
    /// Index of the scenario chain this branch descends from.
    source: usize,
    /// Share of the source chain's offered rate this branch carries.
    fraction: f64,
    path: Vec<PathHop>,
    /// Traditional replicas pay the per-period sync penalty forever.
    synced: bool,
}

pub fn run(scenario: &Scenario, policy: Policy) -> Result<SimMetrics, SimError> {
    run_with_placement(scenario, policy, None)
}

/// Like [`run`], but with the initial placement supplied by the caller
/// (after the overload pre-split, so ids line up with the runtime graph).
pub fn run_with_placement(
    scenario: &Scenario,
    policy: Policy,
    placement: Option<Placement>,
) -> Result<SimMetrics, SimError> {
    let violations = scenario.graph.validate();
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(SimError::InvalidInput(list.join("; ")));
    }

    // Elements too big for any single core are split before placement, for
    // every policy alike; the lineage seeds the branch fractions.
    let outcome = split_overloaded(&scenario.graph)?;
    let graph = outcome.graph;

    let placement = match placement {
        Some(p) => {
            if p.assignment().len() != graph.num_elements() {
                return Err(SimError::InvalidInput(format!(
                    "placement covers {} elements but the deployment has {}",
                    p.assignment().len(),
                    graph.num_elements()
                )));
            }
            p
        }
        None => match policy {
            Policy::Coco | Policy::TraditionalScaleOut => {
                optimize_placement(&graph, scenario.num_vms, &scenario.cost)?
            }
            Policy::GreedyPlace => greedy_place(&graph, scenario.num_vms, &scenario.cost)?,
            Policy::RandomPlace => random_place(&graph, scenario.num_vms, scenario.seed)?,
        },
    };

    let branches = graph
        .chains()
        .iter()
        .enumerate()
        .map(|(j, chain)| Branch {
            source: outcome.chain_lineage[j].0,
            fraction: outcome.chain_lineage[j].1,
            path: chain.elements.iter().map(|&e| PathHop::Process(e)).collect(),
            synced: false,
        })
        .collect();

    let engine = Engine::new(scenario, policy, graph, placement, branches)?;
    engine.run()
}

struct Engine<'a> {
    scn: &'a Scenario,
    policy: Policy,
    graph: ProcessingGraph,
    placement: Placement,
    branches: Vec<Branch>,
    /// Offered rate per scenario chain, updated by the traffic program.
    source_rates: Vec<f64>,
    source_names: Vec<String>,
    traffic_ptr: usize,
    schedulers: Vec<SchedulerState>,
    /// Per-element, per-branch backlog in MB.
    buffers: Vec<Vec<f64>>,
    topo: Vec<ElementId>,
    last_scale: Vec<Option<u64>>,
    /// One-shot latency penalty per branch, consumed by the next period.
    pending_penalty: Vec<f64>,
    /// Share each VM left idle last period. The rebalance partitions the
    /// whole core, so once shares have converged onto the arrival rates an
    /// element with standing backlog gets no drain margin while an idle
    /// co-resident holds capacity it cannot use. A real CPU scheduler is
    /// work-conserving; this carries the idle headroom into the next period
    /// and offers it to backlogged neighbours.
    vm_slack: Vec<f64>,
    // Running totals.
    injected: Vec<f64>,
    served: Vec<f64>,
    dropped: Vec<f64>,
    db_accum: f64,
    events: Vec<ScalingEvent>,
    latency_series: Vec<LatencyRecord>,
    vm_series: Vec<VmRecord>,
    sched_series: Vec<SchedRecord>,
}

impl<'a> Engine<'a> {
    fn new(
        scn: &'a Scenario,
        policy: Policy,
        graph: ProcessingGraph,
        placement: Placement,
        branches: Vec<Branch>,
    ) -> Result<Self, SimError> {
        let n = graph.num_elements();
        let nb = branches.len();
        let mut engine = Engine {
            scn,
            policy,
            graph,
            placement,
            branches,
            source_rates: scn.graph.chains().iter().map(|c| c.throughput).collect(),
            source_names: scn.graph.chains().iter().map(|c| c.name.clone()).collect(),
            traffic_ptr: 0,
            schedulers: Vec::new(),
            buffers: vec![vec![0.0; nb]; n],
            topo: Vec::new(),
            last_scale: vec![None; n],
            pending_penalty: vec![0.0; nb],
            vm_slack: Vec::new(),
            injected: vec![0.0; n],
            served: vec![0.0; n],
            dropped: vec![0.0; n],
            db_accum: 0.0,
            events: Vec::new(),
            latency_series: Vec::new(),
            vm_series: Vec::new(),
            sched_series: Vec::new(),
        };
        engine.topo = engine.graph.topo_order();
        engine.schedulers = (0..engine.placement.num_vms())
            .map(|_| SchedulerState::new(scn.scheduler.period, scn.scheduler.share_floor, scn.scheduler.smoothing))
            .collect();
        engine.sync_offered_rates()?;
        for k in 0..engine.placement.num_vms() {
            engine.rebuild_vm(VmId(k), None)?;
        }
        Ok(engine)
    }

    fn period(&self) -> f64 {
        self.scn.scheduler.period
    }

    /// Pushes the traffic program's current rates into the runtime chains.
    fn sync_offered_rates(&mut self) -> Result<(), SimError> {
        for (b, branch) in self.branches.iter().enumerate() {
            let rate = self.source_rates[branch.source] * branch.fraction;
            self.graph.set_chain_throughput(ChainId(b), rate)?;
        }
        Ok(())
    }

    fn branch_rate(&self, b: usize) -> f64 {
        self.source_rates[self.branches[b].source] * self.branches[b].fraction
    }

    fn hop_vm(&self, hop: PathHop) -> Result<VmId, SimError> {
        match hop {
            PathHop::Process(e) => Ok(self.placement.vm_of(e)?),
            PathHop::Forward(vm) => Ok(vm),
        }
    }

    /// Rebuilds one VM's scheduler: members get shares proportional to the
    /// CPU their current offered load needs, normalized to spend the whole
    /// core. `boost` substitutes an expected throughput for one element (the
    /// push-aside target). Buffer book-keeping is re-seeded at the current
    /// level so the next rebalance sees a flat history.
    fn rebuild_vm(&mut self, vm: VmId, boost: Option<(ElementId, f64)>) -> Result<(), SimError> {
        let members = self.placement.elements_on(vm);
        let mut sched = SchedulerState::new(
            self.scn.scheduler.period,
            self.scn.scheduler.share_floor,
            self.scn.scheduler.smoothing,
        );
        if !members.is_empty() {
            let mut raw = Vec::with_capacity(members.len());
            for &e in &members {
                let load = match boost {
                    Some((t, exp)) if t == e => exp,
                    _ => self.graph.element_load(e)?,
                };
                raw.push(self.graph.profile(e)?.cpu_for_throughput(load)?);
            }
            let total: f64 = raw.iter().sum();
            for (&e, &r) in members.iter().zip(&raw) {
                let share = if total > 0.0 { r / total } else { 1.0 / members.len() as f64 };
                sched.add_element(
                    e,
                    self.graph.profile(e)?.clone(),
                    self.scn.scheduler.buffer_capacity,
                    share,
                );
                let level: f64 = self.buffers[e.0].iter().sum();
                sched.record_period(e, level, 0.0)?;
                sched.record_period(e, level, 0.0)?;
            }
        }
        self.schedulers[vm.0] = sched;
        // The idle-capacity measurement belongs to the old share layout.
        if vm.0 < self.vm_slack.len() {
            self.vm_slack[vm.0] = 0.0;
        }
        Ok(())
    }

    fn share_of(&self, e: ElementId) -> Result<f64, SimError> {
        let vm = self.placement.vm_of(e)?;
        Ok(self.schedulers[vm.0].share_of(e)?)
    }

    fn run(mut self) -> Result<SimMetrics, SimError> {
        let t_step = self.period();
        let periods = ((self.scn.duration / t_step) + 1e-9).floor() as u64;
        for p in 0..periods {
            self.run_period(p)?;
        }

        let mut conservation: f64 = 0.0;
        for e in 0..self.graph.num_elements() {
            let held: f64 = self.buffers[e].iter().sum();
            let gap = (self.injected[e] - self.served[e] - self.dropped[e] - held).abs();
            conservation = conservation.max(gap / self.injected[e].max(1.0));
        }

        let steady_latency_ms = self
            .latency_series
            .iter()
            .rev()
            .take(self.source_names.len())
            .map(|r| ChainLatency { chain: r.chain.clone(), latency_ms: r.latency_ms })
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();

        let mut branch_records = Vec::with_capacity(self.branches.len());
        for (b, branch) in self.branches.iter().enumerate() {
            let mut crossings = 0;
            let mut prev: Option<VmId> = None;
            for &hop in &branch.path {
                let loc = self.hop_vm(hop)?;
                if let Some(q) = prev {
                    if q != loc {
                        crossings += 1;
                    }
                }
                prev = Some(loc);
            }
            branch_records.push(BranchRecord {
                chain: self.graph.chains()[b].name.clone(),
                source: self.source_names[branch.source].clone(),
                fraction: branch.fraction,
                crossings,
                synced: branch.synced,
            });
        }

        let final_placement = self
            .graph
            .elements()
            .iter()
            .enumerate()
            .map(|(i, e)| ElementPlacement {
                element: e.name.clone(),
                vm: self.placement.vm_of(ElementId(i)).map(|v| v.0).unwrap_or(usize::MAX),
            })
            .collect();

        Ok(SimMetrics {
            policy: self.policy.name().into(),
            periods,
            period_seconds: t_step,
            duration_seconds: periods as f64 * t_step,
            vm_pool: self.placement.num_vms(),
            final_vms_in_use: self.placement.vms_in_use(),
            delayed_byte_seconds: self.db_accum,
            final_delayed_bytes: total_delayed_bytes(&self.graph, &self.placement, &self.scn.cost)?,
            dropped_mb: self.dropped.iter().sum(),
            max_conservation_error: conservation,
            steady_latency_ms,
            scaling_events: self.events,
            branches: branch_records,
            final_placement,
            latency_series: self.latency_series,
            vm_series: self.vm_series,
            sched_series: self.sched_series,
        })
    }

    fn run_period(&mut self, p: u64) -> Result<(), SimError> {
        let t_step = self.period();
        let t = p as f64 * t_step;

        // Traffic program: steps take effect at the period that contains
        // their timestamp.
        let slack = t_step * 1e-6;
        let mut rates_changed = false;
        while self.traffic_ptr < self.scn.traffic.len()
            && self.scn.traffic[self.traffic_ptr].time <= t + slack
        {
            let step = &self.scn.traffic[self.traffic_ptr];
            self.source_rates[step.chain.0] = step.throughput;
            self.traffic_ptr += 1;
            rates_changed = true;
        }
        if rates_changed {
            self.sync_offered_rates()?;
        }

        let n = self.graph.num_elements();
        let nb = self.branches.len();
        let start_buffers = self.buffers.clone();
        let mut out = vec![vec![0.0; nb]; n];
        let mut inflow_total = vec![0.0; n];
        let mut dropped_now = vec![0.0; n];
        let shares: Vec<f64> =
            (0..n).map(|i| self.share_of(ElementId(i))).collect::<Result<_, _>>()?;

        // Hand last period's idle capacity to whoever starts this one with
        // backlog (split by nominal share). Without this, a queue that built
        // up during an overload stands forever once the rebalance settles.
        self.vm_slack.resize(self.placement.num_vms(), 0.0);
        let mut borrow = vec![0.0f64; n];
        if self.vm_slack.iter().any(|s| *s > 0.0) {
            let mut backlogged = vec![0.0f64; self.placement.num_vms()];
            for i in 0..n {
                if self.buffers[i].iter().sum::<f64>() > 0.0 {
                    backlogged[self.placement.vm_of(ElementId(i))?.0] += shares[i];
                }
            }
            for i in 0..n {
                let vm = self.placement.vm_of(ElementId(i))?;
                if backlogged[vm.0] > 0.0 && self.buffers[i].iter().sum::<f64>() > 0.0 {
                    borrow[i] = self.vm_slack[vm.0] * shares[i] / backlogged[vm.0];
                }
            }
        }

        // Position of each element in each branch's processing sequence, so
        // an element knows where its per-branch input comes from.
        for idx in 0..self.topo.len() {
            let e = self.topo[idx];
            let service =
                self.graph.profile(e)?.service_rate(shares[e.0] + borrow[e.0]) * t_step;
            let mut avail = vec![0.0; nb];
            let mut demand = 0.0;
            for (b, branch) in self.branches.iter().enumerate() {
                let mut upstream: Option<ElementId> = None;
                let mut found = false;
                for &hop in &branch.path {
                    if let PathHop::Process(q) = hop {
                        if q == e {
                            found = true;
                            break;
                        }
                        upstream = Some(q);
                    }
                }
                if !found {
                    continue;
                }
                let arrived = match upstream {
                    None => self.branch_rate(b) * t_step,
                    Some(u) => out[u.0][b],
                };
                inflow_total[e.0] += arrived;
                self.injected[e.0] += arrived;
                avail[b] = self.buffers[e.0][b] + arrived;
                demand += avail[b];
            }
            if demand <= 0.0 {
                continue;
            }
            let served_fraction = if demand <= service { 1.0 } else { service / demand };
            let mut leftover_total = 0.0;
            for b in 0..nb {
                let o = avail[b] * served_fraction;
                out[e.0][b] = o;
                self.buffers[e.0][b] = avail[b] - o;
                leftover_total += self.buffers[e.0][b];
            }
            self.served[e.0] += out[e.0].iter().sum::<f64>();
            if leftover_total > self.scn.scheduler.buffer_capacity {
                let keep = self.scn.scheduler.buffer_capacity / leftover_total;
                for b in 0..nb {
                    self.buffers[e.0][b] *= keep;
                }
                let spilled = leftover_total - self.scn.scheduler.buffer_capacity;
                dropped_now[e.0] = spilled;
                self.dropped[e.0] += spilled;
            }
        }

        // Remeasure idle capacity for next period: whatever each element's
        // allocation could have processed beyond what actually came through.
        for s in self.vm_slack.iter_mut() {
            *s = 0.0;
        }
        for i in 0..n {
            let rate = out[i].iter().sum::<f64>() / t_step;
            let used = self.graph.profile(ElementId(i))?.cpu_for_throughput(rate)?;
            let vm = self.placement.vm_of(ElementId(i))?;
            self.vm_slack[vm.0] += (shares[i] - used).max(0.0);
        }

        // Latency and delayed bytes, per branch, then worst branch per
        // scenario chain.
        let t_d = self.scn.cost.inter_vm_delay;
        let t_intra = self.scn.cost.intra_vm_delay;
        let mut chain_latency = vec![0.0f64; self.source_names.len()];
        for (b, branch) in self.branches.iter().enumerate() {
            let mut lat = self.pending_penalty[b];
            if branch.synced {
                lat += self.scn.scaler.sync_penalty;
            }
            let mut carried = 0.0;
            let mut prev: Option<VmId> = None;
            for &hop in &branch.path {
                let loc = match hop {
                    PathHop::Process(e) => self.placement.vm_of(e)?,
                    PathHop::Forward(vm) => vm,
                };
                if let Some(q) = prev {
                    if q == loc {
                        lat += t_intra;
                    } else {
                        lat += t_d;
                        self.db_accum += carried * t_d;
                    }
                }
                if let PathHop::Process(e) = hop {
                    let backlog = start_buffers[e.0][b];
                    let served = out[e.0][b];
                    if backlog > 0.0 && served > 0.0 {
                        lat += backlog * t_step / served;
                    }
                    carried = served;
                }
                prev = Some(loc);
            }
            let s = branch.source;
            chain_latency[s] = chain_latency[s].max(lat);
        }
        for pen in &mut self.pending_penalty {
            *pen = 0.0;
        }
        for (s, name) in self.source_names.iter().enumerate() {
            self.latency_series.push(LatencyRecord {
                period: p,
                time: t,
                chain: name.clone(),
                latency_ms: chain_latency[s] * 1000.0,
            });
        }
        self.vm_series.push(VmRecord { period: p, time: t, vms_in_use: self.placement.vms_in_use() });

        // Scheduler book-keeping and the per-VM share rebalance.
        let mut vm_c = vec![0.0f64; self.placement.num_vms()];
        for k in 0..self.placement.num_vms() {
            let sched = &mut self.schedulers[k];
            if sched.is_empty() {
                continue;
            }
            let members: Vec<ElementId> = sched.entries().iter().map(|e| e.element).collect();
            for e in members {
                let closing: f64 = self.buffers[e.0].iter().sum();
                let rate = out[e.0].iter().sum::<f64>() / t_step;
                sched.record_period_served(e, closing, dropped_now[e.0], rate)?;
            }
            vm_c[k] = sched.rebalance()?;
        }
        for i in 0..n {
            let vm = self.placement.vm_of(ElementId(i))?;
            self.sched_series.push(SchedRecord {
                period: p,
                time: t,
                element: self.graph.elements()[i].name.clone(),
                vm: vm.0,
                share: shares[i],
                buffer_mb: self.buffers[i].iter().sum(),
                dropped_mb: dropped_now[i],
                c: vm_c[vm.0],
            });
        }

        // At most one scaling decision per period, worst overflow first.
        let mut hot: Vec<(f64, ElementId)> = dropped_now
            .iter()
            .enumerate()
            .filter(|(_, d)| **d > 0.0)
            .map(|(i, d)| (*d, ElementId(i)))
            .collect();
        hot.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, target) in hot {
            let ready = match self.last_scale[target.0] {
                None => true,
                Some(since) => p.saturating_sub(since) >= self.scn.scaler.cooldown_periods,
            };
            if !ready {
                continue;
            }
            let theta_exp = inflow_total[target.0] / t_step * self.scn.scaler.headroom;
            if theta_exp <= self.graph.element_load(target)? {
                continue;
            }
            let event = self.scale_target(p, t, target, theta_exp)?;
            self.events.push(event);
            break;
        }
        Ok(())
    }

    /// Deployment snapshot for the scaler. Every element is booked at the
    /// CPU its *offered* load needs, not at whatever it served this period:
    /// an element throttled by the very overload being fixed would otherwise
    /// under-book its co-residents and a replica split sized against that
    /// would stop fitting the moment the backlog drains.
    fn snapshot(&self) -> Result<DeploymentState, SimError> {
        let n = self.graph.num_elements();
        let mut throughput = Vec::with_capacity(n);
        let mut shares = Vec::with_capacity(n);
        for i in 0..n {
            let load = self.graph.element_load(ElementId(i))?;
            throughput.push(load);
            shares.push(self.graph.profile(ElementId(i))?.cpu_for_throughput(load)?);
        }
        Ok(DeploymentState {
            graph: self.graph.clone(),
            placement: self.placement.clone(),
            throughput,
            shares,
            last_scale: self.last_scale.clone(),
        })
    }

    fn scale_target(
        &mut self,
        p: u64,
        t: f64,
        target: ElementId,
        theta_exp: f64,
    ) -> Result<ScalingEvent, SimError> {
        let target_name = self.graph.element(target)?.name.clone();
        // Even a failed attempt starts the cooldown, so one stuck element
        // cannot re-fail every period while starving other candidates.
        self.last_scale[target.0] = Some(p);
        let event = |action: &str, detail: String| ScalingEvent {
            period: p,
            time: t,
            target: target_name.clone(),
            action: action.into(),
            theta_expected: theta_exp,
            detail,
        };

        if self.policy == Policy::TraditionalScaleOut {
            let detail = self.enact_traditional(p, target, theta_exp)?;
            return Ok(event("new_vm", detail));
        }

        let snapshot = self.snapshot()?;
        match push_aside_scale_up(&snapshot, target, theta_exp) {
            Ok(PushAsideOutcome::Apply(decision)) => match apply_decision(&snapshot, &decision) {
                Ok(next) => {
                    let detail = self.adopt_push_aside(target, theta_exp, next, &decision)?;
                    Ok(event("push_aside", detail))
                }
                Err(e) => Ok(event("skipped", format!("push-aside fell through: {e}"))),
            },
            Ok(PushAsideOutcome::NotApplicable(reason)) => {
                let note = format!("push-aside not applicable ({reason}); ");
                let profile = self.graph.profile(target)?.clone();
                let theta_cur = self.graph.element_load(target)?;
                let r_star = match required_resource(&profile, theta_exp, theta_cur) {
                    Ok(r) => r,
                    Err(e) => return Ok(event("skipped", format!("{note}{e}"))),
                };
                let decision = match greedy_scale_out(&snapshot, target, r_star, theta_exp) {
                    Ok(d) => d,
                    Err(e) => return Ok(event("skipped", format!("{note}{e}"))),
                };
                let action = match decision {
                    ScalingDecision::ScaleOut { .. } => "scale_out",
                    _ => "new_vm",
                };
                match apply_decision(&snapshot, &decision) {
                    Ok(next) => {
                        let detail = self.adopt_split(p, target, next, &decision, &note)?;
                        Ok(event(action, detail))
                    }
                    Err(e) => Ok(event("skipped", format!("{note}replication fell through: {e}"))),
                }
            }
            Err(e) => Ok(event("skipped", format!("{e}"))),
        }
    }

    fn adopt_push_aside(
        &mut self,
        target: ElementId,
        theta_exp: f64,
        next: DeploymentState,
        decision: &ScalingDecision,
    ) -> Result<String, SimError> {
        let ScalingDecision::PushAside { migrations, new_share, .. } = decision else {
            return Err(SimError::InvalidInput("push-aside adoption on a replica decision".into()));
        };
        self.placement = next.placement;
        let home = self.placement.vm_of(target)?;
        let mut affected = BTreeSet::new();
        affected.insert(home);
        let mut moved = Vec::new();
        for m in migrations {
            affected.insert(m.from);
            affected.insert(m.to);
            moved.push(format!("{} {}→{}", self.graph.element(m.element)?.name, m.from, m.to));
        }
        for vm in affected {
            let boost = if vm == home { Some((target, theta_exp)) } else { None };
            self.rebuild_vm(vm, boost)?;
        }
        for (b, branch) in self.branches.iter().enumerate() {
            let touched = branch.path.iter().any(|hop| match hop {
                PathHop::Process(e) => *e == target || migrations.iter().any(|m| m.element == *e),
                PathHop::Forward(_) => false,
            });
            if touched {
                self.pending_penalty[b] += self.scn.scaler.migration_penalty;
            }
        }
        Ok(format!("moved {}; target share → {:.4}", moved.join(", "), new_share))
    }

    /// Adopts a replica split performed by the scaler (direct reroute, no
    /// bounce) and extends the branch book-keeping.
    fn adopt_split(
        &mut self,
        p: u64,
        target: ElementId,
        next: DeploymentState,
        decision: &ScalingDecision,
        note: &str,
    ) -> Result<String, SimError> {
        let vm = match decision {
            ScalingDecision::ScaleOut { vm, .. } | ScalingDecision::NewVm { vm, .. } => *vm,
            ScalingDecision::PushAside { .. } => {
                return Err(SimError::InvalidInput("split adoption on a push-aside decision".into()))
            }
        };
        let parents = self.graph.chains_of(target);
        let load_before = self.graph.element_load(target)?;
        let replica = ElementId(self.graph.num_elements());
        let home = self.placement.vm_of(target)?;
        let keep = if load_before > 0.0 { next.throughput[target.0] / load_before } else { 0.0 };

        self.graph = next.graph;
        self.placement = next.placement;
        // A NewVm decision grew the pool; give the fresh VM a scheduler.
        while self.schedulers.len() < self.placement.num_vms() {
            self.schedulers.push(SchedulerState::new(
                self.scn.scheduler.period,
                self.scn.scheduler.share_floor,
                self.scn.scheduler.smoothing,
            ));
        }
        self.extend_branches(p, target, replica, home, &parents, keep, false);
        self.rebuild_vm(home, None)?;
        self.rebuild_vm(vm, None)?;
        self.topo = self.graph.topo_order();

        let rname = self.graph.element(replica)?.name.clone();
        Ok(format!("{note}replica {rname} on {vm} takes {:.1}% of the flow", (1.0 - keep) * 100.0))
    }

    /// The traditional baseline: always a fresh VM, an even split, and the
    /// replica's traffic still enters the original VM before detouring.
    fn enact_traditional(
        &mut self,
        p: u64,
        target: ElementId,
        theta_exp: f64,
    ) -> Result<String, SimError> {
        let _ = theta_exp; // the even split ignores how much was expected
        let home = self.placement.vm_of(target)?;
        let parents = self.graph.chains_of(target);
        let profile = self.graph.profile(target)?.clone();
        let base = self.graph.element(target)?.name.clone();
        let vm = self.placement.add_vm();
        self.schedulers.push(SchedulerState::new(
            self.scn.scheduler.period,
            self.scn.scheduler.share_floor,
            self.scn.scheduler.smoothing,
        ));
        let replica = self
            .graph
            .add_element(Element { name: format!("{base}#r{}", self.graph.num_elements()), profile });
        let placed = self.placement.push_element(vm)?;
        debug_assert_eq!(placed, replica);
        for &j in &parents {
            let name = format!("{}#s{}", self.graph.chain(j)?.name, replica.0);
            self.graph.split_chain_via(j, target, replica, 0.5, name)?;
        }
        self.extend_branches(p, target, replica, home, &parents, 0.5, true);
        self.rebuild_vm(home, None)?;
        self.rebuild_vm(vm, None)?;
        self.topo = self.graph.topo_order();

        let rname = self.graph.element(replica)?.name.clone();
        Ok(format!("fresh {vm} hosts {rname}, 50/50 split, detour via {home}"))
    }

    /// Splits every parent branch: the parent keeps `keep` of its fraction
    /// and its path; the new branch reroutes through the replica, with the
    /// traditional bounce via the original VM when `bounce` is set.
    fn extend_branches(
        &mut self,
        p: u64,
        target: ElementId,
        replica: ElementId,
        home: VmId,
        parents: &[ChainId],
        keep: f64,
        bounce: bool,
    ) {
        for &parent in parents {
            let old = &self.branches[parent.0];
            let mut path = Vec::with_capacity(old.path.len() + 1);
            for &hop in &old.path {
                if hop == PathHop::Process(target) {
                    if bounce {
                        path.push(PathHop::Forward(home));
                    }
                    path.push(PathHop::Process(replica));
                } else {
                    path.push(hop);
                }
            }
            let fraction = old.fraction * (1.0 - keep);
            let synced = old.synced || bounce;
            let source = old.source;
            self.branches[parent.0].fraction *= keep;
            self.branches.push(Branch { source, fraction, path, synced });
        }
        let nb = self.branches.len();
        for row in &mut self.buffers {
            row.resize(nb, 0.0);
        }
        self.buffers.push(vec![0.0; nb]);
        self.injected.push(0.0);
        self.served.push(0.0);
        self.dropped.push(0.0);
        self.last_scale.push(Some(p));
        self.pending_penalty.resize(nb, 0.0);
        for (b, branch) in self.branches.iter().enumerate() {
            let touched = branch
                .path
                .iter()
                .any(|hop| matches!(hop, PathHop::Process(e) if *e == target || *e == replica));
            if touched {
                self.pending_penalty[b] += self.scn.scaler.migration_penalty;
            }
        }
    }
}
