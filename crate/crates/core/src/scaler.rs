//! Scaling an overloaded element: push-aside first, greedy scale-out second.
//!
//! When an element i₀ outgrows its share, the cheapest fix is to make room
//! on the VM it already occupies: find the border elements of i₀'s
//! co-located chain runs and migrate them one hop over to the VM their
//! far-side neighbour lives on. Such a move trades a crossing for a
//! crossing, so no chain gains an inter-VM hop — the property that makes
//! push-aside worth preferring. Only when no border can move does the
//! scaler fall back to replicating i₀ onto the fullest VM that still fits
//! the shortfall, and only past that onto a fresh VM.
//!
//! All arithmetic here runs on utilizations — φ_i evaluated at the traffic
//! each element currently carries — rather than raw scheduler shares, so
//! "released" and "required" capacity are in the same currency.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Element, ElementId, GraphError, ProcessingGraph, VmId};
use crate::placement::{Placement, PlacementError, CAP_EPS};
use crate::profile::{ElementProfile, ProfileError};

#[derive(Debug, Error, PartialEq)]
pub enum ScalerError {
    #[error("no scaling needed: expected throughput {expected} does not exceed current {current}")]
    NoScalingNeeded { current: f64, expected: f64 },
    #[error("deployment state is inconsistent: {0}")]
    MismatchedState(&'static str),
    #[error("decision is stale: {0}")]
    StaleDecision(String),
    #[error("applying the decision would overload {vm}")]
    CapacityExceeded { vm: VmId },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
}

/// Snapshot the scaler decides against: the deployed graph, where everything
/// runs, and what each element currently carries.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeploymentState {
    pub graph: ProcessingGraph,
    pub placement: Placement,
    /// Traffic currently flowing through each element (MB/s).
    pub throughput: Vec<f64>,
    /// Core fraction each element holds. Snapshots built by the simulator
    /// carry φ_i(throughput_i) here — utilization, not the scheduler's raw
    /// share — so release/claim arithmetic stays consistent.
    pub shares: Vec<f64>,
    /// Period index of each element's last scale event; maintained by the
    /// simulator for its cool-down checks.
    pub last_scale: Vec<Option<u64>>,
}

impl DeploymentState {
    /// State in which every element carries its full offered load and holds
    /// exactly the share that load needs.
    pub fn from_offered_load(
        graph: ProcessingGraph,
        placement: Placement,
    ) -> Result<Self, ScalerError> {
        let n = graph.num_elements();
        if placement.assignment().len() != n {
            return Err(ScalerError::MismatchedState("placement does not cover the graph"));
        }
        let mut throughput = Vec::with_capacity(n);
        let mut shares = Vec::with_capacity(n);
        for i in 0..n {
            let id = ElementId(i);
            let load = graph.element_load(id)?;
            shares.push(graph.profile(id)?.cpu_for_throughput(load)?);
            throughput.push(load);
        }
        Ok(DeploymentState { graph, placement, throughput, shares, last_scale: vec![None; n] })
    }

    /// φ_i at the element's current traffic.
    pub fn utilization(&self, i: ElementId) -> Result<f64, ScalerError> {
        let v = *self
            .throughput
            .get(i.0)
            .ok_or(ScalerError::MismatchedState("throughput vector is short"))?;
        Ok(self.graph.profile(i)?.cpu_for_throughput(v)?)
    }

    pub fn vm_utilization(&self, vm: VmId) -> Result<f64, ScalerError> {
        let mut u = 0.0;
        for e in self.placement.elements_on(vm) {
            u += self.utilization(e)?;
        }
        Ok(u)
    }

    pub fn remaining_capacity(&self, vm: VmId) -> Result<f64, ScalerError> {
        Ok((1.0 - self.vm_utilization(vm)?).max(0.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Migration {
    pub element: ElementId,
    pub from: VmId,
    pub to: VmId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ScalingDecision {
    /// Make room on the hot element's own VM by moving border elements to
    /// the neighbouring VMs they already hand off to.
    PushAside {
        target: ElementId,
        theta_exp: f64,
        migrations: Vec<Migration>,
        new_share: f64,
    },
    /// Replicate the hot element onto an existing VM with spare capacity.
    ScaleOut { target: ElementId, theta_exp: f64, vm: VmId, share: f64 },
    /// Replicate onto a fresh VM because nowhere existing fits.
    NewVm { target: ElementId, theta_exp: f64, vm: VmId, share: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum NotApplicableReason {
    /// The expected throughput overruns a whole dedicated core; no amount of
    /// pushing aside can help.
    ExceedsOneCore { limit: f64 },
    NoBorderElements,
    /// Borders exist but none can move: they sit at chain ends, their
    /// neighbouring VMs are full, or moving them would add a crossing hop.
    NoMigratableBorder,
    InsufficientRelease { needed: f64, available: f64 },
}

impl fmt::Display for NotApplicableReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NotApplicableReason::ExceedsOneCore { limit } => {
                write!(f, "expected throughput exceeds one core (limit {limit} MB/s)")
            }
            NotApplicableReason::NoBorderElements => write!(f, "no border elements"),
            NotApplicableReason::NoMigratableBorder => write!(f, "no border element can migrate"),
            NotApplicableReason::InsufficientRelease { needed, available } => {
                write!(f, "borders release {available} but {needed} is needed")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PushAsideOutcome {
    Apply(ScalingDecision),
    NotApplicable(NotApplicableReason),
}

/// Extra core fraction the element needs to serve `theta_exp` instead of
/// `theta_cur`.
pub fn required_resource(
    profile: &ElementProfile,
    theta_exp: f64,
    theta_cur: f64,
) -> Result<f64, ScalerError> {
    if !(theta_exp > theta_cur) || theta_cur < 0.0 {
        return Err(ScalerError::NoScalingNeeded { current: theta_cur, expected: theta_exp });
    }
    Ok(profile.cpu_for_throughput(theta_exp)? - profile.cpu_for_throughput(theta_cur)?)
}

/// Border elements of i₀: for every chain through i₀, the endpoints of the
/// maximal run of elements co-located with i₀'s VM around it. i₀ itself
/// never qualifies, so an element with no co-located chain neighbours has
/// no borders.
pub fn find_border_elements(
    state: &DeploymentState,
    i0: ElementId,
) -> Result<Vec<ElementId>, ScalerError> {
    state.graph.element(i0)?;
    let home = state.placement.vm_of(i0)?;
    let mut borders = BTreeSet::new();
    for j in state.graph.chains_of(i0) {
        let members = &state.graph.chain(j)?.elements;
        let pos = members.iter().position(|&e| e == i0).expect("chains_of listed this chain");
        let co_located =
            |e: ElementId| state.placement.vm_of(e).map(|vm| vm == home).unwrap_or(false);
        let mut up = pos;
        while up > 0 && co_located(members[up - 1]) {
            up -= 1;
        }
        let mut down = pos;
        while down + 1 < members.len() && co_located(members[down + 1]) {
            down += 1;
        }
        for end in [members[up], members[down]] {
            if end != i0 {
                borders.insert(end);
            }
        }
    }
    Ok(borders.into_iter().collect())
}

fn crossings_of_chain(members: &[ElementId], assign: &[VmId]) -> usize {
    members.windows(2).filter(|p| assign[p[0].0] != assign[p[1].0]).count()
}

/// Whether moving `b` to `to` keeps every chain's crossing count from
/// growing. Chains `b` shares with other neighbours could pick up new hops
/// even when the borderscape around i₀ looks clean, so all of them are
/// checked.
fn move_preserves_hops(state: &DeploymentState, b: ElementId, to: VmId) -> bool {
    let before = state.placement.assignment();
    let mut after = before.to_vec();
    after[b.0] = to;
    state.graph.chains().iter().all(|chain| {
        crossings_of_chain(&chain.elements, &after) <= crossings_of_chain(&chain.elements, before)
    })
}

struct MigrationCandidate {
    element: ElementId,
    to: VmId,
    /// Capacity freed on the origin VM if this element leaves: φ at its
    /// current traffic.
    released: f64,
}

/// Borders that can actually move: they need a far-side neighbour VM (chain
/// ends have none), room over there, and the move must not add a hop to any
/// chain. The first admissible neighbour VM (lowest id) wins.
fn migration_candidates(
    state: &DeploymentState,
    borders: &[ElementId],
) -> Result<Vec<MigrationCandidate>, ScalerError> {
    let mut out = Vec::new();
    for &b in borders {
        let from = state.placement.vm_of(b)?;
        let mut neighbour_vms = BTreeSet::new();
        for j in state.graph.chains_of(b) {
            let up = state.graph.upstream(b, j)?;
            if up != b {
                neighbour_vms.insert(state.placement.vm_of(up)?);
            }
            if let Some(down) = state.graph.downstream(b, j)? {
                neighbour_vms.insert(state.placement.vm_of(down)?);
            }
        }
        neighbour_vms.remove(&from);
        let released = state.utilization(b)?;
        for to in neighbour_vms {
            if released + state.vm_utilization(to)? < 1.0 && move_preserves_hops(state, b, to) {
                out.push(MigrationCandidate { element: b, to, released });
                break;
            }
        }
    }
    Ok(out)
}

/// Tries to enlarge i₀'s share in place by pushing border elements aside.
pub fn push_aside_scale_up(
    state: &DeploymentState,
    i0: ElementId,
    theta_exp: f64,
) -> Result<PushAsideOutcome, ScalerError> {
    let profile = state.graph.profile(i0)?;
    let limit = profile.max_throughput();
    if theta_exp > limit {
        return Ok(PushAsideOutcome::NotApplicable(NotApplicableReason::ExceedsOneCore {
            limit,
        }));
    }
    let theta_cur = *state
        .throughput
        .get(i0.0)
        .ok_or(ScalerError::MismatchedState("throughput vector is short"))?;
    let r_star = required_resource(profile, theta_exp, theta_cur)?;
    let borders = find_border_elements(state, i0)?;
    if borders.is_empty() {
        return Ok(PushAsideOutcome::NotApplicable(NotApplicableReason::NoBorderElements));
    }
    let mut candidates = migration_candidates(state, &borders)?;
    if candidates.is_empty() {
        return Ok(PushAsideOutcome::NotApplicable(NotApplicableReason::NoMigratableBorder));
    }
    let available: f64 = candidates.iter().map(|c| c.released).sum();
    if available < r_star {
        return Ok(PushAsideOutcome::NotApplicable(NotApplicableReason::InsufficientRelease {
            needed: r_star,
            available,
        }));
    }
    // Fewest migrations that cover the shortfall: take the biggest releases
    // first; any covering set of size m is dominated by the m largest.
    candidates.sort_by(|a, b| {
        b.released.total_cmp(&a.released).then(a.element.cmp(&b.element))
    });
    let home = state.placement.vm_of(i0)?;
    let mut migrations = Vec::new();
    let mut covered = 0.0;
    for c in candidates {
        migrations.push(Migration { element: c.element, from: home, to: c.to });
        covered += c.released;
        if covered >= r_star {
            break;
        }
    }
    let new_share = (state.shares[i0.0] + r_star).min(1.0);
    Ok(PushAsideOutcome::Apply(ScalingDecision::PushAside {
        target: i0,
        theta_exp,
        migrations,
        new_share,
    }))
}

/// Picks a VM for a replica of i₀ needing `r_star` extra capacity: existing
/// VMs in increasing order of remaining room, first fit; a fresh VM if none
/// fits. i₀'s own VM is skipped — the overload means it has nothing left to
/// give.
pub fn greedy_scale_out(
    state: &DeploymentState,
    i0: ElementId,
    r_star: f64,
    theta_exp: f64,
) -> Result<ScalingDecision, ScalerError> {
    let home = state.placement.vm_of(i0)?;
    let mut vms = Vec::new();
    for k in 0..state.placement.num_vms() {
        let vm = VmId(k);
        if vm != home {
            vms.push((state.remaining_capacity(vm)?, vm));
        }
    }
    vms.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (remaining, vm) in vms {
        if remaining + CAP_EPS >= r_star {
            return Ok(ScalingDecision::ScaleOut { target: i0, theta_exp, vm, share: r_star });
        }
    }
    Ok(ScalingDecision::NewVm {
        target: i0,
        theta_exp,
        vm: VmId(state.placement.num_vms()),
        share: r_star.min(1.0),
    })
}

/// Applies a decision to a snapshot, producing the successor state. The
/// decision must have been computed against `state`; anything that no
/// longer lines up is reported as stale rather than guessed around.
pub fn apply_decision(
    state: &DeploymentState,
    decision: &ScalingDecision,
) -> Result<DeploymentState, ScalerError> {
    let mut next = state.clone();
    match decision {
        ScalingDecision::PushAside { target, migrations, new_share, .. } => {
            next.graph.element(*target)?;
            for m in migrations {
                let cur = next.placement.vm_of(m.element)?;
                if cur != m.from {
                    return Err(ScalerError::StaleDecision(format!(
                        "{} expected on {}, found on {}",
                        m.element, m.from, cur
                    )));
                }
            }
            let before: Vec<usize> = next
                .graph
                .chains()
                .iter()
                .map(|c| crossings_of_chain(&c.elements, next.placement.assignment()))
                .collect();
            for m in migrations {
                next.placement.move_element(m.element, m.to)?;
            }
            for (chain, &was) in next.graph.chains().iter().zip(&before) {
                if crossings_of_chain(&chain.elements, next.placement.assignment()) > was {
                    return Err(ScalerError::StaleDecision(format!(
                        "migrations would add a crossing hop to chain {}",
                        chain.name
                    )));
                }
            }
            next.shares[target.0] = *new_share;
        }
        ScalingDecision::ScaleOut { target, theta_exp, vm, .. } => {
            if vm.0 >= next.placement.num_vms() {
                return Err(ScalerError::StaleDecision(format!("{vm} does not exist")));
            }
            split_onto(&mut next, *target, *vm, *theta_exp)?;
        }
        ScalingDecision::NewVm { target, theta_exp, vm, .. } => {
            let fresh = next.placement.add_vm();
            if fresh != *vm {
                return Err(ScalerError::StaleDecision(format!(
                    "expected the fresh VM to be {vm}, got {fresh}"
                )));
            }
            split_onto(&mut next, *target, fresh, *theta_exp)?;
        }
    }
    for k in 0..next.placement.num_vms() {
        let vm = VmId(k);
        if next.vm_utilization(vm)? > 1.0 + CAP_EPS {
            return Err(ScalerError::CapacityExceeded { vm });
        }
        let share_sum: f64 =
            next.placement.elements_on(vm).iter().map(|e| next.shares[e.0]).sum();
        if share_sum > 1.0 + CAP_EPS {
            return Err(ScalerError::CapacityExceeded { vm });
        }
    }
    Ok(next)
}

/// Splits `target` with a replica on `vm`. The original keeps as much
/// throughput as its VM still has room for once its co-residents are
/// accounted at current traffic; every chain through the element is split
/// by that same fraction and rerouted through the replica for the
/// remainder.
fn split_onto(
    next: &mut DeploymentState,
    target: ElementId,
    vm: VmId,
    theta_exp: f64,
) -> Result<ElementId, ScalerError> {
    let home = next.placement.vm_of(target)?;
    if vm == home {
        return Err(ScalerError::StaleDecision("replica must land on a different VM".into()));
    }
    if !(theta_exp > 0.0) {
        return Err(ScalerError::StaleDecision(format!(
            "scale-out for non-positive expected throughput {theta_exp}"
        )));
    }
    let profile = next.graph.profile(target)?.clone();
    let mut others = 0.0;
    for e in next.placement.elements_on(home) {
        if e != target {
            others += next.utilization(e)?;
        }
    }
    let budget = (1.0 - others).clamp(0.0, 1.0);
    let theta_keep = if budget > profile.intercept.max(0.0) {
        profile.throughput_for_cpu(budget)?.min(theta_exp)
    } else {
        0.0
    };
    let keep_fraction = theta_keep / theta_exp;
    let base = next.graph.element(target)?.name.clone();
    let replica = next.graph.add_element(Element {
        name: format!("{}#r{}", base, next.graph.num_elements()),
        profile: profile.clone(),
    });
    let placed = next.placement.push_element(vm)?;
    debug_assert_eq!(placed, replica);
    for j in next.graph.chains_of(target) {
        let name = format!("{}#s{}", next.graph.chain(j)?.name, replica.0);
        next.graph.split_chain_via(j, target, replica, keep_fraction, name)?;
    }
    // Books for the two halves follow the new offered split; everyone
    // else's current traffic is untouched.
    let kept = next.graph.element_load(target)?;
    let moved = next.graph.element_load(replica)?;
    next.throughput[target.0] = kept;
    next.shares[target.0] = profile.cpu_for_throughput(kept)?;
    next.throughput.push(moved);
    next.shares.push(profile.cpu_for_throughput(moved)?);
    next.last_scale.push(None);
    Ok(replica)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Chain;
    use approx::assert_relative_eq;

    fn linear(b: f64) -> ElementProfile {
        ElementProfile::new("lin", 0.0, b).unwrap()
    }

    fn chain(name: &str, ids: &[usize], theta: f64) -> Chain {
        Chain {
            name: name.into(),
            elements: ids.iter().map(|&i| ElementId(i)).collect(),
            throughput: theta,
        }
    }

    fn state(
        profiles: Vec<ElementProfile>,
        chains: Vec<Chain>,
        assign: &[usize],
        num_vms: usize,
    ) -> DeploymentState {
        let elements = profiles
            .into_iter()
            .enumerate()
            .map(|(i, profile)| Element { name: format!("E{i}"), profile })
            .collect();
        let graph = ProcessingGraph::new(elements, chains);
        let placement =
            Placement::new(assign.iter().map(|&v| VmId(v)).collect(), num_vms).unwrap();
        DeploymentState::from_offered_load(graph, placement).unwrap()
    }

    #[test]
    fn required_resource_matches_profile_slopes() {
        let c = ElementProfile::classifier();
        assert_relative_eq!(required_resource(&c, 150.0, 100.0).unwrap(), 0.21, epsilon = 1e-12);
        let s = ElementProfile::sender();
        assert_relative_eq!(required_resource(&s, 400.0, 200.0).unwrap(), 0.26, epsilon = 1e-12);
        assert_eq!(
            required_resource(&c, 100.0, 100.0),
            Err(ScalerError::NoScalingNeeded { current: 100.0, expected: 100.0 })
        );
    }

    /// Four-element chain split over two VMs; the hot element's only border
    /// is the chain tail sharing its VM.
    fn tail_border_state() -> DeploymentState {
        // E0→E1 on vm0, E2 (hot) →E3 on vm1; 80 MB/s keeps vm1 at 0.96.
        state(
            vec![linear(0.004), linear(0.004), linear(0.008), linear(0.004)],
            vec![chain("c", &[0, 1, 2, 3], 80.0)],
            &[0, 0, 1, 1],
            2,
        )
    }

    #[test]
    fn border_is_the_colocated_run_endpoint() {
        let s = tail_border_state();
        assert_eq!(find_border_elements(&s, ElementId(2)).unwrap(), vec![ElementId(3)]);
    }

    #[test]
    fn element_without_colocated_neighbours_has_no_borders() {
        let s = state(
            vec![linear(0.004); 4],
            vec![chain("c", &[0, 1, 2, 3], 50.0)],
            &[0, 0, 1, 0],
            2,
        );
        assert_eq!(find_border_elements(&s, ElementId(2)).unwrap(), Vec::<ElementId>::new());
    }

    #[test]
    fn middle_of_a_colocated_run_has_borders_both_ways() {
        // E0 on vm0; E1,E2,E3 on vm1; E4 on vm2.
        let s = state(
            vec![linear(0.002); 5],
            vec![chain("c", &[0, 1, 2, 3, 4], 100.0)],
            &[0, 1, 1, 1, 2],
            3,
        );
        assert_eq!(
            find_border_elements(&s, ElementId(2)).unwrap(),
            vec![ElementId(1), ElementId(3)]
        );
    }

    #[test]
    fn push_aside_migrates_a_border_over_its_far_hop() {
        // Same run as above: both neighbours' VMs have room; E1 releases as
        // much as E3, the id breaks the tie, one migration covers r*.
        let s = state(
            vec![linear(0.002); 5],
            vec![chain("c", &[0, 1, 2, 3, 4], 100.0)],
            &[0, 1, 1, 1, 2],
            3,
        );
        let out = push_aside_scale_up(&s, ElementId(2), 150.0).unwrap();
        match out {
            PushAsideOutcome::Apply(ScalingDecision::PushAside {
                target,
                migrations,
                new_share,
                ..
            }) => {
                assert_eq!(target, ElementId(2));
                assert_eq!(
                    migrations,
                    vec![Migration { element: ElementId(1), from: VmId(1), to: VmId(0) }]
                );
                // r* = 0.002·50; the share grows by exactly that.
                assert_relative_eq!(new_share, 0.2 + 0.1, epsilon = 1e-12);
            }
            other => panic!("expected a push-aside, got {other:?}"),
        }
    }

    #[test]
    fn push_aside_apply_keeps_hops_and_capacity() {
        let s = state(
            vec![linear(0.002); 5],
            vec![chain("c", &[0, 1, 2, 3, 4], 100.0)],
            &[0, 1, 1, 1, 2],
            3,
        );
        let before: usize =
            crossings_of_chain(&s.graph.chains()[0].elements, s.placement.assignment());
        let decision = match push_aside_scale_up(&s, ElementId(2), 150.0).unwrap() {
            PushAsideOutcome::Apply(d) => d,
            other => panic!("expected a push-aside, got {other:?}"),
        };
        let next = apply_decision(&s, &decision).unwrap();
        assert_eq!(next.placement.vm_of(ElementId(1)).unwrap(), VmId(0));
        let after =
            crossings_of_chain(&next.graph.chains()[0].elements, next.placement.assignment());
        assert!(after <= before);
        for k in 0..3 {
            assert!(next.vm_utilization(VmId(k)).unwrap() <= 1.0 + CAP_EPS);
        }
    }

    #[test]
    fn expected_throughput_beyond_one_core_is_not_applicable() {
        let s = tail_border_state();
        // linear(0.008) tops out at 125 MB/s.
        let out = push_aside_scale_up(&s, ElementId(2), 130.0).unwrap();
        assert_eq!(
            out,
            PushAsideOutcome::NotApplicable(NotApplicableReason::ExceedsOneCore { limit: 125.0 })
        );
    }

    #[test]
    fn chain_end_border_cannot_migrate() {
        // E3's only neighbour is the hot element itself; past it is the
        // chain end, so there is nowhere to push it without adding a hop.
        let s = tail_border_state();
        let out = push_aside_scale_up(&s, ElementId(2), 110.0).unwrap();
        assert_eq!(out, PushAsideOutcome::NotApplicable(NotApplicableReason::NoMigratableBorder));
    }

    #[test]
    fn full_neighbour_vm_blocks_migration() {
        // E0 alone nearly fills vm0, so E1 cannot be pushed there.
        let s = state(
            vec![linear(0.0099), linear(0.002), linear(0.002), linear(0.002), linear(0.002)],
            vec![chain("c", &[0, 1, 2, 3, 4], 100.0)],
            &[0, 1, 1, 1, 1],
            2,
        );
        let out = push_aside_scale_up(&s, ElementId(2), 150.0).unwrap();
        assert_eq!(out, PushAsideOutcome::NotApplicable(NotApplicableReason::NoMigratableBorder));
    }

    #[test]
    fn migration_that_would_add_a_hop_is_rejected() {
        // c1: E0(vm0)→E1→E2(hot); c2: E1→E3, with E3 co-located on vm1.
        // Pushing E1 to vm0 nets zero on c1 but adds a crossing on c2.
        let s = state(
            vec![linear(0.002); 4],
            vec![chain("c1", &[0, 1, 2], 100.0), chain("c2", &[1, 3], 50.0)],
            &[0, 1, 1, 1],
            2,
        );
        let out = push_aside_scale_up(&s, ElementId(2), 150.0).unwrap();
        assert_eq!(out, PushAsideOutcome::NotApplicable(NotApplicableReason::NoMigratableBorder));
    }

    #[test]
    fn smallest_sufficient_border_set_is_chosen() {
        // Three borders release 0.3, 0.2 and 0.05; r* = 0.24 needs only the
        // largest one.
        let profiles = vec![
            linear(0.01), // E0: hot, load 20 → util 0.2
            linear(0.01), // E1 releases 0.3
            linear(0.01), // E2 releases 0.2
            linear(0.01), // E3 releases 0.05
            linear(0.001),
            linear(0.001),
            linear(0.001),
        ];
        let chains = vec![
            chain("a", &[4, 1, 0], 30.0),
            chain("b", &[5, 2, 0], 20.0),
            chain("d", &[6, 3, 0], 5.0),
        ];
        // Hot VM hosts E0..E3; each border's far-side neighbour sits alone
        // on its own VM. The hot element currently serves 45 of its offered
        // 55 MB/s (its VM is saturated); Θ_exp = 69 → r* = 0.24.
        let mut s = state(profiles, chains, &[1, 1, 1, 1, 0, 2, 3], 4);
        s.throughput[0] = 45.0;
        s.shares[0] = 0.45;
        let out = push_aside_scale_up(&s, ElementId(0), 69.0).unwrap();
        match out {
            PushAsideOutcome::Apply(ScalingDecision::PushAside { migrations, new_share, .. }) => {
                assert_eq!(
                    migrations,
                    vec![Migration { element: ElementId(1), from: VmId(1), to: VmId(0) }]
                );
                assert_relative_eq!(new_share, 0.45 + 0.24, epsilon = 1e-12);
            }
            other => panic!("expected a push-aside, got {other:?}"),
        }
    }

    #[test]
    fn insufficient_release_reports_the_gap() {
        // Only one border able to release 0.05, but 0.24 is needed.
        let s = state(
            vec![linear(0.01), linear(0.001), linear(0.001)],
            vec![chain("a", &[2, 1, 0], 50.0)],
            &[1, 1, 0],
            2,
        );
        let out = push_aside_scale_up(&s, ElementId(0), 74.0).unwrap();
        match out {
            PushAsideOutcome::NotApplicable(NotApplicableReason::InsufficientRelease {
                needed,
                available,
            }) => {
                assert_relative_eq!(needed, 0.24, epsilon = 1e-12);
                assert_relative_eq!(available, 0.05, epsilon = 1e-12);
            }
            other => panic!("expected insufficient release, got {other:?}"),
        }
    }

    /// One hot element on vm0 plus three single-element chains pinning the
    /// other VMs at utilizations 0.9 / 0.7 / 0.5.
    fn greedy_state() -> DeploymentState {
        state(
            vec![linear(0.01); 4],
            vec![
                chain("hot", &[0], 90.0),
                chain("f1", &[1], 90.0),
                chain("f2", &[2], 70.0),
                chain("f3", &[3], 50.0),
            ],
            &[0, 1, 2, 3],
            4,
        )
    }

    #[test]
    fn greedy_scale_out_first_fits_ascending_remaining() {
        let s = greedy_state();
        let d = greedy_scale_out(&s, ElementId(0), 0.25, 115.0).unwrap();
        assert_eq!(
            d,
            ScalingDecision::ScaleOut {
                target: ElementId(0),
                theta_exp: 115.0,
                vm: VmId(2),
                share: 0.25
            }
        );
    }

    #[test]
    fn greedy_scale_out_zero_need_takes_the_fullest_vm() {
        let s = greedy_state();
        match greedy_scale_out(&s, ElementId(0), 0.0, 95.0).unwrap() {
            ScalingDecision::ScaleOut { vm, .. } => assert_eq!(vm, VmId(1)),
            other => panic!("expected scale-out, got {other:?}"),
        }
    }

    #[test]
    fn greedy_scale_out_falls_back_to_a_new_vm() {
        let s = greedy_state();
        match greedy_scale_out(&s, ElementId(0), 0.6, 150.0).unwrap() {
            ScalingDecision::NewVm { vm, .. } => assert_eq!(vm, VmId(4)),
            other => panic!("expected a new VM, got {other:?}"),
        }
    }

    #[test]
    fn apply_scale_out_splits_chains_through_the_replica() {
        // E0→E1→E2 all on vm0 at 90 MB/s; vm1 idle. Scaling E1 out must
        // reroute part of the chain via the replica with at most two new
        // crossings, and leave every VM within capacity.
        let s = state(
            vec![linear(0.004), linear(0.003), linear(0.004)],
            vec![chain("c", &[0, 1, 2], 90.0)],
            &[0, 0, 0],
            2,
        );
        let d = ScalingDecision::ScaleOut {
            target: ElementId(1),
            theta_exp: 120.0,
            vm: VmId(1),
            share: 0.09,
        };
        let next = apply_decision(&s, &d).unwrap();
        assert_eq!(next.graph.num_elements(), 4);
        assert_eq!(next.graph.num_chains(), 2);
        let replica = ElementId(3);
        assert_eq!(next.placement.vm_of(replica).unwrap(), VmId(1));
        // Both halves together still carry the original offered traffic.
        let split_total = next.graph.element_load(ElementId(1)).unwrap()
            + next.graph.element_load(replica).unwrap();
        assert_relative_eq!(split_total, 90.0, epsilon = 1e-9);
        let rerouted = &next.graph.chains()[1];
        let grown = crossings_of_chain(&rerouted.elements, next.placement.assignment());
        assert!(grown <= 2, "rerouted branch picked up {grown} crossings");
        for k in 0..next.placement.num_vms() {
            assert!(next.vm_utilization(VmId(k)).unwrap() <= 1.0 + CAP_EPS);
        }
    }

    #[test]
    fn apply_new_vm_grows_the_pool() {
        let s = greedy_state();
        let d = greedy_scale_out(&s, ElementId(0), 0.6, 150.0).unwrap();
        let next = apply_decision(&s, &d).unwrap();
        assert_eq!(next.placement.num_vms(), 5);
        assert_eq!(next.placement.vm_of(ElementId(4)).unwrap(), VmId(4));
    }

    #[test]
    fn stale_push_aside_is_refused() {
        let s = state(
            vec![linear(0.002); 5],
            vec![chain("c", &[0, 1, 2, 3, 4], 100.0)],
            &[0, 1, 1, 1, 2],
            3,
        );
        let decision = match push_aside_scale_up(&s, ElementId(2), 150.0).unwrap() {
            PushAsideOutcome::Apply(d) => d,
            other => panic!("expected a push-aside, got {other:?}"),
        };
        let mut moved = s.clone();
        moved.placement.move_element(ElementId(1), VmId(2)).unwrap();
        assert!(matches!(
            apply_decision(&moved, &decision),
            Err(ScalerError::StaleDecision(_))
        ));
    }
}
