//! Consolidating elements onto single-core VMs.
//!
//! Every chain hop whose endpoints sit on different VMs holds the chain's
//! whole stream up for the inter-VM transfer time, so a crossing hop costs
//! `Θ_j · t_d` delayed bytes; co-located hops are free at placement time.
//! Minimizing the total over all chains subject to per-core capacity is a
//! 0-1 quadratic assignment; [`optimize_placement`] solves it exactly, and
//! [`greedy_place`] / [`random_place`] provide the baselines it is measured
//! against.

mod solver;

pub use solver::{optimize_placement, optimize_placement_with, SolverOptions};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Chain, Element, ElementId, GraphError, ProcessingGraph, VmId};
use crate::profile::ProfileError;

/// Slack for floating-point capacity comparisons: a VM is full when its load
/// exceeds `1 + CAP_EPS`.
pub(crate) const CAP_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PlacementError {
    #[error("no feasible assignment of {elements} elements onto {vms} VMs")]
    Infeasible { elements: usize, vms: usize },
    #[error("placement does not cover element {0}")]
    Unassigned(ElementId),
    #[error("vm index {vm} out of range ({num_vms} VMs)")]
    VmOutOfRange { vm: usize, num_vms: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

/// Transfer-time constants used for delayed-bytes and latency accounting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Seconds a byte is held up on an inter-VM crossing (t_d).
    pub inter_vm_delay: f64,
    /// Seconds for an intra-VM hand-off between co-located elements.
    pub intra_vm_delay: f64,
}

impl CostModel {
    pub fn new(inter_vm_delay: f64, intra_vm_delay: f64) -> Self {
        assert!(
            inter_vm_delay.is_finite()
                && intra_vm_delay.is_finite()
                && intra_vm_delay >= 0.0
                && inter_vm_delay > intra_vm_delay,
            "inter-VM delay must exceed the intra-VM hand-off"
        );
        CostModel { inter_vm_delay, intra_vm_delay }
    }
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel::new(1e-3, 3e-6)
    }
}

/// Assignment of every element to a VM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    assignment: Vec<VmId>,
    num_vms: usize,
}

impl Placement {
    pub fn new(assignment: Vec<VmId>, num_vms: usize) -> Result<Self, PlacementError> {
        if let Some(bad) = assignment.iter().find(|vm| vm.0 >= num_vms) {
            return Err(PlacementError::VmOutOfRange { vm: bad.0, num_vms });
        }
        Ok(Placement { assignment, num_vms })
    }

    pub fn vm_of(&self, i: ElementId) -> Result<VmId, PlacementError> {
        self.assignment.get(i.0).copied().ok_or(PlacementError::Unassigned(i))
    }

    pub fn assignment(&self) -> &[VmId] {
        &self.assignment
    }

    pub fn num_vms(&self) -> usize {
        self.num_vms
    }

    /// Number of VMs actually hosting at least one element.
    pub fn vms_in_use(&self) -> usize {
        let mut used = vec![false; self.num_vms];
        for vm in &self.assignment {
            used[vm.0] = true;
        }
        used.iter().filter(|&&u| u).count()
    }

    pub fn elements_on(&self, k: VmId) -> Vec<ElementId> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, vm)| **vm == k)
            .map(|(i, _)| ElementId(i))
            .collect()
    }

    /// Allocate a fresh VM and return its id.
    pub fn add_vm(&mut self) -> VmId {
        self.num_vms += 1;
        VmId(self.num_vms - 1)
    }

    pub fn move_element(&mut self, i: ElementId, to: VmId) -> Result<(), PlacementError> {
        if to.0 >= self.num_vms {
            return Err(PlacementError::VmOutOfRange { vm: to.0, num_vms: self.num_vms });
        }
        match self.assignment.get_mut(i.0) {
            Some(slot) => {
                *slot = to;
                Ok(())
            }
            None => Err(PlacementError::Unassigned(i)),
        }
    }

    /// Register a newly created element (a replica) on `vm`. Ids are dense,
    /// so the new element must be the next index.
    pub fn push_element(&mut self, vm: VmId) -> Result<ElementId, PlacementError> {
        if vm.0 >= self.num_vms {
            return Err(PlacementError::VmOutOfRange { vm: vm.0, num_vms: self.num_vms });
        }
        self.assignment.push(vm);
        Ok(ElementId(self.assignment.len() - 1))
    }
}

/// Instantaneous delayed bytes of a placement in MB: `Σ_j Θ_j · t_d` over
/// every chain hop whose endpoints sit on different VMs.
pub fn total_delayed_bytes(
    graph: &ProcessingGraph,
    placement: &Placement,
    cost: &CostModel,
) -> Result<f64, PlacementError> {
    let mut db = 0.0;
    for chain in graph.chains() {
        for pair in chain.elements.windows(2) {
            if placement.vm_of(pair[0])? != placement.vm_of(pair[1])? {
                db += chain.throughput * cost.inter_vm_delay;
            }
        }
    }
    Ok(db)
}

/// CPU load of VM `k`: the sum of each hosted element's share demand at its
/// full multi-chain load.
pub fn cpu_load(
    graph: &ProcessingGraph,
    placement: &Placement,
    k: VmId,
) -> Result<f64, PlacementError> {
    let mut load = 0.0;
    for (i, element) in graph.elements().iter().enumerate() {
        let id = ElementId(i);
        if placement.vm_of(id)? == k {
            load += element.profile.cpu_for_throughput(graph.element_load(id)?)?;
        }
    }
    Ok(load)
}

/// How one overloaded element was scaled out by [`split_overloaded`].
#[derive(Clone, Debug, PartialEq)]
pub struct SplitEvent {
    pub element: ElementId,
    /// Replica ids in the result graph; the original id is kept as the first
    /// replica.
    pub replicas: Vec<ElementId>,
    /// Whether an oversized member chain had to be split evenly across
    /// dedicated replicas before bin-packing the rest.
    pub fell_back_to_even_split: bool,
}

/// Result of [`split_overloaded`].
#[derive(Clone, Debug)]
pub struct SplitOutcome {
    pub graph: ProcessingGraph,
    pub events: Vec<SplitEvent>,
    /// For every chain of the result graph: the index of the chain in the
    /// input graph it descends from, and the fraction of that chain's
    /// traffic it carries.
    pub chain_lineage: Vec<(usize, f64)>,
}

/// Replace every element whose offered load exceeds what one core can
/// process with enough replicas that no replica is overloaded.
///
/// An element fed by a single chain is split evenly: the chain is divided
/// into `⌈Θ/φ⁻¹(1)⌉` equal sub-streams, one replica each. An element shared
/// by several chains keeps whole chains together: the chains are packed onto
/// the minimum number of replicas first-fit-decreasing; a member chain that
/// alone exceeds one core falls back to the even split first.
pub fn split_overloaded(graph: &ProcessingGraph) -> Result<SplitOutcome, PlacementError> {
    let mut elements: Vec<Element> = graph.elements().to_vec();
    let mut chains: Vec<Chain> = graph.chains().to_vec();
    let mut lineage: Vec<(usize, f64)> = (0..chains.len()).map(|j| (j, 1.0)).collect();
    let mut events = Vec::new();

    let mut i = 0;
    while i < elements.len() {
        let cap = elements[i].profile.max_throughput();
        let members: Vec<usize> = (0..chains.len())
            .filter(|&j| chains[j].elements.contains(&ElementId(i)))
            .collect();
        let load: f64 = members.iter().map(|&j| chains[j].throughput).sum();
        if load <= cap || members.is_empty() {
            i += 1;
            continue;
        }

        let mut fell_back = false;
        // Oversized member chains first: divide the whole chain into equal
        // sub-streams so every piece fits one core.
        let mut pieces: Vec<usize> = Vec::new();
        for &j in &members {
            if chains[j].throughput > cap {
                if members.len() > 1 {
                    fell_back = true;
                }
                let parts = (chains[j].throughput / cap).ceil() as usize;
                let share = chains[j].throughput / parts as f64;
                let (src, frac) = lineage[j];
                chains[j].throughput = share;
                lineage[j] = (src, frac / parts as f64);
                pieces.push(j);
                for p in 1..parts {
                    let mut copy = chains[j].clone();
                    copy.name = format!("{}#{}", copy.name, p);
                    chains.push(copy);
                    lineage.push((src, frac / parts as f64));
                    pieces.push(chains.len() - 1);
                }
            } else {
                pieces.push(j);
            }
        }

        // First-fit-decreasing over the member streams, one bin per replica.
        pieces.sort_by(|&a, &b| {
            chains[b]
                .throughput
                .partial_cmp(&chains[a].throughput)
                .expect("non-finite throughput")
                .then(a.cmp(&b))
        });
        let mut bins: Vec<(f64, Vec<usize>)> = Vec::new();
        for j in pieces {
            let t = chains[j].throughput;
            match bins.iter_mut().find(|(used, _)| *used + t <= cap) {
                Some((used, members)) => {
                    *used += t;
                    members.push(j);
                }
                None => bins.push((t, vec![j])),
            }
        }

        // Replica 0 keeps the original id; the rest are fresh elements.
        let mut replicas = vec![ElementId(i)];
        for (r, (_, bin)) in bins.iter().enumerate() {
            let replica = if r == 0 {
                ElementId(i)
            } else {
                elements.push(Element {
                    name: format!("{}#{}", elements[i].name, r),
                    profile: elements[i].profile.clone(),
                });
                ElementId(elements.len() - 1)
            };
            if r > 0 {
                replicas.push(replica);
            }
            for &j in bin {
                for slot in chains[j].elements.iter_mut() {
                    if *slot == ElementId(i) {
                        *slot = replica;
                    }
                }
            }
        }
        events.push(SplitEvent { element: ElementId(i), replicas, fell_back_to_even_split: fell_back });
        i += 1;
    }

    Ok(SplitOutcome { graph: ProcessingGraph::new(elements, chains), events, chain_lineage: lineage })
}

/// Walk the chains in declared order and drop each element onto the first
/// VM that still has room for it (first fit). Elements on no chain are
/// appended in id order. Fails only when no VM can host the next element.
pub fn greedy_place(
    graph: &ProcessingGraph,
    num_vms: usize,
    _cost: &CostModel,
) -> Result<Placement, PlacementError> {
    let n = graph.num_elements();
    let infeasible = || PlacementError::Infeasible { elements: n, vms: num_vms };
    if num_vms == 0 {
        return if n == 0 { Placement::new(Vec::new(), 0) } else { Err(infeasible()) };
    }
    let mut assignment: Vec<Option<VmId>> = vec![None; n];
    let mut vm_load = vec![0.0f64; num_vms];

    let mut order: Vec<ElementId> = Vec::new();
    for chain in graph.chains() {
        order.extend(chain.elements.iter().copied());
    }
    order.extend((0..n).map(ElementId));

    for i in order {
        if i.0 >= n || assignment[i.0].is_some() {
            continue;
        }
        let need = graph.profile(i)?.cpu_for_throughput(graph.element_load(i)?)?;
        let Some(k) = (0..num_vms).find(|&k| vm_load[k] + need <= 1.0 + CAP_EPS) else {
            return Err(infeasible());
        };
        vm_load[k] += need;
        assignment[i.0] = Some(VmId(k));
    }
    Placement::new(assignment.into_iter().map(|vm| vm.unwrap()).collect(), num_vms)
}

/// Assign each element, in id order, to a VM drawn uniformly among those
/// with room left for it. Same seed, same placement.
pub fn random_place(
    graph: &ProcessingGraph,
    num_vms: usize,
    seed: u64,
) -> Result<Placement, PlacementError> {
    use rand::Rng;
    use rand::SeedableRng;

    let n = graph.num_elements();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = Vec::with_capacity(n);
    let mut vm_load = vec![0.0f64; num_vms];
    for i in 0..n {
        let id = ElementId(i);
        let need = graph.profile(id)?.cpu_for_throughput(graph.element_load(id)?)?;
        let candidates: Vec<usize> =
            (0..num_vms).filter(|&k| vm_load[k] + need <= 1.0 + CAP_EPS).collect();
        if candidates.is_empty() {
            return Err(PlacementError::Infeasible { elements: n, vms: num_vms });
        }
        let k = candidates[rng.gen_range(0..candidates.len())];
        vm_load[k] += need;
        assignment.push(VmId(k));
    }
    Placement::new(assignment, num_vms)
}
