//! Exact assignment solver.
//!
//! The placement objective is quadratic in the binary indicators x_{i,k}
//! (element i on VM k): a chain hop u→v pays its weight unless u and v share
//! a VM, i.e. unless Σ_k x_{u,k}·x_{v,k} = 1. The products linearize the
//! standard way (y ≤ x_u, y ≤ x_v, y ≥ x_u + x_v − 1), which leaves a 0-1
//! ILP whose y variables are fully determined once the x rows are fixed —
//! so the search branches on one element's VM at a time and never needs the
//! y's explicitly.
//!
//! Two search modes share the model. Small instances are enumerated
//! exhaustively in lexicographic order, which makes the documented
//! tie-break (smallest assignment vector among optima) fall out for free.
//! Larger instances run best-first branch-and-bound over canonical
//! assignments: VM labels appear in first-use order, which quotients out
//! the K! relabelings of identical cores, and the canonical vector of an
//! orbit is exactly its lexicographically smallest member, so the
//! tie-break is preserved.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, BTreeMap};

use crate::graph::{ElementId, ProcessingGraph, VmId};
use crate::placement::{CostModel, Placement, PlacementError, CAP_EPS};

/// Knobs for [`optimize_placement_with`].
#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Instances with fewer elements than this are enumerated outright;
    /// from this size on the branch-and-bound search takes over.
    pub exhaustive_threshold: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { exhaustive_threshold: 12 }
    }
}

struct Instance {
    n: usize,
    k: usize,
    node_load: Vec<f64>,
    /// Crossing edges merged over chains, keyed by the later endpoint:
    /// `by_later[i]` lists `(j, w)` with j < i.
    by_later: Vec<Vec<(usize, f64)>>,
}

impl Instance {
    fn build(graph: &ProcessingGraph, k: usize, cost: &CostModel) -> Result<Self, PlacementError> {
        let n = graph.num_elements();
        let mut node_load = Vec::with_capacity(n);
        for i in 0..n {
            let id = ElementId(i);
            node_load.push(graph.profile(id)?.cpu_for_throughput(graph.element_load(id)?)?);
        }
        let mut weights: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for chain in graph.chains() {
            let w = chain.throughput * cost.inter_vm_delay;
            for pair in chain.elements.windows(2) {
                let (a, b) = (pair[0].0, pair[1].0);
                if a != b {
                    *weights.entry((a.min(b), a.max(b))).or_insert(0.0) += w;
                }
            }
        }
        let mut by_later: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (&(lo, hi), &w) in &weights {
            by_later[hi].push((lo, w));
        }
        Ok(Instance { n, k, node_load, by_later })
    }

    /// Extra cost of putting element `i` on `vm` given the prefix `assign`.
    fn delta(&self, i: usize, vm: u32, assign: &[u32]) -> f64 {
        let mut d = 0.0;
        for &(j, w) in &self.by_later[i] {
            if assign[j] != vm {
                d += w;
            }
        }
        d
    }
}

/// Exhaustive lexicographic depth-first search over all k^n assignments.
/// Keeps the first optimum found, which with this ordering is the
/// lexicographically smallest one.
struct Exhaustive<'a> {
    inst: &'a Instance,
    assign: Vec<u32>,
    vm_load: Vec<f64>,
    best: Option<(Vec<u32>, f64)>,
}

impl<'a> Exhaustive<'a> {
    fn run(inst: &'a Instance) -> Option<(Vec<u32>, f64)> {
        let mut s = Exhaustive {
            inst,
            assign: vec![0; inst.n],
            vm_load: vec![0.0; inst.k],
            best: None,
        };
        s.dfs(0, 0.0);
        s.best
    }

    fn dfs(&mut self, depth: usize, cost: f64) {
        if let Some((_, best)) = &self.best {
            if cost >= *best {
                return;
            }
        }
        if depth == self.inst.n {
            self.best = Some((self.assign.clone(), cost));
            return;
        }
        for vm in 0..self.inst.k as u32 {
            if self.vm_load[vm as usize] + self.inst.node_load[depth] > 1.0 + CAP_EPS {
                continue;
            }
            let d = self.inst.delta(depth, vm, &self.assign);
            self.assign[depth] = vm;
            self.vm_load[vm as usize] += self.inst.node_load[depth];
            self.dfs(depth + 1, cost + d);
            self.vm_load[vm as usize] -= self.inst.node_load[depth];
        }
        self.assign[depth] = 0;
    }
}

/// One open node of the best-first search: a canonical assignment prefix.
struct Node {
    bound: f64,
    cost: f64,
    assign: Vec<u32>,
    vm_load: Vec<f64>,
    vms_used: u32,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.assign == other.assign
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.bound.total_cmp(&other.bound).then_with(|| self.assign.cmp(&other.assign))
    }
}

/// Admissible completion bound: every unassigned element must pay at least
/// the cheapest crossing cost to its already-assigned neighbours, minimized
/// over the VMs it could still join. Each edge is charged at its later
/// endpoint, so nothing is counted twice.
fn future_bound(inst: &Instance, depth: usize, assign: &[u32], vms_used: u32) -> f64 {
    let mut lb = 0.0;
    for i in depth..inst.n {
        let mut total = 0.0;
        let mut same = vec![0.0f64; vms_used as usize];
        for &(j, w) in &inst.by_later[i] {
            if j < depth {
                total += w;
                same[assign[j] as usize] += w;
            }
        }
        if total > 0.0 {
            let open_new_vm = (vms_used as usize) < inst.k;
            let mut cheapest = if open_new_vm { total } else { f64::INFINITY };
            for &s in &same {
                cheapest = cheapest.min(total - s);
            }
            lb += cheapest;
        }
    }
    lb
}

/// Best-first branch-and-bound over canonical assignments (VM labels in
/// first-use order). The heap orders by (bound, assignment vector), so the
/// first complete assignment popped is the optimum with the smallest
/// vector.
fn branch_and_bound(inst: &Instance) -> Option<(Vec<u32>, f64)> {
    let mut open: BinaryHeap<Reverse<Node>> = BinaryHeap::new();
    open.push(Reverse(Node {
        bound: 0.0,
        cost: 0.0,
        assign: Vec::new(),
        vm_load: vec![0.0; inst.k],
        vms_used: 0,
    }));
    while let Some(Reverse(node)) = open.pop() {
        let depth = node.assign.len();
        if depth == inst.n {
            return Some((node.assign, node.cost));
        }
        let top = (node.vms_used as usize).min(inst.k - 1) as u32;
        for vm in 0..=top {
            if node.vm_load[vm as usize] + inst.node_load[depth] > 1.0 + CAP_EPS {
                continue;
            }
            let cost = node.cost + inst.delta(depth, vm, &node.assign);
            let mut assign = node.assign.clone();
            assign.push(vm);
            let mut vm_load = node.vm_load.clone();
            vm_load[vm as usize] += inst.node_load[depth];
            let vms_used = node.vms_used.max(vm + 1);
            let bound = cost + future_bound(inst, depth + 1, &assign, vms_used);
            open.push(Reverse(Node { bound, cost, assign, vm_load, vms_used }));
        }
    }
    None
}

/// Exact minimum-delayed-bytes placement of `graph` onto `num_vms`
/// single-core VMs, or `Infeasible` if no assignment satisfies the capacity
/// constraint. Among equal-cost optima the lexicographically smallest
/// assignment vector wins. Expects overloaded elements to have been split
/// beforehand.
pub fn optimize_placement(
    graph: &ProcessingGraph,
    num_vms: usize,
    cost: &CostModel,
) -> Result<Placement, PlacementError> {
    optimize_placement_with(graph, num_vms, cost, &SolverOptions::default())
}

pub fn optimize_placement_with(
    graph: &ProcessingGraph,
    num_vms: usize,
    cost: &CostModel,
    options: &SolverOptions,
) -> Result<Placement, PlacementError> {
    let n = graph.num_elements();
    let infeasible = || PlacementError::Infeasible { elements: n, vms: num_vms };
    if n == 0 {
        return Placement::new(Vec::new(), num_vms);
    }
    if num_vms == 0 {
        return Err(infeasible());
    }
    let inst = Instance::build(graph, num_vms, cost)?;
    // A load sum beyond the total core budget can never fit; skip the search.
    if inst.node_load.iter().sum::<f64>() > num_vms as f64 * (1.0 + CAP_EPS) {
        return Err(infeasible());
    }
    let solved = if n < options.exhaustive_threshold {
        Exhaustive::run(&inst)
    } else {
        branch_and_bound(&inst)
    };
    match solved {
        Some((assign, _)) => {
            Placement::new(assign.into_iter().map(|vm| VmId(vm as usize)).collect(), num_vms)
        }
        None => Err(infeasible()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Chain, Element};
    use crate::placement::total_delayed_bytes;
    use crate::profile::ElementProfile;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn two_chain_graph(t0: f64, t1: f64) -> ProcessingGraph {
        let elements = (0..6)
            .map(|i| Element { name: format!("E{}", i + 1), profile: ElementProfile::classifier() })
            .collect();
        let chains = vec![
            Chain {
                name: "c1".into(),
                elements: vec![ElementId(0), ElementId(1), ElementId(4), ElementId(5)],
                throughput: t0,
            },
            Chain {
                name: "c2".into(),
                elements: vec![ElementId(2), ElementId(3), ElementId(4), ElementId(5)],
                throughput: t1,
            },
        ];
        ProcessingGraph::new(elements, chains)
    }

    /// Plain reference enumeration, deliberately separate from the solver:
    /// walk all k^n assignments in lexicographic order and keep the first
    /// feasible one with the smallest delayed-bytes total.
    fn reference_min(
        graph: &ProcessingGraph,
        k: usize,
        cost: &CostModel,
    ) -> Option<(Vec<usize>, f64)> {
        let n = graph.num_elements();
        let loads: Vec<f64> = (0..n)
            .map(|i| {
                let id = ElementId(i);
                graph
                    .profile(id)
                    .unwrap()
                    .cpu_for_throughput(graph.element_load(id).unwrap())
                    .unwrap()
            })
            .collect();
        let mut assign = vec![0usize; n];
        let mut best: Option<(Vec<usize>, f64)> = None;
        loop {
            let mut vm_load = vec![0.0; k];
            let mut ok = true;
            for i in 0..n {
                vm_load[assign[i]] += loads[i];
                if vm_load[assign[i]] > 1.0 + 1e-9 {
                    ok = false;
                    break;
                }
            }
            if ok {
                let p = Placement::new(assign.iter().map(|&v| VmId(v)).collect(), k).unwrap();
                let db = total_delayed_bytes(graph, &p, cost).unwrap();
                if best.as_ref().map_or(true, |(_, b)| db < *b) {
                    best = Some((assign.clone(), db));
                }
            }
            // Next assignment in lexicographic order.
            let mut i = n;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                assign[i] += 1;
                if assign[i] < k {
                    break;
                }
                assign[i] = 0;
            }
        }
    }

    fn random_graph(rng: &mut impl Rng) -> (ProcessingGraph, usize) {
        let n = rng.gen_range(2..=8);
        let elements: Vec<Element> = (0..n)
            .map(|i| Element {
                name: format!("N{i}"),
                profile: ElementProfile::new(
                    format!("p{i}"),
                    rng.gen_range(0.0..0.01),
                    rng.gen_range(0.002..0.02),
                )
                .unwrap(),
            })
            .collect();
        // Random global ranks keep the union of chains acyclic.
        let mut rank: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            rank.swap(i, rng.gen_range(0..=i));
        }
        let chains = (0..rng.gen_range(1..=3))
            .map(|j| {
                let len = rng.gen_range(1..=n);
                let mut members: Vec<usize> = (0..n).collect();
                for i in (1..n).rev() {
                    members.swap(i, rng.gen_range(0..=i));
                }
                members.truncate(len);
                members.sort_by_key(|&e| rank[e]);
                Chain {
                    name: format!("c{j}"),
                    elements: members.into_iter().map(ElementId).collect(),
                    throughput: rng.gen_range(1.0..60.0),
                }
            })
            .collect();
        (ProcessingGraph::new(elements, chains), rng.gen_range(1..=4))
    }

    #[test]
    fn matches_reference_enumeration_on_random_graphs() {
        let cost = CostModel::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xC0C0);
        for _ in 0..40 {
            let (g, k) = random_graph(&mut rng);
            let expect = reference_min(&g, k, &cost);
            let got = optimize_placement(&g, k, &cost);
            match expect {
                None => assert!(got.is_err(), "solver found a placement where none exists"),
                Some((assign, db)) => {
                    let p = got.expect("solver missed a feasible placement");
                    assert_relative_eq!(
                        total_delayed_bytes(&g, &p, &cost).unwrap(),
                        db,
                        max_relative = 1e-12
                    );
                    let got_assign: Vec<usize> = p.assignment().iter().map(|v| v.0).collect();
                    assert_eq!(got_assign, assign, "tie-break disagrees with reference");
                }
            }
        }
    }

    #[test]
    fn branch_and_bound_agrees_with_exhaustive() {
        let cost = CostModel::default();
        let force_bnb = SolverOptions { exhaustive_threshold: 0 };
        let force_exh = SolverOptions { exhaustive_threshold: usize::MAX };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xBEEF);
        for _ in 0..40 {
            let (g, k) = random_graph(&mut rng);
            let a = optimize_placement_with(&g, k, &cost, &force_bnb);
            let b = optimize_placement_with(&g, k, &cost, &force_exh);
            match (a, b) {
                (Ok(pa), Ok(pb)) => assert_eq!(pa.assignment(), pb.assignment()),
                (Err(_), Err(_)) => {}
                (a, b) => panic!("search modes disagree on feasibility: {a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn picks_minimal_crossing_split() {
        let g = two_chain_graph(50.0, 50.0);
        let cost = CostModel::default();
        let p = optimize_placement(&g, 2, &cost).unwrap();
        // The only split that fits two cores keeps the chain prefixes
        // together and pays the two hops into the shared tail:
        // (50 + 50) MB/s × 1 ms.
        assert_relative_eq!(total_delayed_bytes(&g, &p, &cost).unwrap(), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn single_vm_gets_everything_when_it_fits() {
        let g = two_chain_graph(10.0, 10.0);
        let p = optimize_placement(&g, 1, &CostModel::default()).unwrap();
        assert!(p.assignment().iter().all(|&vm| vm == VmId(0)));
        assert_eq!(total_delayed_bytes(&g, &p, &CostModel::default()).unwrap(), 0.0);
    }

    #[test]
    fn reports_infeasible_when_load_cannot_fit() {
        let g = two_chain_graph(200.0, 200.0);
        assert_eq!(
            optimize_placement(&g, 2, &CostModel::default()),
            Err(PlacementError::Infeasible { elements: 6, vms: 2 })
        );
    }

    #[test]
    fn prefers_lexicographically_smallest_optimum() {
        // Two unconnected elements that cannot share a VM: (0,1) and (1,0)
        // tie, the smaller vector must win.
        let elements = vec![
            Element { name: "A".into(), profile: ElementProfile::new("p", 0.0, 0.006).unwrap() },
            Element { name: "B".into(), profile: ElementProfile::new("p", 0.0, 0.006).unwrap() },
        ];
        let chains = vec![
            Chain { name: "c1".into(), elements: vec![ElementId(0)], throughput: 100.0 },
            Chain { name: "c2".into(), elements: vec![ElementId(1)], throughput: 100.0 },
        ];
        let g = ProcessingGraph::new(elements, chains);
        let p = optimize_placement(&g, 2, &CostModel::default()).unwrap();
        assert_eq!(p.assignment(), &[VmId(0), VmId(1)]);
    }
}
