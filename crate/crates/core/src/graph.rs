//! Processing-graph model: elements, chains, and the hand-off links between
//! them.
//!
//! A chain is an ordered path of elements sharing one traffic stream. The
//! same element may sit on several chains, in which case its load is the sum
//! of the chains' throughputs. Branching topologies are expressed purely
//! through chain membership; there is no separate edge structure. Each chain
//! keeps a positional index so upstream/downstream hops are O(1).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::ElementProfile;

/// Dense integer handle for an element, unique within one graph.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementId(pub usize);

/// Dense integer handle for a chain.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChainId(pub usize);

/// Dense integer handle for a VM (one VM == one CPU core).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VmId(pub usize);

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

impl fmt::Display for VmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "vm{}", self.0)
    }
}

/// A packet-processing element together with its measured CPU profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub name: String,
    pub profile: ElementProfile,
}

/// An ordered path of elements carrying one traffic stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub name: String,
    pub elements: Vec<ElementId>,
    /// Offered traffic of the chain in MB/s.
    pub throughput: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("unknown element {0}")]
    UnknownElement(ElementId),
    #[error("unknown chain {0}")]
    UnknownChain(ChainId),
    #[error("element {element} is not on chain {chain}")]
    NotOnChain { element: ElementId, chain: ChainId },
}

/// A structural problem found by [`ProcessingGraph::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoElements,
    EmptyChain { chain: ChainId },
    DanglingElement { chain: ChainId, element: ElementId },
    RepeatedElement { chain: ChainId, element: ElementId },
    NegativeThroughput { chain: ChainId, throughput: f64 },
    /// Element takes part in a cycle in the union of all chain edges.
    CyclicHandoff { element: ElementId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoElements => write!(f, "graph has no elements"),
            Violation::EmptyChain { chain } => write!(f, "chain {chain} has no elements"),
            Violation::DanglingElement { chain, element } => {
                write!(f, "chain {chain} references unknown element {element}")
            }
            Violation::RepeatedElement { chain, element } => {
                write!(f, "chain {chain} lists element {element} more than once")
            }
            Violation::NegativeThroughput { chain, throughput } => {
                write!(f, "chain {chain} has negative throughput {throughput}")
            }
            Violation::CyclicHandoff { element } => {
                write!(f, "element {element} takes part in a hand-off cycle")
            }
        }
    }
}

/// Elements plus the chains that connect them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessingGraph {
    elements: Vec<Element>,
    chains: Vec<Chain>,
    /// `chain_pos[j][i]` = position of element `i` within chain `j`, if any.
    /// Rebuilt on construction; skipped for out-of-range ids (those show up
    /// in `validate` instead).
    #[serde(skip)]
    chain_pos: Vec<Vec<Option<u32>>>,
}

impl ProcessingGraph {
    pub fn new(elements: Vec<Element>, chains: Vec<Chain>) -> Self {
        let mut g = ProcessingGraph { elements, chains, chain_pos: Vec::new() };
        g.rebuild_index();
        g
    }

    fn rebuild_index(&mut self) {
        let n = self.elements.len();
        self.chain_pos = self
            .chains
            .iter()
            .map(|chain| {
                let mut pos = vec![None; n];
                for (p, &ElementId(i)) in chain.elements.iter().enumerate() {
                    if i < n && pos[i].is_none() {
                        pos[i] = Some(p as u32);
                    }
                }
                pos
            })
            .collect();
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn num_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn chains(&self) -> &[Chain] {
        &self.chains
    }

    pub fn element(&self, id: ElementId) -> Result<&Element, GraphError> {
        self.elements.get(id.0).ok_or(GraphError::UnknownElement(id))
    }

    pub fn chain(&self, id: ChainId) -> Result<&Chain, GraphError> {
        self.chains.get(id.0).ok_or(GraphError::UnknownChain(id))
    }

    pub fn profile(&self, id: ElementId) -> Result<&ElementProfile, GraphError> {
        Ok(&self.element(id)?.profile)
    }

    /// Whether element `i` is a member of chain `j`.
    pub fn on_chain(&self, i: ElementId, j: ChainId) -> bool {
        self.chain_pos
            .get(j.0)
            .and_then(|pos| pos.get(i.0).copied().flatten())
            .is_some()
    }

    fn position(&self, i: ElementId, j: ChainId) -> Result<usize, GraphError> {
        if j.0 >= self.chains.len() {
            return Err(GraphError::UnknownChain(j));
        }
        if i.0 >= self.elements.len() {
            return Err(GraphError::UnknownElement(i));
        }
        self.chain_pos[j.0][i.0]
            .map(|p| p as usize)
            .ok_or(GraphError::NotOnChain { element: i, chain: j })
    }

    /// The element feeding `i` on chain `j`. The first element of a chain is
    /// its own upstream, so every member has a well-defined feeder.
    pub fn upstream(&self, i: ElementId, j: ChainId) -> Result<ElementId, GraphError> {
        let p = self.position(i, j)?;
        if p == 0 {
            Ok(i)
        } else {
            Ok(self.chains[j.0].elements[p - 1])
        }
    }

    /// The element fed by `i` on chain `j`, or `None` at the chain tail.
    pub fn downstream(&self, i: ElementId, j: ChainId) -> Result<Option<ElementId>, GraphError> {
        let p = self.position(i, j)?;
        Ok(self.chains[j.0].elements.get(p + 1).copied())
    }

    /// Chains that element `i` belongs to, in chain order.
    pub fn chains_of(&self, i: ElementId) -> Vec<ChainId> {
        (0..self.chains.len())
            .map(ChainId)
            .filter(|&j| self.on_chain(i, j))
            .collect()
    }

    /// Total offered traffic through element `i`: the sum of the throughputs
    /// of every chain it belongs to (MB/s).
    pub fn element_load(&self, i: ElementId) -> Result<f64, GraphError> {
        if i.0 >= self.elements.len() {
            return Err(GraphError::UnknownElement(i));
        }
        let mut load = 0.0;
        for j in 0..self.chains.len() {
            if self.on_chain(i, ChainId(j)) {
                load += self.chains[j].throughput;
            }
        }
        Ok(load)
    }

    /// Structural checks. Returns every violation found rather than stopping
    /// at the first, so callers can report them all at once.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.elements.len();
        if n == 0 {
            out.push(Violation::NoElements);
        }
        for (j, chain) in self.chains.iter().enumerate() {
            let cid = ChainId(j);
            if chain.elements.is_empty() {
                out.push(Violation::EmptyChain { chain: cid });
            }
            if chain.throughput < 0.0 || !chain.throughput.is_finite() {
                out.push(Violation::NegativeThroughput { chain: cid, throughput: chain.throughput });
            }
            let mut seen = vec![false; n];
            for &e in &chain.elements {
                if e.0 >= n {
                    out.push(Violation::DanglingElement { chain: cid, element: e });
                } else if seen[e.0] {
                    out.push(Violation::RepeatedElement { chain: cid, element: e });
                } else {
                    seen[e.0] = true;
                }
            }
        }
        // The union of chain edges must stay acyclic, otherwise hand-offs
        // feed back into themselves. Kahn's algorithm over the union; any
        // element left with incoming edges sits on a cycle.
        let mut indeg = vec![0usize; n];
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for chain in &self.chains {
            for pair in chain.elements.windows(2) {
                let (u, v) = (pair[0].0, pair[1].0);
                if u < n && v < n && u != v {
                    adj[u].push(v);
                    indeg[v] += 1;
                }
            }
        }
        let mut queue: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut removed = 0;
        while let Some(u) = queue.pop() {
            removed += 1;
            for &v in &adj[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    queue.push(v);
                }
            }
        }
        if removed < n {
            for (i, &d) in indeg.iter().enumerate() {
                if d > 0 {
                    out.push(Violation::CyclicHandoff { element: ElementId(i) });
                }
            }
        }
        out
    }

    /// Elements ordered so that every chain edge goes forward. Only valid on
    /// acyclic graphs; cyclic leftovers are appended in id order so the
    /// result is always a permutation.
    pub fn topo_order(&self) -> Vec<ElementId> {
        let n = self.elements.len();
        let mut indeg = vec![0usize; n];
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for chain in &self.chains {
            for pair in chain.elements.windows(2) {
                let (u, v) = (pair[0].0, pair[1].0);
                if u < n && v < n && u != v {
                    adj[u].push(v);
                    indeg[v] += 1;
                }
            }
        }
        // Min-heap on id keeps the order deterministic.
        let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<usize>> = (0..n)
            .filter(|&i| indeg[i] == 0)
            .map(std::cmp::Reverse)
            .collect();
        let mut order = Vec::with_capacity(n);
        let mut placed = vec![false; n];
        while let Some(std::cmp::Reverse(u)) = ready.pop() {
            order.push(ElementId(u));
            placed[u] = true;
            for &v in &adj[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    ready.push(std::cmp::Reverse(v));
                }
            }
        }
        for i in 0..n {
            if !placed[i] {
                order.push(ElementId(i));
            }
        }
        order
    }

    /// Look an element up by name.
    pub fn element_by_name(&self, name: &str) -> Option<ElementId> {
        self.elements.iter().position(|e| e.name == name).map(ElementId)
    }

    /// Look a chain up by name.
    pub fn chain_by_name(&self, name: &str) -> Option<ChainId> {
        self.chains.iter().position(|c| c.name == name).map(ChainId)
    }

    /// Copy of the graph with one chain's throughput replaced.
    pub fn with_chain_throughput(&self, j: ChainId, throughput: f64) -> Result<Self, GraphError> {
        let mut g = self.clone();
        g.set_chain_throughput(j, throughput)?;
        Ok(g)
    }

    pub fn set_chain_throughput(&mut self, j: ChainId, throughput: f64) -> Result<(), GraphError> {
        self.chains.get_mut(j.0).ok_or(GraphError::UnknownChain(j))?.throughput = throughput;
        Ok(())
    }

    /// Appends a new element (used when an existing one is replicated).
    pub fn add_element(&mut self, element: Element) -> ElementId {
        self.elements.push(element);
        let id = ElementId(self.elements.len() - 1);
        for pos in &mut self.chain_pos {
            pos.push(None);
        }
        id
    }

    /// Splits chain `j` in two for a replica of `original`: the existing
    /// chain keeps `keep_fraction` of its throughput and its route, while a
    /// new chain named `split_name` takes the rest with `replica` standing
    /// in for `original`. Returns the new chain's id.
    pub fn split_chain_via(
        &mut self,
        j: ChainId,
        original: ElementId,
        replica: ElementId,
        keep_fraction: f64,
        split_name: String,
    ) -> Result<ChainId, GraphError> {
        let pos = self.position(original, j)?;
        if replica.0 >= self.elements.len() {
            return Err(GraphError::UnknownElement(replica));
        }
        let total = self.chains[j.0].throughput;
        let keep = keep_fraction.clamp(0.0, 1.0);
        let mut rerouted = self.chains[j.0].elements.clone();
        rerouted[pos] = replica;
        self.chains[j.0].throughput = total * keep;
        self.chains.push(Chain {
            name: split_name,
            elements: rerouted,
            throughput: total * (1.0 - keep),
        });
        self.rebuild_index();
        Ok(ChainId(self.chains.len() - 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn classifier() -> ElementProfile {
        ElementProfile::classifier()
    }

    /// Two chains through a shared tail: c0 = e0→e1→e4→e5, c1 = e2→e3→e4→e5.
    pub(crate) fn two_chain_graph(t0: f64, t1: f64) -> ProcessingGraph {
        let elements = (0..6)
            .map(|i| Element { name: format!("E{}", i + 1), profile: classifier() })
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

    #[test]
    fn shared_element_load_sums_chain_throughputs() {
        let g = two_chain_graph(100.0, 50.0);
        assert_relative_eq!(g.element_load(ElementId(4)).unwrap(), 150.0);
        assert_relative_eq!(g.element_load(ElementId(0)).unwrap(), 100.0);
        assert_relative_eq!(g.element_load(ElementId(3)).unwrap(), 50.0);
    }

    #[test]
    fn upstream_of_chain_head_is_itself() {
        let g = two_chain_graph(100.0, 50.0);
        assert_eq!(g.upstream(ElementId(0), ChainId(0)).unwrap(), ElementId(0));
        assert_eq!(g.upstream(ElementId(4), ChainId(0)).unwrap(), ElementId(1));
        assert_eq!(g.upstream(ElementId(4), ChainId(1)).unwrap(), ElementId(3));
        assert_eq!(
            g.upstream(ElementId(0), ChainId(1)),
            Err(GraphError::NotOnChain { element: ElementId(0), chain: ChainId(1) })
        );
    }

    #[test]
    fn downstream_walks_to_tail() {
        let g = two_chain_graph(100.0, 50.0);
        assert_eq!(g.downstream(ElementId(4), ChainId(0)).unwrap(), Some(ElementId(5)));
        assert_eq!(g.downstream(ElementId(5), ChainId(0)).unwrap(), None);
    }

    #[test]
    fn validate_flags_dangling_reference() {
        let g = ProcessingGraph::new(
            vec![Element { name: "E1".into(), profile: classifier() }],
            vec![Chain {
                name: "c1".into(),
                elements: vec![ElementId(0), ElementId(8)],
                throughput: 10.0,
            }],
        );
        assert_eq!(
            g.validate(),
            vec![Violation::DanglingElement { chain: ChainId(0), element: ElementId(8) }]
        );
    }

    #[test]
    fn validate_flags_cycle_across_chains() {
        let elements = (0..2)
            .map(|i| Element { name: format!("E{}", i + 1), profile: classifier() })
            .collect();
        let chains = vec![
            Chain { name: "a".into(), elements: vec![ElementId(0), ElementId(1)], throughput: 1.0 },
            Chain { name: "b".into(), elements: vec![ElementId(1), ElementId(0)], throughput: 1.0 },
        ];
        let g = ProcessingGraph::new(elements, chains);
        let v = g.validate();
        assert!(v.contains(&Violation::CyclicHandoff { element: ElementId(0) }));
        assert!(v.contains(&Violation::CyclicHandoff { element: ElementId(1) }));
    }

    #[test]
    fn validate_accepts_shared_tail_graph() {
        assert!(two_chain_graph(100.0, 50.0).validate().is_empty());
    }

    #[test]
    fn split_chain_reroutes_through_the_replica() {
        let mut g = two_chain_graph(100.0, 50.0);
        let replica = g.add_element(Element { name: "E5#r".into(), profile: classifier() });
        let new = g.split_chain_via(ChainId(0), ElementId(4), replica, 0.75, "c1#s".into()).unwrap();
        assert_relative_eq!(g.chain(ChainId(0)).unwrap().throughput, 75.0);
        assert_relative_eq!(g.chain(new).unwrap().throughput, 25.0);
        assert_eq!(
            g.chain(new).unwrap().elements,
            vec![ElementId(0), ElementId(1), replica, ElementId(5)]
        );
        // Loads follow the split: the original keeps its other chain intact.
        assert_relative_eq!(g.element_load(ElementId(4)).unwrap(), 125.0);
        assert_relative_eq!(g.element_load(replica).unwrap(), 25.0);
        assert_eq!(
            g.split_chain_via(ChainId(1), ElementId(0), replica, 0.5, "x".into()),
            Err(GraphError::NotOnChain { element: ElementId(0), chain: ChainId(1) })
        );
    }

    #[test]
    fn topo_order_respects_every_chain() {
        let g = two_chain_graph(1.0, 1.0);
        let order = g.topo_order();
        let rank: Vec<usize> = {
            let mut r = vec![0; 6];
            for (k, e) in order.iter().enumerate() {
                r[e.0] = k;
            }
            r
        };
        for chain in g.chains() {
            for pair in chain.elements.windows(2) {
                assert!(rank[pair[0].0] < rank[pair[1].0]);
            }
        }
    }
}
