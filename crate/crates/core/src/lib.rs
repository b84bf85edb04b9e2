//! Performance-aware consolidation of modularized service chains onto
//! single-core VMs.
//!
//! The crate models chains of packet-processing elements, places them onto
//! VMs by solving a 0-1 quadratic assignment exactly, scales overloaded
//! elements up (push-aside) or out (greedy replica placement), and schedules
//! CPU between co-located elements by matching their buffer build-up. A
//! deterministic period-driven fluid simulator ties the pieces together and
//! compares the consolidation policy against greedy, random and
//! scale-out-only baselines.

pub mod graph;
pub mod placement;
pub mod profile;
pub mod scaler;
pub mod scenario;
pub mod scheduler;
pub mod sim;

pub use graph::{Chain, ChainId, Element, ElementId, ProcessingGraph, VmId};
pub use placement::{CostModel, Placement};
pub use profile::ElementProfile;
