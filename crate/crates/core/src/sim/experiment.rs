//! Monte-Carlo placement comparison.
//!
//! Each trial redraws every chain's offered throughput uniformly from the
//! scenario's experiment range, then places the same graph three ways:
//! the exact optimizer, the chain-order greedy and the random baseline.
//! A placement attempt that cannot fit the load is a *failure*; successful
//! ones are scored by their delayed bytes. Trials are seeded individually
//! (splitmix over the master seed and the trial index) and aggregated in
//! trial order, so the report is byte-identical no matter how many worker
//! threads run it.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::ChainId;
use crate::placement::{
    greedy_place, optimize_placement, random_place, total_delayed_bytes, Placement,
    PlacementError,
};
use crate::scenario::Scenario;

use super::SimError;

/// The three placement strategies a trial compares, in report order.
pub const PLACEMENT_LABELS: [&str; 3] = ["coco", "greedy", "random"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    /// Sampled offered throughput per chain (MB/s).
    pub thetas: Vec<f64>,
    /// Delayed bytes per strategy ([`PLACEMENT_LABELS`] order); `None`
    /// means the strategy could not fit the load.
    pub delayed_bytes: [Option<f64>; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyStats {
    pub policy: String,
    pub trials: usize,
    pub failures: usize,
    pub failure_rate: f64,
    /// Mean delayed bytes over this strategy's successful trials.
    pub mean_delayed_bytes: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub trials: usize,
    pub seed: u64,
    pub stats: Vec<PolicyStats>,
    /// Mean-delayed-bytes ratio of the random baseline over the optimizer.
    pub random_over_coco: Option<f64>,
    pub records: Vec<TrialRecord>,
}

impl ExperimentReport {
    pub fn stat(&self, label: &str) -> &PolicyStats {
        self.stats.iter().find(|s| s.policy == label).expect("unknown strategy label")
    }
}

fn splitmix64(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn score(
    scenario: &Scenario,
    graph: &crate::graph::ProcessingGraph,
    placement: Result<Placement, PlacementError>,
) -> Option<f64> {
    let placement = placement.ok()?;
    total_delayed_bytes(graph, &placement, &scenario.cost).ok()
}

fn run_trial(scenario: &Scenario, seed: u64, trial: usize) -> Result<TrialRecord, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed, 2 * trial as u64));
    let mut graph = scenario.graph.clone();
    let mut thetas = Vec::with_capacity(graph.num_chains());
    for j in 0..graph.num_chains() {
        let theta =
            rng.gen_range(scenario.experiment.theta_min..scenario.experiment.theta_max);
        graph.set_chain_throughput(ChainId(j), theta)?;
        thetas.push(theta);
    }
    let delayed_bytes = [
        score(scenario, &graph, optimize_placement(&graph, scenario.num_vms, &scenario.cost)),
        score(scenario, &graph, greedy_place(&graph, scenario.num_vms, &scenario.cost)),
        score(
            scenario,
            &graph,
            random_place(&graph, scenario.num_vms, splitmix64(seed, 2 * trial as u64 + 1)),
        ),
    ];
    Ok(TrialRecord { trial, thetas, delayed_bytes })
}

pub fn run_placement_experiment(
    scenario: &Scenario,
    trials: usize,
    seed: u64,
    jobs: usize,
) -> Result<ExperimentReport, SimError> {
    let records: Vec<TrialRecord> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| SimError::InvalidInput(format!("cannot start {jobs} workers: {e}")))?;
        pool.install(|| {
            (0..trials)
                .into_par_iter()
                .map(|i| run_trial(scenario, seed, i))
                .collect::<Result<Vec<_>, _>>()
        })?
    } else {
        let mut out = Vec::with_capacity(trials);
        for i in 0..trials {
            out.push(run_trial(scenario, seed, i)?);
        }
        out
    };

    let mut stats = Vec::with_capacity(PLACEMENT_LABELS.len());
    for (k, label) in PLACEMENT_LABELS.iter().enumerate() {
        let mut failures = 0usize;
        let mut sum = 0.0f64;
        let mut successes = 0usize;
        for r in &records {
            match r.delayed_bytes[k] {
                Some(db) => {
                    sum += db;
                    successes += 1;
                }
                None => failures += 1,
            }
        }
        stats.push(PolicyStats {
            policy: (*label).into(),
            trials,
            failures,
            failure_rate: failures as f64 / trials.max(1) as f64,
            mean_delayed_bytes: (successes > 0).then(|| sum / successes as f64),
        });
    }
    let random_over_coco = match (stats[2].mean_delayed_bytes, stats[0].mean_delayed_bytes) {
        (Some(r), Some(c)) if c > 0.0 => Some(r / c),
        _ => None,
    };
    Ok(ExperimentReport { trials, seed, stats, random_over_coco, records })
}
