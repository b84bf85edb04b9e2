//! Implementation behind the `coco` binary.
//!
//! Every command is a plain function returning the process exit code, so the
//! binary stays a one-line dispatcher and integration tests can call straight
//! into the same paths. Exit codes are part of the contract: 0 on success,
//! 1 for anything wrong with the inputs, 2 when a placement problem is
//! infeasible — the last one lets shell loops count failure rates without
//! scraping output.
//!
//! All output is deterministic: same inputs and seed give byte-identical
//! files and stdout. Nothing here prints timestamps, durations or pointers.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use coco_core::placement::{
    greedy_place, optimize_placement, random_place, split_overloaded, total_delayed_bytes,
    PlacementError,
};
use coco_core::profile::fit_profile;
use coco_core::scenario::{load_scenario, Scenario};
use coco_core::sim::{self, run_placement_experiment, Policy, SimMetrics};
use coco_core::{Placement, VmId};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

/// Output directory used when `--out`/`--out-dir` is not given.
pub const OUT_DIR_ENV: &str = "COCO_OUT_DIR";

#[derive(Parser)]
#[command(name = "coco", version, about = "Consolidation simulator for modularized service chains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Compute an element-to-VM placement for a scenario.
    Place(PlaceArgs),
    /// Run the period-driven simulator and write metrics.
    Simulate(SimulateArgs),
    /// Compare placement policies over sampled traffic.
    Experiment(ExperimentArgs),
    /// Fit a throughput→CPU-share line to measurement samples.
    Fit(FitArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PlacePolicy {
    /// Exact delayed-bytes minimization.
    Opt,
    /// Chain-order first fit.
    Greedy,
    /// Seeded uniform assignment (seed comes from the scenario).
    Random,
}

#[derive(Args)]
pub struct PlaceArgs {
    /// Scenario file (TOML).
    pub scenario: PathBuf,
    #[arg(long, value_enum, default_value = "opt")]
    pub policy: PlacePolicy,
    /// Where to write the placement JSON (default: $COCO_OUT_DIR/placement.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Scenario file (TOML).
    pub scenario: PathBuf,
    #[arg(long, default_value = "coco")]
    pub policy: Policy,
    /// Start from a placement written by `coco place` instead of computing one.
    #[arg(long)]
    pub placement: Option<PathBuf>,
    /// Directory for metrics.json and the series CSVs (default: $COCO_OUT_DIR).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct ExperimentArgs {
    /// Scenario file (TOML).
    pub scenario: PathBuf,
    /// Number of sampled-throughput trials (default: the scenario's).
    #[arg(long)]
    pub trials: Option<usize>,
    /// Sampling seed (default: the scenario's).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results are identical for any value.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Where to write the report JSON (default: $COCO_OUT_DIR/experiment.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct FitArgs {
    /// CSV of samples: throughput MB/s, CPU share. A header row is skipped.
    pub samples: PathBuf,
    #[arg(long, default_value = "fitted")]
    pub label: String,
    /// Where to write the profile JSON (default: $COCO_OUT_DIR/profile.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Placement document shared between `place` and `simulate --placement`.
/// Element order is the runtime graph's (after the overload pre-split), so
/// the assignment can be handed back to the simulator as-is.
#[derive(Debug, Serialize, Deserialize)]
pub struct PlacementDoc {
    pub policy: String,
    pub feasible: bool,
    pub num_vms: usize,
    pub elements: Vec<String>,
    /// VM index per element, in `elements` order; absent when infeasible.
    pub assignment: Option<Vec<usize>>,
    pub total_delayed_bytes: Option<f64>,
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Place(a) => cmd_place(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Fit(a) => cmd_fit(a),
    }
}

fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

fn out_file(explicit: Option<PathBuf>, name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| default_out_dir().join(name))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load(path: &Path) -> Result<Scenario> {
    // Scenario errors already carry the path and every field diagnostic.
    load_scenario(path).map_err(anyhow::Error::from)
}

pub fn cmd_place(args: PlaceArgs) -> Result<i32> {
    let scn = load(&args.scenario)?;
    let split = split_overloaded(&scn.graph)?;
    let graph = &split.graph;
    let policy = match args.policy {
        PlacePolicy::Opt => "opt",
        PlacePolicy::Greedy => "greedy",
        PlacePolicy::Random => "random",
    };
    let placed = match args.policy {
        PlacePolicy::Opt => optimize_placement(graph, scn.num_vms, &scn.cost),
        PlacePolicy::Greedy => greedy_place(graph, scn.num_vms, &scn.cost),
        PlacePolicy::Random => random_place(graph, scn.num_vms, scn.seed),
    };
    let elements: Vec<String> = graph.elements().iter().map(|e| e.name.clone()).collect();
    let out = out_file(args.out, "placement.json");

    let placement = match placed {
        Ok(p) => p,
        Err(e @ PlacementError::Infeasible { .. }) => {
            let doc = PlacementDoc {
                policy: policy.into(),
                feasible: false,
                num_vms: scn.num_vms,
                elements,
                assignment: None,
                total_delayed_bytes: None,
            };
            write_json(&out, &doc)?;
            eprintln!("placement infeasible: {e}");
            return Ok(EXIT_INFEASIBLE);
        }
        Err(e) => return Err(e.into()),
    };

    let db = total_delayed_bytes(graph, &placement, &scn.cost)?;
    let doc = PlacementDoc {
        policy: policy.into(),
        feasible: true,
        num_vms: placement.num_vms(),
        elements,
        assignment: Some(placement.assignment().iter().map(|v| v.0).collect()),
        total_delayed_bytes: Some(db),
    };
    write_json(&out, &doc)?;
    println!(
        "{policy} placement: {} elements on {}/{} VMs, delayed bytes {db:.6} MB",
        graph.num_elements(),
        placement.vms_in_use(),
        placement.num_vms(),
    );
    println!("wrote {}", out.display());
    Ok(EXIT_OK)
}

fn read_placement_doc(path: &Path, scn: &Scenario) -> Result<Placement> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc: PlacementDoc =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let Some(raw) = doc.assignment else {
        bail!("{}: placement is marked infeasible, nothing to simulate", path.display());
    };
    // The doc stores runtime element names; check them against this
    // scenario's runtime graph so a stale file fails loudly.
    let split = split_overloaded(&scn.graph)?;
    let names: Vec<String> = split.graph.elements().iter().map(|e| e.name.clone()).collect();
    if names != doc.elements {
        bail!(
            "{}: element list does not match the scenario (have {:?}, scenario gives {:?})",
            path.display(),
            doc.elements,
            names
        );
    }
    Placement::new(raw.into_iter().map(VmId).collect(), doc.num_vms).map_err(anyhow::Error::from)
}

pub fn cmd_simulate(args: SimulateArgs) -> Result<i32> {
    let scn = load(&args.scenario)?;
    let start = match &args.placement {
        Some(p) => Some(read_placement_doc(p, &scn)?),
        None => None,
    };
    let metrics = match sim::run_with_placement(&scn, args.policy, start) {
        Ok(m) => m,
        Err(e) if is_infeasible(&e) => {
            eprintln!("placement infeasible: {e}");
            return Ok(EXIT_INFEASIBLE);
        }
        Err(e) => return Err(e.into()),
    };

    let dir = args.out_dir.unwrap_or_else(default_out_dir);
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("metrics.json"), &metrics)?;
    write_series(&dir, &metrics)?;

    println!(
        "policy {}: {} periods of {} s, {} of {} VMs in use",
        metrics.policy,
        metrics.periods,
        metrics.period_seconds,
        metrics.final_vms_in_use,
        metrics.vm_pool
    );
    println!(
        "dropped {:.6} MB, delayed bytes {:.6} MB (final), {} scaling events",
        metrics.dropped_mb,
        metrics.final_delayed_bytes,
        metrics.scaling_events.len()
    );
    for c in &metrics.steady_latency_ms {
        println!("steady latency {}: {:.4} ms", c.chain, c.latency_ms);
    }
    println!("wrote {}", dir.join("metrics.json").display());
    Ok(EXIT_OK)
}

fn is_infeasible(e: &sim::SimError) -> bool {
    matches!(e, sim::SimError::Placement(PlacementError::Infeasible { .. }))
}

fn write_series(dir: &Path, m: &SimMetrics) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("latency.csv"))?;
    w.write_record(["period", "time_s", "chain", "latency_ms"])?;
    for r in &m.latency_series {
        w.write_record([
            r.period.to_string(),
            r.time.to_string(),
            r.chain.clone(),
            r.latency_ms.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("vms.csv"))?;
    w.write_record(["period", "time_s", "vms_in_use"])?;
    for r in &m.vm_series {
        w.write_record([r.period.to_string(), r.time.to_string(), r.vms_in_use.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("sched.csv"))?;
    w.write_record(["period", "time_s", "element", "vm", "share", "buffer_mb", "dropped_mb", "c"])?;
    for r in &m.sched_series {
        w.write_record([
            r.period.to_string(),
            r.time.to_string(),
            r.element.clone(),
            r.vm.to_string(),
            r.share.to_string(),
            r.buffer_mb.to_string(),
            r.dropped_mb.to_string(),
            r.c.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_experiment(args: ExperimentArgs) -> Result<i32> {
    let scn = load(&args.scenario)?;
    let trials = args.trials.unwrap_or(scn.experiment.trials);
    let seed = args.seed.unwrap_or(scn.seed);
    if args.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    let report = run_placement_experiment(&scn, trials, seed, args.jobs)?;

    let out = out_file(args.out, "experiment.json");
    write_json(&out, &report)?;

    println!("{:<8} {:>7} {:>9} {:>8} {:>12}", "policy", "trials", "failures", "rate", "mean DB");
    for s in &report.stats {
        let mean = match s.mean_delayed_bytes {
            Some(db) => format!("{db:.6}"),
            None => "-".into(),
        };
        println!(
            "{:<8} {:>7} {:>9} {:>8.4} {:>12}",
            s.policy, s.trials, s.failures, s.failure_rate, mean
        );
    }
    match report.random_over_coco {
        Some(ratio) => println!("random/coco mean-DB ratio: {ratio:.4}"),
        None => println!("random/coco mean-DB ratio: -"),
    }
    println!("wrote {}", out.display());
    Ok(EXIT_OK)
}

pub fn cmd_fit(args: FitArgs) -> Result<i32> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(&args.samples)
        .with_context(|| format!("reading {}", args.samples.display()))?;

    let mut samples: Vec<(f64, f64)> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            bail!("{}: row {} has {} fields, expected 2", args.samples.display(), i + 1, record.len());
        }
        match (record[0].parse::<f64>(), record[1].parse::<f64>()) {
            (Ok(v), Ok(r)) => samples.push((v, r)),
            // Allow one header row.
            _ if i == 0 => continue,
            _ => bail!(
                "{}: row {} is not a pair of numbers: {:?}",
                args.samples.display(),
                i + 1,
                record
            ),
        }
    }

    let fit = fit_profile(&args.label, &samples)?;
    let out = out_file(args.out, "profile.json");
    write_json(&out, &fit)?;
    println!(
        "fitted '{}': a={:.6}, b={:.6}, r2={:.6}",
        fit.profile.label, fit.profile.intercept, fit.profile.slope, fit.r_squared
    );
    println!("wrote {}", out.display());
    Ok(EXIT_OK)
}
