//! Python extension module for the consolidation simulator.
//!
//! Mirrors the CLI surface in-process: load or parse a scenario, place it,
//! run the period-driven simulator, sweep sampled traffic. Structured
//! results come back as JSON strings (the same documents the CLI writes),
//! so Python callers get plain dicts via `json.loads` instead of a parallel
//! class hierarchy.
//!
//!     import coco_sim, json
//!     scn = coco_sim.Scenario.load("scenarios/topo1.toml")
//!     doc = json.loads(scn.place("opt"))
//!     metrics = json.loads(scn.simulate("coco", doc["assignment"]))

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use coco_core::placement::{
    greedy_place, optimize_placement, random_place, split_overloaded, total_delayed_bytes,
    PlacementError,
};
use coco_core::scenario::{load_scenario, parse_scenario, Scenario as CoreScenario};
use coco_core::sim::{run_placement_experiment, run_with_placement, Policy};
use coco_core::{ElementProfile, Placement, VmId};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Affine throughput→CPU profile of one element type.
#[pyclass(frozen)]
#[derive(Clone)]
struct Profile {
    inner: ElementProfile,
}

#[pymethods]
impl Profile {
    #[new]
    fn new(label: &str, intercept: f64, slope: f64) -> PyResult<Self> {
        Ok(Profile { inner: ElementProfile::new(label, intercept, slope).map_err(value_err)? })
    }

    /// The stock classifier measurement (a = 0.00048, b = 0.0042).
    #[staticmethod]
    fn classifier() -> Self {
        Profile { inner: ElementProfile::classifier() }
    }

    /// The stock sender measurement (a = -0.022, b = 0.0013).
    #[staticmethod]
    fn sender() -> Self {
        Profile { inner: ElementProfile::sender() }
    }

    #[getter]
    fn label(&self) -> &str {
        &self.inner.label
    }

    #[getter]
    fn intercept(&self) -> f64 {
        self.inner.intercept
    }

    #[getter]
    fn slope(&self) -> f64 {
        self.inner.slope
    }

    /// CPU share needed for `v` MB/s, clamped into [0, 1].
    fn cpu_for_throughput(&self, v: f64) -> PyResult<f64> {
        self.inner.cpu_for_throughput(v).map_err(value_err)
    }

    /// Throughput a share sustains; raises outside the invertible range.
    fn throughput_for_cpu(&self, r: f64) -> PyResult<f64> {
        self.inner.throughput_for_cpu(r).map_err(value_err)
    }

    /// Saturating variant of the inverse: starved shares give 0.
    fn service_rate(&self, r: f64) -> f64 {
        self.inner.service_rate(r)
    }

    fn max_throughput(&self) -> f64 {
        self.inner.max_throughput()
    }

    fn __repr__(&self) -> String {
        format!(
            "Profile('{}', intercept={}, slope={})",
            self.inner.label, self.inner.intercept, self.inner.slope
        )
    }
}

/// Least-squares fit over `(throughput_mbps, cpu_share)` samples.
/// Returns `(Profile, r_squared)`.
#[pyfunction]
#[pyo3(signature = (samples, label="fitted"))]
fn fit_profile(samples: Vec<(f64, f64)>, label: &str) -> PyResult<(Profile, f64)> {
    let fit = coco_core::profile::fit_profile(label, &samples).map_err(value_err)?;
    Ok((Profile { inner: fit.profile }, fit.r_squared))
}

/// A loaded scenario: the processing graph, the VM pool and every knob the
/// simulator reads.
#[pyclass]
struct Scenario {
    inner: CoreScenario,
}

#[pymethods]
impl Scenario {
    /// Read a scenario TOML file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Scenario { inner: load_scenario(path.as_ref()).map_err(value_err)? })
    }

    /// Parse scenario TOML from a string.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Scenario { inner: parse_scenario(text, "<python>").map_err(value_err)? })
    }

    #[getter]
    fn num_vms(&self) -> usize {
        self.inner.num_vms
    }

    #[getter]
    fn num_elements(&self) -> usize {
        self.inner.graph.num_elements()
    }

    #[getter]
    fn num_chains(&self) -> usize {
        self.inner.graph.num_chains()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// Simulated length in seconds.
    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration
    }

    #[getter]
    fn element_names(&self) -> Vec<String> {
        self.inner.graph.elements().iter().map(|e| e.name.clone()).collect()
    }

    #[getter]
    fn chain_names(&self) -> Vec<String> {
        self.inner.graph.chains().iter().map(|c| c.name.clone()).collect()
    }

    /// Compute a placement ("opt", "greedy" or "random") and return the same
    /// JSON document `coco place` writes. Infeasibility is not an exception:
    /// the document comes back with `feasible = false`.
    #[pyo3(signature = (policy="opt"))]
    fn place(&self, policy: &str) -> PyResult<String> {
        let split = split_overloaded(&self.inner.graph).map_err(value_err)?;
        let graph = &split.graph;
        let placed = match policy {
            "opt" => optimize_placement(graph, self.inner.num_vms, &self.inner.cost),
            "greedy" => greedy_place(graph, self.inner.num_vms, &self.inner.cost),
            "random" => random_place(graph, self.inner.num_vms, self.inner.seed),
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown placement policy '{other}' (try opt, greedy or random)"
                )))
            }
        };
        let elements: Vec<String> = graph.elements().iter().map(|e| e.name.clone()).collect();
        let doc = match placed {
            Ok(p) => {
                let db = total_delayed_bytes(graph, &p, &self.inner.cost).map_err(value_err)?;
                serde_json::json!({
                    "policy": policy,
                    "feasible": true,
                    "num_vms": p.num_vms(),
                    "elements": elements,
                    "assignment": p.assignment().iter().map(|v| v.0).collect::<Vec<_>>(),
                    "total_delayed_bytes": db,
                })
            }
            Err(PlacementError::Infeasible { .. }) => serde_json::json!({
                "policy": policy,
                "feasible": false,
                "num_vms": self.inner.num_vms,
                "elements": elements,
                "assignment": serde_json::Value::Null,
                "total_delayed_bytes": serde_json::Value::Null,
            }),
            Err(e) => return Err(value_err(e)),
        };
        serde_json::to_string_pretty(&doc).map_err(value_err)
    }

    /// Instantaneous delayed bytes (MB) of an element→VM assignment, indexed
    /// like the `elements` list of [`Scenario::place`]'s document.
    fn delayed_bytes(&self, assignment: Vec<usize>) -> PyResult<f64> {
        let split = split_overloaded(&self.inner.graph).map_err(value_err)?;
        let placement = Placement::new(assignment.into_iter().map(VmId).collect(), self.inner.num_vms)
            .map_err(value_err)?;
        total_delayed_bytes(&split.graph, &placement, &self.inner.cost).map_err(value_err)
    }

    /// Run the period-driven simulator and return the metrics JSON. `policy`
    /// is one of coco, traditional_scale_out, greedy_place, random_place;
    /// `placement` optionally pins the starting assignment (as produced by
    /// [`Scenario::place`]).
    #[pyo3(signature = (policy="coco", placement=None))]
    fn simulate(&self, policy: &str, placement: Option<Vec<usize>>) -> PyResult<String> {
        let policy: Policy = policy.parse().map_err(value_err)?;
        let start = placement
            .map(|raw| Placement::new(raw.into_iter().map(VmId).collect(), self.inner.num_vms))
            .transpose()
            .map_err(value_err)?;
        let metrics = run_with_placement(&self.inner, policy, start).map_err(value_err)?;
        serde_json::to_string_pretty(&metrics).map_err(value_err)
    }

    /// Compare the placement policies over sampled traffic and return the
    /// report JSON. Defaults come from the scenario; results are identical
    /// for any `jobs`.
    #[pyo3(signature = (trials=None, seed=None, jobs=1))]
    fn experiment(&self, trials: Option<usize>, seed: Option<u64>, jobs: usize) -> PyResult<String> {
        if jobs == 0 {
            return Err(PyValueError::new_err("jobs must be at least 1"));
        }
        let report = run_placement_experiment(
            &self.inner,
            trials.unwrap_or(self.inner.experiment.trials),
            seed.unwrap_or(self.inner.seed),
            jobs,
        )
        .map_err(value_err)?;
        serde_json::to_string_pretty(&report).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario({} elements, {} chains, {} VMs)",
            self.inner.graph.num_elements(),
            self.inner.graph.num_chains(),
            self.inner.num_vms
        )
    }
}

#[pymodule]
fn coco_sim(_py: Python<'_>, m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Profile>()?;
    m.add_class::<Scenario>()?;
    m.add_function(wrap_pyfunction!(fit_profile, m)?)?;
    Ok(())
}
