//! Python bindings. Node indices are 0-based here, unlike the CLI and the
//! text formats.

use std::collections::BTreeSet;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use swinggrid::io;
use swinggrid::scenario::{self, PerturbationSchedule, RunOutcome, ScanWindow, SweepSpec};
use swinggrid::topology::validate_layer;
use swinggrid::{
    derive_extended, derive_local, gen_er, Adjacency, ControlLayer, ControlLayers, EventKind, IntegralForm,
    MetricsScope, ParameterPreset, Pinning, PowerBalance, PowerGrid, SimConfig,
};

fn err(e: swinggrid::Error) -> PyErr {
    use swinggrid::Error as E;
    match e {
        E::Io(_) => PyOSError::new_err(e.to_string()),
        E::NonFinite { .. } | E::RelaxationTrip { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn pinning(name: &str) -> PyResult<Pinning> {
    match name {
        "all" => Ok(Pinning::All),
        "generators" => Ok(Pinning::Generators),
        "none" => Ok(Pinning::None),
        _ => Err(PyValueError::new_err(format!("unknown pinning {name:?}"))),
    }
}

#[pyclass(name = "Grid", module = "pyswinggrid", skip_from_py_object, frozen)]
#[derive(Clone)]
struct Grid {
    inner: PowerGrid,
}

#[pymethods]
impl Grid {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        io::load_grid(path).map(|inner| Grid { inner }).map_err(err)
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        io::parse_grid(text).map(|inner| Grid { inner }).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::save_grid(path, &self.inner).map_err(err)
    }

    fn to_text(&self) -> String {
        io::format_grid(&self.inner)
    }

    /// Copy with the named parameter preset applied.
    #[pyo3(signature = (name, balance = "exact"))]
    fn with_preset(&self, name: &str, balance: &str) -> PyResult<Self> {
        let preset = ParameterPreset::from_name(name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown preset {name:?}")))?;
        let balance = match balance {
            "exact" => PowerBalance::Exact,
            "literal" => PowerBalance::Literal,
            _ => return Err(PyValueError::new_err(format!("unknown balance {balance:?}"))),
        };
        Ok(Grid {
            inner: preset.apply(&self.inner, balance),
        })
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn n_lines(&self) -> usize {
        self.inner.line_count()
    }

    fn generators(&self) -> Vec<usize> {
        self.inner.generators()
    }

    fn powers(&self) -> Vec<f64> {
        self.inner.nodes.iter().map(|n| n.power).collect()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges()
    }

    fn power_imbalance(&self) -> f64 {
        self.inner.power_imbalance()
    }

    /// Violations as strings; empty when the grid is valid.
    fn validate(&self) -> Vec<String> {
        self.inner.validate().iter().map(|v| v.to_string()).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Grid(nodes={}, generators={}, lines={})",
            self.inner.node_count(),
            self.inner.generator_count(),
            self.inner.line_count()
        )
    }
}

#[pyclass(name = "Layer", module = "pyswinggrid", skip_from_py_object, frozen)]
#[derive(Clone)]
struct Layer {
    inner: ControlLayer,
}

impl Layer {
    fn derived(
        grid: &Grid,
        base: Option<&Layer>,
        pin: &str,
        f: fn(&Adjacency, &BTreeSet<usize>) -> swinggrid::Result<Adjacency>,
    ) -> PyResult<Self> {
        let base = base
            .map(|l| l.inner.adjacency.clone())
            .unwrap_or_else(|| Adjacency::from_grid(&grid.inner));
        let gens: BTreeSet<usize> = grid.inner.generators().into_iter().collect();
        let adjacency = f(&base, &gens).map_err(err)?;
        Ok(Layer {
            inner: ControlLayer::new(adjacency, pinning(pin)?.mask(&grid.inner), 0.0),
        })
    }
}

#[pymethods]
impl Layer {
    /// The physical line graph as a control layer.
    #[staticmethod]
    #[pyo3(signature = (grid, pinning = "all"))]
    fn physical(grid: &Grid, pinning: &str) -> PyResult<Self> {
        let mask = self::pinning(pinning)?.mask(&grid.inner);
        Ok(Layer {
            inner: ControlLayer::new(Adjacency::from_grid(&grid.inner), mask, 0.0),
        })
    }

    #[staticmethod]
    #[pyo3(signature = (grid, base = None, pinning = "generators"))]
    fn local(grid: &Grid, base: Option<&Layer>, pinning: &str) -> PyResult<Self> {
        Layer::derived(grid, base, pinning, derive_local)
    }

    #[staticmethod]
    #[pyo3(signature = (grid, base = None, pinning = "generators"))]
    fn extended(grid: &Grid, base: Option<&Layer>, pinning: &str) -> PyResult<Self> {
        Layer::derived(grid, base, pinning, derive_extended)
    }

    #[staticmethod]
    #[pyo3(signature = (grid, p, seed, pinning = "all"))]
    fn erdos_renyi(grid: &Grid, p: f64, seed: u64, pinning: &str) -> PyResult<Self> {
        let adjacency = gen_er(grid.inner.node_count(), p, seed).map_err(err)?;
        Ok(Layer {
            inner: ControlLayer::new(adjacency, self::pinning(pinning)?.mask(&grid.inner), 0.0),
        })
    }

    #[staticmethod]
    fn disabled(n: usize) -> Self {
        Layer {
            inner: ControlLayer::disabled(n),
        }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        io::load_layer(path).map(|inner| Layer { inner }).map_err(err)
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        io::parse_layer(text).map(|inner| Layer { inner }).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::save_layer(path, &self.inner).map_err(err)
    }

    fn to_text(&self) -> String {
        io::format_layer(&self.inner)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn pinning(&self) -> Vec<bool> {
        self.inner.pinning.clone()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.adjacency.edges()
    }

    fn edge_count(&self) -> usize {
        self.inner.adjacency.edge_count()
    }

    fn validate(&self, n: usize) -> Vec<String> {
        validate_layer(&self.inner, n).iter().map(|v| v.to_string()).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Layer(n={}, links={}, pinned={})",
            self.inner.n(),
            self.inner.adjacency.edge_count(),
            self.inner.pinned_count()
        )
    }
}

/// Integration and observation settings.
#[pyclass(name = "Config", module = "pyswinggrid", skip_from_py_object, get_all, set_all)]
#[derive(Clone)]
struct Config {
    dt: f64,
    t_end: f64,
    record_stride: usize,
    relax_time: f64,
    relax_tolerance: f64,
    integral_form: String,
    scope: String,
}

#[pymethods]
impl Config {
    #[new]
    #[pyo3(signature = (dt = 0.01, t_end = 2000.0, record_stride = 100, relax_time = 200.0,
                        relax_tolerance = 1e-3, integral_form = "frequency".to_string(), scope = "active".to_string()))]
    fn new(
        dt: f64,
        t_end: f64,
        record_stride: usize,
        relax_time: f64,
        relax_tolerance: f64,
        integral_form: String,
        scope: String,
    ) -> Self {
        Config {
            dt,
            t_end,
            record_stride,
            relax_time,
            relax_tolerance,
            integral_form,
            scope,
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(dt={}, t_end={}, record_stride={}, relax_time={}, relax_tolerance={}, integral_form={:?}, scope={:?})",
            self.dt,
            self.t_end,
            self.record_stride,
            self.relax_time,
            self.relax_tolerance,
            self.integral_form,
            self.scope
        )
    }
}

impl Config {
    fn sim(config: Option<&Config>) -> PyResult<SimConfig> {
        let c = config
            .cloned()
            .unwrap_or_else(|| Config::new(0.01, 2000.0, 100, 200.0, 1e-3, "frequency".into(), "active".into()));
        let integral_form = match c.integral_form.as_str() {
            "frequency" => IntegralForm::FrequencyIntegral,
            "phase" => IntegralForm::PhaseDifference,
            s => return Err(PyValueError::new_err(format!("unknown integral form {s:?}"))),
        };
        let metrics_scope = match c.scope.as_str() {
            "active" => MetricsScope::ActiveNodesOnly,
            "all" => MetricsScope::AllNodes,
            s => return Err(PyValueError::new_err(format!("unknown scope {s:?}"))),
        };
        Ok(SimConfig {
            dt: c.dt,
            t_end: c.t_end,
            record_stride: c.record_stride,
            integral_form,
            metrics_scope,
            relax_time: c.relax_time,
            relax_tolerance: c.relax_tolerance,
            record_states: false,
        })
    }
}

#[pyclass(name = "Outcome", module = "pyswinggrid", skip_from_py_object, frozen, get_all)]
#[derive(Clone)]
struct Outcome {
    n_c_during: usize,
    n_c_after: usize,
    n_active_final: usize,
    mean_delta_omega_during: f64,
    mean_delta_omega_after: f64,
    final_r: f64,
    stable: bool,
    feasible: bool,
    failure: Option<String>,
}

impl From<&RunOutcome> for Outcome {
    fn from(o: &RunOutcome) -> Self {
        Outcome {
            n_c_during: o.n_c_during,
            n_c_after: o.n_c_after,
            n_active_final: o.n_active_final,
            mean_delta_omega_during: o.mean_delta_omega_during,
            mean_delta_omega_after: o.mean_delta_omega_after,
            final_r: o.final_r,
            stable: o.stable,
            feasible: o.feasible,
            failure: o.failure.clone(),
        }
    }
}

#[pymethods]
impl Outcome {
    fn ok(&self) -> bool {
        self.stable && self.feasible
    }

    fn __repr__(&self) -> String {
        format!(
            "Outcome(n_c_during={}, n_c_after={}, n_active_final={}, final_r={:.4}, stable={}, feasible={})",
            self.n_c_during, self.n_c_after, self.n_active_final, self.final_r, self.stable, self.feasible
        )
    }
}

fn default_layers(
    grid: &PowerGrid,
    prop: Option<&Layer>,
    int: Option<&Layer>,
) -> PyResult<(ControlLayer, ControlLayer)> {
    let p = match prop {
        Some(l) => l.inner.clone(),
        None => ControlLayer::new(Adjacency::from_grid(grid), vec![true; grid.node_count()], 0.0),
    };
    let i = match int {
        Some(l) => l.inner.clone(),
        None => {
            let gens: BTreeSet<usize> = grid.generators().into_iter().collect();
            let local = derive_local(&Adjacency::from_grid(grid), &gens).map_err(err)?;
            ControlLayer::new(local, Pinning::Generators.mask(grid), 0.0)
        }
    };
    Ok((p, i))
}

type EventTuple = (f64, &'static str, usize);

/// Relax, remove `node` on `(t_on, t_off]`, reconnect and run to `t_end`.
/// Returns the outcome, a dict of metric columns and the event log as
/// `(t, kind, subject)` tuples.
#[pyfunction]
#[pyo3(signature = (grid, node, gp = 0.0, gi = 0.0, proportional = None, integral = None,
                    t_on = 200.0, t_off = 1200.0, cyber_cofail = false, config = None))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    grid: &Grid,
    node: usize,
    gp: f64,
    gi: f64,
    proportional: Option<&Layer>,
    integral: Option<&Layer>,
    t_on: f64,
    t_off: f64,
    cyber_cofail: bool,
    config: Option<&Config>,
) -> PyResult<(Outcome, Bound<'py, PyDict>, Vec<EventTuple>)> {
    let config = Config::sim(config)?;
    let (p, i) = default_layers(&grid.inner, proportional, integral)?;
    let schedule = PerturbationSchedule::window(node, t_on, t_off).with_cyber_cofail(cyber_cofail);
    let g = &grid.inner;
    let run = py
        .detach(|| scenario::run_scenario(g, &p.with_gain(gp), &i.with_gain(gi), &schedule, &config))
        .map_err(err)?;

    let series = PyDict::new(py);
    let s = &run.series;
    series.set_item("t", s.iter().map(|m| m.t).collect::<Vec<_>>())?;
    series.set_item("r", s.iter().map(|m| m.r).collect::<Vec<_>>())?;
    series.set_item("phi", s.iter().map(|m| m.phi).collect::<Vec<_>>())?;
    series.set_item("delta_omega", s.iter().map(|m| m.delta_omega).collect::<Vec<_>>())?;
    series.set_item("mean_omega", s.iter().map(|m| m.mean_omega).collect::<Vec<_>>())?;
    series.set_item("power_loss", s.iter().map(|m| m.power_loss).collect::<Vec<_>>())?;
    series.set_item("n_failed", s.iter().map(|m| m.n_failed).collect::<Vec<_>>())?;
    series.set_item("n_active_links", s.iter().map(|m| m.n_active_links).collect::<Vec<_>>())?;

    let events = run
        .events
        .iter()
        .map(|e| {
            let kind = match e.kind {
                EventKind::OverloadTrip => "overload_trip",
                EventKind::NodeRemoved => "node_removed",
                EventKind::NodeReconnected => "node_reconnected",
            };
            (e.t, kind, e.subject)
        })
        .collect();
    Ok((Outcome::from(&run.outcome), series, events))
}

/// Removes every node in turn from the uncontrolled grid.
/// Returns `(node, n_c, outcome)` per node.
#[pyfunction]
#[pyo3(signature = (grid, duration = 1000.0, observe_after = 200.0, config = None))]
fn critical_scan(
    py: Python<'_>,
    grid: &Grid,
    duration: f64,
    observe_after: f64,
    config: Option<&Config>,
) -> PyResult<Vec<(usize, usize, Outcome)>> {
    let config = Config::sim(config)?;
    let g = &grid.inner;
    let scan = py
        .detach(|| {
            scenario::critical_scan(
                g,
                &config,
                ScanWindow {
                    duration,
                    observe_after,
                },
            )
        })
        .map_err(err)?;
    Ok(scan
        .nodes
        .iter()
        .map(|s| (s.node, s.n_c, Outcome::from(&s.outcome)))
        .collect())
}

/// Proportional control only, one run per gain.
#[pyfunction]
#[pyo3(signature = (grid, node, gp_values, proportional = None, t_on = 200.0, t_off = 1200.0, config = None))]
#[allow(clippy::too_many_arguments)]
fn gp_curve(
    py: Python<'_>,
    grid: &Grid,
    node: usize,
    gp_values: Vec<f64>,
    proportional: Option<&Layer>,
    t_on: f64,
    t_off: f64,
    config: Option<&Config>,
) -> PyResult<Vec<(f64, Outcome)>> {
    let config = Config::sim(config)?;
    let (p, _) = default_layers(
        &grid.inner,
        proportional,
        Some(&Layer::disabled(grid.inner.node_count())),
    )?;
    let schedule = PerturbationSchedule::window(node, t_on, t_off);
    let g = &grid.inner;
    let curve = py
        .detach(|| scenario::gp_curve(g, &p, &schedule, &gp_values, &config))
        .map_err(err)?;
    Ok(curve.iter().map(|(gp, o)| (*gp, Outcome::from(o))).collect())
}

/// Every `(G_P, G_I)` pair, returned row-major as `(gp, gi, outcome)`.
#[pyfunction]
#[pyo3(signature = (grid, node, gp_values, gi_values, proportional = None, integral = None,
                    t_on = 200.0, t_off = 1200.0, workers = 1, config = None))]
#[allow(clippy::too_many_arguments)]
fn sweep(
    py: Python<'_>,
    grid: &Grid,
    node: usize,
    gp_values: Vec<f64>,
    gi_values: Vec<f64>,
    proportional: Option<&Layer>,
    integral: Option<&Layer>,
    t_on: f64,
    t_off: f64,
    workers: usize,
    config: Option<&Config>,
) -> PyResult<Vec<(f64, f64, Outcome)>> {
    let config = Config::sim(config)?;
    let (p, i) = default_layers(&grid.inner, proportional, integral)?;
    let spec = SweepSpec {
        gp_values,
        gi_values,
        grid: grid.inner.clone(),
        layers: ControlLayers::new(p, i),
        schedule: PerturbationSchedule::window(node, t_on, t_off),
        config,
    };
    let result = py.detach(|| scenario::sweep_gains(&spec, workers)).map_err(err)?;
    Ok(result.iter().map(|(gp, gi, o)| (gp, gi, Outcome::from(o))).collect())
}

#[pymodule]
fn pyswinggrid(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Grid>()?;
    m.add_class::<Layer>()?;
    m.add_class::<Config>()?;
    m.add_class::<Outcome>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(critical_scan, m)?)?;
    m.add_function(wrap_pyfunction!(gp_curve, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    Ok(())
}
