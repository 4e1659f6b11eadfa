//! Node-fault experiments: single runs, critical-node scans, proportional
//! gain curves and (G_P, G_I) sweeps.
//!
//! Every run shares one timeline. The grid relaxes from rest on
//! `[0, relax_time]`, the faulted node is disconnected at `t_on`,
//! reconnected at `t_off`, and integration continues to `t_end`. Outcomes are
//! aggregated over the "during" window `(t_on, t_off]` and the "after"
//! window `(t_off, t_end]`; Δω is time-averaged over every step of a window.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlLayers, Event, SimConfig, SimState, Simulator};
use crate::error::{Error, Result};
use crate::grid::PowerGrid;
use crate::metrics::{self, MetricsSample};
use crate::topology::{validate_layer, ControlLayer};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSchedule {
    pub node: usize,
    pub t_on: f64,
    pub t_off: f64,
    pub cyber_cofail: bool,
}

impl PerturbationSchedule {
    /// Fault on `node` over `[200, 1200]` without cyber co-failure.
    pub fn new(node: usize) -> Self {
        Self {
            node,
            t_on: 200.0,
            t_off: 1200.0,
            cyber_cofail: false,
        }
    }

    pub fn window(node: usize, t_on: f64, t_off: f64) -> Self {
        Self {
            node,
            t_on,
            t_off,
            cyber_cofail: false,
        }
    }

    pub fn with_cyber_cofail(mut self, on: bool) -> Self {
        self.cyber_cofail = on;
        self
    }

    pub fn validate(&self, n: usize, config: &SimConfig) -> Result<()> {
        if self.node >= n {
            return Err(Error::NodeOutOfRange { node: self.node, n });
        }
        if !(0.0 <= self.t_on && self.t_on < self.t_off && self.t_off <= config.t_end) {
            return Err(Error::InvalidConfig(format!(
                "schedule needs 0 <= t_on < t_off <= t_end, got t_on = {}, t_off = {}, t_end = {}",
                self.t_on, self.t_off, config.t_end
            )));
        }
        if self.t_on < config.relax_time {
            return Err(Error::InvalidConfig(format!(
                "t_on = {} falls inside the relaxation window of length {}",
                self.t_on, config.relax_time
            )));
        }
        Ok(())
    }
}

/// Summary of one fault run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    /// Overload trips in `(t_on, t_off]`.
    pub n_c_during: usize,
    /// All overload trips by `t_end`.
    pub n_c_after: usize,
    pub n_active_final: usize,
    pub mean_delta_omega_during: f64,
    pub mean_delta_omega_after: f64,
    pub final_r: f64,
    /// False when the integration produced non-finite values.
    pub stable: bool,
    /// False when the unperturbed grid did not settle (trip before `t_on`
    /// or Δω above tolerance at the end of relaxation).
    pub feasible: bool,
    pub failure: Option<String>,
}

impl RunOutcome {
    fn failed(feasible: bool, stable: bool, reason: String) -> Self {
        Self {
            n_c_during: 0,
            n_c_after: 0,
            n_active_final: 0,
            mean_delta_omega_during: f64::NAN,
            mean_delta_omega_after: f64::NAN,
            final_r: f64::NAN,
            stable,
            feasible,
            failure: Some(reason),
        }
    }

    pub fn ok(&self) -> bool {
        self.stable && self.feasible
    }
}

/// Full phase-space snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSample {
    pub t: f64,
    pub theta: Vec<f64>,
    pub omega: Vec<f64>,
    pub u_integral: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ScenarioRun {
    pub outcome: RunOutcome,
    pub series: Vec<MetricsSample>,
    /// Filled only with `SimConfig::record_states`.
    pub states: Vec<StateSample>,
    pub events: Vec<Event>,
    pub final_state: SimState,
}

struct Recorder {
    enabled: bool,
    stride: u64,
    keep_states: bool,
    series: Vec<MetricsSample>,
    states: Vec<StateSample>,
}

impl Recorder {
    fn new(config: &SimConfig, enabled: bool) -> Self {
        Self {
            enabled,
            stride: config.record_stride as u64,
            keep_states: config.record_states,
            series: Vec::new(),
            states: Vec::new(),
        }
    }

    fn observe(&mut self, sim: &mut Simulator<'_>) {
        if !self.enabled || !sim.state().step.is_multiple_of(self.stride) {
            return;
        }
        self.series.push(sim.sample());
        if self.keep_states {
            let s = sim.state();
            self.states.push(StateSample {
                t: s.t,
                theta: s.theta.clone(),
                omega: s.omega.clone(),
                u_integral: s.u_integral.clone(),
            });
        }
    }
}

fn check_inputs(grid: &PowerGrid, layers: &ControlLayers) -> Result<()> {
    let violations: Vec<String> = grid.validate().iter().map(|v| v.to_string()).collect();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    for (name, layer) in [("proportional", &layers.proportional), ("integral", &layers.integral)] {
        let v = validate_layer(layer, grid.node_count());
        if !v.is_empty() {
            return Err(Error::Validation(
                v.iter().map(|x| format!("{name} layer: {x}")).collect(),
            ));
        }
    }
    Ok(())
}

/// Integrates the unperturbed grid over the relaxation window. `Err` holds
/// the reason the grid is infeasible.
fn relax_phase(sim: &mut Simulator<'_>, rec: &mut Recorder) -> Result<std::result::Result<(), String>> {
    let config = sim.config().clone();
    let steps = config.steps_to(config.relax_time);
    rec.observe(sim);
    while sim.state().step < steps {
        let tripped = sim.step()?;
        rec.observe(sim);
        if !tripped.is_empty() {
            return Ok(Err(format!(
                "{} line(s) tripped during relaxation at t = {}",
                tripped.len(),
                sim.state().t
            )));
        }
    }
    let dw = sim.delta_omega();
    if !(dw < config.relax_tolerance) {
        return Ok(Err(format!(
            "relaxation did not settle: delta_omega = {dw:e} >= {:e}",
            config.relax_tolerance
        )));
    }
    Ok(Ok(()))
}

/// Continues a relaxed simulation through the fault schedule.
fn perturb_phase(sim: &mut Simulator<'_>, schedule: &PerturbationSchedule, rec: &mut Recorder) -> RunOutcome {
    let config = sim.config().clone();
    let on = config.steps_to(schedule.t_on);
    let off = config.steps_to(schedule.t_off);
    let end = config.steps_to(config.t_end);

    let (mut sum_during, mut n_during) = (0.0, 0u64);
    let (mut sum_after, mut n_after) = (0.0, 0u64);
    let mut trips_during = 0;

    loop {
        let k = sim.state().step;
        if k == on {
            if let Err(e) = sim.remove_node(schedule.node, schedule.cyber_cofail) {
                return RunOutcome::failed(true, true, e.to_string());
            }
        }
        if k == off {
            if let Err(e) = sim.reconnect_node(schedule.node) {
                return RunOutcome::failed(true, true, e.to_string());
            }
        }
        if k >= end {
            break;
        }
        let tripped = match sim.step() {
            Ok(t) => t,
            Err(e) => return RunOutcome::failed(true, false, e.to_string()),
        };
        rec.observe(sim);
        let k = sim.state().step;
        if k <= on {
            if !tripped.is_empty() {
                return RunOutcome::failed(
                    false,
                    true,
                    format!(
                        "{} line(s) tripped before the fault at t = {}",
                        tripped.len(),
                        sim.state().t
                    ),
                );
            }
        } else if k <= off {
            trips_during += tripped.len();
            sum_during += sim.delta_omega();
            n_during += 1;
        } else {
            sum_after += sim.delta_omega();
            n_after += 1;
        }
    }

    let state = sim.state();
    let counts = metrics::count_failures(&state.line_status);
    RunOutcome {
        n_c_during: trips_during,
        n_c_after: state.trip_count(),
        n_active_final: counts.n_active,
        mean_delta_omega_during: sum_during / n_during as f64,
        mean_delta_omega_after: sum_after / n_after as f64,
        final_r: sim.order_parameter().0,
        stable: true,
        feasible: true,
        failure: None,
    }
}

/// Relax, disconnect `schedule.node` at `t_on`, reconnect at `t_off`, run to
/// `t_end`. Infeasible relaxations and numerical blow-ups are reported in
/// the outcome; invalid inputs are errors.
pub fn run_scenario(
    grid: &PowerGrid,
    proportional: &ControlLayer,
    integral: &ControlLayer,
    schedule: &PerturbationSchedule,
    config: &SimConfig,
) -> Result<ScenarioRun> {
    let layers = ControlLayers::new(proportional.clone(), integral.clone());
    run_with_layers(grid, &layers, schedule, config)
}

pub fn run_with_layers(
    grid: &PowerGrid,
    layers: &ControlLayers,
    schedule: &PerturbationSchedule,
    config: &SimConfig,
) -> Result<ScenarioRun> {
    execute(grid, layers, schedule, config, true)
}

fn execute(
    grid: &PowerGrid,
    layers: &ControlLayers,
    schedule: &PerturbationSchedule,
    config: &SimConfig,
    record: bool,
) -> Result<ScenarioRun> {
    check_inputs(grid, layers)?;
    config.validate()?;
    schedule.validate(grid.node_count(), config)?;
    let mut sim = Simulator::new(grid, layers, config.clone())?;
    let mut rec = Recorder::new(config, record);

    let outcome = match relax_phase(&mut sim, &mut rec) {
        Ok(Ok(())) => perturb_phase(&mut sim, schedule, &mut rec),
        Ok(Err(reason)) => RunOutcome::failed(false, true, reason),
        Err(e) => RunOutcome::failed(true, false, e.to_string()),
    };
    let final_state = sim.into_state();
    Ok(ScenarioRun {
        outcome,
        series: rec.series,
        states: rec.states,
        events: final_state.events.clone(),
        final_state,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeScan {
    pub node: usize,
    pub n_c: usize,
    pub outcome: RunOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalScan {
    pub nodes: Vec<NodeScan>,
}

impl CriticalScan {
    /// Nodes whose removal caused at least one overload trip during the
    /// fault window.
    pub fn critical(&self) -> Vec<usize> {
        self.nodes.iter().filter(|s| s.n_c != 0).map(|s| s.node).collect()
    }

    pub fn failures(&self) -> Vec<&NodeScan> {
        self.nodes.iter().filter(|s| !s.outcome.ok()).collect()
    }
}

/// Fault window and post-fault observation used by [`critical_scan`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanWindow {
    pub duration: f64,
    pub observe_after: f64,
}

impl Default for ScanWindow {
    fn default() -> Self {
        Self {
            duration: 1000.0,
            observe_after: 200.0,
        }
    }
}

impl ScanWindow {
    /// Schedule for `node`: fault at the end of relaxation. Also returns the
    /// config with `t_end` set accordingly.
    pub fn schedule(&self, node: usize, config: &SimConfig) -> (PerturbationSchedule, SimConfig) {
        let t_on = config.relax_time;
        let t_off = t_on + self.duration;
        let config = SimConfig {
            t_end: t_off + self.observe_after,
            ..config.clone()
        };
        (PerturbationSchedule::window(node, t_on, t_off), config)
    }
}

/// Removes every node in turn from the uncontrolled grid and records the
/// overload trips while it is out. The relaxation is computed once and
/// shared.
pub fn critical_scan(grid: &PowerGrid, config: &SimConfig, window: ScanWindow) -> Result<CriticalScan> {
    let n = grid.node_count();
    let layers = ControlLayers::disabled(n);
    check_inputs(grid, &layers)?;
    let (_, run_config) = window.schedule(0, config);
    run_config.validate()?;

    let mut sim = Simulator::new(grid, &layers, run_config.clone())?;
    let mut off = Recorder::new(&run_config, false);
    let relaxed = match relax_phase(&mut sim, &mut off) {
        Ok(Ok(())) => Ok(sim.into_state()),
        Ok(Err(reason)) => Err(RunOutcome::failed(false, true, reason)),
        Err(e) => Err(RunOutcome::failed(true, false, e.to_string())),
    };

    let nodes = (0..n)
        .into_par_iter()
        .map(|node| {
            let (schedule, _) = window.schedule(node, config);
            let outcome = match &relaxed {
                Err(failed) => failed.clone(),
                Ok(state) => {
                    let mut sim = Simulator::from_state(grid, &layers, run_config.clone(), state.clone())
                        .expect("inputs checked above");
                    let mut off = Recorder::new(&run_config, false);
                    perturb_phase(&mut sim, &schedule, &mut off)
                }
            };
            NodeScan {
                node,
                n_c: outcome.n_c_during,
                outcome,
            }
        })
        .collect();
    Ok(CriticalScan { nodes })
}

/// Proportional-only runs (G_I = 0) over `gp_values` for one faulted node.
/// The curve value is `n_c_during`, the count used by [`critical_scan`].
pub fn gp_curve(
    grid: &PowerGrid,
    proportional: &ControlLayer,
    schedule: &PerturbationSchedule,
    gp_values: &[f64],
    config: &SimConfig,
) -> Result<Vec<(f64, RunOutcome)>> {
    let layers = ControlLayers::new(proportional.clone(), ControlLayer::disabled(grid.node_count()));
    check_inputs(grid, &layers)?;
    check_gains(gp_values, "gp_values", false)?;
    gp_values
        .par_iter()
        .map(|&gp| {
            let run = execute(grid, &layers.with_gains(gp, 0.0), schedule, config, false)?;
            Ok((gp, run.outcome))
        })
        .collect()
}

fn check_gains(values: &[f64], name: &str, strictly_increasing: bool) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidConfig(format!("{name} is empty")));
    }
    if let Some(g) = values.iter().find(|g| !(**g >= 0.0) || !g.is_finite()) {
        return Err(Error::InvalidConfig(format!("{name} contains invalid gain {g}")));
    }
    if strictly_increasing && values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidConfig(format!("{name} must be strictly increasing")));
    }
    Ok(())
}

/// A dense (G_P, G_I) sweep around a base scenario. Layer gains in
/// `layers` are ignored.
#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub gp_values: Vec<f64>,
    pub gi_values: Vec<f64>,
    pub grid: PowerGrid,
    pub layers: ControlLayers,
    pub schedule: PerturbationSchedule,
    pub config: SimConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        check_gains(&self.gp_values, "gp_values", true)?;
        check_gains(&self.gi_values, "gi_values", true)?;
        check_inputs(&self.grid, &self.layers)?;
        self.config.validate()?;
        self.schedule.validate(self.grid.node_count(), &self.config)
    }
}

/// Outcomes in row-major order: one row per G_I value, one column per G_P.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub gp_values: Vec<f64>,
    pub gi_values: Vec<f64>,
    pub cells: Vec<RunOutcome>,
}

impl SweepResult {
    pub fn get(&self, gp_index: usize, gi_index: usize) -> &RunOutcome {
        &self.cells[gi_index * self.gp_values.len() + gp_index]
    }

    /// `(G_P, G_I, outcome)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64, &RunOutcome)> + '_ {
        let cols = self.gp_values.len();
        self.cells
            .iter()
            .enumerate()
            .map(move |(k, o)| (self.gp_values[k % cols], self.gi_values[k / cols], o))
    }
}

/// Runs every cell of `spec` on a pool of `workers` threads. Cells are
/// merged by index, so the result does not depend on `workers`.
pub fn sweep_gains(spec: &SweepSpec, workers: usize) -> Result<SweepResult> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let cols = spec.gp_values.len();
    let total = cols * spec.gi_values.len();
    let cells = pool.install(|| {
        (0..total)
            .into_par_iter()
            .map(|k| {
                let layers = spec
                    .layers
                    .with_gains(spec.gp_values[k % cols], spec.gi_values[k / cols]);
                match execute(&spec.grid, &layers, &spec.schedule, &spec.config, false) {
                    Ok(run) => run.outcome,
                    Err(e) => RunOutcome::failed(true, false, e.to_string()),
                }
            })
            .collect()
    });
    Ok(SweepResult {
        gp_values: spec.gp_values.clone(),
        gi_values: spec.gi_values.clone(),
        cells,
    })
}
