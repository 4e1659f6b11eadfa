//! Controlled swing-equation dynamics with overload protection.
//!
//! State per node: phase θ, frequency ω and integral control state u^I.
//!
//! ```text
//! dθ_i/dt   = ω_i
//! I_i dω_i/dt = P_i − γ_i ω_i + Σ_{active lines} K_ij sin(θ_j − θ_i) + u^P_i + u^I_i
//! du^I_i/dt = G_I ξ^I_i Σ_j a^I_ij (ω_j − ω_i)
//! ```
//!
//! Integration is classical fixed-step RK4. Line status is frozen during a
//! step; after every completed step the flows are recomputed and every
//! active line with |F| > αK trips at once.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::control::{ConsensusOperator, ControlInputs};
use crate::error::{Error, Result};
use crate::grid::{LineStatus, PowerGrid};
use crate::metrics::{self, MetricsSample, MetricsScope};
use crate::topology::ControlLayer;

/// How the integral layer enters the frequency equation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntegralForm {
    /// u^I is an ODE state driven by frequency differences, u^I(0) = 0.
    FrequencyIntegral,
    /// u^I_i = G_I ξ^I_i Σ_j a^I_ij (θ_j − θ_i), evaluated directly.
    PhaseDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Record one sample every `record_stride` steps.
    pub record_stride: usize,
    pub integral_form: IntegralForm,
    pub metrics_scope: MetricsScope,
    /// Length of the unperturbed relaxation window starting at t = 0.
    pub relax_time: f64,
    /// Largest Δω accepted at the end of relaxation.
    pub relax_tolerance: f64,
    /// Keep full (θ, ω, u^I) snapshots alongside the metric samples.
    pub record_states: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_end: 2000.0,
            record_stride: 100,
            integral_form: IntegralForm::FrequencyIntegral,
            metrics_scope: MetricsScope::ActiveNodesOnly,
            relax_time: 200.0,
            relax_tolerance: 1e-3,
            record_states: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidConfig(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0) {
            return Err(Error::InvalidConfig(format!("t_end must be >= 0, got {}", self.t_end)));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidConfig("record_stride must be >= 1".into()));
        }
        if !(self.relax_time >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "relax_time must be >= 0, got {}",
                self.relax_time
            )));
        }
        Ok(())
    }

    /// Number of whole steps needed to reach time `t` from 0.
    pub fn steps_to(&self, t: f64) -> u64 {
        (t / self.dt).round() as u64
    }
}

/// The proportional and integral layers of a run. Gains live in the layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlLayers {
    pub proportional: ControlLayer,
    pub integral: ControlLayer,
}

impl ControlLayers {
    pub fn new(proportional: ControlLayer, integral: ControlLayer) -> Self {
        Self { proportional, integral }
    }

    /// No control at all.
    pub fn disabled(n: usize) -> Self {
        Self::new(ControlLayer::disabled(n), ControlLayer::disabled(n))
    }

    pub fn with_gains(&self, gp: f64, gi: f64) -> Self {
        Self::new(self.proportional.with_gain(gp), self.integral.with_gain(gi))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    OverloadTrip,
    NodeRemoved,
    NodeReconnected,
}

/// Log entry. `subject` is a line index for trips and a node id otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub subject: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub step: u64,
    pub theta: Vec<f64>,
    pub omega: Vec<f64>,
    pub u_integral: Vec<f64>,
    pub line_status: Vec<LineStatus>,
    pub removed_nodes: BTreeSet<usize>,
    /// Nodes whose controllers are cut out of both control layers.
    pub cyber_masked: Vec<bool>,
    pub events: Vec<Event>,
}

impl SimState {
    /// θ = ω = u^I = 0, all lines active.
    pub fn initial(grid: &PowerGrid) -> Self {
        let n = grid.node_count();
        Self {
            t: 0.0,
            step: 0,
            theta: vec![0.0; n],
            omega: vec![0.0; n],
            u_integral: vec![0.0; n],
            line_status: vec![LineStatus::Active; grid.line_count()],
            removed_nodes: BTreeSet::new(),
            cyber_masked: vec![false; n],
            events: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.theta.len()
    }

    pub fn is_removed(&self, node: usize) -> bool {
        self.removed_nodes.contains(&node)
    }

    pub fn scope(&self, scope: MetricsScope) -> Vec<usize> {
        match scope {
            MetricsScope::AllNodes => (0..self.n()).collect(),
            MetricsScope::ActiveNodesOnly => (0..self.n()).filter(|i| !self.is_removed(*i)).collect(),
        }
    }

    pub fn trip_count(&self) -> usize {
        self.events.iter().filter(|e| e.kind == EventKind::OverloadTrip).count()
    }

    pub fn is_finite(&self) -> bool {
        self.theta
            .iter()
            .chain(&self.omega)
            .chain(&self.u_integral)
            .all(|x| x.is_finite())
    }

    fn check_dims(&self, grid: &PowerGrid) -> Result<()> {
        let n = grid.node_count();
        for len in [
            self.theta.len(),
            self.omega.len(),
            self.u_integral.len(),
            self.cyber_masked.len(),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, got: len });
            }
        }
        if self.line_status.len() != grid.line_count() {
            return Err(Error::DimensionMismatch {
                expected: grid.line_count(),
                got: self.line_status.len(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Derivatives {
    pub theta: Vec<f64>,
    pub omega: Vec<f64>,
    pub u_integral: Vec<f64>,
}

/// Signed line flows oriented from the lower to the higher endpoint.
/// Inactive lines and lines at removed nodes report 0.
pub fn compute_flows(grid: &PowerGrid, state: &SimState) -> Vec<f64> {
    grid.lines
        .iter()
        .zip(&state.line_status)
        .map(|(line, status)| {
            let (i, j) = line.endpoints();
            if status.is_active() && !state.is_removed(i) && !state.is_removed(j) {
                line.coupling * (state.theta[j] - state.theta[i]).sin()
            } else {
                0.0
            }
        })
        .collect()
}

/// Active lines whose flow strictly exceeds capacity.
pub fn check_overloads(grid: &PowerGrid, statuses: &[LineStatus], flows: &[f64]) -> Vec<usize> {
    grid.lines
        .iter()
        .enumerate()
        .filter(|&(k, line)| statuses[k].is_active() && flows[k].abs() > line.capacity())
        .map(|(k, _)| k)
        .collect()
}

/// Disconnects `node` and its active lines at time `state.t`. With
/// `cyber_cofail` the node's controllers also drop out of both layers.
pub fn apply_node_removal(state: &mut SimState, grid: &PowerGrid, node: usize, cyber_cofail: bool) -> Result<()> {
    if node >= grid.node_count() {
        return Err(Error::NodeOutOfRange {
            node,
            n: grid.node_count(),
        });
    }
    if !state.removed_nodes.insert(node) {
        return Err(Error::NodeAlreadyRemoved(node));
    }
    for (line, status) in grid.lines.iter().zip(state.line_status.iter_mut()) {
        if line.touches(node) && status.is_active() {
            *status = LineStatus::RemovedByNodeFault;
        }
    }
    if cyber_cofail {
        state.cyber_masked[node] = true;
    }
    state.events.push(Event {
        t: state.t,
        kind: EventKind::NodeRemoved,
        subject: node,
    });
    Ok(())
}

/// Reconnects `node`: its fault-removed lines come back unless the other
/// endpoint is still out; overload trips stay.
pub fn apply_node_reconnection(state: &mut SimState, grid: &PowerGrid, node: usize) -> Result<()> {
    if !state.removed_nodes.remove(&node) {
        return Err(Error::NodeNotRemoved(node));
    }
    for (line, status) in grid.lines.iter().zip(state.line_status.iter_mut()) {
        if line.touches(node) && *status == LineStatus::RemovedByNodeFault {
            let other = if line.a == node { line.b } else { line.a };
            if !state.removed_nodes.contains(&other) {
                *status = LineStatus::Active;
            }
        }
    }
    state.cyber_masked[node] = false;
    state.events.push(Event {
        t: state.t,
        kind: EventKind::NodeReconnected,
        subject: node,
    });
    Ok(())
}

/// Right-hand side with precomputed sparse structures.
struct Model {
    n: usize,
    power: Vec<f64>,
    damping: Vec<f64>,
    inv_inertia: Vec<f64>,
    line_a: Vec<usize>,
    line_b: Vec<usize>,
    coupling: Vec<f64>,
    capacity: Vec<f64>,
    prop: ConsensusOperator,
    integral: ConsensusOperator,
    form: IntegralForm,
}

struct Scratch {
    u_p: Vec<f64>,
    u_i: Vec<f64>,
}

impl Model {
    fn new(grid: &PowerGrid, layers: &ControlLayers, form: IntegralForm) -> Result<Self> {
        let n = grid.node_count();
        for layer in [&layers.proportional, &layers.integral] {
            if layer.n() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: layer.n(),
                });
            }
        }
        let (line_a, line_b): (Vec<usize>, Vec<usize>) = grid.lines.iter().map(|l| l.endpoints()).unzip();
        Ok(Self {
            n,
            power: grid.nodes.iter().map(|x| x.power).collect(),
            damping: grid.nodes.iter().map(|x| x.damping).collect(),
            inv_inertia: grid.nodes.iter().map(|x| 1.0 / x.inertia).collect(),
            line_a,
            line_b,
            coupling: grid.lines.iter().map(|l| l.coupling).collect(),
            capacity: grid.lines.iter().map(|l| l.capacity()).collect(),
            prop: ConsensusOperator::new(&layers.proportional)?,
            integral: ConsensusOperator::new(&layers.integral)?,
            form,
        })
    }

    fn scratch(&self) -> Scratch {
        Scratch {
            u_p: vec![0.0; self.n],
            u_i: vec![0.0; self.n],
        }
    }

    /// Control inputs at a state; zero at removed nodes.
    fn controls(&self, y: &[f64], removed: &[bool], masked: &[bool], s: &mut Scratch) {
        let n = self.n;
        let (theta, rest) = y.split_at(n);
        let (omega, u_int) = rest.split_at(n);
        self.prop.apply(omega, masked, &mut s.u_p);
        match self.form {
            IntegralForm::FrequencyIntegral => s.u_i.copy_from_slice(u_int),
            IntegralForm::PhaseDifference => self.integral.apply(theta, masked, &mut s.u_i),
        }
        for i in 0..n {
            if removed[i] {
                s.u_p[i] = 0.0;
                s.u_i[i] = 0.0;
            }
        }
    }

    /// `y` and `dy` are laid out as `[θ | ω | u^I]`.
    fn eval(&self, active: &[usize], removed: &[bool], masked: &[bool], y: &[f64], dy: &mut [f64], s: &mut Scratch) {
        let n = self.n;
        let theta = &y[..n];
        let omega = &y[n..2 * n];
        self.controls(y, removed, masked, s);

        let (d_theta, rest) = dy.split_at_mut(n);
        let (d_omega, d_int) = rest.split_at_mut(n);
        d_theta.copy_from_slice(omega);
        for i in 0..n {
            d_omega[i] = self.power[i] - self.damping[i] * omega[i] + s.u_p[i] + s.u_i[i];
        }
        for &l in active {
            let (a, b) = (self.line_a[l], self.line_b[l]);
            let f = self.coupling[l] * (theta[b] - theta[a]).sin();
            d_omega[a] += f;
            d_omega[b] -= f;
        }
        for i in 0..n {
            d_omega[i] *= self.inv_inertia[i];
        }
        match self.form {
            IntegralForm::FrequencyIntegral => self.integral.apply(omega, masked, d_int),
            IntegralForm::PhaseDifference => d_int.fill(0.0),
        }
        for i in 0..n {
            if removed[i] {
                d_theta[i] = 0.0;
                d_omega[i] = 0.0;
                d_int[i] = 0.0;
            }
        }
    }

    fn flow(&self, l: usize, theta: &[f64]) -> f64 {
        self.coupling[l] * (theta[self.line_b[l]] - theta[self.line_a[l]]).sin()
    }
}

/// Owns one run: the state plus cached topology and work buffers.
pub struct Simulator<'a> {
    grid: &'a PowerGrid,
    model: Model,
    config: SimConfig,
    state: SimState,
    active_lines: Vec<usize>,
    removed_mask: Vec<bool>,
    scope: Vec<usize>,
    // time is origin_t + (step - origin_step) * dt unless the state is on
    // the uniform grid t = step * dt
    origin: Option<(f64, u64)>,
    y: Vec<f64>,
    k: [Vec<f64>; 4],
    stage: Vec<f64>,
    scratch: Scratch,
}

impl<'a> Simulator<'a> {
    /// Starts from θ = ω = u^I = 0 at t = 0.
    pub fn new(grid: &'a PowerGrid, layers: &ControlLayers, config: SimConfig) -> Result<Self> {
        Self::from_state(grid, layers, config, SimState::initial(grid))
    }

    pub fn from_state(grid: &'a PowerGrid, layers: &ControlLayers, config: SimConfig, state: SimState) -> Result<Self> {
        config.validate()?;
        state.check_dims(grid)?;
        let model = Model::new(grid, layers, config.integral_form)?;
        let n = grid.node_count();
        let scratch = model.scratch();
        let origin = if state.t == state.step as f64 * config.dt {
            None
        } else {
            Some((state.t, state.step))
        };
        let mut sim = Self {
            grid,
            model,
            config,
            state,
            active_lines: Vec::new(),
            removed_mask: vec![false; n],
            scope: Vec::new(),
            origin,
            y: vec![0.0; 3 * n],
            k: std::array::from_fn(|_| vec![0.0; 3 * n]),
            stage: vec![0.0; 3 * n],
            scratch,
        };
        sim.refresh_topology();
        Ok(sim)
    }

    fn refresh_topology(&mut self) {
        self.active_lines = (0..self.grid.line_count())
            .filter(|&l| self.state.line_status[l].is_active())
            .collect();
        for (i, m) in self.removed_mask.iter_mut().enumerate() {
            *m = self.state.removed_nodes.contains(&i);
        }
        self.scope = self.state.scope(self.config.metrics_scope);
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn into_state(self) -> SimState {
        self.state
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn grid(&self) -> &PowerGrid {
        self.grid
    }

    pub fn active_lines(&self) -> &[usize] {
        &self.active_lines
    }

    fn load_y(&mut self) {
        let n = self.model.n;
        self.y[..n].copy_from_slice(&self.state.theta);
        self.y[n..2 * n].copy_from_slice(&self.state.omega);
        self.y[2 * n..].copy_from_slice(&self.state.u_integral);
    }

    /// Derivatives at the current state.
    pub fn derivatives(&mut self) -> Derivatives {
        self.load_y();
        let n = self.model.n;
        let mut dy = vec![0.0; 3 * n];
        self.model.eval(
            &self.active_lines,
            &self.removed_mask,
            &self.state.cyber_masked,
            &self.y,
            &mut dy,
            &mut self.scratch,
        );
        let u_integral = dy.split_off(2 * n);
        let omega = dy.split_off(n);
        Derivatives {
            theta: dy,
            omega,
            u_integral,
        }
    }

    /// Control inputs at the current state.
    pub fn control_inputs(&mut self) -> ControlInputs {
        self.load_y();
        self.model
            .controls(&self.y, &self.removed_mask, &self.state.cyber_masked, &mut self.scratch);
        ControlInputs::new(self.scratch.u_p.clone(), self.scratch.u_i.clone())
    }

    /// One RK4 step followed by the overload check. Returns the lines that
    /// tripped.
    pub fn step(&mut self) -> Result<Vec<usize>> {
        self.step_probed(&mut |_, _| {})
    }

    /// Like [`step`](Self::step), calling `probe(stage, active_lines)`
    /// before each of the four stage evaluations.
    pub fn step_probed(&mut self, probe: &mut dyn FnMut(usize, &[usize])) -> Result<Vec<usize>> {
        let dt = self.config.dt;
        self.load_y();
        let len = self.y.len();
        let weights = [0.5 * dt, 0.5 * dt, dt];
        for stage in 0..4 {
            if stage > 0 {
                let h = weights[stage - 1];
                let prev = &self.k[stage - 1];
                for m in 0..len {
                    self.stage[m] = self.y[m] + h * prev[m];
                }
            } else {
                self.stage.copy_from_slice(&self.y);
            }
            probe(stage, &self.active_lines);
            let (input, k) = (&self.stage, &mut self.k[stage]);
            self.model.eval(
                &self.active_lines,
                &self.removed_mask,
                &self.state.cyber_masked,
                input,
                k,
                &mut self.scratch,
            );
        }
        let sixth = dt / 6.0;
        let [k1, k2, k3, k4] = &self.k;
        for m in 0..len {
            self.y[m] += sixth * (k1[m] + 2.0 * k2[m] + 2.0 * k3[m] + k4[m]);
        }

        self.state.step += 1;
        self.state.t = match self.origin {
            None => self.state.step as f64 * dt,
            Some((t0, s0)) => t0 + (self.state.step - s0) as f64 * dt,
        };
        if self.y.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { t: self.state.t });
        }
        let n = self.model.n;
        self.state.theta.copy_from_slice(&self.y[..n]);
        self.state.omega.copy_from_slice(&self.y[n..2 * n]);
        self.state.u_integral.copy_from_slice(&self.y[2 * n..]);

        let tripped: Vec<usize> = self
            .active_lines
            .iter()
            .copied()
            .filter(|&l| self.model.flow(l, &self.state.theta).abs() > self.model.capacity[l])
            .collect();
        if !tripped.is_empty() {
            let t = self.state.t;
            for &l in &tripped {
                self.state.line_status[l] = LineStatus::TrippedOverload { time: t };
                self.state.events.push(Event {
                    t,
                    kind: EventKind::OverloadTrip,
                    subject: l,
                });
            }
            self.refresh_topology();
        }
        Ok(tripped)
    }

    pub fn remove_node(&mut self, node: usize, cyber_cofail: bool) -> Result<()> {
        apply_node_removal(&mut self.state, self.grid, node, cyber_cofail)?;
        self.refresh_topology();
        Ok(())
    }

    pub fn reconnect_node(&mut self, node: usize) -> Result<()> {
        apply_node_reconnection(&mut self.state, self.grid, node)?;
        self.refresh_topology();
        Ok(())
    }

    pub fn delta_omega(&self) -> f64 {
        if self.scope.is_empty() {
            return 0.0;
        }
        metrics::freq_std(&self.state.omega, &self.scope).unwrap_or(0.0)
    }

    pub fn order_parameter(&self) -> (f64, f64) {
        if self.scope.is_empty() {
            return (0.0, 0.0);
        }
        metrics::order_parameter(&self.state.theta, &self.scope).unwrap_or((0.0, 0.0))
    }

    /// All observables at the current state.
    pub fn sample(&mut self) -> MetricsSample {
        let (r, phi) = self.order_parameter();
        let delta_omega = self.delta_omega();
        let mean_omega = if self.scope.is_empty() {
            0.0
        } else {
            metrics::mean_frequency(&self.state.omega, &self.scope).unwrap_or(0.0)
        };
        let u = self.control_inputs();
        let power_loss = metrics::power_loss(self.grid, &u.u_total).unwrap_or(0.0);
        let counts = metrics::count_failures(&self.state.line_status);
        MetricsSample {
            t: self.state.t,
            r,
            phi,
            delta_omega,
            mean_omega,
            power_loss,
            n_failed: counts.n_failed,
            n_active_links: counts.n_active,
        }
    }
}

/// Derivatives at `state` with the frequency-integral form.
pub fn derivatives(grid: &PowerGrid, layers: &ControlLayers, state: &SimState) -> Result<Derivatives> {
    let config = SimConfig::default();
    Ok(Simulator::from_state(grid, layers, config, state.clone())?.derivatives())
}

/// One RK4 step of size `dt` from `state`, including the overload check.
pub fn rk4_step(grid: &PowerGrid, layers: &ControlLayers, state: &SimState, dt: f64) -> Result<SimState> {
    let config = SimConfig {
        dt,
        ..SimConfig::default()
    };
    let mut sim = Simulator::from_state(grid, layers, config, state.clone())?;
    sim.step()?;
    Ok(sim.into_state())
}

/// Result of integrating the unperturbed grid from rest.
#[derive(Clone, Debug)]
pub struct Relaxation {
    pub state: SimState,
    pub delta_omega: f64,
    pub converged: bool,
}

/// Integrates from θ = ω = u^I = 0 for `config.relax_time` with controllers
/// active. An overload trip is an error; a large final Δω is reported via
/// `converged`.
pub fn relax_to_sync(grid: &PowerGrid, layers: &ControlLayers, config: &SimConfig) -> Result<Relaxation> {
    let mut sim = Simulator::new(grid, layers, config.clone())?;
    let steps = config.steps_to(config.relax_time);
    for _ in 0..steps {
        let tripped = sim.step()?;
        if !tripped.is_empty() {
            return Err(Error::RelaxationTrip {
                t: sim.state().t,
                lines: tripped,
            });
        }
    }
    let delta_omega = sim.delta_omega();
    Ok(Relaxation {
        converged: delta_omega < config.relax_tolerance,
        delta_omega,
        state: sim.into_state(),
    })
}
