//! Swing-equation power grid simulation with overload line tripping and
//! distributed proportional/integral control layers.
//!
//! The physical layer ([`grid`]) is a network of generator and load nodes
//! coupled through lines that trip when their flow exceeds a fraction of
//! their maximum. Two control layers ([`topology`], [`control`]) feed back
//! neighbor frequency differences. [`dynamics`] integrates the coupled
//! system, [`metrics`] defines the observables and [`scenario`] runs node
//! fault experiments, critical-node scans and gain sweeps. [`io`] holds the
//! text formats and run manifests.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod scenario;
pub mod topology;

pub use control::{integral_state_derivative, proportional_input, ControlInputs};
pub use dynamics::{
    apply_node_reconnection, apply_node_removal, check_overloads, compute_flows, derivatives, relax_to_sync, rk4_step,
    ControlLayers, Event, EventKind, IntegralForm, Relaxation, SimConfig, SimState, Simulator,
};
pub use error::{Error, Result};
pub use grid::{GridLine, GridNode, LineStatus, NodeKind, ParameterPreset, PowerBalance, PowerGrid};
pub use metrics::{MetricsSample, MetricsScope};
pub use topology::{derive_extended, derive_local, gen_er, Adjacency, ControlLayer, Pinning};
