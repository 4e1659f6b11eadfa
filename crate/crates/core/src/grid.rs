//! Physical layer: generator/load nodes and transmission lines.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Generator,
    Load,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridNode {
    pub id: usize,
    pub kind: NodeKind,
    /// Injected power, positive for generators and negative for loads.
    pub power: f64,
    pub inertia: f64,
    pub damping: f64,
}

impl GridNode {
    pub fn generator(id: usize, power: f64, inertia: f64, damping: f64) -> Self {
        Self {
            id,
            kind: NodeKind::Generator,
            power,
            inertia,
            damping,
        }
    }

    pub fn load(id: usize, power: f64, inertia: f64, damping: f64) -> Self {
        Self {
            id,
            kind: NodeKind::Load,
            power,
            inertia,
            damping,
        }
    }

    pub fn is_generator(&self) -> bool {
        self.kind == NodeKind::Generator
    }
}

/// Operating status of a line during a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LineStatus {
    Active,
    /// Shut down by the overload protection at `time`. Absorbing.
    TrippedOverload {
        time: f64,
    },
    /// Disconnected together with a faulted endpoint; restored on reconnection.
    RemovedByNodeFault,
}

impl LineStatus {
    pub fn is_active(&self) -> bool {
        matches!(self, LineStatus::Active)
    }

    pub fn is_tripped(&self) -> bool {
        matches!(self, LineStatus::TrippedOverload { .. })
    }
}

/// A transmission line. Endpoints are stored as given; flows are always
/// oriented from the lower to the higher index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridLine {
    pub a: usize,
    pub b: usize,
    pub coupling: f64,
    pub capacity_fraction: f64,
}

impl GridLine {
    pub fn new(a: usize, b: usize, coupling: f64, capacity_fraction: f64) -> Self {
        Self {
            a,
            b,
            coupling,
            capacity_fraction,
        }
    }

    /// Endpoints ordered `(low, high)`.
    pub fn endpoints(&self) -> (usize, usize) {
        if self.a <= self.b {
            (self.a, self.b)
        } else {
            (self.b, self.a)
        }
    }

    pub fn capacity(&self) -> f64 {
        self.capacity_fraction * self.coupling
    }

    pub fn touches(&self, node: usize) -> bool {
        self.a == node || self.b == node
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    NodeIdMismatch {
        index: usize,
        id: usize,
    },
    PowerSign {
        node: usize,
        kind: NodeKind,
        power: f64,
    },
    NonPositiveInertia {
        node: usize,
        value: f64,
    },
    NonPositiveDamping {
        node: usize,
        value: f64,
    },
    EndpointOutOfRange {
        line: usize,
        node: usize,
    },
    SelfLoop {
        line: usize,
        node: usize,
    },
    DuplicateLine {
        line: usize,
        first: usize,
        a: usize,
        b: usize,
    },
    NegativeCoupling {
        line: usize,
        value: f64,
    },
    CapacityFraction {
        line: usize,
        value: f64,
    },
}

impl fmt::Display for Violation {
    // Node numbers are reported 1-based, like every file format and CLI output.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NodeIdMismatch { index, id } => {
                write!(f, "node at position {} has id {}", index + 1, id + 1)
            }
            Violation::PowerSign { node, kind, power } => {
                write!(f, "node {}: {:?} with power {}", node + 1, kind, power)
            }
            Violation::NonPositiveInertia { node, value } => {
                write!(f, "node {}: inertia {} must be > 0", node + 1, value)
            }
            Violation::NonPositiveDamping { node, value } => {
                write!(f, "node {}: damping {} must be > 0", node + 1, value)
            }
            Violation::EndpointOutOfRange { line, node } => {
                write!(f, "line {}: endpoint {} out of range", line + 1, node + 1)
            }
            Violation::SelfLoop { line, node } => {
                write!(f, "line {}: self-loop on node {}", line + 1, node + 1)
            }
            Violation::DuplicateLine { line, first, a, b } => write!(
                f,
                "line {}: duplicates line {} between nodes {} and {}",
                line + 1,
                first + 1,
                a + 1,
                b + 1
            ),
            Violation::NegativeCoupling { line, value } => {
                write!(f, "line {}: coupling {} must be >= 0", line + 1, value)
            }
            Violation::CapacityFraction { line, value } => {
                write!(f, "line {}: capacity fraction {} outside [0, 1]", line + 1, value)
            }
        }
    }
}

/// The physical layer. Immutable once built; run-time line status lives in
/// the simulation state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerGrid {
    pub nodes: Vec<GridNode>,
    pub lines: Vec<GridLine>,
}

impl PowerGrid {
    pub fn new(nodes: Vec<GridNode>, lines: Vec<GridLine>) -> Self {
        Self { nodes, lines }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    pub fn generator_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_generator()).count()
    }

    pub fn load_count(&self) -> usize {
        self.node_count() - self.generator_count()
    }

    pub fn generators(&self) -> Vec<usize> {
        self.nodes.iter().filter(|n| n.is_generator()).map(|n| n.id).collect()
    }

    pub fn loads(&self) -> Vec<usize> {
        self.nodes.iter().filter(|n| !n.is_generator()).map(|n| n.id).collect()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.lines.iter().filter(|l| l.touches(node)).count()
    }

    /// Indices of lines incident to `node`.
    pub fn lines_at(&self, node: usize) -> Vec<usize> {
        self.lines
            .iter()
            .enumerate()
            .filter(|(_, l)| l.touches(node))
            .map(|(k, _)| k)
            .collect()
    }

    pub fn line_between(&self, i: usize, j: usize) -> Option<usize> {
        let key = if i <= j { (i, j) } else { (j, i) };
        self.lines.iter().position(|l| l.endpoints() == key)
    }

    /// Collects every structural violation. Never mutates.
    pub fn validate(&self) -> Vec<Violation> {
        let n = self.nodes.len();
        let mut out = Vec::new();
        for (index, node) in self.nodes.iter().enumerate() {
            if node.id != index {
                out.push(Violation::NodeIdMismatch { index, id: node.id });
            }
            let sign_ok = match node.kind {
                NodeKind::Generator => node.power > 0.0,
                NodeKind::Load => node.power < 0.0,
            };
            if !sign_ok {
                out.push(Violation::PowerSign {
                    node: index,
                    kind: node.kind,
                    power: node.power,
                });
            }
            if !(node.inertia > 0.0) {
                out.push(Violation::NonPositiveInertia {
                    node: index,
                    value: node.inertia,
                });
            }
            if !(node.damping > 0.0) {
                out.push(Violation::NonPositiveDamping {
                    node: index,
                    value: node.damping,
                });
            }
        }

        let mut seen: Vec<((usize, usize), usize)> = Vec::new();
        for (k, line) in self.lines.iter().enumerate() {
            for node in [line.a, line.b] {
                if node >= n {
                    out.push(Violation::EndpointOutOfRange { line: k, node });
                }
            }
            if line.a == line.b {
                out.push(Violation::SelfLoop { line: k, node: line.a });
            }
            let key = line.endpoints();
            match seen.iter().find(|(e, _)| *e == key) {
                Some(&(_, first)) => out.push(Violation::DuplicateLine {
                    line: k,
                    first,
                    a: key.0,
                    b: key.1,
                }),
                None => seen.push((key, k)),
            }
            if !(line.coupling >= 0.0) {
                out.push(Violation::NegativeCoupling {
                    line: k,
                    value: line.coupling,
                });
            }
            if !(0.0..=1.0).contains(&line.capacity_fraction) {
                out.push(Violation::CapacityFraction {
                    line: k,
                    value: line.capacity_fraction,
                });
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    /// Sum of injected powers over all nodes.
    pub fn power_imbalance(&self) -> f64 {
        self.nodes.iter().map(|n| n.power).sum()
    }

    /// Sum of injected powers, skipping the given (faulted) nodes.
    pub fn power_imbalance_excluding(&self, removed: &BTreeSet<usize>) -> f64 {
        self.nodes
            .iter()
            .filter(|n| !removed.contains(&n.id))
            .map(|n| n.power)
            .sum()
    }

    /// Unweighted edge list `(low, high)` of the physical layer.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.lines.iter().map(|l| l.endpoints()).collect()
    }
}

/// How generator power is chosen for homogeneous grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PowerBalance {
    /// `P_gen = N_loads / N_generators`, so the powers sum to zero.
    Exact,
    /// `P_gen = 2.735` regardless of the node counts.
    Literal,
}

pub const LITERAL_GENERATOR_POWER: f64 = 2.735;

/// Named homogeneous parameter sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParameterPreset {
    /// I = 10, gamma = 1, K = 11, alpha = 0.8.
    ControlledDefault,
    /// I = 1, gamma = 0.1, K = 11, alpha = 0.8 (uncontrolled critical-node scan).
    CriticalScan,
}

impl ParameterPreset {
    pub fn name(&self) -> &'static str {
        match self {
            ParameterPreset::ControlledDefault => "controlled-default",
            ParameterPreset::CriticalScan => "critical-scan",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "controlled-default" => Some(ParameterPreset::ControlledDefault),
            "critical-scan" => Some(ParameterPreset::CriticalScan),
            _ => None,
        }
    }

    pub fn inertia(&self) -> f64 {
        match self {
            ParameterPreset::ControlledDefault => 10.0,
            ParameterPreset::CriticalScan => 1.0,
        }
    }

    pub fn damping(&self) -> f64 {
        match self {
            ParameterPreset::ControlledDefault => 1.0,
            ParameterPreset::CriticalScan => 0.1,
        }
    }

    pub fn coupling(&self) -> f64 {
        11.0
    }

    pub fn capacity_fraction(&self) -> f64 {
        0.8
    }

    pub const LOAD_POWER: f64 = -1.0;

    pub fn generator_power(n_generators: usize, n_loads: usize, balance: PowerBalance) -> f64 {
        match balance {
            PowerBalance::Exact => n_loads as f64 / n_generators as f64,
            PowerBalance::Literal => LITERAL_GENERATOR_POWER,
        }
    }

    /// Rebuilds `grid` with homogeneous preset parameters, keeping topology
    /// and node kinds.
    pub fn apply(&self, grid: &PowerGrid, balance: PowerBalance) -> PowerGrid {
        let generators = grid.generators();
        self.build(grid.node_count(), &grid.edges(), &generators, balance)
    }

    /// Homogeneous grid on `n` nodes with the given edges and generator set.
    pub fn build(&self, n: usize, edges: &[(usize, usize)], generators: &[usize], balance: PowerBalance) -> PowerGrid {
        let gen_set: BTreeSet<usize> = generators.iter().copied().collect();
        let n_gen = gen_set.len();
        let p_gen = Self::generator_power(n_gen, n - n_gen, balance);
        let nodes = (0..n)
            .map(|id| {
                if gen_set.contains(&id) {
                    GridNode::generator(id, p_gen, self.inertia(), self.damping())
                } else {
                    GridNode::load(id, Self::LOAD_POWER, self.inertia(), self.damping())
                }
            })
            .collect();
        let lines = edges
            .iter()
            .map(|&(a, b)| GridLine::new(a, b, self.coupling(), self.capacity_fraction()))
            .collect();
        PowerGrid::new(nodes, lines)
    }
}
