//! Control-layer topologies.
//!
//! Layers are binary undirected graphs on the same node set as the physical
//! grid. Besides copying the physical topology, layers can be drawn from an
//! Erdős–Rényi ensemble or derived from a base graph around the generator set:
//!
//! * local: keep base edges with at least one generator endpoint;
//! * extended: the local edges plus every generator–generator pair.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::PowerGrid;

/// Identifier of the random stream used by [`gen_er`]. Pairs `(i, j)` with
/// `i < j` are visited row-major and each consumes one uniform `f64` draw
/// from ChaCha8 seeded through `seed_from_u64`.
pub const ER_RNG: &str = "chacha8-rowmajor-v1";

/// Dense N×N binary matrix. It may hold asymmetric data so that
/// malformed input can be reported by [`validate_layer`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    bits: Vec<u8>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            bits: vec![0; n * n],
        }
    }

    pub fn complete(n: usize) -> Self {
        let mut a = Self::empty(n);
        for i in 0..n {
            for j in (i + 1)..n {
                a.insert(i, j);
            }
        }
        a
    }

    /// Symmetric adjacency from an undirected edge list. Panics on an
    /// out-of-range endpoint.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut a = Self::empty(n);
        for &(i, j) in edges {
            a.insert(i, j);
        }
        a
    }

    /// Physical-layer connectivity of `grid`.
    pub fn from_grid(grid: &PowerGrid) -> Self {
        Self::from_edges(grid.node_count(), &grid.edges())
    }

    /// Row-major matrix without any checks.
    pub fn from_rows(rows: &[Vec<u8>]) -> Self {
        let n = rows.len();
        let mut bits = Vec::with_capacity(n * n);
        for row in rows {
            assert_eq!(row.len(), n, "adjacency rows must be square");
            bits.extend(row.iter().map(|&x| u8::from(x != 0)));
        }
        Self { n, bits }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j] != 0
    }

    /// Sets a single directed entry.
    pub fn set_entry(&mut self, i: usize, j: usize, value: bool) {
        self.bits[i * self.n + j] = u8::from(value);
    }

    /// Adds the undirected edge `{i, j}`. Self-loops are ignored.
    pub fn insert(&mut self, i: usize, j: usize) {
        if i != j {
            self.set_entry(i, j, true);
            self.set_entry(j, i, true);
        }
    }

    pub fn remove(&mut self, i: usize, j: usize) {
        self.set_entry(i, j, false);
        self.set_entry(j, i, false);
    }

    /// Undirected edges `(i, j)` with `i < j`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.get(i, j))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).count()
    }

    /// First asymmetric entry `(i, j)`, if any.
    pub fn asymmetry(&self) -> Option<(usize, usize)> {
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.get(i, j) != self.get(j, i) {
                    return Some((i, j));
                }
            }
        }
        None
    }

    pub fn is_symmetric(&self) -> bool {
        self.asymmetry().is_none()
    }

    pub fn has_zero_diagonal(&self) -> bool {
        (0..self.n).all(|i| !self.get(i, i))
    }

    /// True when every edge of `self` is also an edge of `other`.
    pub fn is_subgraph_of(&self, other: &Adjacency) -> bool {
        self.n == other.n && self.bits.iter().zip(&other.bits).all(|(&a, &b)| a <= b)
    }

    /// Number of connected components (isolated nodes count as components).
    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(u) = stack.pop() {
                for v in 0..self.n {
                    if !seen[v] && (self.get(u, v) || self.get(v, u)) {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        count
    }
}

/// A distributed control layer: who talks to whom, which nodes are actuated,
/// and the layer gain.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlLayer {
    pub adjacency: Adjacency,
    pub pinning: Vec<bool>,
    pub gain: f64,
}

impl ControlLayer {
    pub fn new(adjacency: Adjacency, pinning: Vec<bool>, gain: f64) -> Self {
        Self {
            adjacency,
            pinning,
            gain,
        }
    }

    /// Layer with no links and zero gain: contributes nothing.
    pub fn disabled(n: usize) -> Self {
        Self::new(Adjacency::empty(n), vec![false; n], 0.0)
    }

    pub fn n(&self) -> usize {
        self.adjacency.n()
    }

    pub fn with_gain(&self, gain: f64) -> Self {
        Self { gain, ..self.clone() }
    }

    pub fn pinned_count(&self) -> usize {
        self.pinning.iter().filter(|&&x| x).count()
    }
}

/// Actuation presets for the pinning vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pinning {
    All,
    Generators,
    None,
}

impl Pinning {
    pub fn mask(&self, grid: &PowerGrid) -> Vec<bool> {
        match self {
            Pinning::All => vec![true; grid.node_count()],
            Pinning::Generators => grid.nodes.iter().map(|n| n.is_generator()).collect(),
            Pinning::None => vec![false; grid.node_count()],
        }
    }
}

fn check_base(base: &Adjacency, generators: &BTreeSet<usize>) -> Result<()> {
    if let Some((i, j)) = base.asymmetry() {
        return Err(Error::NotSymmetric(i, j));
    }
    if let Some(&g) = generators.iter().find(|&&g| g >= base.n()) {
        return Err(Error::NodeOutOfRange { node: g, n: base.n() });
    }
    Ok(())
}

/// Base edges that have at least one generator endpoint.
pub fn derive_local(base: &Adjacency, generators: &BTreeSet<usize>) -> Result<Adjacency> {
    check_base(base, generators)?;
    let mut out = Adjacency::empty(base.n());
    for (i, j) in base.edges() {
        if generators.contains(&i) || generators.contains(&j) {
            out.insert(i, j);
        }
    }
    Ok(out)
}

/// Local topology plus a clique on the generators.
pub fn derive_extended(base: &Adjacency, generators: &BTreeSet<usize>) -> Result<Adjacency> {
    let mut out = derive_local(base, generators)?;
    let gens: Vec<usize> = generators.iter().copied().collect();
    for (k, &i) in gens.iter().enumerate() {
        for &j in &gens[k + 1..] {
            out.insert(i, j);
        }
    }
    Ok(out)
}

/// G(n, p) random graph, reproducible from `seed` (see [`ER_RNG`]).
pub fn gen_er(n: usize, p: f64, seed: u64) -> Result<Adjacency> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidProbability(p));
    }
    if n == 0 {
        return Err(Error::InvalidConfig("ER graph needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Adjacency::empty(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let draw: f64 = rng.gen();
            if draw < p {
                a.insert(i, j);
            }
        }
    }
    Ok(a)
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerViolation {
    Size { expected: usize, got: usize },
    Asymmetric { i: usize, j: usize },
    SelfLink { node: usize },
    PinningLength { expected: usize, got: usize },
    NegativeGain(f64),
}

impl fmt::Display for LayerViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerViolation::Size { expected, got } => {
                write!(f, "layer has {got} nodes, expected {expected}")
            }
            LayerViolation::Asymmetric { i, j } => {
                write!(f, "adjacency not symmetric between nodes {} and {}", i + 1, j + 1)
            }
            LayerViolation::SelfLink { node } => write!(f, "self-link on node {}", node + 1),
            LayerViolation::PinningLength { expected, got } => {
                write!(f, "pinning vector has length {got}, expected {expected}")
            }
            LayerViolation::NegativeGain(g) => write!(f, "gain {g} must be >= 0"),
        }
    }
}

pub fn validate_layer(layer: &ControlLayer, n: usize) -> Vec<LayerViolation> {
    let mut out = Vec::new();
    let adj = &layer.adjacency;
    if adj.n() != n {
        out.push(LayerViolation::Size {
            expected: n,
            got: adj.n(),
        });
    }
    for i in 0..adj.n() {
        if adj.get(i, i) {
            out.push(LayerViolation::SelfLink { node: i });
        }
        for j in (i + 1)..adj.n() {
            if adj.get(i, j) != adj.get(j, i) {
                out.push(LayerViolation::Asymmetric { i, j });
            }
        }
    }
    if layer.pinning.len() != n {
        out.push(LayerViolation::PinningLength {
            expected: n,
            got: layer.pinning.len(),
        });
    }
    if !(layer.gain >= 0.0) {
        out.push(LayerViolation::NegativeGain(layer.gain));
    }
    out
}
