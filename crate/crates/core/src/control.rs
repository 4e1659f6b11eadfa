//! Distributed proportional and integral control.
//!
//! Both laws share the same consensus form: node `i` receives
//! `G * xi_i * sum_j a_ij (x_j - x_i)`. The proportional layer applies it to
//! the frequencies directly; the integral layer applies it to the frequencies
//! to obtain the time derivative of its own state.

use crate::error::{Error, Result};
use crate::topology::ControlLayer;

/// Control inputs at one instant. `u_total = u_p + u_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlInputs {
    pub u_p: Vec<f64>,
    pub u_i: Vec<f64>,
    pub u_total: Vec<f64>,
}

impl ControlInputs {
    pub fn new(u_p: Vec<f64>, u_i: Vec<f64>) -> Self {
        let u_total = u_p.iter().zip(&u_i).map(|(p, i)| p + i).collect();
        Self { u_p, u_i, u_total }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![0.0; n], vec![0.0; n])
    }
}

fn dense_consensus(layer: &ControlLayer, values: &[f64]) -> Result<Vec<f64>> {
    let n = values.len();
    if layer.adjacency.n() != n {
        return Err(Error::DimensionMismatch {
            expected: layer.adjacency.n(),
            got: n,
        });
    }
    if layer.pinning.len() != n {
        return Err(Error::DimensionMismatch {
            expected: layer.pinning.len(),
            got: n,
        });
    }
    Ok((0..n)
        .map(|i| {
            if !layer.pinning[i] {
                return 0.0;
            }
            let s: f64 = layer.adjacency.neighbors(i).map(|j| values[j] - values[i]).sum();
            layer.gain * s
        })
        .collect())
}

/// Proportional input `u^P`.
pub fn proportional_input(layer: &ControlLayer, omega: &[f64]) -> Result<Vec<f64>> {
    dense_consensus(layer, omega)
}

/// Time derivative of the integral control state `u^I`.
pub fn integral_state_derivative(layer: &ControlLayer, omega: &[f64]) -> Result<Vec<f64>> {
    dense_consensus(layer, omega)
}

/// Sparse form of a control layer used inside the integrator.
///
/// Neighbors are stored in ascending order so the reduction order is fixed.
#[derive(Clone, Debug)]
pub struct ConsensusOperator {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weight: Vec<f64>,
}

impl ConsensusOperator {
    pub fn new(layer: &ControlLayer) -> Result<Self> {
        let n = layer.adjacency.n();
        if layer.pinning.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: layer.pinning.len(),
            });
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for i in 0..n {
            targets.extend(layer.adjacency.neighbors(i));
            offsets.push(targets.len());
        }
        let weight = layer
            .pinning
            .iter()
            .map(|&p| if p { layer.gain } else { 0.0 })
            .collect();
        Ok(Self {
            offsets,
            targets,
            weight,
        })
    }

    pub fn n(&self) -> usize {
        self.weight.len()
    }

    /// True when the operator can only produce zeros.
    pub fn is_inert(&self) -> bool {
        self.targets.is_empty() || self.weight.iter().all(|&w| w == 0.0)
    }

    /// Writes the consensus input for `values` into `out`. Nodes flagged in
    /// `masked` neither receive input nor contribute to their neighbors.
    pub fn apply(&self, values: &[f64], masked: &[bool], out: &mut [f64]) {
        for i in 0..self.n() {
            let w = self.weight[i];
            if w == 0.0 || masked[i] {
                out[i] = 0.0;
                continue;
            }
            let xi = values[i];
            let mut s = 0.0;
            for &j in &self.targets[self.offsets[i]..self.offsets[i + 1]] {
                if !masked[j] {
                    s += values[j] - xi;
                }
            }
            out[i] = w * s;
        }
    }
}
