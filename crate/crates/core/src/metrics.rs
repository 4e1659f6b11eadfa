//! Synchronization and failure observables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{LineStatus, PowerGrid};

/// Which nodes enter R, Φ, Δω and ω̄ while a node is disconnected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricsScope {
    ActiveNodesOnly,
    AllNodes,
}

impl MetricsScope {
    pub fn name(&self) -> &'static str {
        match self {
            MetricsScope::ActiveNodesOnly => "active-nodes",
            MetricsScope::AllNodes => "all-nodes",
        }
    }
}

/// One row of the recorded time series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSample {
    pub t: f64,
    pub r: f64,
    pub phi: f64,
    pub delta_omega: f64,
    pub mean_omega: f64,
    pub power_loss: f64,
    pub n_failed: usize,
    pub n_active_links: usize,
}

/// Kuramoto order parameter `(R, Φ)` over the nodes in `scope`.
pub fn order_parameter(theta: &[f64], scope: &[usize]) -> Result<(f64, f64)> {
    if scope.is_empty() {
        return Err(Error::EmptyScope);
    }
    let (mut re, mut im) = (0.0, 0.0);
    for &j in scope {
        let (s, c) = theta[j].sin_cos();
        re += c;
        im += s;
    }
    let m = scope.len() as f64;
    let (re, im) = (re / m, im / m);
    // hypot can exceed 1 by an ulp for identical phasors
    Ok((re.hypot(im).min(1.0), im.atan2(re)))
}

pub fn mean_frequency(omega: &[f64], scope: &[usize]) -> Result<f64> {
    if scope.is_empty() {
        return Err(Error::EmptyScope);
    }
    Ok(scope.iter().map(|&j| omega[j]).sum::<f64>() / scope.len() as f64)
}

/// Population standard deviation of the frequencies in `scope`.
pub fn freq_std(omega: &[f64], scope: &[usize]) -> Result<f64> {
    let mean = mean_frequency(omega, scope)?;
    let var = scope.iter().map(|&j| (omega[j] - mean).powi(2)).sum::<f64>() / scope.len() as f64;
    Ok(var.sqrt())
}

/// Mean effective power change over load nodes, in the unsimplified
/// "effective minus initial" form.
pub fn power_loss(grid: &PowerGrid, u_total: &[f64]) -> Result<f64> {
    if u_total.len() != grid.node_count() {
        return Err(Error::DimensionMismatch {
            expected: grid.node_count(),
            got: u_total.len(),
        });
    }
    let loads = grid.loads();
    if loads.is_empty() {
        return Err(Error::NoLoads);
    }
    let nl = loads.len() as f64;
    let effective: f64 = loads.iter().map(|&i| grid.nodes[i].power + u_total[i]).sum();
    let initial: f64 = loads.iter().map(|&i| grid.nodes[i].power).sum();
    Ok(effective / nl - initial / nl)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureCounts {
    /// Lines tripped by overload (n_c).
    pub n_failed: usize,
    pub n_active: usize,
    pub n_removed_by_fault: usize,
}

pub fn count_failures(statuses: &[LineStatus]) -> FailureCounts {
    let mut c = FailureCounts {
        n_failed: 0,
        n_active: 0,
        n_removed_by_fault: 0,
    };
    for s in statuses {
        match s {
            LineStatus::Active => c.n_active += 1,
            LineStatus::TrippedOverload { .. } => c.n_failed += 1,
            LineStatus::RemovedByNodeFault => c.n_removed_by_fault += 1,
        }
    }
    c
}
