//! Separation constants of a grid's deviation-distance geometry, and the
//! sample-complexity estimate they imply; plus multi-feeder partitioning
//! from the voltage covariance structure.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::grid::{GridTopology, NodeId};
use crate::moments::InjectionStatistics;

use super::LearnError;

/// Scale constants of the deviation distance on a given grid.
///
/// Every node's injection-moment mass `Ωp + Ωq + 2Ωpq` paired with a single
/// edge's impedance contributes at least `k1` and at most `k2` to any
/// distance it participates in, so `k1` lower-bounds the gap that keeps the
/// spanning-tree comparisons strict, and `k2` caps how large any entry can
/// grow with depth and size.
#[derive(Debug, Clone, Copy)]
pub struct SeparationBounds {
    /// Smallest single-node, single-edge contribution.
    pub k1: f64,
    /// Largest single-node, single-edge contribution.
    pub k2: f64,
    /// Upper bound on any variance-table diagonal: `depth² · |V| · k2`.
    pub omega_v_max_bound: f64,
    pub depth: usize,
    pub num_nodes: usize,
}

impl SeparationBounds {
    /// Sample count sufficient for topology recovery with failure
    /// probability at most `eta`: `c · depth⁴ · |V|² · ln(|V| / eta)`.
    /// The constant `c` absorbs the concentration argument and is exposed
    /// so experiments can calibrate it.
    pub fn required_samples(&self, eta: f64, c: f64) -> f64 {
        let v = self.num_nodes as f64;
        let d = self.depth as f64;
        c * d.powi(4) * v * v * (v / eta).ln()
    }
}

/// Compute both separation constants. Errors with
/// [`LearnError::DegenerateStatistics`] if any node has zero moment mass —
/// such a node contributes nothing to any distance, and no positive `k1`
/// exists.
pub fn compute_bounds(
    topo: &GridTopology,
    stats: &InjectionStatistics,
) -> Result<SeparationBounds, LearnError> {
    let mut mass_min = f64::INFINITY;
    let mut mass_max: f64 = 0.0;
    let mut weakest = NodeId(0);
    for a in topo.non_root_nodes() {
        let (vp, vq, c) = stats.second_moments(a);
        let mass = vp + vq + 2.0 * c;
        if mass < mass_min {
            mass_min = mass;
            weakest = a;
        }
        mass_max = mass_max.max(mass);
    }
    if !(mass_min > 0.0) {
        return Err(LearnError::DegenerateStatistics { node: weakest });
    }

    let mut part_min = f64::INFINITY;
    let mut part_max: f64 = 0.0;
    for &(_, _, z) in topo.edges() {
        part_min = part_min.min(z.r.min(z.x));
        part_max = part_max.max(z.r.max(z.x));
    }

    let k1 = part_min * part_min * mass_min;
    let k2 = part_max * part_max * mass_max;
    let depth = topo.index().max_depth();
    let num_nodes = topo.num_nodes();
    Ok(SeparationBounds {
        k1,
        k2,
        omega_v_max_bound: (depth * depth * num_nodes) as f64 * k2,
        depth,
        num_nodes,
    })
}

/// Group nodes into feeders by the block structure of their voltage
/// covariance: nodes fed by different substations have (up to noise) zero
/// cross-covariance. An entry counts as coupling when its magnitude exceeds
/// `threshold_frac` times the largest diagonal.
pub fn partition_by_substation(
    cov: &DMatrix<f64>,
    nodes: &[NodeId],
    threshold_frac: f64,
) -> Vec<Vec<NodeId>> {
    let n = nodes.len().min(cov.nrows()).min(cov.ncols());
    let mut scale: f64 = 0.0;
    for i in 0..n {
        scale = scale.max(cov[(i, i)].abs());
    }
    let thr = threshold_frac * scale;

    let mut uf = super::mst::UnionFind::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if cov[(i, j)].abs() > thr {
                uf.union(i, j);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
    for i in 0..n {
        groups.entry(uf.find(i)).or_default().push(nodes[i]);
    }
    let mut out: Vec<Vec<NodeId>> = groups.into_values().collect();
    out.sort_by_key(|g| g[0]);
    out
}
