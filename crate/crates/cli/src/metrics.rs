//! Error metrics comparing a learned model against scenario ground truth.

use std::collections::{BTreeMap, BTreeSet};

use gridsleuth_core::grid::NodeId;
use gridsleuth_core::learn::InjectionMoments;
use gridsleuth_core::moments::InjectionStatistics;

/// Relative topology error between two edge sets over the same nodes:
/// half the symmetric difference, normalized by the true edge count (in a
/// spanning tree every wrong edge pairs one spurious with one missing edge).
/// Symmetric in its arguments, zero iff the sets are equal, clamped to
/// `[0, 1]` (a learner can disagree on more than `|true|` edges only via
/// unresolved fallbacks).
pub fn topology_error(
    estimated: &BTreeSet<(NodeId, NodeId)>,
    truth: &BTreeSet<(NodeId, NodeId)>,
) -> f64 {
    if truth.is_empty() {
        return if estimated.is_empty() { 0.0 } else { 1.0 };
    }
    let sym = estimated.symmetric_difference(truth).count();
    (sym as f64 / (2.0 * truth.len() as f64)).clamp(0.0, 1.0)
}

/// Mean relative errors of recovered injection moments, one per component.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StatErrors {
    pub var_p: f64,
    pub var_q: f64,
    pub cov_pq: f64,
}

/// Compare recovered moments against the true statistics over `nodes`.
/// Estimates are clamped to the valid cone (variances and covariance at 0)
/// before comparison — the learners return raw solver output, the negative
/// parts of which are noise. Per node the error is `|est − true| / |true|`,
/// falling back to the absolute error where the true value is zero; a node
/// missing from `estimated` counts as the maximum error 1. Returns `None`
/// when `nodes` is empty.
pub fn stat_errors(
    estimated: &BTreeMap<NodeId, InjectionMoments>,
    truth: &InjectionStatistics,
    nodes: &BTreeSet<NodeId>,
) -> Option<StatErrors> {
    if nodes.is_empty() {
        return None;
    }
    let mut sum = StatErrors::default();
    for &a in nodes {
        let (vp, vq, c) = truth.second_moments(a);
        match estimated.get(&a) {
            Some(m) => {
                sum.var_p += relative(m.var_p.max(0.0), vp);
                sum.var_q += relative(m.var_q.max(0.0), vq);
                sum.cov_pq += relative(m.cov_pq.max(0.0), c);
            }
            None => {
                sum.var_p += 1.0;
                sum.var_q += 1.0;
                sum.cov_pq += 1.0;
            }
        }
    }
    let n = nodes.len() as f64;
    Some(StatErrors { var_p: sum.var_p / n, var_q: sum.var_q / n, cov_pq: sum.cov_pq / n })
}

fn relative(estimate: f64, truth: f64) -> f64 {
    if truth.abs() > 0.0 {
        (estimate - truth).abs() / truth.abs()
    } else {
        (estimate - truth).abs()
    }
}
