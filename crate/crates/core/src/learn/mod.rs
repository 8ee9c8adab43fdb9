//! Learners that recover radial topology — and, where possible, per-node
//! injection statistics — from second moments of nodal voltage deviations.
//!
//! Three entry points, by observability regime:
//!
//! * [`algorithm1`] — every node metered: the true tree is the minimum
//!   spanning tree of the candidate graph under the pairwise deviation
//!   distance; with phase moments it also recovers every node's injection
//!   moments by peeling subtree aggregates along edges.
//! * [`algorithm2`] — a known set of nodes is hidden, every hidden pair more
//!   than two hops apart: suspects exposed by the parent–child residual check
//!   are matched to hidden parents via the grandparent difference test,
//!   bubbling unresolved groups toward the root.
//! * [`algorithm3`] — hidden nodes may be as close as two hops (never
//!   adjacent): like `algorithm2`, plus a sign-based triplet statistic that
//!   splits suspect pools into per-parent clusters and singles out the
//!   cluster that shares a hidden parent *with* the node under inspection.

mod bounds;
mod engine;
mod mst;
mod relations;

pub use bounds::{compute_bounds, partition_by_substation, SeparationBounds};
pub use mst::kruskal_mst;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::grid::{CandidateEdgeSet, GridError, Impedance, NodeId};
use crate::moments::{MomentError, MomentTable};

/// Relative tolerances for the learners' three hypothesis tests.
///
/// Pick tolerances on the order of the tables' own relative error: roughly
/// `1/√n_samples` for empirical tables (the 0.1 default suits a few hundred
/// samples), and something tiny (say `1e-3`) for analytic tables, where the
/// true relations hold to machine precision. Loose tolerances on precise
/// data concede ground for nothing: a spurious candidate impedance that
/// mimics the local pattern within 10% by sheer luck gets through checks
/// that `1e-3` would reject with twelve orders of magnitude to spare.
#[derive(Debug, Clone, Copy)]
pub struct Thresholds {
    /// Parent–child residual check: relative deviation between an edge's
    /// observed deviation distances and the values its child subtree
    /// predicts, enforced on all three tables.
    pub tau1: f64,
    /// Hidden-parent search: relative mismatch tolerated both in the
    /// pairwise grandparent differences of a suspect group and in the
    /// per-member residuals of the solved hidden moments.
    pub tau2: f64,
    /// Triplet clustering: fraction of the local deviation-distance scale
    /// below which a triplet statistic counts as zero.
    pub tau3: f64,
}

impl Default for Thresholds {
    fn default() -> Thresholds {
        Thresholds { tau1: 0.1, tau2: 0.1, tau3: 0.1 }
    }
}

/// Second moments of one node's injection: variances of active and reactive
/// power and their covariance. Also used as an aggregate over a subtree,
/// where it is the element-wise sum of member moments.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InjectionMoments {
    pub var_p: f64,
    pub var_q: f64,
    pub cov_pq: f64,
}

impl InjectionMoments {
    pub fn new(var_p: f64, var_q: f64, cov_pq: f64) -> InjectionMoments {
        InjectionMoments { var_p, var_q, cov_pq }
    }

    /// Whether these moments could belong to a real random injection:
    /// non-negative variances and a covariance the variances can carry.
    pub fn is_valid(&self) -> bool {
        let slack = 1e-9 * (1.0 + self.var_p * self.var_q);
        self.var_p >= 0.0
            && self.var_q >= 0.0
            && self.cov_pq * self.cov_pq <= self.var_p * self.var_q + slack
    }

    pub fn add(self, other: InjectionMoments) -> InjectionMoments {
        InjectionMoments {
            var_p: self.var_p + other.var_p,
            var_q: self.var_q + other.var_q,
            cov_pq: self.cov_pq + other.cov_pq,
        }
    }

    pub fn sub(self, other: InjectionMoments) -> InjectionMoments {
        InjectionMoments {
            var_p: self.var_p - other.var_p,
            var_q: self.var_q - other.var_q,
            cov_pq: self.cov_pq - other.cov_pq,
        }
    }
}

/// A learner's output: the recovered radial topology and whatever injection
/// statistics the regime allowed it to reconstruct.
#[derive(Debug, Clone, Default)]
pub struct LearnedModel {
    /// Recovered edges with candidate-set impedances, sorted by endpoints.
    pub edges: Vec<(NodeId, NodeId, Impedance)>,
    /// Solved moments of hidden nodes that were located (raw solver output;
    /// noise can push entries slightly outside the valid cone).
    pub hidden_stats: BTreeMap<NodeId, InjectionMoments>,
    /// Full-observation statistics recovery (every non-root node), when the
    /// input table carried phase moments and contained the root.
    pub node_stats: Option<BTreeMap<NodeId, InjectionMoments>>,
    /// Suspect groups no hypothesis test could place. Their members were
    /// re-attached along their initial spanning-tree edges where possible,
    /// so those edges are best-effort, not verified.
    pub unresolved: Vec<Vec<NodeId>>,
}

impl LearnedModel {
    /// Edge endpoint pairs, normalized `(min, max)`.
    pub fn edge_pairs(&self) -> BTreeSet<(NodeId, NodeId)> {
        self.edges
            .iter()
            .map(|&(a, b, _)| (NodeId(a.0.min(b.0)), NodeId(a.0.max(b.0))))
            .collect()
    }

    /// First solved or recovered moment set that is not a valid second-moment
    /// triple, if any.
    pub fn check_stat_invariants(&self) -> Result<(), LearnError> {
        let all = self
            .hidden_stats
            .iter()
            .chain(self.node_stats.iter().flat_map(|m| m.iter()));
        for (&node, m) in all {
            if !m.is_valid() {
                return Err(LearnError::NegativeVarianceSolution { node, moments: *m });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LearnError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Moment(#[from] MomentError),
    #[error("candidate edges leave the observed nodes in {components} components")]
    DisconnectedCandidates { components: usize },
    #[error("relative test between {a} and {b} against a zero predicted value")]
    ZeroPredictedValue { a: NodeId, b: NodeId },
    #[error("{candidates:?} all pass the hidden-parent test below {node}")]
    AmbiguousParent { node: NodeId, candidates: Vec<NodeId> },
    #[error("moment system condition number {cond:.3e} exceeds 1e8")]
    IllConditionedSystem { cond: f64 },
    #[error("solved moments for {node} are not a valid second-moment triple: {moments:?}")]
    NegativeVarianceSolution { node: NodeId, moments: InjectionMoments },
    #[error("triplet signs at {node} admit no consistent clustering")]
    InconsistentSigns { node: NodeId },
    #[error("node {node} has zero injection moment mass")]
    DegenerateStatistics { node: NodeId },
    #[error("hidden node {node} appears in the observed moment table")]
    HiddenNodeObserved { node: NodeId },
    #[error("{missing:?} could not be located; partial model attached")]
    UnresolvedNodes { model: Box<LearnedModel>, missing: Vec<NodeId> },
}

/// Full-observation learner: minimum spanning tree of the candidate graph
/// under the deviation distance. With phase moments and the root present,
/// also recovers every node's injection moments.
pub fn algorithm1(
    table: &MomentTable,
    candidates: &CandidateEdgeSet,
) -> Result<LearnedModel, LearnError> {
    let nodes: BTreeSet<NodeId> = table.nodes().iter().copied().collect();
    let weighted: Vec<(NodeId, NodeId, f64)> = candidates
        .iter()
        .filter(|&(a, b, _)| nodes.contains(&a) && nodes.contains(&b))
        .map(|(a, b, _)| (a, b, table.phi(a, b)))
        .collect();
    let chosen = kruskal_mst(&nodes, &weighted);
    if chosen.len() + 1 != nodes.len() {
        return Err(LearnError::DisconnectedCandidates {
            components: nodes.len() - chosen.len(),
        });
    }
    let mut edges: Vec<(NodeId, NodeId, Impedance)> = chosen
        .iter()
        .map(|&(a, b)| (a, b, candidates.impedance(a, b).expect("edge came from candidate set")))
        .collect();
    edges.sort_by_key(|&(a, b, _)| (a, b));

    let node_stats = if table.has_phase() && table.contains(NodeId(0)) {
        Some(relations::recover_node_stats(table, &edges)?)
    } else {
        None
    };

    Ok(LearnedModel {
        edges,
        hidden_stats: BTreeMap::new(),
        node_stats,
        unresolved: Vec::new(),
    })
}

/// Hidden-node learner for hidden sets whose members are pairwise more than
/// two hops apart. `observed_stats` must cover every non-root node in the
/// table; `hidden` lists the node ids to locate (their incident candidate
/// edges must appear in `candidates`).
pub fn algorithm2(
    table: &MomentTable,
    candidates: &CandidateEdgeSet,
    observed_stats: &BTreeMap<NodeId, InjectionMoments>,
    hidden: &BTreeSet<NodeId>,
    thresholds: &Thresholds,
) -> Result<LearnedModel, LearnError> {
    engine::run(table, candidates, observed_stats, hidden, thresholds, false)
}

/// Hidden-node learner tolerating hidden pairs only two hops apart (still
/// never adjacent). Adds triplet-sign clustering on top of the machinery of
/// [`algorithm2`].
pub fn algorithm3(
    table: &MomentTable,
    candidates: &CandidateEdgeSet,
    observed_stats: &BTreeMap<NodeId, InjectionMoments>,
    hidden: &BTreeSet<NodeId>,
    thresholds: &Thresholds,
) -> Result<LearnedModel, LearnError> {
    engine::run(table, candidates, observed_stats, hidden, thresholds, true)
}
