//! Radial grid model: validated tree topologies, candidate edge sets, and the
//! reduced weighted-Laplacian inverses that drive every voltage-moment formula.
//!
//! Conventions used throughout the crate:
//! - Nodes are contiguous ids `0..num_nodes`; node 0 is the substation/reference
//!   bus, always the tree root, and must have degree exactly 1.
//! - The reduced system drops the root: node `k` (k ≥ 1) maps to row/column
//!   `k - 1` of every reduced vector or matrix.
//! - Descendant sets `D^a` include `a` itself; the root's path set is empty.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use thiserror::Error;

/// Index of a bus in the grid. Node 0 is always the root (substation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl NodeId {
    /// Row/column of this node in reduced (root-deleted) vectors and matrices.
    ///
    /// Panics in debug builds if called on the root, which has no reduced index.
    pub fn reduced(self) -> usize {
        debug_assert!(self.0 > 0, "root has no reduced index");
        self.0 - 1
    }

    /// Inverse of [`NodeId::reduced`].
    pub fn from_reduced(row: usize) -> NodeId {
        NodeId(row + 1)
    }

    pub fn is_root(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Series impedance of a line in per-unit. Both parts must be positive and
/// finite: the model divides by `r`, `x`, and `r² + x²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Impedance {
    pub r: f64,
    pub x: f64,
}

impl Impedance {
    pub fn new(r: f64, x: f64) -> Impedance {
        Impedance { r, x }
    }

    fn is_valid(&self) -> bool {
        self.r.is_finite() && self.x.is_finite() && self.r > 0.0 && self.x > 0.0
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("edge set does not form a spanning tree: {0}")]
    NotATree(String),
    #[error("root must have degree 1, found {0}")]
    RootDegreeViolation(usize),
    #[error("node {node} out of range for {num_nodes} nodes")]
    InvalidNode { node: usize, num_nodes: usize },
    #[error("self-loop at node {0}")]
    SelfLoop(NodeId),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(NodeId, NodeId),
    #[error("impedance of edge ({0}, {1}) must have finite positive r and x")]
    InvalidImpedance(NodeId, NodeId),
    #[error("reduced weighted Laplacian is singular")]
    SingularMatrix,
}

/// Which reciprocal-impedance weighting builds the reduced Laplacian:
/// `H_{1/r}` weights each edge by `1/r`, `H_{1/x}` by `1/x`. Their inverses
/// accumulate `r` (resp. `x`) along shared root paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    InverseResistance,
    InverseReactance,
}

impl WeightKind {
    /// The path-sum weight: the impedance part whose reciprocal built H.
    fn path_weight(self, z: Impedance) -> f64 {
        match self {
            WeightKind::InverseResistance => z.r,
            WeightKind::InverseReactance => z.x,
        }
    }

    fn laplacian_weight(self, z: Impedance) -> f64 {
        1.0 / self.path_weight(z)
    }
}

/// Parent/depth/subtree bookkeeping for a validated tree, rooted at node 0.
///
/// Built once per topology; all queries are non-mutating. Subtree membership
/// uses preorder (Euler) intervals so `is_descendant` is O(1).
#[derive(Debug, Clone)]
pub struct TreeIndex {
    parent: Vec<usize>,
    depth: Vec<usize>,
    children: Vec<Vec<usize>>,
    tin: Vec<usize>,
    tout: Vec<usize>,
    preorder: Vec<usize>,
}

impl TreeIndex {
    fn build(num_nodes: usize, adj: &[Vec<usize>]) -> TreeIndex {
        let mut parent = vec![usize::MAX; num_nodes];
        let mut depth = vec![0usize; num_nodes];
        let mut children = vec![Vec::new(); num_nodes];
        let mut tin = vec![0usize; num_nodes];
        let mut tout = vec![0usize; num_nodes];
        let mut preorder = Vec::with_capacity(num_nodes);

        // Iterative DFS from the root; children visited in ascending id order
        // so every derived ordering is deterministic. The unvisited guard
        // (parent still MAX) keeps cycle edges from re-claiming a node, so the
        // reachability count below stays an honest tree test.
        parent[0] = 0;
        let mut clock = 0usize;
        let mut stack = vec![(0usize, false)];
        while let Some((v, done)) = stack.pop() {
            if done {
                tout[v] = clock;
                clock += 1;
                continue;
            }
            tin[v] = clock;
            clock += 1;
            preorder.push(v);
            stack.push((v, true));
            let mut kids: Vec<usize> =
                adj[v].iter().copied().filter(|&u| parent[u] == usize::MAX).collect();
            kids.sort_unstable();
            // Push in reverse so the smallest id is explored first.
            for &u in kids.iter().rev() {
                parent[u] = v;
                depth[u] = depth[v] + 1;
                stack.push((u, false));
            }
            children[v] = kids;
        }

        TreeIndex { parent, depth, children, tin, tout, preorder }
    }

    pub fn num_nodes(&self) -> usize {
        self.parent.len()
    }

    /// Parent of `a`, or `None` for the root.
    pub fn parent(&self, a: NodeId) -> Option<NodeId> {
        if a.0 == 0 { None } else { Some(NodeId(self.parent[a.0])) }
    }

    pub fn depth(&self, a: NodeId) -> usize {
        self.depth[a.0]
    }

    /// Maximum depth over all nodes (the `d` of the sample-complexity bound).
    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn children(&self, a: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.children[a.0].iter().map(|&u| NodeId(u))
    }

    pub fn degree(&self, a: NodeId) -> usize {
        self.children[a.0].len() + usize::from(a.0 != 0)
    }

    /// True iff `d ∈ D^a` (descendant sets include the node itself).
    pub fn is_descendant(&self, d: NodeId, a: NodeId) -> bool {
        self.tin[a.0] <= self.tin[d.0] && self.tout[d.0] <= self.tout[a.0]
    }

    /// `D^a` in preorder, starting with `a` itself.
    pub fn descendants(&self, a: NodeId) -> Vec<NodeId> {
        self.preorder
            .iter()
            .copied()
            .filter(|&v| self.is_descendant(NodeId(v), a))
            .map(NodeId)
            .collect()
    }

    /// Edges of `P^a`, the path from `a` up to the root, as (child, parent)
    /// pairs ordered from `a` outward. Empty for the root.
    pub fn path_to_root(&self, a: NodeId) -> Vec<(NodeId, NodeId)> {
        let mut path = Vec::with_capacity(self.depth[a.0]);
        let mut v = a.0;
        while v != 0 {
            let p = self.parent[v];
            path.push((NodeId(v), NodeId(p)));
            v = p;
        }
        path
    }

    /// Lowest common ancestor of `a` and `b`.
    pub fn lca(&self, a: NodeId, b: NodeId) -> NodeId {
        let (mut u, mut v) = (a.0, b.0);
        while self.depth[u] > self.depth[v] {
            u = self.parent[u];
        }
        while self.depth[v] > self.depth[u] {
            v = self.parent[v];
        }
        while u != v {
            u = self.parent[u];
            v = self.parent[v];
        }
        NodeId(u)
    }

    /// Hop count between two nodes along the tree.
    pub fn tree_distance(&self, a: NodeId, b: NodeId) -> usize {
        let l = self.lca(a, b);
        self.depth[a.0] + self.depth[b.0] - 2 * self.depth[l.0]
    }

    /// All nodes in root-first preorder.
    pub fn preorder(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.preorder.iter().map(|&v| NodeId(v))
    }
}

/// A validated radial (tree) grid: `num_nodes` buses, `num_nodes - 1` impedance
/// edges spanning them, node 0 the degree-1 root.
#[derive(Debug, Clone)]
pub struct GridTopology {
    num_nodes: usize,
    edges: Vec<(NodeId, NodeId, Impedance)>,
    zmap: BTreeMap<(usize, usize), Impedance>,
    index: TreeIndex,
}

fn key(a: NodeId, b: NodeId) -> (usize, usize) {
    if a.0 <= b.0 { (a.0, b.0) } else { (b.0, a.0) }
}

impl GridTopology {
    /// Validates the edge list as a spanning tree with a degree-1 root and
    /// builds the tree index. Edges may be listed in either orientation.
    pub fn build_tree(
        num_nodes: usize,
        edges: &[(NodeId, NodeId, Impedance)],
    ) -> Result<GridTopology, GridError> {
        if num_nodes == 0 {
            return Err(GridError::NotATree("no nodes".into()));
        }
        if edges.len() != num_nodes - 1 {
            return Err(GridError::NotATree(format!(
                "{} nodes need {} edges, found {}",
                num_nodes,
                num_nodes - 1,
                edges.len()
            )));
        }

        let mut zmap = BTreeMap::new();
        let mut adj = vec![Vec::new(); num_nodes];
        for &(a, b, z) in edges {
            for n in [a, b] {
                if n.0 >= num_nodes {
                    return Err(GridError::InvalidNode { node: n.0, num_nodes });
                }
            }
            if a == b {
                return Err(GridError::SelfLoop(a));
            }
            if !z.is_valid() {
                return Err(GridError::InvalidImpedance(a, b));
            }
            if zmap.insert(key(a, b), z).is_some() {
                return Err(GridError::DuplicateEdge(a, b));
            }
            adj[a.0].push(b.0);
            adj[b.0].push(a.0);
        }

        if adj[0].len() != 1 {
            return Err(GridError::RootDegreeViolation(adj[0].len()));
        }

        // Edge count is right; connectivity from the root proves acyclicity.
        let index = TreeIndex::build(num_nodes, &adj);
        if index.preorder.len() != num_nodes {
            return Err(GridError::NotATree(format!(
                "only {} of {} nodes reachable from the root",
                index.preorder.len(),
                num_nodes
            )));
        }

        Ok(GridTopology { num_nodes, edges: edges.to_vec(), zmap, index })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    /// All non-root nodes in ascending id order.
    pub fn non_root_nodes(&self) -> impl Iterator<Item = NodeId> {
        (1..self.num_nodes).map(NodeId)
    }

    pub fn edges(&self) -> &[(NodeId, NodeId, Impedance)] {
        &self.edges
    }

    /// Operational edges as unordered id pairs (min, max), sorted.
    pub fn edge_pairs(&self) -> Vec<(NodeId, NodeId)> {
        self.zmap.keys().map(|&(a, b)| (NodeId(a), NodeId(b))).collect()
    }

    pub fn impedance(&self, a: NodeId, b: NodeId) -> Option<Impedance> {
        self.zmap.get(&key(a, b)).copied()
    }

    pub fn index(&self) -> &TreeIndex {
        &self.index
    }
}

/// The permissible edge superset `E_full`: every line that could exist, with
/// its impedance, as deduplicated unordered pairs. Always a superset of the
/// operational edges in well-formed scenarios.
#[derive(Debug, Clone, Default)]
pub struct CandidateEdgeSet {
    map: BTreeMap<(usize, usize), Impedance>,
}

impl CandidateEdgeSet {
    pub fn new(edges: &[(NodeId, NodeId, Impedance)]) -> Result<CandidateEdgeSet, GridError> {
        let mut set = CandidateEdgeSet::default();
        for &(a, b, z) in edges {
            set.insert(a, b, z)?;
        }
        Ok(set)
    }

    /// Candidate set containing exactly the operational edges.
    pub fn from_topology(topo: &GridTopology) -> CandidateEdgeSet {
        CandidateEdgeSet { map: topo.zmap.clone() }
    }

    pub fn insert(&mut self, a: NodeId, b: NodeId, z: Impedance) -> Result<(), GridError> {
        if a == b {
            return Err(GridError::SelfLoop(a));
        }
        if !z.is_valid() {
            return Err(GridError::InvalidImpedance(a, b));
        }
        if self.map.insert(key(a, b), z).is_some() {
            return Err(GridError::DuplicateEdge(a, b));
        }
        Ok(())
    }

    pub fn contains(&self, a: NodeId, b: NodeId) -> bool {
        self.map.contains_key(&key(a, b))
    }

    pub fn impedance(&self, a: NodeId, b: NodeId) -> Option<Impedance> {
        self.map.get(&key(a, b)).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Edges as (min-id node, max-id node, impedance), ascending.
    pub fn iter(&self) -> impl Iterator<Item = (NodeId, NodeId, Impedance)> + '_ {
        self.map.iter().map(|(&(a, b), &z)| (NodeId(a), NodeId(b), z))
    }

    /// True iff every operational edge of `topo` is present here.
    pub fn covers(&self, topo: &GridTopology) -> bool {
        topo.zmap.keys().all(|k| self.map.contains_key(k))
    }
}

/// One entry of the closed-form reduced Laplacian inverse: the sum of edge
/// `r` (or `x`) over the edges shared by the root paths of `a` and `b`,
/// i.e. the path from the root down to their lowest common ancestor.
///
/// Zero when either node is the root (its path set is empty).
pub fn hinv_entry(topo: &GridTopology, a: NodeId, b: NodeId, kind: WeightKind) -> f64 {
    if a.is_root() || b.is_root() {
        return 0.0;
    }
    let idx = topo.index();
    let meet = idx.lca(a, b);
    idx.path_to_root(meet)
        .into_iter()
        .map(|(c, p)| kind.path_weight(topo.impedance(c, p).expect("tree edge")))
        .sum()
}

/// Dense `(n-1) × (n-1)` inverse of the reduced weighted Laplacian, assembled
/// from the closed-form path sums (the primary construction; exact up to
/// floating-point addition). Row/column `k` is node `k + 1`.
pub fn hinv_matrix(topo: &GridTopology, kind: WeightKind) -> DMatrix<f64> {
    let n = topo.num_nodes();
    let idx = topo.index();

    // prefix[v] = Σ weight over the root→v path, so H⁻¹(a,b) = prefix[lca].
    let mut prefix = vec![0.0f64; n];
    for v in idx.preorder().skip(1) {
        let p = idx.parent(v).expect("non-root");
        prefix[v.0] = prefix[p.0] + kind.path_weight(topo.impedance(v, p).expect("tree edge"));
    }

    let m = n - 1;
    let mut h = DMatrix::zeros(m, m);
    for i in 0..m {
        let a = NodeId::from_reduced(i);
        for j in i..m {
            let b = NodeId::from_reduced(j);
            let v = prefix[idx.lca(a, b).0];
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

/// Numeric inverse of the reduced weighted Laplacian (assemble, then invert
/// via Cholesky). Kept as the independent cross-check of [`hinv_matrix`];
/// they must agree to ~1e-10 on any valid topology.
pub fn reduced_laplacian_inverse(
    topo: &GridTopology,
    kind: WeightKind,
) -> Result<DMatrix<f64>, GridError> {
    let m = topo.num_nodes() - 1;
    let mut h = DMatrix::zeros(m, m);
    for &(a, b, z) in topo.edges() {
        let w = kind.laplacian_weight(z);
        for n in [a, b] {
            if !n.is_root() {
                h[(n.reduced(), n.reduced())] += w;
            }
        }
        if !a.is_root() && !b.is_root() {
            h[(a.reduced(), b.reduced())] -= w;
            h[(b.reduced(), a.reduced())] -= w;
        }
    }
    nalgebra::Cholesky::new(h)
        .map(|c| c.inverse())
        .ok_or(GridError::SingularMatrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn z(r: f64, x: f64) -> Impedance {
        Impedance::new(r, x)
    }

    fn chain3() -> GridTopology {
        // 0 - 1 - 2 with unit impedances.
        GridTopology::build_tree(
            3,
            &[(NodeId(0), NodeId(1), z(1.0, 1.0)), (NodeId(1), NodeId(2), z(1.0, 1.0))],
        )
        .unwrap()
    }

    /// 0 - 1, 1 - 2, 1 - 3: the 3-leaf star used across the moment tests.
    fn star4() -> GridTopology {
        GridTopology::build_tree(
            4,
            &[
                (NodeId(0), NodeId(1), z(1.0, 1.0)),
                (NodeId(1), NodeId(2), z(2.0, 1.0)),
                (NodeId(1), NodeId(3), z(1.0, 2.0)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn build_tree_validates_shape() {
        assert!(chain3().impedance(NodeId(0), NodeId(1)).is_some());

        // Root degree 2.
        let err = GridTopology::build_tree(
            3,
            &[(NodeId(0), NodeId(1), z(1.0, 1.0)), (NodeId(0), NodeId(2), z(1.0, 1.0))],
        )
        .unwrap_err();
        assert_eq!(err, GridError::RootDegreeViolation(2));

        // Cycle + disconnected node: edge count matches but node 3 unreachable.
        let err = GridTopology::build_tree(
            4,
            &[
                (NodeId(0), NodeId(1), z(1.0, 1.0)),
                (NodeId(1), NodeId(2), z(1.0, 1.0)),
                (NodeId(2), NodeId(1), z(2.0, 2.0)),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, GridError::DuplicateEdge(..)));

        let err = GridTopology::build_tree(
            4,
            &[
                (NodeId(0), NodeId(1), z(1.0, 1.0)),
                (NodeId(1), NodeId(2), z(1.0, 1.0)),
                (NodeId(3), NodeId(3), z(1.0, 1.0)),
            ],
        )
        .unwrap_err();
        assert_eq!(err, GridError::SelfLoop(NodeId(3)));

        // Wrong edge count.
        assert!(matches!(
            GridTopology::build_tree(3, &[(NodeId(0), NodeId(1), z(1.0, 1.0))]),
            Err(GridError::NotATree(_))
        ));

        // Non-positive impedance.
        assert!(matches!(
            GridTopology::build_tree(
                2,
                &[(NodeId(0), NodeId(1), z(0.0, 1.0))]
            ),
            Err(GridError::InvalidImpedance(..))
        ));
    }

    #[test]
    fn tree_index_relations() {
        let t = star4();
        let idx = t.index();
        assert_eq!(idx.parent(NodeId(2)), Some(NodeId(1)));
        assert_eq!(idx.parent(NodeId(0)), None);
        assert_eq!(idx.depth(NodeId(3)), 2);
        assert_eq!(idx.max_depth(), 2);
        assert!(idx.is_descendant(NodeId(2), NodeId(1)));
        assert!(idx.is_descendant(NodeId(1), NodeId(1)));
        assert!(!idx.is_descendant(NodeId(1), NodeId(2)));
        assert_eq!(idx.descendants(NodeId(1)), vec![NodeId(1), NodeId(2), NodeId(3)]);
        assert_eq!(idx.lca(NodeId(2), NodeId(3)), NodeId(1));
        assert_eq!(idx.tree_distance(NodeId(2), NodeId(3)), 2);
        assert_eq!(idx.tree_distance(NodeId(0), NodeId(2)), 2);
        assert_eq!(idx.degree(NodeId(1)), 3);
        assert_eq!(idx.degree(NodeId(0)), 1);
        assert_eq!(
            idx.path_to_root(NodeId(2)),
            vec![(NodeId(2), NodeId(1)), (NodeId(1), NodeId(0))]
        );
    }

    #[test]
    fn hinv_entry_is_shared_path_sum() {
        let t = star4();
        // Shared path of 2 and 3 is just the root edge (r = 1).
        assert_relative_eq!(hinv_entry(&t, NodeId(2), NodeId(3), WeightKind::InverseResistance), 1.0);
        // Diagonal = full path sum: r01 + r12 = 3.
        assert_relative_eq!(hinv_entry(&t, NodeId(2), NodeId(2), WeightKind::InverseResistance), 3.0);
        // Reactance weighting of the same entries.
        assert_relative_eq!(hinv_entry(&t, NodeId(2), NodeId(3), WeightKind::InverseReactance), 1.0);
        assert_relative_eq!(hinv_entry(&t, NodeId(3), NodeId(3), WeightKind::InverseReactance), 3.0);
        // Root rows vanish.
        assert_relative_eq!(hinv_entry(&t, NodeId(0), NodeId(2), WeightKind::InverseResistance), 0.0);
    }

    #[test]
    fn chain_inverse_matches_known_matrix() {
        let t = chain3();
        let h = hinv_matrix(&t, WeightKind::InverseResistance);
        assert_relative_eq!(h[(0, 0)], 1.0);
        assert_relative_eq!(h[(0, 1)], 1.0);
        assert_relative_eq!(h[(1, 0)], 1.0);
        assert_relative_eq!(h[(1, 1)], 2.0);

        let single = GridTopology::build_tree(2, &[(NodeId(0), NodeId(1), z(2.0, 3.0))]).unwrap();
        let h = hinv_matrix(&single, WeightKind::InverseResistance);
        assert_eq!(h.nrows(), 1);
        assert_relative_eq!(h[(0, 0)], 2.0);
        let h = hinv_matrix(&single, WeightKind::InverseReactance);
        assert_relative_eq!(h[(0, 0)], 3.0);
    }

    #[test]
    fn closed_form_agrees_with_numeric_inverse() {
        let t = star4();
        for kind in [WeightKind::InverseResistance, WeightKind::InverseReactance] {
            let a = hinv_matrix(&t, kind);
            let b = reduced_laplacian_inverse(&t, kind).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn parent_difference_identity() {
        // H⁻¹(a,c) − H⁻¹(b,c) equals r_ab when c ∈ D^a (b the parent), else 0.
        let t = star4();
        let (a, b) = (NodeId(2), NodeId(1));
        for c in [NodeId(1), NodeId(2), NodeId(3)] {
            let d = hinv_entry(&t, a, c, WeightKind::InverseResistance)
                - hinv_entry(&t, b, c, WeightKind::InverseResistance);
            let expect = if t.index().is_descendant(c, a) { 2.0 } else { 0.0 };
            assert_relative_eq!(d, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn candidate_set_dedupes_and_covers() {
        let t = star4();
        let mut c = CandidateEdgeSet::from_topology(&t);
        assert!(c.covers(&t));
        assert_eq!(c.len(), 3);
        c.insert(NodeId(2), NodeId(3), z(1.0, 1.0)).unwrap();
        assert!(c.contains(NodeId(3), NodeId(2)));
        assert_eq!(
            c.insert(NodeId(3), NodeId(2), z(2.0, 2.0)).unwrap_err(),
            GridError::DuplicateEdge(NodeId(3), NodeId(2))
        );
        assert_eq!(
            c.insert(NodeId(2), NodeId(2), z(1.0, 1.0)).unwrap_err(),
            GridError::SelfLoop(NodeId(2))
        );
    }
}
