//! Working-tree engine shared by the two hidden-node learners.
//!
//! The engine starts from the minimum spanning tree of the *observed* nodes
//! under the deviation distance — correct everywhere except around hidden
//! nodes — and repairs it by walking nodes deepest-first. At each node it
//! re-derives every child edge from the child's subtree aggregate; children
//! that fail become suspects, pooled with any groups bubbled up from below.
//! Suspect groups are matched to a hidden parent with the grandparent
//! difference test (which cancels the hidden node's unknown moments); on a
//! match the hidden node is spliced in and its injection moments solved from
//! the three-distance system. Groups that match nothing are pushed one level
//! up — together with the node that failed to adopt them, since the
//! remaining explanation is that they are *its* siblings under a hidden
//! parent — until some ancestor adopts them or the root gives up.
//!
//! Invariant throughout: when a node is inspected, every node strictly
//! deeper has already been inspected, so each suspect roots a subtree whose
//! edges and statistics are fully settled — its aggregate is trustworthy.
//!
//! Every verification, rejection, search outcome, and push is emitted at
//! `trace` level, so a consumer with a logger installed can replay the whole
//! repair walk.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;

use crate::grid::{CandidateEdgeSet, NodeId};
use crate::moments::{MomentError, MomentTable};

use log::trace;

use super::mst::UnionFind;
use super::relations::{compose, phi_vector, solve_moment_system};
use super::{kruskal_mst, InjectionMoments, LearnError, LearnedModel, Thresholds};

pub(crate) fn run(
    table: &MomentTable,
    candidates: &CandidateEdgeSet,
    observed_stats: &BTreeMap<NodeId, InjectionMoments>,
    hidden: &BTreeSet<NodeId>,
    thresholds: &Thresholds,
    clustering: bool,
) -> Result<LearnedModel, LearnError> {
    if !table.has_phase() {
        return Err(MomentError::PhaseMomentsMissing.into());
    }
    if !table.contains(NodeId(0)) {
        return Err(MomentError::UnobservedNode(NodeId(0)).into());
    }
    for &h in hidden {
        if table.contains(h) {
            return Err(LearnError::HiddenNodeObserved { node: h });
        }
    }
    let mut stats = BTreeMap::new();
    for &n in table.nodes() {
        if n.is_root() {
            continue;
        }
        match observed_stats.get(&n) {
            Some(&m) => {
                stats.insert(n, m);
            }
            None => return Err(MomentError::UnobservedNode(n).into()),
        }
    }

    let mut engine = Engine {
        table,
        candidates,
        thresholds,
        clustering,
        parent: BTreeMap::new(),
        children: BTreeMap::new(),
        stats,
        hidden_remaining: hidden.clone(),
        hidden_solved: BTreeMap::new(),
        pending: BTreeMap::new(),
        explored: BTreeSet::new(),
        mst_parent: BTreeMap::new(),
        unresolved: Vec::new(),
    };
    engine.init_spanning_tree();
    while let Some(node) = engine.next_target() {
        engine.inspect(node)?;
    }
    engine.finalize()
}

struct Engine<'a> {
    table: &'a MomentTable,
    candidates: &'a CandidateEdgeSet,
    thresholds: &'a Thresholds,
    clustering: bool,
    /// Working tree, child → parent. Detached suspects have no entry.
    parent: BTreeMap<NodeId, NodeId>,
    children: BTreeMap<NodeId, BTreeSet<NodeId>>,
    /// Own injection moments per node: observed inputs plus solved hidden.
    stats: BTreeMap<NodeId, InjectionMoments>,
    hidden_remaining: BTreeSet<NodeId>,
    hidden_solved: BTreeMap<NodeId, InjectionMoments>,
    /// Suspect groups awaiting their target node's inspection.
    pending: BTreeMap<NodeId, Vec<Vec<NodeId>>>,
    explored: BTreeSet<NodeId>,
    /// Initial spanning-tree parents, kept for best-effort re-attachment.
    mst_parent: BTreeMap<NodeId, NodeId>,
    unresolved: Vec<Vec<NodeId>>,
}

impl Engine<'_> {
    /// Minimum spanning tree over the complete observed-pair graph, rooted
    /// at the substation.
    fn init_spanning_tree(&mut self) {
        let nodes: BTreeSet<NodeId> = self.table.nodes().iter().copied().collect();
        let list: Vec<NodeId> = nodes.iter().copied().collect();
        let mut weighted = Vec::with_capacity(list.len() * (list.len() - 1) / 2);
        for i in 0..list.len() {
            for j in (i + 1)..list.len() {
                weighted.push((list[i], list[j], self.table.phi(list[i], list[j])));
            }
        }
        let chosen = kruskal_mst(&nodes, &weighted);

        let mut adj: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for &(a, b) in &chosen {
            adj.entry(a).or_default().push(b);
            adj.entry(b).or_default().push(a);
        }
        let mut queue = vec![NodeId(0)];
        let mut head = 0;
        let mut seen: BTreeSet<NodeId> = [NodeId(0)].into_iter().collect();
        while head < queue.len() {
            let v = queue[head];
            head += 1;
            for &u in adj.get(&v).into_iter().flatten() {
                if seen.insert(u) {
                    self.parent.insert(u, v);
                    self.children.entry(v).or_default().insert(u);
                    queue.push(u);
                }
            }
        }
        self.mst_parent = self.parent.clone();
    }

    /// Deepest unexplored node still attached to the root; ties break toward
    /// the smallest id. Children always precede their parent.
    fn next_target(&self) -> Option<NodeId> {
        let mut best: Option<(usize, NodeId)> = None;
        let mut queue = vec![(NodeId(0), 0usize)];
        while let Some((v, d)) = queue.pop() {
            if !self.explored.contains(&v) {
                let better = match best {
                    None => true,
                    Some((bd, bid)) => d > bd || (d == bd && v < bid),
                };
                if better {
                    best = Some((d, v));
                }
            }
            for &c in self.children.get(&v).into_iter().flatten() {
                queue.push((c, d + 1));
            }
        }
        best.map(|(_, v)| v)
    }

    fn detach(&mut self, u: NodeId) {
        if let Some(p) = self.parent.remove(&u) {
            if let Some(kids) = self.children.get_mut(&p) {
                kids.remove(&u);
            }
        }
    }

    /// Injection-moment aggregate over a node's current working subtree.
    fn subtree_sums(&self, u: NodeId) -> InjectionMoments {
        let mut s = *self.stats.get(&u).expect("attached node has statistics");
        for &c in self.children.get(&u).into_iter().flatten() {
            s = s.add(self.subtree_sums(c));
        }
        s
    }

    /// Parent–child residual check: does the child's subtree aggregate
    /// reproduce all three observed deviation distances across the claimed
    /// edge? A candidate impedance has two degrees of freedom, so a spurious
    /// edge that happens to match the squared-magnitude row still has to
    /// match the phase and cross rows — three coincidences, not one.
    fn edge_verified(&self, u: NodeId, node: NodeId) -> Result<bool, LearnError> {
        let Some(z) = self.candidates.impedance(u, node) else {
            // A true edge is always a candidate, so a non-candidate claim is
            // wrong outright.
            return Ok(false);
        };
        let observed = Vector3::new(
            self.table.phi(u, node),
            self.table.phi_theta(u, node)?,
            self.table.phi_vtheta(u, node)?,
        );
        let predicted = phi_vector(z, self.subtree_sums(u));
        if !(predicted[0].abs() > 0.0) || !(predicted[1].abs() > 0.0) {
            return Err(LearnError::ZeroPredictedValue { a: u, b: node });
        }
        let scale = Vector3::new(
            predicted[0].abs(),
            predicted[1].abs(),
            (predicted[0] * predicted[1]).abs().sqrt(),
        );
        let r = observed - predicted;
        let ok = (0..3).all(|row| r[row].abs() <= self.thresholds.tau1 * scale[row]);
        if ok {
            trace!("  edge ({u},{node}): verified");
        } else {
            trace!("  edge ({u},{node}): pattern reject {:?}", r.component_div(&scale));
        }
        Ok(ok)
    }

    fn inspect(&mut self, node: NodeId) -> Result<(), LearnError> {
        let kids: Vec<NodeId> =
            self.children.get(&node).map(|s| s.iter().copied().collect()).unwrap_or_default();
        trace!("inspect {node}: kids {kids:?}");
        let mut pool: Vec<NodeId> = Vec::new();
        for u in kids {
            if !self.edge_verified(u, node)? {
                self.detach(u);
                pool.push(u);
            }
        }
        for group in self.pending.remove(&node).unwrap_or_default() {
            pool.extend(group);
        }
        if pool.is_empty() {
            self.explored.insert(node);
            return Ok(());
        }
        pool.sort_unstable();

        let (clusters, sibling_idx) = if self.clustering {
            self.sign_clusters(node, &pool)?
        } else {
            (vec![pool.clone()], None)
        };

        let mut push_group: Vec<NodeId> = Vec::new();
        for (i, cluster) in clusters.iter().enumerate() {
            if Some(i) == sibling_idx || cluster.len() < 2 {
                // Designated siblings of `node`, or too small to test: both
                // cases are retried one level up.
                push_group.extend(cluster.iter().copied());
                continue;
            }
            match self.search_hidden_parent(node, cluster)? {
                Some((h, solved)) => {
                    trace!("  attach {h} under {node} adopting {cluster:?}");
                    self.attach_hidden(node, h, cluster, solved);
                }
                None => push_group.extend(cluster.iter().copied()),
            }
        }

        if !push_group.is_empty() {
            push_group.sort_unstable();
            trace!("  push from {node}: {push_group:?}");
            if node.is_root() {
                // Nowhere left to push; report the group unresolved.
                self.unresolved.push(push_group);
            } else {
                let p = self.parent[&node];
                self.detach(node);
                let mut group = vec![node];
                group.extend(push_group);
                self.pending.entry(p).or_default().push(group);
            }
        }
        self.explored.insert(node);
        Ok(())
    }

    /// Split a suspect pool by the triplet statistic
    /// `t(k1,k2) = φ(k1,node) + φ(k2,node) − φ(k1,k2)`:
    /// positive ⇒ same hidden parent; ≈0 ⇒ children of *different* hidden
    /// children of `node`; negative ⇒ one is `node`'s sibling under a hidden
    /// parent while the other hangs below a hidden child. Returns the
    /// clusters and, when ≥3 clusters single one out as negative against all
    /// others, that sibling cluster's index. A two-cluster negative split is
    /// left undesignated — the hidden-parent searches disambiguate it.
    fn sign_clusters(
        &self,
        node: NodeId,
        pool: &[NodeId],
    ) -> Result<(Vec<Vec<NodeId>>, Option<usize>), LearnError> {
        let n = pool.len();
        if n == 1 {
            return Ok((vec![pool.to_vec()], None));
        }
        let t = |i: usize, j: usize| {
            self.table.phi(pool[i], node) + self.table.phi(pool[j], node)
                - self.table.phi(pool[i], pool[j])
        };
        // Zero threshold relative to the local distance scale.
        let mut mags: Vec<f64> = Vec::new();
        for i in 0..n {
            mags.push(self.table.phi(pool[i], node).abs());
            for j in (i + 1)..n {
                mags.push(self.table.phi(pool[i], pool[j]).abs());
            }
        }
        mags.sort_by(f64::total_cmp);
        let thr = self.thresholds.tau3 * mags[mags.len() / 2];

        let mut uf = UnionFind::new(n);
        for i in 0..n {
            for j in (i + 1)..n {
                if t(i, j) > thr {
                    uf.union(i, j);
                }
            }
        }
        let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            members.entry(uf.find(i)).or_default().push(i);
        }
        let mut clusters_idx: Vec<Vec<usize>> = members.into_values().collect();
        clusters_idx.sort_by_key(|c| c[0]);

        // A merged pair contradicting the merge means the signs lie.
        for cluster in &clusters_idx {
            for (a, &i) in cluster.iter().enumerate() {
                for &j in &cluster[a + 1..] {
                    if t(i, j) < -thr {
                        return Err(LearnError::InconsistentSigns { node });
                    }
                }
            }
        }

        let k = clusters_idx.len();
        let mut sibling = None;
        if k >= 2 {
            let mean_t = |ci: &[usize], cj: &[usize]| {
                let mut s = 0.0;
                for &i in ci {
                    for &j in cj {
                        s += t(i, j);
                    }
                }
                s / (ci.len() * cj.len()) as f64
            };
            let neg: Vec<Vec<bool>> = (0..k)
                .map(|i| {
                    (0..k)
                        .map(|j| i != j && mean_t(&clusters_idx[i], &clusters_idx[j]) < -thr)
                        .collect()
                })
                .collect();
            let full_neg: Vec<usize> =
                (0..k).filter(|&i| (0..k).all(|j| j == i || neg[i][j])).collect();
            let any_neg = (0..k).any(|i| neg[i].iter().any(|&b| b));
            match full_neg.len() {
                1 => sibling = Some(full_neg[0]),
                2 if k == 2 => {
                    // Unordered pair: either could be the sibling side; the
                    // caller's searches settle it.
                }
                0 if !any_neg => {}
                _ => return Err(LearnError::InconsistentSigns { node }),
            }
        }

        let clusters: Vec<Vec<NodeId>> = clusters_idx
            .iter()
            .map(|c| c.iter().map(|&i| pool[i]).collect())
            .collect();
        Ok((clusters, sibling))
    }

    /// Grandparent test: which remaining hidden node, placed between this
    /// cluster and `g`, explains the members' three-distance vectors to `g`?
    /// Requires the hidden node's candidate star (edge to `g` and to every
    /// member). A hypothesis must survive two checks: the pairwise
    /// differences of the members' leftovers must cancel (the hidden node's
    /// own contribution is common to all members), and the moments solved
    /// from the averaged leftover must reproduce every member's equations
    /// absolutely — a wrong grandparent whose pairwise differences happen to
    /// cancel still fails the second check. The survivor's solved moments
    /// are returned so attachment needn't repeat the work.
    fn search_hidden_parent(
        &self,
        g: NodeId,
        cluster: &[NodeId],
    ) -> Result<Option<(NodeId, InjectionMoments)>, LearnError> {
        let sums: Vec<InjectionMoments> =
            cluster.iter().map(|&u| self.subtree_sums(u)).collect();
        let total = sums.iter().fold(InjectionMoments::default(), |a, &b| a.add(b));
        let mut observed = Vec::with_capacity(cluster.len());
        for &u in cluster {
            observed.push(Vector3::new(
                self.table.phi(u, g),
                self.table.phi_theta(u, g)?,
                self.table.phi_vtheta(u, g)?,
            ));
        }

        let mut passers: Vec<(NodeId, InjectionMoments)> = Vec::new();
        'next_hidden: for &h in &self.hidden_remaining {
            let Some(z_hg) = self.candidates.impedance(h, g) else {
                trace!("  search g={g} {cluster:?}: h={h} no edge to g");
                continue;
            };
            let mut member_z = Vec::with_capacity(cluster.len());
            for &u in cluster {
                match self.candidates.impedance(u, h) {
                    Some(z) => member_z.push(z),
                    None => {
                        trace!("  search g={g} {cluster:?}: h={h} no edge to {u}");
                        continue 'next_hidden;
                    }
                }
            }
            // Per-member leftover after subtracting everything the
            // hypothesis already fixes: the member's own subtree across the
            // composite path, and its co-members across the grandparent
            // edge. If `h` truly sits here, every leftover equals the hidden
            // node's own (unknown) contribution.
            let leftover: Vec<Vector3<f64>> = (0..cluster.len())
                .map(|i| {
                    observed[i]
                        - phi_vector(compose(member_z[i], z_hg), sums[i])
                        - phi_vector(z_hg, total.sub(sums[i]))
                })
                .collect();

            for i in 0..cluster.len() {
                for j in (i + 1)..cluster.len() {
                    let scale =
                        pair_scale(&observed[i], &observed[j], cluster[i], cluster[j])?;
                    let d = leftover[i] - leftover[j];
                    for row in 0..3 {
                        if d[row].abs() > self.thresholds.tau2 * scale[row] {
                            trace!(
                                "  search g={g} {cluster:?}: h={h} pairwise reject ({},{}) row {row}: {}",
                                cluster[i], cluster[j], d[row] / scale[row]
                            );
                            continue 'next_hidden;
                        }
                    }
                }
            }

            // Averaging the leftovers before the solve is the least-squares
            // estimate, since every member shares the coefficient matrix.
            let mut mean = Vector3::zeros();
            for r in &leftover {
                mean += r;
            }
            mean /= cluster.len() as f64;
            let solved = match solve_moment_system(z_hg, &mean) {
                Ok(s) => s,
                // A degenerate grandparent edge can't be tested; it is no
                // reason to abort other hypotheses.
                Err(LearnError::IllConditionedSystem { .. }) => continue,
                Err(e) => return Err(e),
            };
            let own = phi_vector(z_hg, solved);
            for (i, &u) in cluster.iter().enumerate() {
                let scale = pair_scale(&observed[i], &observed[i], u, g)?;
                let r = leftover[i] - own;
                for row in 0..3 {
                    if r[row].abs() > self.thresholds.tau2 * scale[row] {
                        trace!(
                            "  search g={g} {cluster:?}: h={h} residual reject at {u} row {row}: {}",
                            r[row] / scale[row]
                        );
                        continue 'next_hidden;
                    }
                }
            }
            trace!("  search g={g} {cluster:?}: h={h} passes");
            passers.push((h, solved));
        }
        match passers.len() {
            0 => Ok(None),
            1 => Ok(passers.pop()),
            _ => Err(LearnError::AmbiguousParent {
                node: g,
                candidates: passers.into_iter().map(|(h, _)| h).collect(),
            }),
        }
    }

    /// Splice hidden node `h` in as a child of `g` adopting `cluster`, with
    /// its injection moments already solved by the search.
    fn attach_hidden(
        &mut self,
        g: NodeId,
        h: NodeId,
        cluster: &[NodeId],
        solved: InjectionMoments,
    ) {
        self.stats.insert(h, solved);
        self.hidden_solved.insert(h, solved);
        self.hidden_remaining.remove(&h);
        self.parent.insert(h, g);
        self.children.entry(g).or_default().insert(h);
        let mut adopted = BTreeSet::new();
        for &u in cluster {
            self.parent.insert(u, h);
            adopted.insert(u);
        }
        self.children.insert(h, adopted);
        self.explored.insert(h);
    }

    fn finalize(self) -> Result<LearnedModel, LearnError> {
        let mut edges: Vec<(NodeId, NodeId, crate::grid::Impedance)> = Vec::new();
        for (&c, &p) in &self.parent {
            let z = self
                .candidates
                .impedance(c, p)
                .expect("every surviving working edge is a candidate edge");
            edges.push((NodeId(c.0.min(p.0)), NodeId(c.0.max(p.0)), z));
        }

        // Best-effort re-attachment of unresolved members along their
        // initial spanning-tree edges (cycle-guarded; such edges are not
        // verified, merely restored so the output still spans).
        let mut universe: Vec<NodeId> = self.table.nodes().to_vec();
        universe.extend(self.hidden_solved.keys().copied());
        universe.sort_unstable();
        universe.dedup();
        let pos = |a: NodeId| universe.binary_search(&a).expect("node in universe");
        let mut uf = UnionFind::new(universe.len());
        for &(a, b, _) in &edges {
            uf.union(pos(a), pos(b));
        }
        let loose: Vec<NodeId> = self.unresolved.iter().flatten().copied().collect();
        let mut progress = true;
        while progress {
            progress = false;
            for &r in &loose {
                if let Some(&mp) = self.mst_parent.get(&r) {
                    if uf.find(pos(r)) != uf.find(pos(mp)) {
                        if let Some(z) = self.candidates.impedance(r, mp) {
                            edges.push((NodeId(r.0.min(mp.0)), NodeId(r.0.max(mp.0)), z));
                            uf.union(pos(r), pos(mp));
                            progress = true;
                        }
                    }
                }
            }
        }
        edges.sort_by_key(|&(a, b, _)| (a, b));

        let model = LearnedModel {
            edges,
            hidden_stats: self.hidden_solved,
            node_stats: None,
            unresolved: self.unresolved,
        };
        if self.hidden_remaining.is_empty() {
            Ok(model)
        } else {
            Err(LearnError::UnresolvedNodes {
                model: Box::new(model),
                missing: self.hidden_remaining.into_iter().collect(),
            })
        }
    }
}

/// Row-wise tolerance scales for comparing two three-distance vectors: each
/// squared-deviation row against the pair's mean, and the cross row against
/// the geometric mean of the first two (the scale of its natural bound, and
/// never zero for valid statistics even when the cross moments vanish).
fn pair_scale(
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    na: NodeId,
    nb: NodeId,
) -> Result<Vector3<f64>, LearnError> {
    let s0 = (0.5 * (a[0] + b[0])).abs();
    let s1 = (0.5 * (a[1] + b[1])).abs();
    if !(s0 > 0.0) || !(s1 > 0.0) {
        return Err(LearnError::ZeroPredictedValue { a: na, b: nb });
    }
    Ok(Vector3::new(s0, s1, (s0 * s1).sqrt()))
}
