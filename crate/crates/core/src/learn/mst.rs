//! Kruskal spanning forest with a deterministic total order on edges.

use std::collections::BTreeSet;

use crate::grid::NodeId;

/// Disjoint-set forest over arbitrary node ids.
pub(crate) struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> UnionFind {
        UnionFind { parent: (0..n).collect(), rank: vec![0; n] }
    }

    pub(crate) fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    /// Joins the two sets; returns false if they were already one.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Minimum spanning forest of the weighted edges restricted to `nodes`.
/// Edges are taken in ascending `(weight, min endpoint, max endpoint)` order,
/// so equal weights resolve deterministically. Returns the chosen edges with
/// endpoints normalized `(min, max)`; fewer than `nodes.len() - 1` edges
/// means the input did not connect the node set.
pub fn kruskal_mst(
    nodes: &BTreeSet<NodeId>,
    edges: &[(NodeId, NodeId, f64)],
) -> Vec<(NodeId, NodeId)> {
    let order: Vec<NodeId> = nodes.iter().copied().collect();
    let pos = |a: NodeId| order.binary_search(&a).ok();

    let mut usable: Vec<(f64, NodeId, NodeId)> = edges
        .iter()
        .filter(|&&(a, b, _)| a != b && nodes.contains(&a) && nodes.contains(&b))
        .map(|&(a, b, w)| (w, NodeId(a.0.min(b.0)), NodeId(a.0.max(b.0))))
        .collect();
    usable.sort_by(|l, r| l.0.total_cmp(&r.0).then(l.1.cmp(&r.1)).then(l.2.cmp(&r.2)));

    let mut uf = UnionFind::new(order.len());
    let mut chosen = Vec::with_capacity(order.len().saturating_sub(1));
    for (_, a, b) in usable {
        let (ia, ib) = (pos(a).unwrap(), pos(b).unwrap());
        if uf.union(ia, ib) {
            chosen.push((a, b));
            if chosen.len() + 1 == order.len() {
                break;
            }
        }
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nodes(ids: &[usize]) -> BTreeSet<NodeId> {
        ids.iter().map(|&i| NodeId(i)).collect()
    }

    #[test]
    fn picks_cheapest_spanning_edges() {
        let ns = nodes(&[0, 1, 2, 3]);
        let edges = vec![
            (NodeId(0), NodeId(1), 1.0),
            (NodeId(1), NodeId(2), 2.0),
            (NodeId(0), NodeId(2), 5.0),
            (NodeId(2), NodeId(3), 1.5),
            (NodeId(1), NodeId(3), 4.0),
        ];
        let got = kruskal_mst(&ns, &edges);
        assert_eq!(got, vec![(NodeId(0), NodeId(1)), (NodeId(2), NodeId(3)), (NodeId(1), NodeId(2))]);
    }

    #[test]
    fn equal_weights_break_ties_by_endpoints() {
        let ns = nodes(&[0, 1, 2]);
        // A 3-cycle of equal weights: the two lexicographically smallest
        // pairs win, regardless of input order.
        let edges = vec![
            (NodeId(1), NodeId(2), 3.0),
            (NodeId(0), NodeId(2), 3.0),
            (NodeId(1), NodeId(0), 3.0),
        ];
        let got = kruskal_mst(&ns, &edges);
        assert_eq!(got, vec![(NodeId(0), NodeId(1)), (NodeId(0), NodeId(2))]);
    }

    #[test]
    fn disconnected_input_yields_forest() {
        let ns = nodes(&[0, 1, 2, 3]);
        let edges = vec![(NodeId(0), NodeId(1), 1.0), (NodeId(2), NodeId(3), 1.0)];
        let got = kruskal_mst(&ns, &edges);
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn ignores_edges_outside_node_set() {
        let ns = nodes(&[0, 1]);
        let edges = vec![
            (NodeId(0), NodeId(5), 0.1),
            (NodeId(0), NodeId(1), 9.0),
            (NodeId(2), NodeId(2), 0.0),
        ];
        let got = kruskal_mst(&ns, &edges);
        assert_eq!(got, vec![(NodeId(0), NodeId(1))]);
    }
}
