use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of an agent in the potential node set. Stable for a whole run.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i as u32)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Directed graph over a subset of the potential nodes.
///
/// An edge `(from, to)` means `from` can transmit to `to`. Self-loops are
/// never stored; the protocol adds the virtual self-edge on its own.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DigraphRepr")]
pub struct Digraph {
    nodes: BTreeSet<NodeId>,
    edges: BTreeSet<(NodeId, NodeId)>,
}

#[derive(Deserialize)]
struct DigraphRepr {
    nodes: BTreeSet<NodeId>,
    edges: Vec<(NodeId, NodeId)>,
}

impl TryFrom<DigraphRepr> for Digraph {
    type Error = Error;

    fn try_from(repr: DigraphRepr) -> Result<Self> {
        Digraph::from_edges(repr.nodes, repr.edges)
    }
}

impl Digraph {
    pub fn new(nodes: impl IntoIterator<Item = NodeId>) -> Self {
        Digraph {
            nodes: nodes.into_iter().collect(),
            edges: BTreeSet::new(),
        }
    }

    pub fn from_edges(
        nodes: impl IntoIterator<Item = NodeId>,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self> {
        let mut g = Digraph::new(nodes);
        for (from, to) in edges {
            g.add_edge(from, to)?;
        }
        Ok(g)
    }

    /// Inserts `from -> to`. Returns `true` if the edge was new.
    pub fn add_edge(&mut self, from: NodeId, to: NodeId) -> Result<bool> {
        if from == to {
            return Err(Error::InvalidEdge {
                from,
                to,
                reason: "self-loops are implicit",
            });
        }
        if !self.nodes.contains(&from) || !self.nodes.contains(&to) {
            return Err(Error::InvalidEdge {
                from,
                to,
                reason: "endpoint is not in the node set",
            });
        }
        Ok(self.edges.insert((from, to)))
    }

    pub fn remove_edge(&mut self, from: NodeId, to: NodeId) -> bool {
        self.edges.remove(&(from, to))
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(NodeId, NodeId)> {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains_edge(&self, from: NodeId, to: NodeId) -> bool {
        self.edges.contains(&(from, to))
    }

    pub fn out_neighbors(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.edges
            .range((node, NodeId(0))..=(node, NodeId(u32::MAX)))
            .map(|&(_, to)| to)
    }

    pub fn in_neighbors(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.edges
            .iter()
            .filter(move |&&(_, to)| to == node)
            .map(|&(from, _)| from)
    }

    /// Out-neighbors of `node` that also belong to `filter`.
    pub fn out_neighbors_in(&self, node: NodeId, filter: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
        self.out_neighbors(node)
            .filter(|v| filter.contains(v))
            .collect()
    }

    /// True iff every ordered pair of distinct nodes is joined by a directed
    /// path. Graphs with zero or one node are strongly connected.
    pub fn is_strongly_connected(&self) -> bool {
        let Some(&root) = self.nodes.iter().next() else {
            return true;
        };
        let forward = self.reach_from(root, false);
        if forward.len() != self.nodes.len() {
            return false;
        }
        self.reach_from(root, true).len() == self.nodes.len()
    }

    fn reach_from(&self, root: NodeId, reversed: bool) -> BTreeSet<NodeId> {
        let mut adjacency: std::collections::BTreeMap<NodeId, Vec<NodeId>> = Default::default();
        for &(from, to) in &self.edges {
            let (a, b) = if reversed { (to, from) } else { (from, to) };
            adjacency.entry(a).or_default().push(b);
        }
        let mut seen = BTreeSet::from([root]);
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            for &w in adjacency.get(&v).map(Vec::as_slice).unwrap_or_default() {
                if seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        seen
    }
}

pub fn is_strongly_connected(g: &Digraph) -> bool {
    g.is_strongly_connected()
}

/// Union of node sets and edge sets.
pub fn union_digraph<'a>(graphs: impl IntoIterator<Item = &'a Digraph>) -> Result<Digraph> {
    let mut iter = graphs.into_iter();
    let mut acc = iter.next().ok_or(Error::EmptyUnion)?.clone();
    for g in iter {
        acc.nodes.extend(g.nodes.iter().copied());
        acc.edges.extend(g.edges.iter().copied());
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: u32) -> Vec<NodeId> {
        (0..n).map(NodeId).collect()
    }

    #[test]
    fn cycle_is_strongly_connected() {
        let g = Digraph::from_edges(
            ids(3),
            [(NodeId(0), NodeId(1)), (NodeId(1), NodeId(2)), (NodeId(2), NodeId(0))],
        )
        .unwrap();
        assert!(g.is_strongly_connected());
    }

    #[test]
    fn path_is_not_strongly_connected() {
        let g = Digraph::from_edges(ids(3), [(NodeId(0), NodeId(1)), (NodeId(1), NodeId(2))])
            .unwrap();
        assert!(!g.is_strongly_connected());
    }

    #[test]
    fn singleton_is_strongly_connected() {
        assert!(Digraph::new(ids(1)).is_strongly_connected());
    }

    #[test]
    fn rejects_self_loops_and_foreign_endpoints() {
        let mut g = Digraph::new(ids(2));
        assert!(g.add_edge(NodeId(0), NodeId(0)).is_err());
        assert!(g.add_edge(NodeId(0), NodeId(5)).is_err());
        assert!(g.add_edge(NodeId(0), NodeId(1)).unwrap());
        assert!(!g.add_edge(NodeId(0), NodeId(1)).unwrap());
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn union_examples() {
        let ab = Digraph::from_edges(ids(2), [(NodeId(0), NodeId(1))]).unwrap();
        let ba = Digraph::from_edges(ids(2), [(NodeId(1), NodeId(0))]).unwrap();
        let empty = Digraph::new(ids(2));

        let u = union_digraph([&ab, &ba]).unwrap();
        assert!(u.contains_edge(NodeId(0), NodeId(1)));
        assert!(u.contains_edge(NodeId(1), NodeId(0)));
        assert_eq!(u.edge_count(), 2);

        assert_eq!(union_digraph([&ab, &ab]).unwrap(), ab);
        assert_eq!(union_digraph([&ab, &empty]).unwrap(), ab);
        assert!(matches!(
            union_digraph(std::iter::empty::<&Digraph>()),
            Err(Error::EmptyUnion)
        ));
    }

    #[test]
    fn neighbor_queries() {
        let g = Digraph::from_edges(
            ids(4),
            [(NodeId(1), NodeId(0)), (NodeId(1), NodeId(3)), (NodeId(2), NodeId(1))],
        )
        .unwrap();
        assert_eq!(g.out_neighbors(NodeId(1)).collect::<Vec<_>>(), vec![NodeId(0), NodeId(3)]);
        assert_eq!(g.in_neighbors(NodeId(1)).collect::<Vec<_>>(), vec![NodeId(2)]);
        let filter = BTreeSet::from([NodeId(3)]);
        assert_eq!(g.out_neighbors_in(NodeId(1), &filter), filter);
    }

    #[test]
    fn json_shape() {
        let g = Digraph::from_edges(ids(2), [(NodeId(0), NodeId(1))]).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"nodes":[0,1],"edges":[[0,1]]}"#);
        let back: Digraph = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<Digraph>(r#"{"nodes":[0],"edges":[[0,1]]}"#).is_err());
    }
}
