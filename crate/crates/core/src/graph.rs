//! Latent dependency graphs.
//!
//! Latent blocks are numbered `1..=N`. Id `0` is reserved for the virtual
//! root that [`LatentDag::add_virtual_root`] attaches above every source, so
//! the recursive solver has a single entry point. An edge `(i, j)` means the
//! posterior of latent `j` conditions on latent `i`.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    #[inline]
    pub fn index(self) -> usize {
        self.0
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

impl From<usize> for NodeId {
    fn from(v: usize) -> Self {
        NodeId(v)
    }
}

/// Immutable DAG over latent parameter blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentDag {
    node_count: usize,
    /// Indexed by node id; slot 0 is the (dimensionless) root.
    dims: Vec<usize>,
    edges: BTreeSet<(NodeId, NodeId)>,
    children: Vec<Vec<NodeId>>,
    parents: Vec<Vec<NodeId>>,
    rooted: bool,
}

impl LatentDag {
    /// Builds a graph over nodes `1..=dims.len()`. Cycles are accepted here and
    /// reported by [`LatentDag::topo_sort`].
    pub fn new<I>(dims: Vec<usize>, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let node_count = dims.len();
        for (k, &d) in dims.iter().enumerate() {
            if d == 0 {
                return Err(Error::DimensionMismatch {
                    node: NodeId(k + 1),
                    expected: 1,
                    got: 0,
                });
            }
        }
        let mut set = BTreeSet::new();
        for (from, to) in edges {
            for id in [from, to] {
                if id == 0 || id > node_count {
                    return Err(Error::InvalidNode {
                        node: NodeId(id),
                        count: node_count,
                    });
                }
            }
            if from == to {
                return Err(Error::SelfEdge(NodeId(from)));
            }
            set.insert((NodeId(from), NodeId(to)));
        }
        let mut all_dims = Vec::with_capacity(node_count + 1);
        all_dims.push(0);
        all_dims.extend(dims);
        Ok(Self::assemble(node_count, all_dims, set, false))
    }

    fn assemble(node_count: usize, dims: Vec<usize>, edges: BTreeSet<(NodeId, NodeId)>, rooted: bool) -> Self {
        let mut children = vec![Vec::new(); node_count + 1];
        let mut parents = vec![Vec::new(); node_count + 1];
        // BTreeSet iteration keeps both adjacency lists ascending.
        for &(p, c) in &edges {
            children[p.index()].push(c);
            parents[c.index()].push(p);
        }
        for list in parents.iter_mut() {
            list.sort();
        }
        LatentDag {
            node_count,
            dims,
            edges,
            children,
            parents,
            rooted,
        }
    }

    pub fn chain(dims: Vec<usize>) -> Result<Self> {
        let n = dims.len();
        Self::new(dims, (1..n).map(|i| (i, i + 1)))
    }

    pub fn edgeless(dims: Vec<usize>) -> Result<Self> {
        Self::new(dims, std::iter::empty())
    }

    /// Every earlier block is a parent of every later one.
    pub fn complete(dims: Vec<usize>) -> Result<Self> {
        let n = dims.len();
        Self::new(dims, (1..=n).flat_map(|j| (1..j).map(move |i| (i, j))))
    }

    /// Parses the config literals `dims = "2,2,2"` and `edges = "1>2,2>3"`.
    pub fn parse(nodes: usize, dims: &str, edges: &str) -> Result<Self> {
        let dims: Vec<usize> = if dims.trim().is_empty() {
            Vec::new()
        } else {
            dims.split(',')
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::GraphLiteral(format!("bad dimension {s:?}")))
                })
                .collect::<Result<_>>()?
        };
        if dims.len() != nodes {
            return Err(Error::GraphLiteral(format!(
                "nodes = {nodes} but {} dims given",
                dims.len()
            )));
        }
        let mut pairs = Vec::new();
        for item in edges.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (a, b) = item
                .split_once('>')
                .ok_or_else(|| Error::GraphLiteral(format!("edge {item:?} is not parent>child")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::GraphLiteral(format!("bad node id in {item:?}")))
            };
            pairs.push((parse(a)?, parse(b)?));
        }
        Self::new(dims, pairs)
    }

    /// Inverse of the `edges` half of [`LatentDag::parse`]; root edges are omitted.
    pub fn edges_literal(&self) -> String {
        self.edges
            .iter()
            .filter(|(p, _)| !p.is_root())
            .map(|(p, c)| format!("{p}>{c}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn dims_literal(&self) -> String {
        self.dims[1..]
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Number of latent blocks, not counting the virtual root.
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn is_rooted(&self) -> bool {
        self.rooted
    }

    /// Latent node ids `1..=N`.
    pub fn latent_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (1..=self.node_count).map(NodeId)
    }

    pub fn dim(&self, node: NodeId) -> usize {
        self.dims[node.index()]
    }

    /// Dimensions indexed by node id, slot 0 being the root's zero.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, from: NodeId, to: NodeId) -> bool {
        self.edges.contains(&(from, to))
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node.index() <= self.node_count && (self.rooted || !node.is_root())
    }

    pub fn check_node(&self, node: NodeId) -> Result<()> {
        if self.contains(node) {
            Ok(())
        } else {
            Err(Error::InvalidNode {
                node,
                count: self.node_count,
            })
        }
    }

    pub fn children(&self, node: NodeId) -> &[NodeId] {
        &self.children[node.index()]
    }

    pub fn parents(&self, node: NodeId) -> &[NodeId] {
        &self.parents[node.index()]
    }

    pub fn is_leaf(&self, node: NodeId) -> bool {
        self.children[node.index()].is_empty()
    }

    /// Kahn's algorithm with a min-heap, so ties resolve to the smallest id.
    pub fn topo_sort(&self) -> Result<TopoOrder> {
        let ids: Vec<NodeId> = if self.rooted {
            (0..=self.node_count).map(NodeId).collect()
        } else {
            self.latent_nodes().collect()
        };
        let mut indegree = vec![0usize; self.node_count + 1];
        for &(_, c) in &self.edges {
            indegree[c.index()] += 1;
        }
        let mut ready: BinaryHeap<Reverse<NodeId>> = ids
            .iter()
            .copied()
            .filter(|n| indegree[n.index()] == 0)
            .map(Reverse)
            .collect();
        let mut order = Vec::with_capacity(ids.len());
        while let Some(Reverse(n)) = ready.pop() {
            order.push(n);
            for &c in self.children(n) {
                indegree[c.index()] -= 1;
                if indegree[c.index()] == 0 {
                    ready.push(Reverse(c));
                }
            }
        }
        if order.len() != ids.len() {
            // Any edge between two unplaced nodes lies on or downstream of a cycle;
            // walk parents among unplaced nodes until one repeats.
            let placed: BTreeSet<NodeId> = order.iter().copied().collect();
            let mut node = *ids.iter().find(|n| !placed.contains(n)).expect("unplaced node");
            let mut seen = vec![node];
            loop {
                let p = *self
                    .parents(node)
                    .iter()
                    .find(|p| !placed.contains(p))
                    .expect("unplaced node has an unplaced parent");
                if seen.contains(&p) {
                    return Err(Error::Cycle { from: p, to: node });
                }
                seen.push(p);
                node = p;
            }
        }
        Ok(TopoOrder::new(order, self.node_count))
    }

    /// Adds node 0 with an edge to every source (in-degree 0 node).
    pub fn add_virtual_root(&self) -> Result<LatentDag> {
        if self.rooted {
            return Err(Error::RootPresent);
        }
        let mut edges = self.edges.clone();
        for n in self.latent_nodes() {
            if self.parents(n).is_empty() {
                edges.insert((NodeId::ROOT, n));
            }
        }
        Ok(Self::assemble(self.node_count, self.dims.clone(), edges, true))
    }

    /// All strict ancestors of `node`, ascending.
    pub fn ancestors(&self, node: NodeId) -> BTreeSet<NodeId> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<NodeId> = self.parents(node).to_vec();
        while let Some(p) = stack.pop() {
            if out.insert(p) {
                stack.extend_from_slice(self.parents(p));
            }
        }
        out
    }

    /// All strict descendants of `node`, ascending.
    pub fn descendants(&self, node: NodeId) -> BTreeSet<NodeId> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<NodeId> = self.children(node).to_vec();
        while let Some(c) = stack.pop() {
            if out.insert(c) {
                stack.extend_from_slice(self.children(c));
            }
        }
        out
    }

    /// Drops every edge implied by a longer path. Reachability is unchanged.
    pub fn transitive_reduction(&self) -> LatentDag {
        let edges = self
            .edges
            .iter()
            .copied()
            .filter(|&(p, c)| {
                !self
                    .children(p)
                    .iter()
                    .any(|&m| m != c && self.descendants(m).contains(&c))
            })
            .collect();
        Self::assemble(self.node_count, self.dims.clone(), edges, self.rooted)
    }
}

/// A topological order with ascending-id tie breaking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopoOrder {
    order: Vec<NodeId>,
    position: Vec<usize>,
}

impl TopoOrder {
    fn new(order: Vec<NodeId>, node_count: usize) -> Self {
        let mut position = vec![usize::MAX; node_count + 1];
        for (k, n) in order.iter().enumerate() {
            position[n.index()] = k;
        }
        TopoOrder { order, position }
    }

    pub fn as_slice(&self) -> &[NodeId] {
        &self.order
    }

    pub fn position(&self, node: NodeId) -> usize {
        self.position[node.index()]
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.order.iter().copied()
    }
}
