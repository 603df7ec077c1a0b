use std::collections::HashMap;

use super::{EdgeType, HgtError};
use crate::embed::EmbeddingTable;
use crate::graph::{HeteroGraph, NodeKind, NodeRef};
use crate::Scalar;

/// Index-based view of a typed graph.
///
/// Incoming edges of each target are kept in insertion order, which fixes
/// the summation order of attention aggregation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    kinds: Vec<NodeKind>,
    edges: Vec<(usize, usize, EdgeType)>,
    in_offsets: Vec<usize>,
    in_edges: Vec<usize>,
    /// Per edge type: distinct source nodes with an outgoing edge of that type.
    sources: Vec<Vec<usize>>,
    /// Per edge: position of its source within `sources[type]`.
    source_slot: Vec<usize>,
}

impl Topology {
    pub fn new(kinds: Vec<NodeKind>, edges: Vec<(usize, usize, EdgeType)>) -> Result<Self, HgtError> {
        let n = kinds.len();
        for &(s, t, e) in &edges {
            if s >= n {
                return Err(HgtError::NodeIndex(s));
            }
            if t >= n {
                return Err(HgtError::NodeIndex(t));
            }
            if (kinds[s], kinds[t]) != e.endpoints() {
                return Err(HgtError::EdgeKind {
                    src: s,
                    dst: t,
                    etype: e.as_str(),
                });
            }
        }
        let mut counts = vec![0usize; n + 1];
        for &(_, t, _) in &edges {
            counts[t + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let in_offsets = counts.clone();
        let mut fill = counts;
        let mut in_edges = vec![0usize; edges.len()];
        for (ei, &(_, t, _)) in edges.iter().enumerate() {
            in_edges[fill[t]] = ei;
            fill[t] += 1;
        }
        let mut sources = vec![Vec::new(); EdgeType::COUNT];
        let mut slot_maps: Vec<HashMap<usize, usize>> = vec![HashMap::new(); EdgeType::COUNT];
        let mut source_slot = Vec::with_capacity(edges.len());
        for &(s, _, e) in &edges {
            let map = &mut slot_maps[e.index()];
            let list = &mut sources[e.index()];
            let slot = *map.entry(s).or_insert_with(|| {
                list.push(s);
                list.len() - 1
            });
            source_slot.push(slot);
        }
        Ok(Self {
            kinds,
            edges,
            in_offsets,
            in_edges,
            sources,
            source_slot,
        })
    }

    pub fn node_count(&self) -> usize {
        self.kinds.len()
    }

    pub fn kind(&self, node: usize) -> NodeKind {
        self.kinds[node]
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    pub fn edges(&self) -> &[(usize, usize, EdgeType)] {
        &self.edges
    }

    /// Edge indices entering `node`, in insertion order.
    pub fn incoming(&self, node: usize) -> &[usize] {
        &self.in_edges[self.in_offsets[node]..self.in_offsets[node + 1]]
    }

    pub fn sources(&self, etype: EdgeType) -> &[usize] {
        &self.sources[etype.index()]
    }

    pub fn source_slot(&self, edge: usize) -> usize {
        self.source_slot[edge]
    }

    /// Edge types that occur at least once.
    pub fn present_types(&self) -> Vec<EdgeType> {
        EdgeType::ALL
            .into_iter()
            .filter(|e| !self.sources[e.index()].is_empty())
            .collect()
    }
}

/// A compiled graph plus the mapping between node references and indices.
#[derive(Debug, Clone)]
pub struct GraphIndex {
    pub topology: Topology,
    nodes: Vec<NodeRef>,
    index: HashMap<NodeRef, usize>,
}

impl GraphIndex {
    pub fn nodes(&self) -> &[NodeRef] {
        &self.nodes
    }

    pub fn get(&self, node: &NodeRef) -> Option<usize> {
        self.index.get(node).copied()
    }

    /// Resolves `(user id, news id)` pairs to node indices.
    pub fn pair(&self, user: &str, news: &str) -> Result<(usize, usize), HgtError> {
        let u = NodeRef::user(user);
        let m = NodeRef::media(news);
        let ui = self.get(&u).ok_or_else(|| HgtError::MissingNode(u.to_string()))?;
        let mi = self.get(&m).ok_or_else(|| HgtError::MissingNode(m.to_string()))?;
        Ok((ui, mi))
    }
}

/// Compiles a heterogeneous graph: nodes in canonical order (users, media,
/// beliefs), every relation added in both directions.
pub fn compile(graph: &HeteroGraph) -> GraphIndex {
    let nodes = graph.nodes();
    let index: HashMap<NodeRef, usize> = nodes.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
    let kinds = nodes.iter().map(|n| n.kind).collect();
    let id = |n: NodeRef| index[&n];
    let mut edges = Vec::with_capacity(2 * graph.edge_count());
    for (a, b) in graph.follow_edges() {
        let (ia, ib) = (id(NodeRef::user(a)), id(NodeRef::user(b)));
        edges.push((ia, ib, EdgeType::Follows));
        edges.push((ib, ia, EdgeType::FollowedBy));
    }
    for (u, m) in graph.interact_edges() {
        let (iu, im) = (id(NodeRef::user(u)), id(NodeRef::media(m)));
        edges.push((iu, im, EdgeType::Interacts));
        edges.push((im, iu, EdgeType::InteractedBy));
    }
    for (u, b) in graph.belief_edges() {
        let (iu, ib) = (id(NodeRef::user(u)), id(NodeRef::belief(*b)));
        edges.push((iu, ib, EdgeType::Believes));
        edges.push((ib, iu, EdgeType::BelievedBy));
    }
    let topology = Topology::new(kinds, edges).expect("graph invariants guarantee well-typed edges");
    GraphIndex { topology, nodes, index }
}

/// Row-major `nodes x dim` feature matrix in index order.
pub fn features_from_table<T: Scalar>(index: &GraphIndex, table: &EmbeddingTable) -> Result<Vec<T>, HgtError> {
    let dim = table.dim();
    let mut out = Vec::with_capacity(index.nodes.len() * dim);
    for node in &index.nodes {
        let v = table
            .get(node)
            .ok_or_else(|| HgtError::MissingNode(node.to_string()))?;
        out.extend(v.iter().map(|&x| T::of(x as f64)));
    }
    Ok(out)
}
