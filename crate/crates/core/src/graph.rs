//! Undirected weighted graphs with dense node ids, plus the structural
//! operations used by the augmentations: neighborhoods, induced parts with
//! their degree deficits, and disjoint merging.

use std::collections::BTreeSet;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An undirected edge stored with `u < v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

impl Edge {
    pub fn other(&self, node: usize) -> usize {
        if self.u == node {
            self.v
        } else {
            self.u
        }
    }
}

/// One labeled, undirected graph.
///
/// Edges are canonicalized on construction: endpoints ordered, the list
/// sorted, and duplicate pairs collapsed to their first occurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInstance {
    num_nodes: usize,
    edges: Vec<Edge>,
    features: Array2<f64>,
    label: usize,
    // incident edge indices per node, ascending by neighbor id
    incidence: Vec<Vec<usize>>,
}

impl GraphInstance {
    pub fn new(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
        features: Array2<f64>,
        label: usize,
    ) -> Result<Self> {
        if features.nrows() != num_nodes {
            return Err(Error::FeatureRows {
                rows: features.nrows(),
                num_nodes,
            });
        }
        let mut canonical = Vec::new();
        for (a, b, w) in edges {
            for n in [a, b] {
                if n >= num_nodes {
                    return Err(Error::InvalidNode { node: n, num_nodes });
                }
            }
            if a == b {
                return Err(Error::SelfLoop(a));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::BadWeight { u: a, v: b, weight: w });
            }
            canonical.push(Edge {
                u: a.min(b),
                v: a.max(b),
                weight: w,
            });
        }
        // stable sort keeps the first weight among duplicates
        canonical.sort_by_key(|e| (e.u, e.v));
        canonical.dedup_by_key(|e| (e.u, e.v));

        let mut incidence = vec![Vec::new(); num_nodes];
        for (i, e) in canonical.iter().enumerate() {
            incidence[e.u].push(i);
            incidence[e.v].push(i);
        }
        for (node, list) in incidence.iter_mut().enumerate() {
            list.sort_by_key(|&i| canonical[i].other(node));
        }
        Ok(Self {
            num_nodes,
            edges: canonical,
            features,
            label,
            incidence,
        })
    }

    /// Unit-weight convenience constructor.
    pub fn unweighted(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: Array2<f64>,
        label: usize,
    ) -> Result<Self> {
        Self::new(num_nodes, edges.iter().map(|&(u, v)| (u, v, 1.0)), features, label)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn is_empty(&self) -> bool {
        self.num_nodes == 0
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = label;
        self
    }

    /// Same structure and label, new node features.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != self.num_nodes {
            return Err(Error::FeatureRows {
                rows: features.nrows(),
                num_nodes: self.num_nodes,
            });
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    fn check(&self, v: usize) -> Result<()> {
        if v < self.num_nodes {
            Ok(())
        } else {
            Err(Error::InvalidNode {
                node: v,
                num_nodes: self.num_nodes,
            })
        }
    }

    /// Weighted degree: sum of incident edge weights.
    pub fn degree(&self, v: usize) -> Result<f64> {
        self.check(v)?;
        Ok(self.incidence[v].iter().map(|&i| self.edges[i].weight).sum())
    }

    /// Number of incident edges.
    pub fn edge_count_at(&self, v: usize) -> Result<usize> {
        self.check(v)?;
        Ok(self.incidence[v].len())
    }

    pub fn neighbors(&self, v: usize) -> Result<NodeSet> {
        self.check(v)?;
        Ok(NodeSet::from_sorted_unchecked(
            self.incidence[v]
                .iter()
                .map(|&i| self.edges[i].other(v))
                .collect(),
        ))
    }

    /// Neighbor ids of a node known to be valid, ascending.
    pub(crate) fn neighbor_iter(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.incidence[v].iter().map(move |&i| self.edges[i].other(v))
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        let key = (u.min(v), u.max(v));
        self.edges
            .binary_search_by_key(&key, |e| (e.u, e.v))
            .is_ok()
    }

    /// Index of edge `{u, v}` in [`edges`](Self::edges).
    pub fn edge_index(&self, u: usize, v: usize) -> Option<usize> {
        let key = (u.min(v), u.max(v));
        self.edges.binary_search_by_key(&key, |e| (e.u, e.v)).ok()
    }

    pub fn all_nodes(&self) -> NodeSet {
        NodeSet::from_sorted_unchecked((0..self.num_nodes).collect())
    }

    pub fn complement(&self, nodes: &NodeSet) -> NodeSet {
        NodeSet::from_sorted_unchecked(
            (0..self.num_nodes).filter(|v| !nodes.contains(*v)).collect(),
        )
    }

    fn validate_set(&self, nodes: &NodeSet) -> Result<()> {
        match nodes.iter().next_back() {
            Some(max) => self.check(max),
            None => Ok(()),
        }
    }

    pub fn induced_subgraph(&self, nodes: &NodeSet) -> Result<GraphPart<'_>> {
        self.validate_set(nodes)?;
        let edges: Vec<Edge> = self
            .edges
            .iter()
            .filter(|e| nodes.contains(e.u) && nodes.contains(e.v))
            .copied()
            .collect();
        let deficit = nodes
            .iter()
            .map(|v| {
                self.neighbor_iter(v)
                    .filter(|&u| !nodes.contains(u))
                    .count()
            })
            .collect();
        Ok(GraphPart {
            origin: self,
            nodes: nodes.clone(),
            edges,
            deficit,
        })
    }

    /// Induced subgraph on everything except `drop`.
    pub fn remove_nodes(&self, drop: &NodeSet) -> Result<GraphPart<'_>> {
        self.validate_set(drop)?;
        self.induced_subgraph(&self.complement(drop))
    }

    /// Induced subgraph as a standalone graph with ids remapped in ascending
    /// order of the kept original ids.
    pub fn extract(&self, nodes: &NodeSet) -> Result<GraphInstance> {
        let part = self.induced_subgraph(nodes)?;
        part.to_graph()
    }
}

/// Sorted, duplicate-free set of node ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeSet(Vec<usize>);

impl NodeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn from_sorted_unchecked(v: Vec<usize>) -> Self {
        debug_assert!(v.windows(2).all(|w| w[0] < w[1]));
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.0.binary_search(&v).is_ok()
    }

    /// Position of `v` within the ascending order, if present.
    pub fn position(&self, v: usize) -> Option<usize> {
        self.0.binary_search(&v).ok()
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = usize> + ExactSizeIterator + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn insert(&mut self, v: usize) -> bool {
        match self.0.binary_search(&v) {
            Ok(_) => false,
            Err(pos) => {
                self.0.insert(pos, v);
                true
            }
        }
    }

    pub fn union(&self, other: &NodeSet) -> NodeSet {
        let set: BTreeSet<usize> = self.iter().chain(other.iter()).collect();
        Self(set.into_iter().collect())
    }
}

impl FromIterator<usize> for NodeSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut v: Vec<usize> = iter.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }
}

/// A node subset of a parent graph with its induced edges.
///
/// `deficit[i]` is the number of edges the i-th node (ascending id order)
/// lost by being cut out of its parent.
#[derive(Debug, Clone)]
pub struct GraphPart<'a> {
    origin: &'a GraphInstance,
    nodes: NodeSet,
    edges: Vec<Edge>,
    deficit: Vec<usize>,
}

impl<'a> GraphPart<'a> {
    pub fn origin(&self) -> &'a GraphInstance {
        self.origin
    }

    pub fn nodes(&self) -> &NodeSet {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Degree deficit of original node `v`; `None` if `v` is not in the part.
    pub fn deficit(&self, v: usize) -> Option<usize> {
        self.nodes.position(v).map(|i| self.deficit[i])
    }

    /// Nodes that lost at least one edge (the legal attachment points).
    pub fn boundary(&self) -> NodeSet {
        NodeSet::from_sorted_unchecked(
            self.nodes
                .iter()
                .zip(&self.deficit)
                .filter(|(_, &d)| d > 0)
                .map(|(v, _)| v)
                .collect(),
        )
    }

    /// Total degree deficit.
    pub fn total_deficit(&self) -> usize {
        self.deficit.iter().sum()
    }

    pub fn to_graph(&self) -> Result<GraphInstance> {
        let feats = self.origin.features.select(Axis(0), self.nodes.as_slice());
        let edges = self.edges.iter().map(|e| {
            (
                self.nodes.position(e.u).expect("edge endpoint in part"),
                self.nodes.position(e.v).expect("edge endpoint in part"),
                e.weight,
            )
        });
        GraphInstance::new(self.nodes.len(), edges, feats, self.origin.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Source,
    Destination,
}

/// Result of [`merge_disjoint`]: the new graph and where each node came from.
#[derive(Debug, Clone)]
pub struct MergedGraph {
    pub graph: GraphInstance,
    /// `provenance[new_id] = (side, original id)`
    pub provenance: Vec<(Side, usize)>,
    /// Number of distinct cross edges actually added.
    pub cross_edges: usize,
}

/// Disjoint union of two parts plus unit-weight cross edges.
///
/// Source nodes come first, then destination nodes, each in ascending
/// original-id order. The merged graph takes the destination's label.
pub fn merge_disjoint(
    src: &GraphPart<'_>,
    dst: &GraphPart<'_>,
    cross_edges: &[(usize, usize)],
) -> Result<MergedGraph> {
    let d_src = src.origin.feature_dim();
    let d_dst = dst.origin.feature_dim();
    if d_src != d_dst {
        return Err(Error::Dimension(format!(
            "source features have {d_src} columns, destination {d_dst}"
        )));
    }
    let offset = src.len();
    let n = offset + dst.len();
    let mut features = Array2::zeros((n, d_src));
    let mut provenance = Vec::with_capacity(n);
    for (i, v) in src.nodes.iter().enumerate() {
        features.row_mut(i).assign(&src.origin.features.row(v));
        provenance.push((Side::Source, v));
    }
    for (i, v) in dst.nodes.iter().enumerate() {
        features
            .row_mut(offset + i)
            .assign(&dst.origin.features.row(v));
        provenance.push((Side::Destination, v));
    }

    let mut edges = Vec::with_capacity(src.edges.len() + dst.edges.len() + cross_edges.len());
    for e in &src.edges {
        edges.push((
            src.nodes.position(e.u).unwrap(),
            src.nodes.position(e.v).unwrap(),
            e.weight,
        ));
    }
    for e in &dst.edges {
        edges.push((
            offset + dst.nodes.position(e.u).unwrap(),
            offset + dst.nodes.position(e.v).unwrap(),
            e.weight,
        ));
    }
    let mut cross = BTreeSet::new();
    for &(a, b) in cross_edges {
        let ia = src.nodes.position(a).ok_or(Error::InvalidNode {
            node: a,
            num_nodes: src.origin.num_nodes(),
        })?;
        let ib = dst.nodes.position(b).ok_or(Error::InvalidNode {
            node: b,
            num_nodes: dst.origin.num_nodes(),
        })?;
        cross.insert((ia, offset + ib));
    }
    let cross_count = cross.len();
    edges.extend(cross.into_iter().map(|(a, b)| (a, b, 1.0)));

    Ok(MergedGraph {
        graph: GraphInstance::new(n, edges, features, dst.origin.label)?,
        provenance,
        cross_edges: cross_count,
    })
}
