use ndarray::{Array2, Axis};

use crate::graph::{Edge, GraphInstance};
use crate::nn::Arch;

/// Several graphs stacked as one disjoint union.
///
/// Node features are concatenated row-wise; edges use global node ids.
/// Extra edges (e.g. zero-weight candidate edges whose weight gradient is
/// needed) can be appended after construction.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    features: Array2<f64>,
    offsets: Vec<usize>,
    edge_offsets: Vec<usize>,
    edges: Vec<Edge>,
}

impl GraphBatch {
    pub fn new(graphs: &[&GraphInstance]) -> Self {
        let dim = graphs.first().map_or(0, |g| g.feature_dim());
        let total: usize = graphs.iter().map(|g| g.num_nodes()).sum();
        let mut features = Array2::zeros((total, dim));
        let mut offsets = Vec::with_capacity(graphs.len() + 1);
        let mut edge_offsets = Vec::with_capacity(graphs.len() + 1);
        let mut edges = Vec::new();
        let mut base = 0;
        for g in graphs {
            offsets.push(base);
            edge_offsets.push(edges.len());
            features
                .slice_mut(ndarray::s![base..base + g.num_nodes(), ..])
                .assign(g.features());
            edges.extend(g.edges().iter().map(|e| Edge {
                u: e.u + base,
                v: e.v + base,
                weight: e.weight,
            }));
            base += g.num_nodes();
        }
        offsets.push(base);
        edge_offsets.push(edges.len());
        Self {
            features,
            offsets,
            edge_offsets,
            edges,
        }
    }

    pub fn single(g: &GraphInstance) -> Self {
        Self::new(&[g])
    }

    pub fn num_graphs(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Nodes of graph `i` as a global id range.
    pub fn node_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Global index of edge `{u, v}` (local ids) of graph `i`, searching only
    /// the edges the graph was built with.
    pub fn edge_index(&self, i: usize, u: usize, v: usize) -> Option<usize> {
        let base = self.offsets[i];
        let key = (base + u.min(v), base + u.max(v));
        let range = self.edge_offsets[i]..self.edge_offsets[i + 1];
        self.edges[range.clone()]
            .binary_search_by_key(&key, |e| (e.u, e.v))
            .ok()
            .map(|k| range.start + k)
    }

    /// Appends an edge between local nodes `u`, `v` of graph `i` and returns
    /// its global edge index.
    pub fn push_edge(&mut self, i: usize, u: usize, v: usize, weight: f64) -> usize {
        let base = self.offsets[i];
        assert!(base + u.max(v) < self.offsets[i + 1], "edge outside graph {i}");
        assert_ne!(u, v, "self-loop");
        self.edges.push(Edge {
            u: base + u.min(v),
            v: base + u.max(v),
            weight,
        });
        self.edges.len() - 1
    }

    pub fn set_weight(&mut self, edge: usize, weight: f64) {
        self.edges[edge].weight = weight;
    }

    /// Rows of `m` belonging to graph `i`.
    pub fn rows_of(&self, m: &Array2<f64>, i: usize) -> Array2<f64> {
        m.slice_axis(Axis(0), (self.offsets[i]..self.offsets[i + 1]).into())
            .to_owned()
    }
}

/// Normalized adjacency as CSR, symmetric, plus the degrees it was built from.
#[derive(Debug, Clone)]
pub(crate) struct Propagation {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    /// `1 + deg` with self-loops (GCN), plain weighted degree otherwise (GCS).
    pub(crate) deg: Vec<f64>,
}

impl Propagation {
    pub(crate) fn build(num_nodes: usize, edges: &[Edge], arch: Arch) -> Self {
        let self_loops = matches!(arch, Arch::Gcn);
        let mut deg = vec![if self_loops { 1.0 } else { 0.0 }; num_nodes];
        let mut count = vec![usize::from(self_loops); num_nodes];
        for e in edges {
            deg[e.u] += e.weight;
            deg[e.v] += e.weight;
            count[e.u] += 1;
            count[e.v] += 1;
        }
        let mut row_ptr = Vec::with_capacity(num_nodes + 1);
        row_ptr.push(0);
        for c in &count {
            row_ptr.push(row_ptr.last().unwrap() + c);
        }
        let nnz = *row_ptr.last().unwrap();
        let mut cols = vec![0; nnz];
        let mut vals = vec![0.0; nnz];
        let mut fill = row_ptr[..num_nodes].to_vec();
        let norm = |u: usize, v: usize, w: f64| {
            if deg[u] > 0.0 && deg[v] > 0.0 {
                w / (deg[u] * deg[v]).sqrt()
            } else {
                0.0
            }
        };
        if self_loops {
            for v in 0..num_nodes {
                cols[fill[v]] = v;
                vals[fill[v]] = 1.0 / deg[v];
                fill[v] += 1;
            }
        }
        for e in edges {
            let w = norm(e.u, e.v, e.weight);
            cols[fill[e.u]] = e.v;
            vals[fill[e.u]] = w;
            fill[e.u] += 1;
            cols[fill[e.v]] = e.u;
            vals[fill[e.v]] = w;
            fill[e.v] += 1;
        }
        Self {
            row_ptr,
            cols,
            vals,
            deg,
        }
    }

    /// `Â x`
    pub(crate) fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let (n, d) = x.dim();
        let mut out = Array2::zeros((n, d));
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().expect("standard layout");
        let os = out.as_slice_mut().expect("fresh array");
        for i in 0..n {
            let orow = &mut os[i * d..(i + 1) * d];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let w = self.vals[k];
                if w == 0.0 {
                    continue;
                }
                let j = self.cols[k];
                let xrow = &xs[j * d..(j + 1) * d];
                for (o, x) in orow.iter_mut().zip(xrow) {
                    *o += w * x;
                }
            }
        }
        out
    }

    #[cfg(test)]
    pub(crate) fn dense(&self) -> Array2<f64> {
        let n = self.row_ptr.len() - 1;
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                a[[i, self.cols[k]]] += self.vals[k];
            }
        }
        a
    }
}
