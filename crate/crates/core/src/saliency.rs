//! Node saliency: the ℓ2 norm of each node's row in the loss gradient with
//! respect to the last message-passing layer's output.

use std::io::Write;

use ndarray::Array2;

use crate::graph::NodeSet;

/// One nonnegative score per node of a specific graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyVector(Vec<f64>);

impl SaliencyVector {
    /// Wraps precomputed scores. Panics on negative or non-finite values.
    pub fn new(values: Vec<f64>) -> Self {
        assert!(
            values.iter().all(|v| v.is_finite() && *v >= 0.0),
            "saliency must be finite and nonnegative"
        );
        Self(values)
    }

    /// Row-wise ℓ2 norms of a node-gradient matrix.
    pub fn from_gradient(grad: &Array2<f64>) -> Self {
        Self(
            grad.rows()
                .into_iter()
                .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
                .collect(),
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn is_all_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn sum_over(&self, nodes: &NodeSet) -> f64 {
        nodes.iter().map(|v| self.0[v]).sum()
    }

    /// Node ids by decreasing saliency, ties broken by lower id.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.0.len()).collect();
        idx.sort_by(|&a, &b| self.0[b].total_cmp(&self.0[a]).then(a.cmp(&b)));
        idx
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::new(self.0.iter().map(|v| v * c).collect())
    }

    /// Writes one score per line, for plotting alongside node ids.
    pub fn write_column(&self, mut out: impl Write) -> std::io::Result<()> {
        for v in &self.0 {
            writeln!(out, "{v:?}")?;
        }
        Ok(())
    }
}

pub fn node_saliency(grad_last_layer: &Array2<f64>) -> SaliencyVector {
    SaliencyVector::from_gradient(grad_last_layer)
}
