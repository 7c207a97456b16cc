//! Graph classification with saliency-guided graph transplant augmentation.
//!
//! The crate is organized bottom-up:
//!
//! - [`graph`]: undirected graphs, induced parts with degree deficits, merging
//! - [`dataset`]: TU-format loading, synthetic motif data, standardization, k-fold splits
//! - [`nn`]: GCN/GCS stacks with analytic gradients and Adam
//! - [`saliency`]: per-node gradient norms
//! - [`augment`]: anchor selection, partial K-hop growth, connectors, label mixing, transplant
//! - [`edge_predictor`]: the learned pairwise edge model and straight-through sampling
//! - [`baselines`]: node dropping, edge perturbation, attribute masking, random-walk subgraphs, manifold mixup
//! - [`metrics`] and [`train`]: evaluation metrics and the training loop

pub mod augment;
pub mod baselines;
pub mod dataset;
pub mod edge_predictor;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod results;
pub mod saliency;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Edge, GraphInstance, GraphPart, NodeSet, Side};
