//! Dense neural core: message-passing layers, readout, MLP head, softmax
//! cross-entropy, analytic reverse-mode gradients and Adam.
//!
//! Graphs are processed as a [`GraphBatch`], a disjoint union whose
//! normalized adjacency is block diagonal, so a batch forward is exactly the
//! per-graph forward stacked. Gradients are exact for every parameter, for
//! the last-layer node features (used for saliency) and optionally for
//! individual edge weights (used by the straight-through edge sampler).

mod batch;
mod checkpoint;
mod loss;
mod model;
mod optim;

pub use batch::GraphBatch;
pub use checkpoint::{Checkpoint, TensorRecord};
pub use loss::{batch_cross_entropy, mixed_target, one_hot, softmax, softmax_cross_entropy};
pub use model::{
    Arch, EncoderGrads, EncoderTape, ForwardTape, GnnLayer, HeadTape, Mode, Model, ModelConfig,
    ModelParams, Readout,
};
pub use optim::Adam;

pub(crate) use model::glorot;

/// A fixed, ordered collection of flat parameter tensors.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
    /// Name and shape of each tensor, in [`tensors`](Self::tensors) order.
    fn manifest(&self) -> Vec<(String, Vec<usize>)>;
}
