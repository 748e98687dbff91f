//! Numeric core: tensors, a reverse-mode tape, dilated convolutions, the
//! gated multimodal unit, multi-stage TCNs, LDAM loss and Adam.
//!
//! The free functions below are convenience wrappers that run a single layer
//! on plain tensors; models record the same layers onto a [`Graph`] so that
//! one backward pass covers the whole stack.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod kernels;
mod layers;
mod loss;
mod params;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{Gradients, Graph, NodeId};
pub use kernels::{conv1d_dilated, Padding};
pub use layers::{Gmu, MsTcn, ResidualBlock, Stage, StageConfig};
pub use loss::{ldam_loss, LdamConfig};
pub use params::{Init, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;

use crate::error::Result;

/// GMU output (`d_model × T`) for modality inputs `D_k × T`.
pub fn gmu_forward<T: Scalar>(
    inputs: &[Tensor<T>],
    gmu: &Gmu,
    store: &ParamStore<T>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let ids: Vec<_> = inputs.iter().map(|x| g.input(x.clone())).collect();
    let out = gmu.forward(&mut g, store, &ids)?;
    Ok(g.value(out).clone())
}

pub fn residual_block_forward<T: Scalar>(
    d_prev: &Tensor<T>,
    block: &ResidualBlock,
    store: &ParamStore<T>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.input(d_prev.clone());
    let out = block.forward(&mut g, store, x)?;
    Ok(g.value(out).clone())
}

/// Raw logits (`n_classes × T`) of one stage.
pub fn stage_forward<T: Scalar>(
    input: &Tensor<T>,
    stage: &Stage,
    store: &ParamStore<T>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.input(input.clone());
    let out = stage.forward(&mut g, store, x)?;
    Ok(g.value(out).clone())
}

/// Per-stage logits, first to last.
pub fn mstcn_forward<T: Scalar>(
    input: &Tensor<T>,
    model: &MsTcn,
    store: &ParamStore<T>,
) -> Result<Vec<Tensor<T>>> {
    let mut g = Graph::new();
    let x = g.input(input.clone());
    let outs = model.forward(&mut g, store, x)?;
    Ok(outs.into_iter().map(|id| g.value(id).clone()).collect())
}

/// Column-wise softmax of a classes × T tensor.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (logits.rows(), logits.cols());
    Tensor::new(&[r, c], kernels::softmax_cols(logits.data(), r, c)).expect("same shape")
}
