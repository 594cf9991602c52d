//! Minimal numerical engine: tensors, the fixed layer vocabulary
//! (convolution, batch normalisation, ReLU, residual block), ℓ2 loss,
//! reverse-mode gradients and Adam.
//!
//! Everything is `f64`. Numerics are bit-reproducible for a fixed seed: the
//! parallel mode only splits work across batch samples and recombines
//! partial sums in sample order, so it produces the same bits as serial mode.

mod adam;
mod batch_norm;
mod conv;
mod kernels;
mod layer;
mod loss;
mod network;
mod tensor;
mod winograd;

use rayon::prelude::*;
use thiserror::Error;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use batch_norm::{batch_norm, BatchNorm, BatchNormCache, BatchNormGrads};
pub use conv::{conv2d, Conv2d, ConvGrads};
pub use layer::{relu, relu_backward, Layer, LayerKind, ResidualBlock};
pub use loss::l2_loss;
pub use network::{Gradients, Network, NetworkConfig, OutputMode};
pub use tensor::{Shape, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("{op}: shape mismatch, expected {expected} but got {found}")]
    ShapeMismatch {
        op: &'static str,
        expected: Shape,
        found: Shape,
    },
    #[error("invalid tensor shape {0}: every extent must be at least 1")]
    InvalidShape(Shape),
    #[error("data length {len} does not match shape {shape}")]
    LengthMismatch { shape: Shape, len: usize },
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
    #[error("backward called without retained activations from a train-mode forward pass")]
    NoRetainedActivations,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Whether a layer runs in training mode (batch statistics, retained
/// activations) or inference mode (running statistics).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Scheduling of per-sample work inside the convolution layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Serial,
    Parallel,
}

impl Execution {
    /// `NAC_SERIAL=1` forces serial numerics.
    pub fn from_env() -> Self {
        match std::env::var("NAC_SERIAL") {
            Ok(v) if v == "1" => Execution::Serial,
            _ => Execution::Parallel,
        }
    }
}

/// Applies `f` to every item, on the rayon pool in parallel mode.
/// Callers guarantee that items write to disjoint memory.
pub(crate) fn for_each_item<I, F>(exec: Execution, items: I, f: F)
where
    I: Iterator,
    I::Item: Send,
    F: Fn(I::Item) + Sync + Send,
{
    match exec {
        Execution::Serial => items.for_each(f),
        Execution::Parallel => items.collect::<Vec<_>>().into_par_iter().for_each(f),
    }
}
