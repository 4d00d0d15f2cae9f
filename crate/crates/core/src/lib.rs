//! Spiking convolutional networks for windowed sensor classification.
//!
//! LIF neurons are trained with surrogate-gradient backpropagation through
//! time. The crate also carries a ReLU baseline, a training/ablation harness,
//! dataset loaders, and a sparsity and energy proxy for comparing the two.

pub mod checkpoint;
pub mod commands;
pub mod data;
pub mod error;
pub mod fsutil;
pub mod kernels;
pub mod layers;
pub mod lif;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use data::{SplitSpec, SynthSpec, WindowDataset};
pub use error::{Error, Result};
pub use layers::{Layer, LayerKind, TimeBatch};
pub use lif::{FireMode, LifConfig, LifTrace, ResetGrad, ResetMode};
pub use model::{Model, ModelKind, ModelSpec, Neuron};
pub use rng::SeededRng;
pub use tensor::{Scalar, Tensor};
