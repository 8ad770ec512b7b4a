//! A micro neural-network engine with guided-perturbation test-time
//! refinement: a trained network's own prediction seeds a gradient at the
//! softmax, the sign of that gradient (backpropagated to the input or an
//! intermediate activation) perturbs the input, and a second forward pass
//! improves the prediction without touching any weights.
//!
//! Start with [`gp::refine`] for dense labeling, [`knn::classify_with_gp`]
//! for classification, and the runnable programs under `examples/`.

pub mod bench;
pub mod cli;
pub mod data;
pub mod error;
pub mod gp;
pub mod knn;
pub mod layers;
pub mod metrics;
pub mod model_io;
pub mod network;
pub mod tensor;
pub mod trainer;

pub use error::{GpError, Result};
