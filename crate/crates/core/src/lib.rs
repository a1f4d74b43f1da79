//! Generalized test-time augmentation.
//!
//! Inputs are projected onto a PCA subspace fitted on reference data, perturbed with
//! independent Gaussian noise per component, reconstructed and passed through a model.
//! The ensemble mean is the prediction and the per-element spread is the uncertainty,
//! which also weights pseudo-labels when the ensemble is distilled back into a single
//! model. Erosion-based counting and a statistical harness sit on top.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod dataset;
pub mod distill;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod perturb;
pub mod predictor;
pub mod rng;
pub mod scalar;
pub mod segcount;
pub mod subspace;
pub mod synthdata;
pub mod tensor;

pub use dataset::{Dataset, Task};
pub use ensemble::{EnsembleResult, SigmaSearchConfig};
pub use error::{GttaError, Result};
pub use perturb::{NoiseSchedule, NoiseStrategy};
pub use rng::RngStream;
pub use scalar::Real;
pub use subspace::{Retain, Subspace};
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Subspace64 = Subspace<f64>;
pub type Subspace32 = Subspace<f32>;
pub type NoiseSchedule64 = NoiseSchedule<f64>;
pub type NoiseSchedule32 = NoiseSchedule<f32>;
