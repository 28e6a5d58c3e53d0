//! Semi-supervised instance segmentation lab: a small query-based segmentor
//! with a word-embedding semantic classification branch, trained on synthetic
//! shape scenes with a two-stage supervised / teacher-student loop, plus a
//! COCO-convention mask AP evaluator.
//!
//! All tensor math is generic over the scalar type (`f32` for training and
//! checkpoints, `f64` where tests need headroom); concrete aliases live at the
//! crate root.

pub mod augment;
pub mod config;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod hungarian;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod semantic;
pub mod tape;
pub mod tensor;
#[cfg(test)]
pub(crate) mod testutil;
pub mod train;

pub use error::Error;
pub use scalar::Scalar;

/// Default training/checkpoint precision.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape32 = tape::Tape<f32>;
pub type ModelWeights32 = model::ModelWeights<f32>;

/// Double precision, used by gradient-check style tests.
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape64 = tape::Tape<f64>;
pub type ModelWeights64 = model::ModelWeights<f64>;
