//! Class unlearning for small fully connected and convolutional networks
//! by projecting away class-discriminatory activation directions, plus the
//! usual reference methods, evaluation metrics and an analytical cost model.

// `!(x > 0.0)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod costmodel;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod nn;
pub mod unlearn;

pub use data::{Dataset, SampleBudget, Split};
pub use error::{Error, Result};
pub use linalg::{Matrix, SpectralDecomposition};
pub use nn::{Checkpoint, LayerSpec, Model, TrainConfig};
pub use unlearn::{ScalingCoefficients, UnlearnConfig, Variant};
