//! Subspace training for groups of related tasks, compression of the
//! learned coefficients into prefix-free codes, and generalization
//! certificates computed from the resulting code lengths.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision.

pub mod certificates;
pub mod compression;
pub mod error;
pub mod linalg;
pub mod model;
pub mod projector;
pub mod scalar;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model32 = model::SubspaceModel<f32>;
pub type Model64 = model::SubspaceModel<f64>;
pub type Projector32 = projector::KroneckerProjector<f32>;
pub type Projector64 = projector::KroneckerProjector<f64>;
pub type Basis32 = projector::SharedBasis<f32>;
pub type Basis64 = projector::SharedBasis<f64>;
pub type Dataset32 = tasks::Dataset<f32>;
pub type Dataset64 = tasks::Dataset<f64>;
pub type TaskSet32 = tasks::TaskSet<f32>;
pub type TaskSet64 = tasks::TaskSet<f64>;
pub type Tensor32 = linalg::tensor::Tensor<f32>;
pub type Tensor64 = linalg::tensor::Tensor<f64>;
