//! Multi-task neural processes.
//!
//! Hierarchical latent-variable models over per-task prediction functions,
//! vanilla neural-process and classic multi-task baselines, a Monte-Carlo
//! ELBO trainer, and synthetic domain-shift benchmarks. All numerics are
//! generic over [`Scalar`]; the aliases at the crate root fix `f64`.

pub mod checkpoint;
pub mod context;
pub mod data;
pub mod gaussian;
pub mod model;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod taskgen;
pub mod tensor;
pub mod train;

use thiserror::Error;

pub use rng::RngStream;
pub use scalar::Scalar;
pub use tensor::TensorError;

pub type Tensor = tensor::Tensor<f64>;
pub type Tape = tensor::Tape<f64>;
pub type DiagGaussian = gaussian::DiagGaussian<f64>;
pub type TaskData = data::TaskData<f64>;
pub type GlobalContext = context::GlobalContext<f64>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("task {task} has no context sample of class {class}")]
    MissingClass { task: usize, class: usize },
    #[error("empty {what}")]
    Empty { what: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {what}: {detail}")]
    NonFinite { what: String, detail: String },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
