//! A small tensor engine: dense, convolutional and attention primitives on a
//! reverse-mode tape, SGD and Adam, and a bit-exact checkpoint format.
//!
//! Parameters are stored as `f32` [`Tensor`]s. A [`Tape`] is generic over its
//! scalar so the same model code runs at `f32` for training and at `f64` for
//! finite-difference gradient checks.

mod checkpoint;
pub mod gradcheck;
pub mod kernels;
mod optim;
mod params;
mod scalar;
mod tape;
mod tensor;

use thiserror::Error;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, Manifest,
    ManifestEntry, MAGIC, VERSION,
};
pub use optim::{Adam, Optimizer, Sgd};
pub use params::ParamStore;
pub use scalar::Scalar;
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {a:?} vs {b:?}")]
    ShapeMismatch {
        op: &'static str,
        a: Vec<usize>,
        b: Vec<usize>,
    },
    #[error("axis {axis} out of range for shape {shape:?}")]
    InvalidAxis { axis: usize, shape: Vec<usize> },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("no gradient for parameter {0}")]
    MissingGradient(String),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint manifest: {0}")]
    CorruptManifest(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
