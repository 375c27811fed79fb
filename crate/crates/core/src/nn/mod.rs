//! Minimal neural-network kit: tensors, layers with hand-written backward
//! passes, masked cross-entropy, Adam, parameter files and a finite-difference
//! gradient checker.
//!
//! Parameters live in a [`ModelParams`] tree keyed by dotted names
//! (`sed.cnn.0.conv.weight`). Layers are thin descriptors that hold the keys of
//! their parameters and read them from the tree on every call, so the same
//! layer value can be evaluated against perturbed copies of the tree.

mod adam;
mod cnn;
mod gradcheck;
mod layers;
mod loss;
pub mod ops;
mod params;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use cnn::{CnnBlock, CnnBlockCache, CnnCache, CnnEncoder};
pub use gradcheck::{grad_check, random_probe, GradCheckConfig, GradCheckReport, TensorCheck};
pub use layers::{
    BatchNorm2d, BatchNormCache, Conv2d, Conv2dCache, FreqMaxPool, Layer, Linear, Mode, PoolCache, Relu,
    Softmax,
};
pub use loss::{masked_cross_entropy, softmax_rows};
pub use params::{
    kaiming_uniform, load_params, save_params, Gradients, ModelParams, PARAMS_MAGIC,
    PARAMS_VERSION,
};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{layer}: shape mismatch: expected {expected}, got {got:?}")]
    Shape {
        layer: String,
        expected: String,
        got: Vec<usize>,
    },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("parameter `{0}` is registered twice")]
    DuplicateParam(String),
    #[error("all frames are masked out; loss is undefined")]
    AllMasked,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("parameter file {path}: {detail}")]
    ParamFile { path: std::path::PathBuf, detail: String },
    #[error("parameter file version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("unknown tensors in parameter file: {}", .0.join(", "))]
    UnknownTensors(Vec<String>),
    #[error("tensors missing from parameter file: {}", .0.join(", "))]
    MissingTensors(Vec<String>),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

pub(crate) fn shape_err(layer: &str, expected: impl Into<String>, got: &[usize]) -> NnError {
    NnError::Shape {
        layer: layer.to_string(),
        expected: expected.into(),
        got: got.to_vec(),
    }
}
