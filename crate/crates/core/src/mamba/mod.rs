//! Selective state-space core: discretisation, diagonal scan, causal
//! convolution and the NetMamba block/encoder, all with analytic backward
//! passes.

mod block;
mod conv1d;
mod norm;
mod scan;

use thiserror::Error;

use crate::nn::NnError;

pub use block::{MambaBlock, MambaBlockCache, MambaEncoder, MambaEncoderCache};
pub use conv1d::{causal_conv1d, causal_conv1d_backward};
pub use norm::{rms_norm, rms_norm_backward, RmsOut};
pub use scan::{discretize, ssm_scan, ssm_scan_backward, BDiscretization, ScanCache, ScanDims, ScanGrads};

#[derive(Debug, Error)]
pub enum MambaError {
    #[error("step size Δ must be positive, got {value} at index {index}")]
    NonPositiveStep { index: usize, value: f64 },
    #[error("{what}: expected {expected} elements, got {got}")]
    Dim {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid mamba config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MambaConfig {
    /// Model (token) dimension D.
    pub d_model: usize,
    /// Inner dimension E of the x and z projections.
    pub d_inner: usize,
    /// State size N.
    pub d_state: usize,
    pub conv_width: usize,
    pub n_blocks: usize,
    pub b_discretization: BDiscretization,
    /// Range of the initial step size Δ (log-uniform).
    pub dt_min: f64,
    pub dt_max: f64,
    pub norm_eps: f64,
}

impl Default for MambaConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            d_inner: 128,
            d_state: 16,
            conv_width: 4,
            n_blocks: 2,
            b_discretization: BDiscretization::Euler,
            dt_min: 1e-3,
            dt_max: 0.1,
            norm_eps: 1e-5,
        }
    }
}

impl MambaConfig {
    pub fn validate(&self) -> Result<(), MambaError> {
        let bad = |m: &str| Err(MambaError::Config(m.to_string()));
        if self.d_model == 0 || self.d_inner == 0 || self.d_state == 0 || self.conv_width == 0 {
            return bad("dimensions must be positive");
        }
        if self.n_blocks == 0 {
            return bad("n_blocks must be at least 1");
        }
        if !(self.dt_min > 0.0 && self.dt_min < self.dt_max) {
            return bad("need 0 < dt_min < dt_max");
        }
        Ok(())
    }
}
