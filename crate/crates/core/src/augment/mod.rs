//! Feature-space augmentation and pseudo-label enhancement.
//!
//! Masking and noise operate on row-major `frames × bins` slices so they can
//! be applied to whole feature matrices or to single windows.

mod pseudo;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::seed;

pub use pseudo::{pseudo_label_enhance, FrameScorer, PseudoConfig, WeakFile};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("mask width {width} exceeds {axis} axis length {len}")]
    WidthTooLarge {
        axis: &'static str,
        width: usize,
        len: usize,
    },
    #[error("max mask width must be at least 1")]
    ZeroWidth,
    #[error("noise sigma must be finite and non-negative, got {0}")]
    BadSigma(f64),
    #[error("scorer: {0}")]
    Scorer(String),
    #[error(transparent)]
    Postproc(#[from] crate::postproc::PostprocError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Standard deviation of additive noise, in feature units.
    pub noise_sigma: f64,
    pub n_freq_masks: usize,
    pub max_freq_width: usize,
    pub n_time_masks: usize,
    pub max_time_width: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.1,
            n_freq_masks: 2,
            max_freq_width: 16,
            n_time_masks: 2,
            max_time_width: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    Time,
    Freq,
}

fn mean(data: &[f64]) -> f64 {
    if data.is_empty() {
        0.0
    } else {
        data.iter().sum::<f64>() / data.len() as f64
    }
}

/// Adds i.i.d. `N(0, sigma²)` noise in place.
pub fn gaussian_noise_in_place(data: &mut [f64], sigma: f64, seed: u64) -> Result<(), AugmentError> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(AugmentError::BadSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|_| AugmentError::BadSigma(sigma))?;
    let mut rng = seed::stream(seed, "augment.noise", 0);
    for v in data {
        *v += normal.sample(&mut rng);
    }
    Ok(())
}

fn mask_in_place(
    data: &mut [f64],
    frames: usize,
    bins: usize,
    axis: Axis,
    n_masks: usize,
    max_width: usize,
    seed: u64,
) -> Result<(), AugmentError> {
    let (len, name, label) = match axis {
        Axis::Time => (frames, "time", "augment.time_mask"),
        Axis::Freq => (bins, "frequency", "augment.freq_mask"),
    };
    if max_width == 0 {
        return Err(AugmentError::ZeroWidth);
    }
    if max_width > len {
        return Err(AugmentError::WidthTooLarge {
            axis: name,
            width: max_width,
            len,
        });
    }
    let fill = mean(data);
    let mut rng = seed::stream(seed, label, 0);
    for _ in 0..n_masks {
        let width = rng.random_range(1..=max_width);
        let start = rng.random_range(0..=len - width);
        match axis {
            Axis::Time => data[start * bins..(start + width) * bins].fill(fill),
            Axis::Freq => {
                for row in data.chunks_exact_mut(bins) {
                    row[start..start + width].fill(fill);
                }
            }
        }
    }
    Ok(())
}

/// Replaces `n_masks` random bands of 1..=`max_width` frequency bins with the
/// mean of the input.
pub fn freq_mask_in_place(
    data: &mut [f64],
    frames: usize,
    bins: usize,
    n_masks: usize,
    max_width: usize,
    seed: u64,
) -> Result<(), AugmentError> {
    mask_in_place(data, frames, bins, Axis::Freq, n_masks, max_width, seed)
}

/// Time-axis counterpart of [`freq_mask_in_place`].
pub fn time_mask_in_place(
    data: &mut [f64],
    frames: usize,
    bins: usize,
    n_masks: usize,
    max_width: usize,
    seed: u64,
) -> Result<(), AugmentError> {
    mask_in_place(data, frames, bins, Axis::Time, n_masks, max_width, seed)
}

fn with_data(feat: &FeatureMatrix, f: impl FnOnce(&mut [f64]) -> Result<(), AugmentError>) -> Result<FeatureMatrix, AugmentError> {
    let mut out = feat.clone();
    f(out.data_mut())?;
    Ok(out)
}

pub fn gaussian_noise(feat: &FeatureMatrix, sigma: f64, seed: u64) -> Result<FeatureMatrix, AugmentError> {
    with_data(feat, |d| gaussian_noise_in_place(d, sigma, seed))
}

pub fn freq_mask(feat: &FeatureMatrix, n_masks: usize, max_width: usize, seed: u64) -> Result<FeatureMatrix, AugmentError> {
    let (t, b) = (feat.frames(), feat.bins());
    with_data(feat, |d| freq_mask_in_place(d, t, b, n_masks, max_width, seed))
}

pub fn time_mask(feat: &FeatureMatrix, n_masks: usize, max_width: usize, seed: u64) -> Result<FeatureMatrix, AugmentError> {
    let (t, b) = (feat.frames(), feat.bins());
    with_data(feat, |d| time_mask_in_place(d, t, b, n_masks, max_width, seed))
}

/// Frequency then time masking of a window, as used for the FBC branch input.
/// Widths larger than an axis are clipped to it.
pub fn mask_window(data: &mut [f64], frames: usize, bins: usize, cfg: &AugmentConfig, seed: u64) -> Result<(), AugmentError> {
    if cfg.n_freq_masks > 0 {
        freq_mask_in_place(data, frames, bins, cfg.n_freq_masks, cfg.max_freq_width.min(bins), seed)?;
    }
    if cfg.n_time_masks > 0 {
        time_mask_in_place(data, frames, bins, cfg.n_time_masks, cfg.max_time_width.min(frames), seed)?;
    }
    Ok(())
}
