//! Per-channel energy normalisation.
//!
//! `PCEN(t, f) = (M(t, f) / (eps + S(t, f))^alpha + delta)^r - delta^r`, with the
//! causal smoother `S(t) = (1 - s) S(t - 1) + s M(t)` started at `S(-1) = M(0)`.

use super::{FeatureError, FeatureKind, FeatureMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct PcenConfig {
    pub smoothing: f64,
    pub alpha: f64,
    pub delta: f64,
    pub r: f64,
    pub eps: f64,
}

impl Default for PcenConfig {
    fn default() -> Self {
        Self {
            smoothing: 0.025,
            alpha: 0.98,
            delta: 2.0,
            r: 0.5,
            eps: 1e-6,
        }
    }
}

/// Applies PCEN to a frames × bins mel power matrix.
pub fn pcen(
    mel_power: &[f64],
    bins: usize,
    frame_rate: f64,
    cfg: &PcenConfig,
) -> Result<FeatureMatrix, FeatureError> {
    if bins == 0 || mel_power.len() % bins != 0 {
        return Err(FeatureError::InvalidConfig(format!(
            "{} values do not split into rows of {bins}",
            mel_power.len()
        )));
    }
    let frames = mel_power.len() / bins;
    if let Some(i) = mel_power.iter().position(|&v| v < 0.0 || v.is_nan()) {
        return Err(FeatureError::NegativeInput {
            frame: i / bins,
            bin: i % bins,
        });
    }
    let offset = cfg.delta.powf(cfg.r);
    let mut out = vec![0.0; mel_power.len()];
    let mut smooth: Vec<f64> = mel_power[..bins.min(mel_power.len())].to_vec();
    for t in 0..frames {
        let row = &mel_power[t * bins..(t + 1) * bins];
        for f in 0..bins {
            let m = row[f];
            smooth[f] = (1.0 - cfg.smoothing) * smooth[f] + cfg.smoothing * m;
            let gain = (cfg.eps + smooth[f]).powf(cfg.alpha);
            out[t * bins + f] = (m / gain + cfg.delta).powf(cfg.r) - offset;
        }
    }
    FeatureMatrix::new(frames, bins, out, frame_rate, FeatureKind::Pcen)
}
