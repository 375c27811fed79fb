//! Spectral features: STFT, mel filterbank, log-mel, PCEN, sliding windows and
//! an on-disk cache format.
//!
//! Defaults: 22050 Hz input, 1024-point FFT, hop 256, 128 HTK mel bands,
//! periodic Hann window with reflect padding of `n_fft / 2` on both sides.
//! Frame `t` is centred on sample `t * hop`, so its time is `t / frame_rate`.

mod cache;
mod mel;
mod pcen;
mod stft;
mod windows;

use std::path::PathBuf;

use thiserror::Error;

use crate::audio_io::{resample, Waveform};

pub use cache::{read_feature_cache, write_feature_cache, CACHE_MAGIC, CACHE_VERSION};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, MelFilterbank};
pub use pcen::{pcen, PcenConfig};
pub use stft::{hann_window, stft, Stft};
pub use windows::{
    extract_window, frame_span, frame_time, frame_windows, label_frames, standardize, window_origins,
    FrameLabels, Window,
    WindowBatch, WindowConfig, BACKGROUND,
};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("empty waveform")]
    EmptyWaveform,
    #[error("mel filter {index} has no FFT bins in its support; reduce n_mels or raise n_fft")]
    EmptyFilter { index: usize },
    #[error("invalid feature configuration: {0}")]
    InvalidConfig(String),
    #[error("negative mel power at frame {frame}, bin {bin}")]
    NegativeInput { frame: usize, bin: usize },
    #[error("feature cache {path}: {detail}")]
    Cache { path: PathBuf, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    LogMel,
    Pcen,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::LogMel => "logmel",
            FeatureKind::Pcen => "pcen",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "logmel" => Some(FeatureKind::LogMel),
            "pcen" => Some(FeatureKind::Pcen),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    /// `None` means Nyquist.
    pub fmax: Option<f64>,
    /// Floor added before the natural log.
    pub log_floor: f64,
    pub kind: FeatureKind,
    pub pcen: PcenConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            n_fft: 1024,
            hop: 256,
            n_mels: 128,
            fmin: 0.0,
            fmax: None,
            log_floor: 1e-10,
            kind: FeatureKind::LogMel,
            pcen: PcenConfig::default(),
        }
    }
}

impl FeatureConfig {
    pub fn frame_rate(&self) -> f64 {
        f64::from(self.sample_rate) / self.hop as f64
    }

    pub fn filterbank(&self) -> Result<MelFilterbank, FeatureError> {
        mel_filterbank(
            self.n_mels,
            self.sample_rate,
            self.n_fft,
            self.fmin,
            self.fmax.unwrap_or(f64::from(self.sample_rate) / 2.0),
        )
    }
}

/// Frames × bins real matrix, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    bins: usize,
    data: Vec<f64>,
    frame_rate: f64,
    kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(
        frames: usize,
        bins: usize,
        data: Vec<f64>,
        frame_rate: f64,
        kind: FeatureKind,
    ) -> Result<Self, FeatureError> {
        if data.len() != frames * bins {
            return Err(FeatureError::InvalidConfig(format!(
                "data length {} != {frames} x {bins}",
                data.len()
            )));
        }
        if !(frame_rate > 0.0) {
            return Err(FeatureError::InvalidConfig("frame rate must be positive".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::InvalidConfig("non-finite feature value".into()));
        }
        Ok(Self {
            frames,
            bins,
            data,
            frame_rate,
            kind,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn get(&self, t: usize, f: usize) -> f64 {
        self.data[t * self.bins + f]
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }
}

/// Mel power spectrogram, frames × n_mels.
pub fn mel_power(w: &Waveform, cfg: &FeatureConfig) -> Result<Vec<f64>, FeatureError> {
    let spec = stft(w, cfg.n_fft, cfg.hop)?;
    let fb = cfg.filterbank()?;
    Ok(fb.apply(&spec.power(), spec.frames()))
}

/// `ln(mel_fb · |STFT|² + floor)`. The waveform must already be at `cfg.sample_rate`.
pub fn log_mel(w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureMatrix, FeatureError> {
    check_rate(w, cfg)?;
    let mut mel = mel_power(w, cfg)?;
    let frames = mel.len() / cfg.n_mels;
    for v in &mut mel {
        *v = (*v + cfg.log_floor).ln();
    }
    FeatureMatrix::new(frames, cfg.n_mels, mel, cfg.frame_rate(), FeatureKind::LogMel)
}

fn check_rate(w: &Waveform, cfg: &FeatureConfig) -> Result<(), FeatureError> {
    if w.sample_rate() != cfg.sample_rate {
        return Err(FeatureError::InvalidConfig(format!(
            "waveform at {} Hz, expected {} Hz (resample first)",
            w.sample_rate(),
            cfg.sample_rate
        )));
    }
    Ok(())
}

/// Resamples when needed, then computes the configured feature kind.
pub fn extract(w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureMatrix, FeatureError> {
    if w.is_empty() {
        return Err(FeatureError::EmptyWaveform);
    }
    let resampled;
    let w = if w.sample_rate() == cfg.sample_rate {
        w
    } else {
        resampled = resample(w, cfg.sample_rate)
            .map_err(|e| FeatureError::InvalidConfig(e.to_string()))?;
        &resampled
    };
    match cfg.kind {
        FeatureKind::LogMel => log_mel(w, cfg),
        FeatureKind::Pcen => {
            let mel = mel_power(w, cfg)?;
            pcen(&mel, cfg.n_mels, cfg.frame_rate(), &cfg.pcen)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn noise(n: usize, seed: u64) -> Waveform {
        let mut rng = crate::seed::rng_from_seed(seed);
        let s = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        Waveform::new(s, 22050).unwrap()
    }

    #[test]
    fn one_second_gives_87_frames_of_128_bins() {
        let cfg = FeatureConfig::default();
        let f = log_mel(&noise(22050, 1), &cfg).unwrap();
        assert_eq!(f.frames(), 1 + 22050 / 256);
        assert_eq!(f.frames(), 87);
        assert_eq!(f.bins(), 128);
        assert_eq!(f.kind(), FeatureKind::LogMel);
        assert!((f.frame_rate() - 22050.0 / 256.0).abs() < 1e-12);
    }

    #[test]
    fn silence_is_the_log_floor() {
        let cfg = FeatureConfig::default();
        let w = Waveform::new(vec![0.0; 5000], 22050).unwrap();
        let f = log_mel(&w, &cfg).unwrap();
        let floor = 1e-10f64.ln();
        assert!(f.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn doubling_amplitude_shifts_by_ln4() {
        let cfg = FeatureConfig::default();
        let w = noise(8000, 2);
        let w2 = Waveform::new(w.samples().iter().map(|s| 2.0 * s).collect(), 22050).unwrap();
        let a = log_mel(&w, &cfg).unwrap();
        let b = log_mel(&w2, &cfg).unwrap();
        let mut checked = 0;
        for (x, y) in a.data().iter().zip(b.data()) {
            // only cells well above the floor
            if *x > -10.0 {
                assert!((y - x - 4f64.ln()).abs() < 1e-6, "{x} {y}");
                checked += 1;
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn log_mel_is_monotone_in_power() {
        let cfg = FeatureConfig::default();
        let w = noise(4000, 3);
        let a = log_mel(&w, &cfg).unwrap();
        let louder =
            Waveform::new(w.samples().iter().map(|s| 1.3 * s).collect(), 22050).unwrap();
        let b = log_mel(&louder, &cfg).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| y >= x));
    }

    #[test]
    fn extract_resamples() {
        let cfg = FeatureConfig::default();
        let w = Waveform::new(vec![0.1; 44100], 44100).unwrap();
        let f = extract(&w, &cfg).unwrap();
        assert_eq!(f.frames(), 87);
        assert!(matches!(
            log_mel(&w, &cfg).unwrap_err(),
            FeatureError::InvalidConfig(_)
        ));
    }

    #[test]
    fn pcen_extraction_matches_its_shape_contract() {
        let cfg = FeatureConfig {
            kind: FeatureKind::Pcen,
            ..Default::default()
        };
        let f = extract(&noise(22050, 4), &cfg).unwrap();
        assert_eq!((f.frames(), f.bins()), (87, 128));
        assert_eq!(f.kind(), FeatureKind::Pcen);
    }
}
