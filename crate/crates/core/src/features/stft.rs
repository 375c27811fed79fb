use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::FeatureError;
use crate::audio_io::Waveform;

/// Complex short-time spectrum, frames × (n_fft / 2 + 1).
#[derive(Debug, Clone)]
pub struct Stft {
    frames: usize,
    bins: usize,
    data: Vec<Complex64>,
}

impl Stft {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn power(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Hann-windowed STFT with reflect padding of `n_fft / 2` samples on both
/// sides. Produces `1 + len / hop` frames.
pub fn stft(w: &Waveform, n_fft: usize, hop: usize) -> Result<Stft, FeatureError> {
    if w.is_empty() {
        return Err(FeatureError::EmptyWaveform);
    }
    if n_fft < 2 || hop == 0 {
        return Err(FeatureError::InvalidConfig(format!(
            "n_fft={n_fft}, hop={hop}"
        )));
    }
    let x = w.samples();
    let n = x.len();
    let pad = (n_fft / 2) as isize;
    let frames = 1 + n / hop;
    let bins = n_fft / 2 + 1;
    let window = hann_window(n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);

    let mut data = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for t in 0..frames {
        let start = (t * hop) as isize - pad;
        for (k, slot) in buf.iter_mut().enumerate() {
            let idx = start + k as isize;
            let s = if idx >= 0 && (idx as usize) < n {
                x[idx as usize]
            } else {
                x[reflect_index(idx, n)]
            };
            *slot = Complex64::new(s * window[k], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Stft { frames, bins, data })
}
