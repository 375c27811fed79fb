use super::FeatureError;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with unit peak, n_mels × (n_fft / 2 + 1), stored with
/// the nonzero bin span of every row.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    n_mels: usize,
    n_bins: usize,
    weights: Vec<f64>,
    spans: Vec<(usize, usize)>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Applies the filterbank to a frames × n_bins power matrix.
    pub fn apply(&self, power: &[f64], frames: usize) -> Vec<f64> {
        let mut out = vec![0.0; frames * self.n_mels];
        for t in 0..frames {
            let p = &power[t * self.n_bins..(t + 1) * self.n_bins];
            let o = &mut out[t * self.n_mels..(t + 1) * self.n_mels];
            for (m, slot) in o.iter_mut().enumerate() {
                let (lo, hi) = self.spans[m];
                let w = &self.row(m)[lo..hi];
                *slot = w.iter().zip(&p[lo..hi]).map(|(a, b)| a * b).sum();
            }
        }
        out
    }
}

pub fn mel_filterbank(
    n_mels: usize,
    sample_rate: u32,
    n_fft: usize,
    fmin: f64,
    fmax: f64,
) -> Result<MelFilterbank, FeatureError> {
    if n_mels == 0 {
        return Err(FeatureError::InvalidConfig("n_mels must be at least 1".into()));
    }
    if !(fmin >= 0.0 && fmax > fmin) {
        return Err(FeatureError::InvalidConfig(format!(
            "invalid band [{fmin}, {fmax}]"
        )));
    }
    let n_bins = n_fft / 2 + 1;
    let fft_hz: Vec<f64> = (0..n_bins)
        .map(|k| k as f64 * f64::from(sample_rate) / n_fft as f64)
        .collect();
    let (mlo, mhi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (n_mels + 1) as f64))
        .collect();

    let mut weights = vec![0.0; n_mels * n_bins];
    let mut spans = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * n_bins..(m + 1) * n_bins];
        for (k, &f) in fft_hz.iter().enumerate() {
            let rising = (f - left) / (center - left);
            let falling = (right - f) / (right - center);
            row[k] = rising.min(falling).max(0.0);
        }
        let lo = row.iter().position(|&w| w > 0.0);
        let hi = row.iter().rposition(|&w| w > 0.0);
        match (lo, hi) {
            (Some(lo), Some(hi)) => spans.push((lo, hi + 1)),
            _ => return Err(FeatureError::EmptyFilter { index: m }),
        }
    }
    Ok(MelFilterbank {
        n_mels,
        n_bins,
        weights,
        spans,
        centers_hz: edges[1..=n_mels].to_vec(),
    })
}
