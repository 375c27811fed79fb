//! Band-limited resampling by direct windowed-sinc interpolation.
//!
//! Each output sample is a Blackman-windowed sinc sum over 32 zero crossings
//! of the (possibly widened) kernel on each side. The cutoff sits at 95 % of
//! the lower Nyquist frequency; stopband attenuation is roughly 70 dB.

use std::f64::consts::PI;

use super::{AudioError, Waveform};

const ZERO_CROSSINGS: f64 = 32.0;
const ROLLOFF: f64 = 0.95;

pub fn resample(w: &Waveform, target_hz: u32) -> Result<Waveform, AudioError> {
    if target_hz == 0 {
        return Err(AudioError::InvalidWaveform(
            "target sample rate must be positive".into(),
        ));
    }
    let src_hz = w.sample_rate();
    if src_hz == target_hz {
        return Ok(w.clone());
    }
    let input = w.samples();
    let n_in = input.len();
    let ratio = f64::from(target_hz) / f64::from(src_hz);
    let n_out = (n_in as f64 * ratio).round() as usize;

    let cutoff = ratio.min(1.0) * ROLLOFF;
    let half_width = ZERO_CROSSINGS / cutoff;
    let step = f64::from(src_hz) / f64::from(target_hz);

    let out = (0..n_out)
        .map(|i| {
            let t = i as f64 * step;
            let lo = ((t - half_width).ceil().max(0.0)) as usize;
            let hi = ((t + half_width).floor() as usize).min(n_in.saturating_sub(1));
            let mut acc = 0.0;
            for (k, &x) in input.iter().enumerate().take(hi + 1).skip(lo) {
                let d = t - k as f64;
                acc += x * kernel(d, cutoff, half_width);
            }
            acc
        })
        .collect();
    Waveform::new(out, target_hz)
}

fn kernel(d: f64, cutoff: f64, half_width: f64) -> f64 {
    let r = d / half_width;
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let x = PI * cutoff * d;
    let sinc = if x.abs() < 1e-12 { 1.0 } else { x.sin() / x };
    // Blackman window centred on zero.
    let win = 0.42 + 0.5 * (PI * r).cos() + 0.08 * (2.0 * PI * r).cos();
    cutoff * sinc * win
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, sr: u32, n: usize) -> Waveform {
        let s = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / f64::from(sr)).sin() * 0.5)
            .collect();
        Waveform::new(s, sr).unwrap()
    }

    // Naive DFT magnitude peak, used as an oracle independent of any FFT code.
    fn dft_peak_hz(x: &[f64], sr: u32) -> f64 {
        let n = x.len();
        let mut best = (0usize, 0.0f64);
        for k in 1..n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * i) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            let m = re.hypot(im);
            if m > best.1 {
                best = (k, m);
            }
        }
        best.0 as f64 * f64::from(sr) / n as f64
    }

    #[test]
    fn same_rate_is_identity() {
        let w = sine(440.0, 22050, 1000);
        assert_eq!(resample(&w, 22050).unwrap(), w);
    }

    #[test]
    fn halving_length() {
        for n in [1000usize, 1001, 4411] {
            let w = sine(1000.0, 44100, n);
            let r = resample(&w, 22050).unwrap();
            let expected = (n as f64 / 2.0).round() as i64;
            assert!((r.len() as i64 - expected).abs() <= 1);
            assert!((r.len() as i64 - (n as i64 + 1) / 2).abs() <= 1);
            assert_eq!(r.sample_rate(), 22050);
        }
    }

    #[test]
    fn sine_peak_survives_downsampling() {
        let w = sine(1000.0, 44100, 4410);
        let r = resample(&w, 22050).unwrap();
        // 2205 samples at 22050 Hz: bin spacing 10 Hz.
        let peak = dft_peak_hz(&r.samples()[..2205], 22050);
        assert!((peak - 1000.0).abs() <= 10.0, "peak at {peak}");
    }

    #[test]
    fn upsampling_preserves_amplitude_in_the_interior() {
        let w = sine(300.0, 8000, 4000);
        let r = resample(&w, 16000).unwrap();
        let mid = &r.samples()[2000..6000];
        let peak = mid.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!((peak - 0.5).abs() < 0.01, "peak {peak}");
    }

    #[test]
    fn rejects_zero_target() {
        let w = sine(300.0, 8000, 10);
        assert!(resample(&w, 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn duration_is_preserved(n in 1usize..3000, src in 8000u32..48000, dst in 8000u32..48000) {
            let w = Waveform::new(vec![0.1; n], src).unwrap();
            let r = resample(&w, dst).unwrap();
            let d_in = n as f64 / f64::from(src);
            let d_out = r.len() as f64 / f64::from(dst);
            proptest::prop_assert!((d_in - d_out).abs() <= 1.0 / f64::from(dst) + 1e-12);
        }
    }
}
