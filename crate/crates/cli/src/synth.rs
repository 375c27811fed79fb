//! Synthetic corpus: tone and chirp events in pink noise.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use fsbed_core::audio_io::{write_annotations, write_wav, EventLabel, LabeledEvent, Provenance, Waveform};
use fsbed_core::seed;

use crate::config::ConfigError;

/// Class names, in generation order.
pub const CLASSES: [&str; 2] = ["TONE", "CHIRP"];

/// Fundamental of the harmonic tone (Hz); harmonics at 2× and 3×.
pub const TONE_HZ: f64 = 1500.0;
/// Linear chirp range (Hz).
pub const CHIRP_HZ: (f64, f64) = (3000.0, 5000.0);

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub files: usize,
    pub val_files: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub events_per_file: usize,
    pub distractors_per_file: usize,
    pub min_event_s: f64,
    pub max_event_s: f64,
    pub min_gap_s: f64,
    pub snr_db: f64,
    pub noise_rms: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: &str| Err(ConfigError(format!("synth: {m}")));
        if self.val_files > self.files {
            return err("val_files exceeds files");
        }
        if !(self.min_event_s > 0.0 && self.min_event_s <= self.max_event_s) {
            return err("need 0 < min_event_s <= max_event_s");
        }
        if !(self.noise_rms > 0.0 && self.snr_db.is_finite()) {
            return err("noise_rms must be positive");
        }
        let n = (self.events_per_file + self.distractors_per_file) as f64;
        if n * self.max_event_s + (n + 1.0) * self.min_gap_s > self.duration_s {
            return err("events and gaps do not fit in duration_s");
        }
        Ok(())
    }
}

/// One generated file.
#[derive(Debug, Clone)]
pub struct SynthFile {
    pub wav: PathBuf,
    pub csv: PathBuf,
    pub target: &'static str,
    pub events: Vec<LabeledEvent>,
    pub validation: bool,
}

/// Pink noise by Paul Kellet's refined filter over white Gaussian noise,
/// scaled to `rms`.
pub fn pink_noise<R: Rng>(n: usize, rms: f64, rng: &mut R) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let w: f64 = StandardNormal.sample(rng);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let y = b.iter().sum::<f64>() + w * 0.5362;
            b[6] = w * 0.115926;
            y
        })
        .collect();
    let cur = (out.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
    if cur > 0.0 {
        out.iter_mut().for_each(|v| *v *= rms / cur);
    }
    out
}

/// Unit-RMS event waveform with 10 ms raised-cosine edges.
pub fn event_signal(class: &str, len: usize, sr: f64) -> Vec<f64> {
    let dur = len as f64 / sr;
    let ramp = (0.01 * sr) as usize;
    let mut s: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 / sr;
            let v = if class == CLASSES[0] {
                (2.0 * PI * TONE_HZ * t).sin()
                    + 0.5 * (2.0 * PI * 2.0 * TONE_HZ * t).sin()
                    + 0.25 * (2.0 * PI * 3.0 * TONE_HZ * t).sin()
            } else {
                let (f0, f1) = CHIRP_HZ;
                (2.0 * PI * (f0 * t + (f1 - f0) * t * t / (2.0 * dur))).sin()
            };
            let edge = i.min(len - 1 - i);
            let g = if edge < ramp { 0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos() } else { 1.0 };
            v * g
        })
        .collect();
    let rms = (s.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        s.iter_mut().for_each(|v| *v /= rms);
    }
    s
}

/// Event start/end times: durations uniform in `[min, max]`, gaps of at
/// least `min_gap`, leftover time spread at random over the gaps.
fn layout<R: Rng>(n: usize, cfg: &SynthConfig, rng: &mut R) -> Vec<(f64, f64)> {
    let durs: Vec<f64> = (0..n).map(|_| rng.random_range(cfg.min_event_s..=cfg.max_event_s)).collect();
    let slack = cfg.duration_s - durs.iter().sum::<f64>() - (n + 1) as f64 * cfg.min_gap_s;
    let mut cuts: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..slack.max(0.0) + f64::MIN_POSITIVE)).collect();
    cuts.sort_by(f64::total_cmp);
    let mut t = cfg.min_gap_s;
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(n);
    for (d, c) in durs.into_iter().zip(cuts) {
        t += c - prev;
        prev = c;
        out.push((t, t + d));
        t += d + cfg.min_gap_s;
    }
    out
}

/// Writes `files` WAV/CSV pairs. File `i` has target class `i mod 2`; the
/// last `val_files` go to `val/`, the rest to `train/`. Training annotations
/// list both classes; validation annotations only the target class, so the
/// distractor events there are unlabelled background.
pub fn generate(out: &Path, cfg: &SynthConfig) -> Result<Vec<SynthFile>, anyhow::Error> {
    cfg.validate()?;
    let sr = f64::from(cfg.sample_rate);
    let n = (cfg.duration_s * sr).round() as usize;
    let mut files = Vec::with_capacity(cfg.files);
    for i in 0..cfg.files {
        let validation = i >= cfg.files - cfg.val_files;
        let target = CLASSES[i % 2];
        let other = CLASSES[(i + 1) % 2];
        let dir = out.join(if validation { "val" } else { "train" });
        std::fs::create_dir_all(&dir)?;
        let file_id = format!("synth_{i:02}.wav");
        let mut rng = seed::stream(cfg.seed, "synth.file", i as u64);
        let mut audio = pink_noise(n, cfg.noise_rms, &mut rng);
        let total = cfg.events_per_file + cfg.distractors_per_file;
        let times = layout(total, cfg, &mut rng);
        let distractor_slots: Vec<usize> = rand::seq::index::sample(&mut rng, total, cfg.distractors_per_file).into_vec();
        let gain = cfg.noise_rms * 10f64.powf(cfg.snr_db / 20.0);
        let mut events = Vec::with_capacity(total);
        for (k, &(on, off)) in times.iter().enumerate() {
            let class = if distractor_slots.contains(&k) { other } else { target };
            let (a, b) = ((on * sr).round() as usize, ((off * sr).round() as usize).min(n));
            for (x, s) in audio[a..b].iter_mut().zip(event_signal(class, b - a, sr)) {
                *x += gain * s;
            }
            if class == target || !validation {
                events.push(LabeledEvent {
                    file_id: file_id.clone(),
                    onset_s: on,
                    offset_s: off,
                    label: EventLabel::Pos,
                    class_name: class.to_string(),
                    provenance: Provenance::Annotated,
                });
            }
        }
        let peak = audio.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.99 {
            audio.iter_mut().for_each(|v| *v *= 0.99 / peak);
        }
        let wav = dir.join(&file_id);
        let csv = wav.with_extension("csv");
        write_wav(&Waveform::new(audio, cfg.sample_rate)?, &wav)?;
        let columns: Vec<String> = if validation {
            vec![target.to_string()]
        } else {
            CLASSES.iter().map(|c| c.to_string()).collect()
        };
        write_annotations(&events, &columns, &csv)?;
        files.push(SynthFile { wav, csv, target, events, validation });
    }
    Ok(files)
}
