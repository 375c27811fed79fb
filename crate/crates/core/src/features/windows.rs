//! Sliding-window segmentation with per-frame labels.

use super::{FeatureKind, FeatureMatrix};
use crate::audio_io::{EventLabel, LabeledEvent};

/// Class id of background (and verified-negative) frames; POS classes are `1..`.
pub const BACKGROUND: u16 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    pub length: usize,
    pub shift: usize,
    /// Append a zero-padded window so the trailing frames are covered too.
    pub pad_tail: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            length: 431,
            shift: 86,
            pad_tail: false,
        }
    }
}

/// Time in seconds of frame `i` (the frame centre).
pub fn frame_time(i: usize, frame_rate: f64) -> f64 {
    i as f64 / frame_rate
}

/// Per-frame labels for a whole file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLabels {
    pub class_ids: Vec<u16>,
    /// 1 where the frame counts towards losses, 0 on UNK frames and padding.
    pub mask: Vec<u8>,
}

impl FrameLabels {
    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    /// Binary foreground labels: 1 wherever a POS class is present.
    pub fn foreground(&self) -> Vec<u8> {
        self.class_ids
            .iter()
            .map(|&c| u8::from(c != BACKGROUND))
            .collect()
    }
}

/// Frames whose centre time lies in `[onset, offset)`, as a half-open range.
pub fn frame_span(onset: f64, offset: f64, frame_rate: f64, n_frames: usize) -> (usize, usize) {
    let mut lo = ((onset * frame_rate).ceil().max(0.0) as usize).min(n_frames);
    while lo > 0 && frame_time(lo - 1, frame_rate) >= onset {
        lo -= 1;
    }
    while lo < n_frames && frame_time(lo, frame_rate) < onset {
        lo += 1;
    }
    let mut hi = ((offset * frame_rate).ceil().max(0.0) as usize).min(n_frames);
    while hi > lo && frame_time(hi - 1, frame_rate) >= offset {
        hi -= 1;
    }
    while hi < n_frames && frame_time(hi, frame_rate) < offset {
        hi += 1;
    }
    (lo, hi.max(lo))
}

/// Labels frames by centre-time containment. POS events of a class in
/// `classes` get id `index + 1`; NEG frames and unlabelled frames are
/// background; UNK frames are masked unless a POS event also covers them.
/// POS events of classes outside `classes` are ignored.
pub fn label_frames(
    n_frames: usize,
    frame_rate: f64,
    events: &[LabeledEvent],
    classes: &[String],
) -> FrameLabels {
    let mut class_ids = vec![BACKGROUND; n_frames];
    let mut mask = vec![1u8; n_frames];
    for ev in events.iter().filter(|e| e.label == EventLabel::Unk) {
        let (lo, hi) = frame_span(ev.onset_s, ev.offset_s, frame_rate, n_frames);
        mask[lo..hi].fill(0);
    }
    for ev in events.iter().filter(|e| e.label == EventLabel::Pos) {
        let Some(idx) = classes.iter().position(|c| *c == ev.class_name) else {
            continue;
        };
        let (lo, hi) = frame_span(ev.onset_s, ev.offset_s, frame_rate, n_frames);
        class_ids[lo..hi].fill(idx as u16 + 1);
        mask[lo..hi].fill(1);
    }
    FrameLabels { class_ids, mask }
}

/// Window start frames: every `shift` frames while the window fits, a single
/// window for short inputs, plus one padded tail window when requested.
pub fn window_origins(n_frames: usize, cfg: &WindowConfig) -> Vec<usize> {
    if n_frames <= cfg.length {
        return vec![0];
    }
    let count = 1 + (n_frames - cfg.length) / cfg.shift;
    let mut origins: Vec<usize> = (0..count).map(|i| i * cfg.shift).collect();
    let last_end = origins[count - 1] + cfg.length;
    if cfg.pad_tail && last_end < n_frames {
        origins.push(origins[count - 1] + cfg.shift);
    }
    origins
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub origin: usize,
    /// `length × bins`, zero beyond the end of the file.
    pub data: Vec<f64>,
    pub class_ids: Vec<u16>,
    pub mask: Vec<u8>,
    /// Number of real (non-padding) frames.
    pub valid: usize,
}

impl Window {
    pub fn foreground(&self) -> Vec<u8> {
        self.class_ids
            .iter()
            .map(|&c| u8::from(c != BACKGROUND))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct WindowBatch {
    pub length: usize,
    pub bins: usize,
    pub windows: Vec<Window>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Builds windows from precomputed labels.
    pub fn from_labels(feat: &FeatureMatrix, labels: &FrameLabels, cfg: &WindowConfig) -> Self {
        let windows = window_origins(feat.frames(), cfg)
            .into_iter()
            .map(|origin| extract_window(feat, labels, origin, cfg.length))
            .collect();
        Self {
            length: cfg.length,
            bins: feat.bins(),
            windows,
        }
    }
}

/// One window starting at `origin`, zero-padded (and masked) past the end of the file.
pub fn extract_window(feat: &FeatureMatrix, labels: &FrameLabels, origin: usize, length: usize) -> Window {
    let bins = feat.bins();
    let valid = feat.frames().saturating_sub(origin).min(length);
    let mut data = vec![0.0; length * bins];
    data[..valid * bins].copy_from_slice(&feat.data()[origin * bins..(origin + valid) * bins]);
    let mut class_ids = vec![BACKGROUND; length];
    let mut mask = vec![0u8; length];
    class_ids[..valid].copy_from_slice(&labels.class_ids[origin..origin + valid]);
    mask[..valid].copy_from_slice(&labels.mask[origin..origin + valid]);
    Window {
        origin,
        data,
        class_ids,
        mask,
        valid,
    }
}

/// Segments a feature matrix into labelled windows.
pub fn frame_windows(
    feat: &FeatureMatrix,
    events: &[LabeledEvent],
    classes: &[String],
    cfg: &WindowConfig,
) -> WindowBatch {
    let labels = label_frames(feat.frames(), feat.frame_rate(), events, classes);
    WindowBatch::from_labels(feat, &labels, cfg)
}

/// Zero-mean, unit-variance copy of a feature matrix (statistics over all cells).
pub fn standardize(feat: &FeatureMatrix) -> FeatureMatrix {
    let n = feat.data().len().max(1) as f64;
    let mean = feat.data().iter().sum::<f64>() / n;
    let var = feat.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = if var > 1e-12 { 1.0 / var.sqrt() } else { 1.0 };
    let data = feat.data().iter().map(|v| (v - mean) * inv).collect();
    let kind: FeatureKind = feat.kind();
    FeatureMatrix::new(feat.frames(), feat.bins(), data, feat.frame_rate(), kind)
        .expect("standardising preserves shape and finiteness")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::Provenance;

    fn matrix(frames: usize, bins: usize) -> FeatureMatrix {
        let data = (0..frames * bins).map(|i| i as f64).collect();
        FeatureMatrix::new(frames, bins, data, 22050.0 / 256.0, FeatureKind::LogMel).unwrap()
    }

    fn ev(on: f64, off: f64, label: EventLabel, class: &str) -> LabeledEvent {
        LabeledEvent {
            file_id: "a.wav".into(),
            onset_s: on,
            offset_s: off,
            label,
            class_name: class.into(),
            provenance: Provenance::Annotated,
        }
    }

    #[test]
    fn window_counts() {
        let cfg = WindowConfig::default();
        assert_eq!(window_origins(431, &cfg).len(), 1);
        assert_eq!(window_origins(603, &cfg), vec![0, 86, 172]);
        assert_eq!(window_origins(603, &cfg).len(), 1 + (603 - 431) / 86);
        for t in 431..2000 {
            let o = window_origins(t, &cfg);
            assert_eq!(o.len(), 1 + (t - 431) / 86);
            assert!(o.windows(2).all(|p| p[1] - p[0] == 86));
        }
    }

    #[test]
    fn padded_tail_covers_every_frame() {
        let cfg = WindowConfig {
            pad_tail: true,
            ..Default::default()
        };
        for t in 431..1500 {
            let mut covered = vec![false; t];
            for o in window_origins(t, &cfg) {
                for c in covered.iter_mut().skip(o).take(431) {
                    *c = true;
                }
            }
            assert!(covered.iter().all(|&c| c), "T={t}");
        }
    }

    #[test]
    fn short_input_is_padded_and_masked() {
        let feat = matrix(100, 4);
        let b = frame_windows(&feat, &[], &[], &WindowConfig::default());
        assert_eq!(b.len(), 1);
        let w = &b.windows[0];
        assert_eq!(w.valid, 100);
        assert_eq!(w.data.len(), 431 * 4);
        assert!(w.mask[..100].iter().all(|&m| m == 1));
        assert!(w.mask[100..].iter().all(|&m| m == 0));
        assert!(w.data[400..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centre_time_labelling_of_one_second_event() {
        let fr = 22050.0 / 256.0;
        let labels = label_frames(
            400,
            fr,
            &[ev(1.0, 2.0, EventLabel::Pos, "A")],
            &["A".to_string()],
        );
        // oracle: frames i with 1.0 <= i / fr < 2.0
        let expected: Vec<usize> = (0..400)
            .filter(|&i| {
                let t = i as f64 / fr;
                (1.0..2.0).contains(&t)
            })
            .collect();
        let got: Vec<usize> = (0..400).filter(|&i| labels.class_ids[i] == 1).collect();
        assert_eq!(got, expected);
        assert_eq!((got[0], *got.last().unwrap()), (87, 172));
    }

    #[test]
    fn neg_and_unk_handling() {
        let fr = 10.0;
        let classes = vec!["A".to_string(), "B".to_string()];
        let labels = label_frames(
            50,
            fr,
            &[
                ev(0.0, 1.0, EventLabel::Neg, "A"),
                ev(1.0, 2.0, EventLabel::Unk, "A"),
                ev(1.5, 2.5, EventLabel::Pos, "B"),
                ev(3.0, 3.5, EventLabel::Pos, "C"),
            ],
            &classes,
        );
        assert!(labels.class_ids[..10].iter().all(|&c| c == BACKGROUND));
        assert!(labels.mask[..10].iter().all(|&m| m == 1));
        assert!(labels.mask[10..15].iter().all(|&m| m == 0));
        assert!(labels.class_ids[15..25].iter().all(|&c| c == 2));
        assert!(labels.mask[15..25].iter().all(|&m| m == 1));
        // class C is not in the vocabulary
        assert!(labels.class_ids[30..35].iter().all(|&c| c == BACKGROUND));
        assert_eq!(labels.foreground()[20], 1);
    }

    #[test]
    fn windows_slice_features_and_labels() {
        let feat = matrix(603, 2);
        let b = frame_windows(
            &feat,
            &[ev(2.0, 3.0, EventLabel::Pos, "A")],
            &["A".to_string()],
            &WindowConfig::default(),
        );
        assert_eq!(b.len(), 3);
        let w = &b.windows[1];
        assert_eq!(w.origin, 86);
        assert_eq!(w.data[0], feat.get(86, 0));
        let labels = label_frames(603, feat.frame_rate(), &[ev(2.0, 3.0, EventLabel::Pos, "A")], &["A".to_string()]);
        assert_eq!(w.class_ids[..], labels.class_ids[86..86 + 431]);
    }

    #[test]
    fn standardize_moments() {
        let s = standardize(&matrix(50, 3));
        let n = s.data().len() as f64;
        let mean = s.data().iter().sum::<f64>() / n;
        let var = s.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }
}
