//! Per-file inference from the first POS events of the file.

use log::debug;

use super::finetune::{fbc_probs_with_center, finetune_sed, finetune_sfbc, split_supports, SedFinetune, SfbcConfig};
use super::model::MultiTaskModel;
use super::proto::{compute_w, predict_query};
use super::FewShotError;
use crate::audio_io::{EventInterval, EventLabel, LabeledEvent};
use crate::augment::{AugmentError, FrameScorer};
use crate::features::{frame_span, window_origins, FeatureMatrix, WindowConfig};
use crate::nn::{ModelParams, Tensor};
use crate::postproc::{mfl_from_support, run_pipeline, PostprocConfig, ProbCurve};

/// `[1, 1, len, bins]` input for the window at `origin`, zero-padded.
pub(crate) fn window_tensor(feat: &FeatureMatrix, origin: usize, len: usize) -> Tensor {
    let bins = feat.bins();
    let valid = feat.frames().saturating_sub(origin).min(len);
    let mut data = vec![0.0; len * bins];
    data[..valid * bins].copy_from_slice(&feat.data()[origin * bins..(origin + valid) * bins]);
    Tensor::new(vec![1, 1, len, bins], data).expect("window shape")
}

/// Runs `f` on every window (with a padded tail window) and averages its
/// `len × width` outputs over the windows covering each frame.
pub(crate) fn window_average<F>(
    feat: &FeatureMatrix,
    window: &WindowConfig,
    width: usize,
    mut f: F,
) -> Result<Vec<f64>, FewShotError>
where
    F: FnMut(&Tensor) -> Result<Vec<f64>, FewShotError>,
{
    let (n, len) = (feat.frames(), window.length);
    let cfg = WindowConfig { pad_tail: true, ..*window };
    let mut sum = vec![0.0; n * width];
    let mut count = vec![0usize; n];
    for o in window_origins(n, &cfg) {
        let out = f(&window_tensor(feat, o, len))?;
        if out.len() != len * width {
            return Err(FewShotError::Shape(format!("window output {} != {len} x {width}", out.len())));
        }
        let valid = n.saturating_sub(o).min(len);
        for (acc, v) in sum[o * width..(o + valid) * width].iter_mut().zip(&out) {
            *acc += v;
        }
        count[o..o + valid].iter_mut().for_each(|c| *c += 1);
    }
    for (row, &c) in sum.chunks_exact_mut(width).zip(&count) {
        row.iter_mut().for_each(|v| *v /= c.max(1) as f64);
    }
    Ok(sum)
}

/// SED-branch embeddings of every frame, `T × C`.
pub fn file_embeddings(
    model: &MultiTaskModel,
    params: &ModelParams,
    feat: &FeatureMatrix,
    window: &WindowConfig,
) -> Result<Vec<f64>, FewShotError> {
    window_average(feat, window, model.embedding_dim(), |x| Ok(model.embed(params, x)?.into_data()))
}

/// The labelled start of a file: its first `n` POS events.
#[derive(Debug, Clone)]
pub struct SupportSet {
    pub events: Vec<LabeledEvent>,
    /// Offset of the last support event.
    pub cutoff_s: f64,
    /// First frame whose centre is at or after the cutoff.
    pub cutoff_frame: usize,
    /// Per-frame 1 inside support events, 0 elsewhere.
    pub labels: Vec<u8>,
    /// 1 on support frames (before the cutoff) that are not UNK.
    pub mask: Vec<u8>,
    /// Support event lengths in frames.
    pub lengths: Vec<usize>,
}

impl SupportSet {
    pub fn new(events: &[LabeledEvent], n_support: usize, frames: usize, frame_rate: f64) -> Result<Self, FewShotError> {
        let mut pos: Vec<LabeledEvent> = events.iter().filter(|e| e.label == EventLabel::Pos).cloned().collect();
        if pos.len() < n_support || n_support == 0 {
            return Err(FewShotError::TooFewEvents { needed: n_support.max(1), got: pos.len() });
        }
        pos.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
        pos.truncate(n_support);
        let cutoff_s = pos.iter().map(|e| e.offset_s).fold(f64::NEG_INFINITY, f64::max);
        let cutoff_frame = frame_span(0.0, cutoff_s, frame_rate, frames).1;
        let mut labels = vec![0u8; frames];
        let mut mask = vec![0u8; frames];
        mask[..cutoff_frame].fill(1);
        for e in events.iter().filter(|e| e.label == EventLabel::Unk) {
            let (lo, hi) = frame_span(e.onset_s, e.offset_s, frame_rate, frames);
            mask[lo.min(cutoff_frame)..hi.min(cutoff_frame)].fill(0);
        }
        let mut lengths = Vec::with_capacity(pos.len());
        for e in &pos {
            let (lo, hi) = frame_span(e.onset_s, e.offset_s, frame_rate, frames);
            labels[lo..hi].fill(1);
            mask[lo..hi].fill(1);
            lengths.push(hi - lo);
        }
        Ok(Self {
            events: pos,
            cutoff_s,
            cutoff_frame,
            labels,
            mask,
            lengths,
        })
    }
}

#[derive(Debug, Clone)]
pub struct InferConfig {
    pub window: WindowConfig,
    pub n_support: usize,
    pub finetune_sed: Option<SedFinetune>,
    pub finetune_sfbc: Option<SfbcConfig>,
    pub postproc: PostprocConfig,
    pub mfl_ratio: f64,
    pub mfl_floor: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            window: WindowConfig { pad_tail: true, ..WindowConfig::default() },
            n_support: 5,
            finetune_sed: None,
            finetune_sfbc: None,
            postproc: PostprocConfig::default(),
            mfl_ratio: 0.5,
            mfl_floor: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub detections: Vec<EventInterval>,
    /// POS probability per frame (zero before the cutoff).
    pub probs: Vec<f64>,
    pub cutoff_s: f64,
    pub mfl_frames: usize,
    pub sfbc_applied: bool,
}

/// Detects the support class in the rest of a file. The prototype
/// probability is averaged with the fine-tuned heads that are enabled.
pub fn infer_file(
    model: &MultiTaskModel,
    params: &ModelParams,
    file_id: &str,
    feat: &FeatureMatrix,
    events: &[LabeledEvent],
    cfg: &InferConfig,
) -> Result<Inference, FewShotError> {
    let (n, fr) = (feat.frames(), feat.frame_rate());
    let support = SupportSet::new(events, cfg.n_support, n, fr)?;
    let d = model.embedding_dim();
    let emb = file_embeddings(model, params, feat, &cfg.window)?;
    let labels: Vec<usize> = support.labels.iter().map(|&l| usize::from(l)).collect();
    let w = compute_w(&emb, d, &labels, &support.mask, 2)?;
    let origin = w.mean();
    let centred: Vec<f64> = emb.chunks_exact(d).flat_map(|r| r.iter().zip(&origin).map(|(a, o)| a - o)).collect();
    let proto = predict_query(&centred, d, &w.shifted(&origin))?;
    let mut probs: Vec<f64> = proto.chunks_exact(2).map(|r| r[1]).collect();
    let mut sources = 1.0;

    let cut = support.cutoff_frame;
    if let Some(sed) = &cfg.finetune_sed {
        let head = finetune_sed(&emb[..cut * d], d, &support.labels[..cut], &support.mask[..cut], &emb[cut * d..], sed)?;
        probs.iter_mut().zip(head.predict(&emb)).for_each(|(p, q)| *p += q);
        sources += 1.0;
    }
    let mut sfbc_applied = false;
    if let Some(sfbc) = &cfg.finetune_sfbc {
        let split = split_supports(&support.events)?;
        let out = finetune_sfbc(model, params, feat, &support, &split, &cfg.window, sfbc)?;
        if let Some(center) = &out.center {
            let q = fbc_probs_with_center(model, &out.params, feat, &cfg.window, center)?;
            probs.iter_mut().zip(q).for_each(|(p, q)| *p += q);
            sources += 1.0;
            sfbc_applied = true;
        }
    }
    for (t, p) in probs.iter_mut().enumerate() {
        *p = if t < cut { 0.0 } else { (*p / sources).clamp(0.0, 1.0) };
    }

    let mfl_frames = mfl_from_support(&support.lengths, cfg.mfl_ratio, cfg.mfl_floor);
    let pp = PostprocConfig { mfl_frames, ..cfg.postproc.clone() };
    let curve = ProbCurve::new(file_id, probs, fr)?;
    let detections = run_pipeline(&curve, &pp)?;
    debug!("{file_id}: {} detections after {:.2} s, mfl {mfl_frames}", detections.len(), support.cutoff_s);
    Ok(Inference {
        detections,
        probs: curve.probs,
        cutoff_s: support.cutoff_s,
        mfl_frames,
        sfbc_applied,
    })
}

/// Scores frames with the trained SED head for a training-vocabulary class.
#[derive(Debug, Clone)]
pub struct SedScorer<'a> {
    pub model: &'a MultiTaskModel,
    pub params: &'a ModelParams,
    pub vocabulary: &'a [String],
    pub window: WindowConfig,
}

impl FrameScorer for SedScorer<'_> {
    fn score(&self, features: &FeatureMatrix, class_name: &str) -> Result<Vec<f64>, AugmentError> {
        let id = self
            .vocabulary
            .iter()
            .position(|c| c == class_name)
            .ok_or_else(|| AugmentError::Scorer(format!("class {class_name} not in the training vocabulary")))?
            + 1;
        let k = self.model.cfg.n_classes + 1;
        let probs = window_average(features, &self.window, k, |x| self.model.sed_probs(self.params, x))
            .map_err(|e| AugmentError::Scorer(e.to_string()))?;
        Ok(probs.chunks_exact(k).map(|r| r[id]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::Provenance;
    use crate::features::FeatureKind;
    use crate::fewshot::ModelConfig;
    use crate::mamba::MambaConfig;

    const FR: f64 = 22050.0 / 256.0;

    fn ev(on: f64, off: f64, label: EventLabel) -> LabeledEvent {
        LabeledEvent {
            file_id: "f.wav".into(),
            onset_s: on,
            offset_s: off,
            label,
            class_name: "X".into(),
            provenance: Provenance::Annotated,
        }
    }

    fn model(bins: usize) -> MultiTaskModel {
        MultiTaskModel::new(ModelConfig {
            n_mels: bins,
            channels: 4,
            cnn_blocks: 2,
            pooled_blocks: 2,
            mamba: MambaConfig { d_inner: 4, d_state: 2, n_blocks: 1, ..MambaConfig::default() },
            n_classes: 2,
        })
        .unwrap()
    }

    /// Tone-like bumps in bin 2 where events are, noise-free background.
    fn fixture(frames: usize, bins: usize, events: &[(f64, f64)]) -> FeatureMatrix {
        let mut data = vec![0.0; frames * bins];
        for &(on, off) in events {
            let (lo, hi) = frame_span(on, off, FR, frames);
            for t in lo..hi {
                data[t * bins + 2] = 4.0;
                data[t * bins + 3] = 2.0;
            }
        }
        FeatureMatrix::new(frames, bins, data, FR, FeatureKind::LogMel).unwrap()
    }

    #[test]
    fn support_set_takes_first_events_and_masks_unk() {
        let mut events: Vec<_> = (0..7).map(|i| ev(1.0 + i as f64, 1.5 + i as f64, EventLabel::Pos)).collect();
        events.push(ev(0.2, 0.4, EventLabel::Unk));
        events.reverse();
        let s = SupportSet::new(&events, 5, 1000, FR).unwrap();
        assert_eq!(s.events.len(), 5);
        assert_eq!(s.cutoff_s, 5.5);
        assert_eq!(s.cutoff_frame, (5.5 * FR).ceil() as usize);
        let (lo, hi) = frame_span(0.2, 0.4, FR, 1000);
        assert!(s.mask[lo..hi].iter().all(|&m| m == 0));
        assert!(s.mask[s.cutoff_frame..].iter().all(|&m| m == 0));
        assert_eq!(s.labels.iter().map(|&l| l as usize).sum::<usize>(), s.lengths.iter().sum::<usize>());
        assert!(matches!(SupportSet::new(&events, 8, 1000, FR), Err(FewShotError::TooFewEvents { needed: 8, got: 7 })));
    }

    #[test]
    fn window_average_reconstructs_identity() {
        let f = fixture(1000, 4, &[(1.0, 2.0)]);
        let cfg = WindowConfig::default();
        let avg = window_average(&f, &cfg, 4, |x| Ok(x.data().to_vec())).unwrap();
        assert_eq!(avg, f.data());
    }

    #[test]
    fn no_query_frames_gives_no_detections() {
        let events: Vec<_> = (0..5).map(|i| ev(0.5 + i as f64, 1.0 + i as f64, EventLabel::Pos)).collect();
        let f = fixture((5.0 * FR) as usize, 8, &[(0.5, 1.0), (1.5, 2.0), (2.5, 3.0), (3.5, 4.0), (4.5, 5.0)]);
        let m = model(8);
        let p = m.init(0).unwrap();
        let out = infer_file(&m, &p, "f.wav", &f, &events, &InferConfig::default()).unwrap();
        assert!(out.detections.is_empty());
    }

    #[test]
    fn detects_planted_events_and_is_deterministic() {
        let times: Vec<(f64, f64)> = (0..12).map(|i| (1.0 + 2.0 * i as f64, 1.6 + 2.0 * i as f64)).collect();
        let frames = (26.0 * FR) as usize;
        let f = fixture(frames, 8, &times);
        let events: Vec<_> = times.iter().map(|&(a, b)| ev(a, b, EventLabel::Pos)).collect();
        let m = model(8);
        let p = m.init(1).unwrap();
        let cfg = InferConfig {
            finetune_sed: Some(SedFinetune::default()),
            finetune_sfbc: Some(SfbcConfig { steps: 20, ..SfbcConfig::default() }),
            ..InferConfig::default()
        };
        let a = infer_file(&m, &p, "f.wav", &f, &events, &cfg).unwrap();
        let b = infer_file(&m, &p, "f.wav", &f, &events, &cfg).unwrap();
        assert_eq!(a.detections, b.detections);
        assert!(a.sfbc_applied);
        let hits = times[5..]
            .iter()
            .filter(|&&(on, off)| {
                a.detections.iter().any(|d| crate::audio_io::interval_iou((d.onset, d.offset), (on, off)) >= 0.3)
            })
            .count();
        assert!(hits >= 6, "{hits} of 7 query events found: {:?}", a.detections);
    }

    #[test]
    fn sed_scorer_rejects_unknown_class() {
        let m = model(8);
        let p = m.init(2).unwrap();
        let voc = vec!["A".to_string(), "B".to_string()];
        let s = SedScorer { model: &m, params: &p, vocabulary: &voc, window: WindowConfig::default() };
        let f = fixture(500, 8, &[]);
        assert!(s.score(&f, "C").is_err());
        let probs = s.score(&f, "B").unwrap();
        assert_eq!(probs.len(), 500);
        assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}
