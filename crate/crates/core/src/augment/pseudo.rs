//! Pseudo-labels for weakly annotated files.

use crate::audio_io::{EventLabel, LabeledEvent, Provenance};
use crate::features::FeatureMatrix;
use crate::postproc::{run_pipeline, PostprocConfig, ProbCurve};

use super::AugmentError;

/// Produces a per-frame POS probability curve for one class.
pub trait FrameScorer {
    fn score(&self, features: &FeatureMatrix, class_name: &str) -> Result<Vec<f64>, AugmentError>;
}

/// A file known to contain `class_name` somewhere, without frame labels.
#[derive(Debug, Clone)]
pub struct WeakFile {
    pub file_id: String,
    pub class_name: String,
    pub features: FeatureMatrix,
}

#[derive(Debug, Clone)]
pub struct PseudoConfig {
    /// Minimum mean frame probability of a kept event.
    pub confidence: f64,
    pub postproc: PostprocConfig,
}

/// Detects events in each weak file and keeps those whose mean probability
/// reaches `confidence`, as POS events tagged [`Provenance::Pseudo`].
pub fn pseudo_label_enhance<S: FrameScorer>(
    scorer: &S,
    files: &[WeakFile],
    cfg: &PseudoConfig,
) -> Result<Vec<LabeledEvent>, AugmentError> {
    let mut out = Vec::new();
    for f in files {
        let probs = scorer.score(&f.features, &f.class_name)?;
        if probs.len() != f.features.frames() {
            return Err(AugmentError::Scorer(format!(
                "{}: {} probabilities for {} frames",
                f.file_id,
                probs.len(),
                f.features.frames()
            )));
        }
        let curve = ProbCurve::new(f.file_id.clone(), probs, f.features.frame_rate())?;
        for iv in run_pipeline(&curve, &cfg.postproc)? {
            let (lo, hi) = (
                (iv.onset * curve.frame_rate).round() as usize,
                ((iv.offset * curve.frame_rate).round() as usize).min(curve.probs.len()),
            );
            let mean = curve.probs[lo..hi].iter().sum::<f64>() / (hi - lo).max(1) as f64;
            if mean >= cfg.confidence {
                out.push(LabeledEvent {
                    file_id: f.file_id.clone(),
                    onset_s: iv.onset,
                    offset_s: iv.offset,
                    label: EventLabel::Pos,
                    class_name: f.class_name.clone(),
                    provenance: Provenance::Pseudo,
                });
            }
        }
    }
    Ok(out)
}
