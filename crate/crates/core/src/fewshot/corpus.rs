//! Training corpus and episode sampling.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::seq::SliceRandom;

use super::FewShotError;
use crate::audio_io::{EventLabel, LabeledEvent};
use crate::features::{extract_window, label_frames, window_origins, FeatureMatrix, FrameLabels, Window, WindowBatch, WindowConfig};
use crate::seed;

/// A featurised training file with frame labels over the global vocabulary.
#[derive(Debug, Clone)]
pub struct CorpusFile {
    pub file_id: String,
    pub features: FeatureMatrix,
    pub labels: FrameLabels,
}

/// All training files. Class ids are global: vocabulary entry `i` has id
/// `i + 1`, and 0 is background.
#[derive(Debug, Clone)]
pub struct TrainingCorpus {
    vocabulary: Vec<String>,
    files: Vec<CorpusFile>,
    window: WindowConfig,
    /// For each class, the `(file, origin)` windows holding an unmasked frame of it.
    by_class: Vec<Vec<(usize, usize)>>,
}

impl TrainingCorpus {
    pub fn new(files: Vec<(String, FeatureMatrix, Vec<LabeledEvent>)>, window: WindowConfig) -> Result<Self, FewShotError> {
        if window.length == 0 || window.shift == 0 {
            return Err(FewShotError::Config("window length and shift must be positive".into()));
        }
        let vocabulary: Vec<String> = files
            .iter()
            .flat_map(|(_, _, ev)| ev.iter().filter(|e| e.label == EventLabel::Pos).map(|e| e.class_name.clone()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if let Some(bins) = files.first().map(|f| f.1.bins()) {
            if let Some((id, ..)) = files.iter().find(|f| f.1.bins() != bins) {
                return Err(FewShotError::Shape(format!("{id}: {bins} bins expected")));
            }
        }
        let mut by_class = vec![Vec::new(); vocabulary.len()];
        let files: Vec<CorpusFile> = files
            .into_iter()
            .map(|(file_id, features, events)| {
                let labels = label_frames(features.frames(), features.frame_rate(), &events, &vocabulary);
                CorpusFile { file_id, features, labels }
            })
            .collect();
        for (fi, f) in files.iter().enumerate() {
            for origin in window_origins(f.features.frames(), &window) {
                let end = (origin + window.length).min(f.labels.len());
                let present: BTreeSet<u16> = (origin..end)
                    .filter(|&t| f.labels.mask[t] == 1 && f.labels.class_ids[t] != 0)
                    .map(|t| f.labels.class_ids[t])
                    .collect();
                for c in present {
                    by_class[c as usize - 1].push((fi, origin));
                }
            }
        }
        Ok(Self {
            vocabulary,
            files,
            window,
            by_class,
        })
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn files(&self) -> &[CorpusFile] {
        &self.files
    }

    pub fn window_config(&self) -> &WindowConfig {
        &self.window
    }

    pub fn bins(&self) -> usize {
        self.files.first().map_or(0, |f| f.features.bins())
    }

    pub fn window(&self, file: usize, origin: usize) -> Window {
        let f = &self.files[file];
        extract_window(&f.features, &f.labels, origin, self.window.length)
    }

    /// Windows containing class `class_id` (1-based).
    pub fn class_windows(&self, class_id: u16) -> &[(usize, usize)] {
        &self.by_class[class_id as usize - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeConfig {
    pub n_classes: usize,
    /// Labelled windows drawn per sampled class.
    pub support_per_class: usize,
    /// Additional held-out windows per class.
    pub query_per_class: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            n_classes: 2,
            support_per_class: 4,
            query_per_class: 0,
        }
    }
}

/// One training episode. Labels use global class ids.
#[derive(Debug, Clone)]
pub struct Episode {
    pub classes: Vec<u16>,
    pub support: WindowBatch,
    pub query: WindowBatch,
}

impl Episode {
    /// Per-frame class ids `Y`, flattened over windows.
    pub fn labels(&self) -> Vec<usize> {
        self.support.windows.iter().flat_map(|w| w.class_ids.iter().map(|&c| c as usize)).collect()
    }

    /// Per-frame foreground labels `A`.
    pub fn foreground(&self) -> Vec<usize> {
        self.support.windows.iter().flat_map(|w| w.class_ids.iter().map(|&c| usize::from(c != 0))).collect()
    }

    /// Per-frame mask `M`.
    pub fn mask(&self) -> Vec<u8> {
        self.support.windows.iter().flat_map(|w| w.mask.iter().copied()).collect()
    }

    /// `N = Σ M`.
    pub fn n_unmasked(&self) -> usize {
        self.support.windows.iter().map(|w| w.mask.iter().filter(|&&m| m == 1).count()).sum()
    }
}

/// Samples `n_classes` classes and their windows; deterministic given `seed`.
pub fn build_episode(corpus: &TrainingCorpus, cfg: &EpisodeConfig, seed: u64) -> Result<Episode, FewShotError> {
    let available = corpus.vocabulary.len();
    if cfg.n_classes == 0 || cfg.n_classes > available {
        return Err(FewShotError::InsufficientClasses {
            needed: cfg.n_classes,
            available,
        });
    }
    let mut rng = seed::stream(seed, "episode", 0);
    let mut classes: Vec<u16> = sample(&mut rng, available, cfg.n_classes)
        .into_iter()
        .map(|i| i as u16 + 1)
        .collect();
    classes.sort_unstable();
    let mut taken: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut support = Vec::new();
    let mut query = Vec::new();
    for &c in &classes {
        let mut cand: Vec<(usize, usize)> = corpus.class_windows(c).iter().copied().filter(|w| !taken.contains(w)).collect();
        cand.shuffle(&mut rng);
        let n_sup = cfg.support_per_class.min(cand.len());
        let n_q = cfg.query_per_class.min(cand.len() - n_sup);
        for (i, &w) in cand[..n_sup + n_q].iter().enumerate() {
            taken.insert(w);
            if i < n_sup {
                support.push(w);
            } else {
                query.push(w);
            }
        }
    }
    let batch = |ws: Vec<(usize, usize)>| WindowBatch {
        length: corpus.window.length,
        bins: corpus.bins(),
        windows: ws.into_iter().map(|(f, o)| corpus.window(f, o)).collect(),
    };
    let episode = Episode {
        classes,
        support: batch(support),
        query: batch(query),
    };
    if episode.n_unmasked() == 0 {
        return Err(FewShotError::NoPositive);
    }
    Ok(episode)
}
