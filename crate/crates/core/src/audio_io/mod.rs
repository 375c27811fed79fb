//! Audio ingestion, annotation CSVs, detection CSVs and dataset manifests.
//!
//! Annotation files follow the DCASE few-shot convention: a header of
//! `Audiofilename,Starttime,Endtime` followed by one or more class columns
//! whose cells hold `POS`, `NEG`, `UNK` or nothing.

mod annotations;
mod detections;
mod manifest;
mod resample;
mod wav;

use std::path::PathBuf;

use thiserror::Error;

pub use annotations::{
    parse_annotations, parse_annotations_str, write_annotations, AnnotationFile, RowError,
};
pub use detections::{parse_detections, write_detections};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use resample::resample;
pub use wav::{read_wav, write_wav};

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: unsupported encoding: {detail}")]
    UnsupportedEncoding { path: PathBuf, detail: String },
    #[error("{path}: malformed audio: {detail}")]
    Malformed { path: PathBuf, detail: String },
    #[error("{path}: zero-length audio")]
    Empty { path: PathBuf },
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("cannot write {path}: {detail}")]
    Write { path: PathBuf, detail: String },
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("cannot read {path}: {detail}")]
    Io { path: PathBuf, detail: String },
    #[error("{path}: missing required column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: no class columns after Audiofilename,Starttime,Endtime")]
    NoClassColumns { path: PathBuf },
    #[error("{path}: events for file `{file_id}` are not sorted by onset")]
    Unsorted { path: PathBuf, file_id: String },
    #[error("{path}: line {line}: {message}")]
    BadRow {
        path: PathBuf,
        line: u64,
        message: String,
    },
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {detail}")]
    Io { path: PathBuf, detail: String },
    #[error("annotation {annotation} references `{file_id}`, which matches {matches} audio entries")]
    Unresolved {
        annotation: PathBuf,
        file_id: String,
        matches: usize,
    },
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
}

/// Mono audio buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidWaveform("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::InvalidWaveform(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Annotation cell value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventLabel {
    Pos,
    Neg,
    Unk,
}

impl EventLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            EventLabel::Pos => "POS",
            EventLabel::Neg => "NEG",
            EventLabel::Unk => "UNK",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "POS" => Some(EventLabel::Pos),
            "NEG" => Some(EventLabel::Neg),
            "UNK" => Some(EventLabel::Unk),
            _ => None,
        }
    }
}

/// Where an annotation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Provenance {
    #[default]
    Annotated,
    Pseudo,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Annotated => "annotated",
            Provenance::Pseudo => "pseudo",
        }
    }
}

/// One annotated interval of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEvent {
    pub file_id: String,
    pub onset_s: f64,
    pub offset_s: f64,
    pub label: EventLabel,
    pub class_name: String,
    pub provenance: Provenance,
}

impl LabeledEvent {
    pub fn duration_s(&self) -> f64 {
        self.offset_s - self.onset_s
    }
}

/// A detected (or reference) interval in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct EventInterval {
    pub file_id: String,
    pub onset: f64,
    pub offset: f64,
    pub score: f64,
    pub class_name: Option<String>,
}

impl EventInterval {
    pub fn new(file_id: impl Into<String>, onset: f64, offset: f64) -> Self {
        Self {
            file_id: file_id.into(),
            onset,
            offset,
            score: 1.0,
            class_name: None,
        }
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

/// Intersection over union of two 1-D intervals; zero when either is empty.
pub fn interval_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
