//! Few-shot bioacoustic sound event detection.
//!
//! The crate is organised along the processing chain:
//!
//! * [`audio_io`]: WAV ingestion, resampling, annotation and detection CSVs, manifests.
//! * [`features`]: STFT, mel filterbank, log-mel, PCEN, sliding windows and the feature cache.
//! * [`nn`]: tensors, hand-written layers with analytic backward passes, losses,
//!   parameter files, Adam and a finite-difference gradient checker.
//! * [`mamba`]: selective state-space scan, causal convolution and the encoder stack.
//! * [`fewshot`]: episodes, the multi-task SED/FBC model, prototypes and fine-tuning.
//! * [`augment`]: feature-space augmentation and pseudo-label enhancement.
//! * [`postproc`]: probability curve to event intervals.
//! * [`evaluate`]: event matching and precision/recall/F-measure.

pub mod audio_io;
pub mod augment;
pub mod evaluate;
pub mod features;
pub mod fewshot;
pub mod mamba;
pub mod nn;
pub mod postproc;
pub mod seed;

pub use audio_io::{EventInterval, LabeledEvent, Waveform};
