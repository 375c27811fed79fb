//! Flat `section.key = value` run configuration.
//!
//! Precedence, lowest first: built-in defaults, the config file, `FSED_*`
//! environment variables, `--set key=value` flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use fsbed_core::augment::AugmentConfig;
use fsbed_core::evaluate::EvalConfig;
use fsbed_core::features::{FeatureConfig, FeatureKind, PcenConfig, WindowConfig};
use fsbed_core::fewshot::{EpisodeConfig, InferConfig, LogisticConfig, ModelConfig, SedFinetune, SfbcConfig};
use fsbed_core::mamba::{BDiscretization, MambaConfig};
use fsbed_core::nn::AdamConfig;
use fsbed_core::postproc::PostprocConfig;

use crate::synth::SynthConfig;

/// Prefix of environment overrides: `FSED_POSTPROC__NMS_IOU=0.5` sets `postproc.nms_iou`.
pub const ENV_PREFIX: &str = "FSED_";

/// `(key, default, description)`
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "root seed for every random stream"),
    ("features.sample_rate", "22050", "analysis sample rate (Hz); audio is resampled to it"),
    ("features.n_fft", "1024", "STFT size"),
    ("features.hop", "256", "STFT hop"),
    ("features.n_mels", "128", "mel bands"),
    ("features.fmin", "0", "lowest mel frequency (Hz)"),
    ("features.fmax", "0", "highest mel frequency (Hz); 0 means Nyquist"),
    ("features.log_floor", "1e-10", "floor added before the log"),
    ("features.kind", "logmel", "logmel or pcen"),
    ("features.standardize", "true", "standardise each file's features to zero mean, unit variance"),
    ("pcen.smoothing", "0.025", "PCEN smoother coefficient"),
    ("pcen.alpha", "0.98", "PCEN gain exponent"),
    ("pcen.delta", "2", "PCEN bias"),
    ("pcen.r", "0.5", "PCEN root"),
    ("pcen.eps", "1e-6", "PCEN stabiliser"),
    ("window.length", "431", "window length in frames"),
    ("window.shift", "86", "window shift in frames"),
    ("model.channels", "64", "CNN width and embedding dimension"),
    ("model.cnn_blocks", "4", "CNN blocks"),
    ("model.pooled_blocks", "4", "leading CNN blocks that halve the frequency axis"),
    ("mamba.d_inner", "128", "NetMamba inner dimension"),
    ("mamba.d_state", "16", "SSM state size"),
    ("mamba.conv_width", "4", "causal convolution width"),
    ("mamba.n_blocks", "2", "NetMamba blocks"),
    ("mamba.b_discretization", "euler", "euler or zoh discretisation of B"),
    ("mamba.dt_min", "0.001", "smallest initial step size"),
    ("mamba.dt_max", "0.1", "largest initial step size"),
    ("train.episodes", "200", "training episodes"),
    ("train.classes_per_episode", "2", "classes sampled per episode"),
    ("train.windows_per_class", "4", "windows sampled per class and episode"),
    ("train.lr", "0.001", "Adam learning rate"),
    ("train.beta1", "0.9", "Adam beta1"),
    ("train.beta2", "0.999", "Adam beta2"),
    ("train.checkpoint_every", "50", "write a checkpoint every k episodes; 0 disables"),
    ("augment.noise_sigma", "0.1", "additive noise standard deviation"),
    ("augment.n_freq_masks", "2", "frequency masks on the FBC input"),
    ("augment.max_freq_width", "16", "widest frequency mask (bins)"),
    ("augment.n_time_masks", "2", "time masks on the FBC input"),
    ("augment.max_time_width", "32", "widest time mask (frames)"),
    ("infer.n_support", "5", "POS events per file used as support"),
    ("infer.finetune_sed", "false", "refine with the binary SED head and pseudo-label cycles"),
    ("infer.finetune_sfbc", "false", "refit the FBC head with the support centre token"),
    ("infer.sed_cycles", "3", "pseudo-label cycles"),
    ("infer.pseudo_hi", "0.85", "query frames above this become POS pseudo-labels"),
    ("infer.pseudo_lo", "0.15", "query frames below this become NEG pseudo-labels"),
    ("infer.logistic_epochs", "200", "Adam steps per binary head fit"),
    ("infer.logistic_lr", "0.05", "binary head learning rate"),
    ("infer.sfbc_steps", "100", "FBC head refit steps"),
    ("infer.sfbc_lr", "0.01", "FBC head refit learning rate"),
    ("infer.mfl_ratio", "0.5", "minimum event length as a fraction of the shortest support"),
    ("infer.mfl_floor", "5", "minimum event length floor (frames)"),
    ("postproc.base_threshold", "0.5", "base detection threshold"),
    ("postproc.threshold_delta", "0.05", "threshold reduction"),
    ("postproc.threshold_floor", "0.5", "lowest threshold"),
    ("postproc.nms_iou", "0.7", "NMS IoU cutoff"),
    ("postproc.merge", "true", "merge runs of short events"),
    ("postproc.merge_gap_frames", "87", "largest gap inside a merged run (frames)"),
    ("postproc.merge_prob", "0.5", "mean probability required to merge"),
    ("postproc.smooth_window", "5", "moving-average window (odd)"),
    ("postproc.median_kernel", "3", "median filter kernel (odd)"),
    ("postproc.smooth_first", "true", "smooth probabilities before thresholding"),
    ("evaluate.min_iou", "0.3", "IoU needed for a match"),
    ("evaluate.n_support", "5", "leading POS events excluded from scoring"),
    ("evaluate.skip_support", "true", "exclude support events and earlier predictions"),
    ("synth.files", "6", "files to generate"),
    ("synth.val_files", "2", "of which held out for validation"),
    ("synth.duration_s", "60", "file length (s)"),
    ("synth.events_per_file", "20", "target-class events per file"),
    ("synth.distractors_per_file", "4", "events of another class per file"),
    ("synth.min_event_s", "0.4", "shortest event (s)"),
    ("synth.max_event_s", "0.8", "longest event (s)"),
    ("synth.min_gap_s", "1.5", "smallest gap between events (s)"),
    ("synth.snr_db", "15", "event-to-noise ratio (dB)"),
    ("synth.noise_rms", "0.02", "pink noise RMS"),
];

/// A configuration problem: unknown key, bad value or unreadable file.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    /// Defaults, then `file`, then the environment, then `overrides`.
    pub fn load(file: Option<&Path>, env: impl IntoIterator<Item = (String, String)>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        }
        cfg.apply_env(env)?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("--set expects key=value, got `{o}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.to_string();
                Ok(())
            }
            None => Err(ConfigError(format!("unknown config key `{key}`"))),
        }
    }

    /// `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| ConfigError(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_env(&mut self, env: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        let mut vars: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        vars.sort();
        for (k, v) in vars {
            let key = k[ENV_PREFIX.len()..].to_ascii_lowercase().replace("__", ".");
            self.set(&key, &v).map_err(|e| ConfigError(format!("{k}: {e}")))?;
        }
        Ok(())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .values
            .get(key)
            .ok_or_else(|| ConfigError(format!("unknown config key `{key}`")))?;
        raw.parse()
            .map_err(|_| ConfigError(format!("{key}: cannot parse `{raw}` as {}", std::any::type_name::<T>())))
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Canonical `key = value` dump (sorted by key).
    pub fn dump(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Parses every typed section so that bad values fail before any work starts.
    pub fn validate(&self) -> Result<()> {
        let _: u64 = self.get("seed")?;
        self.features()?;
        self.window()?;
        self.model(1)?;
        self.train()?;
        self.augment()?;
        self.infer()?;
        self.postproc()?.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.evaluate()?;
        self.synth()?.validate()?;
        Ok(())
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn standardize(&self) -> Result<bool> {
        self.get("features.standardize")
    }

    pub fn features(&self) -> Result<FeatureConfig> {
        let fmax: f64 = self.get("features.fmax")?;
        let kind_raw: String = self.get("features.kind")?;
        let kind = FeatureKind::parse(&kind_raw)
            .ok_or_else(|| ConfigError(format!("features.kind: expected logmel or pcen, got `{kind_raw}`")))?;
        let cfg = FeatureConfig {
            sample_rate: self.get("features.sample_rate")?,
            n_fft: self.get("features.n_fft")?,
            hop: self.get("features.hop")?,
            n_mels: self.get("features.n_mels")?,
            fmin: self.get("features.fmin")?,
            fmax: (fmax > 0.0).then_some(fmax),
            log_floor: self.get("features.log_floor")?,
            kind,
            pcen: PcenConfig {
                smoothing: self.get("pcen.smoothing")?,
                alpha: self.get("pcen.alpha")?,
                delta: self.get("pcen.delta")?,
                r: self.get("pcen.r")?,
                eps: self.get("pcen.eps")?,
            },
        };
        cfg.filterbank().map_err(|e| ConfigError(e.to_string()))?;
        Ok(cfg)
    }

    pub fn window(&self) -> Result<WindowConfig> {
        let w = WindowConfig {
            length: self.get("window.length")?,
            shift: self.get("window.shift")?,
            pad_tail: false,
        };
        if w.length == 0 || w.shift == 0 {
            return Err(ConfigError("window.length and window.shift must be positive".into()));
        }
        Ok(w)
    }

    /// Model dimensions for a vocabulary of `n_classes` training classes.
    pub fn model(&self, n_classes: usize) -> Result<ModelConfig> {
        let disc: String = self.get("mamba.b_discretization")?;
        let mamba = MambaConfig {
            d_inner: self.get("mamba.d_inner")?,
            d_state: self.get("mamba.d_state")?,
            conv_width: self.get("mamba.conv_width")?,
            n_blocks: self.get("mamba.n_blocks")?,
            b_discretization: BDiscretization::parse(&disc)
                .ok_or_else(|| ConfigError(format!("mamba.b_discretization: expected euler or zoh, got `{disc}`")))?,
            dt_min: self.get("mamba.dt_min")?,
            dt_max: self.get("mamba.dt_max")?,
            ..MambaConfig::default()
        };
        let channels = self.get("model.channels")?;
        MambaConfig { d_model: channels, ..mamba }
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        Ok(ModelConfig {
            n_mels: self.get("features.n_mels")?,
            channels,
            cnn_blocks: self.get("model.cnn_blocks")?,
            pooled_blocks: self.get("model.pooled_blocks")?,
            mamba,
            n_classes,
        })
    }

    pub fn train(&self) -> Result<(usize, EpisodeConfig, AdamConfig, usize)> {
        Ok((
            self.get("train.episodes")?,
            EpisodeConfig {
                n_classes: self.get("train.classes_per_episode")?,
                support_per_class: self.get("train.windows_per_class")?,
                query_per_class: 0,
            },
            AdamConfig {
                lr: self.get("train.lr")?,
                beta1: self.get("train.beta1")?,
                beta2: self.get("train.beta2")?,
                ..AdamConfig::default()
            },
            self.get("train.checkpoint_every")?,
        ))
    }

    pub fn augment(&self) -> Result<AugmentConfig> {
        Ok(AugmentConfig {
            noise_sigma: self.get("augment.noise_sigma")?,
            n_freq_masks: self.get("augment.n_freq_masks")?,
            max_freq_width: self.get("augment.max_freq_width")?,
            n_time_masks: self.get("augment.n_time_masks")?,
            max_time_width: self.get("augment.max_time_width")?,
            seed: self.seed()?,
        })
    }

    pub fn postproc(&self) -> Result<PostprocConfig> {
        Ok(PostprocConfig {
            base_threshold: self.get("postproc.base_threshold")?,
            threshold_delta: self.get("postproc.threshold_delta")?,
            threshold_floor: self.get("postproc.threshold_floor")?,
            nms_iou: self.get("postproc.nms_iou")?,
            merge: self.get("postproc.merge")?,
            merge_gap_frames: self.get("postproc.merge_gap_frames")?,
            merge_prob: self.get("postproc.merge_prob")?,
            smooth_window: self.get("postproc.smooth_window")?,
            median_kernel: self.get("postproc.median_kernel")?,
            smooth_first: self.get("postproc.smooth_first")?,
            ..PostprocConfig::default()
        })
    }

    pub fn infer(&self) -> Result<InferConfig> {
        let logistic = LogisticConfig {
            epochs: self.get("infer.logistic_epochs")?,
            lr: self.get("infer.logistic_lr")?,
            ..LogisticConfig::default()
        };
        let sed = SedFinetune {
            n_cycles: self.get("infer.sed_cycles")?,
            hi: self.get("infer.pseudo_hi")?,
            lo: self.get("infer.pseudo_lo")?,
            logistic,
        };
        let sfbc = SfbcConfig {
            steps: self.get("infer.sfbc_steps")?,
            lr: self.get("infer.sfbc_lr")?,
            ..SfbcConfig::default()
        };
        Ok(InferConfig {
            window: WindowConfig { pad_tail: true, ..self.window()? },
            n_support: self.get("infer.n_support")?,
            finetune_sed: self.get::<bool>("infer.finetune_sed")?.then_some(sed),
            finetune_sfbc: self.get::<bool>("infer.finetune_sfbc")?.then_some(sfbc),
            postproc: self.postproc()?,
            mfl_ratio: self.get("infer.mfl_ratio")?,
            mfl_floor: self.get("infer.mfl_floor")?,
        })
    }

    pub fn evaluate(&self) -> Result<EvalConfig> {
        Ok(EvalConfig {
            min_iou: self.get("evaluate.min_iou")?,
            n_support: self.get("evaluate.n_support")?,
            skip_support: self.get("evaluate.skip_support")?,
        })
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        Ok(SynthConfig {
            files: self.get("synth.files")?,
            val_files: self.get("synth.val_files")?,
            duration_s: self.get("synth.duration_s")?,
            sample_rate: self.get("features.sample_rate")?,
            events_per_file: self.get("synth.events_per_file")?,
            distractors_per_file: self.get("synth.distractors_per_file")?,
            min_event_s: self.get("synth.min_event_s")?,
            max_event_s: self.get("synth.max_event_s")?,
            min_gap_s: self.get("synth.min_gap_s")?,
            snr_db: self.get("synth.snr_db")?,
            noise_rms: self.get("synth.noise_rms")?,
            seed: self.seed()?,
        })
    }
}

/// The key table rendered for `--help`.
pub fn keys_help() -> String {
    let mut s = String::from("Config keys (set in a file, via FSED_SECTION__KEY, or with --set key=value):\n");
    for (k, v, d) in KEYS {
        s.push_str(&format!("  {k:<30} {v:<8} {d}\n"));
    }
    s
}
