//! Multi-task SED/FBC model, its losses and episodic training.

use super::corpus::{build_episode, EpisodeConfig, TrainingCorpus};
use super::{Episode, FewShotError};
use crate::augment::{gaussian_noise_in_place, mask_window, AugmentConfig};
use crate::mamba::{MambaConfig, MambaEncoder, MambaEncoderCache};
use crate::nn::{
    adam_step, masked_cross_entropy, AdamConfig, AdamState, CnnCache, CnnEncoder, Gradients, Linear, Mode,
    ModelParams, NnError, Tensor,
};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub n_mels: usize,
    /// CNN width, which is also the embedding and token dimension.
    pub channels: usize,
    pub cnn_blocks: usize,
    pub pooled_blocks: usize,
    /// `d_model` is overridden by `channels`.
    pub mamba: MambaConfig,
    /// Number of training classes; the SED head has one more output for background.
    pub n_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_mels: 128,
            channels: 64,
            cnn_blocks: 4,
            pooled_blocks: 4,
            mamba: MambaConfig::default(),
            n_classes: 2,
        }
    }
}

/// CNN shared by both branches, a linear SED head on the clean-input
/// embeddings, and the NetMamba encoder plus a 2-way FBC head on the sum of
/// clean and masked embeddings.
#[derive(Debug, Clone)]
pub struct MultiTaskModel {
    pub cfg: ModelConfig,
    pub cnn: CnnEncoder,
    pub sed_head: Linear,
    pub encoder: MambaEncoder,
    pub fbc_head: Linear,
}

#[derive(Debug, Clone)]
pub struct MultiTaskOutput {
    /// `[B, T, n_classes + 1]`
    pub sed_logits: Tensor,
    /// `[B, T, 2]`
    pub fbc_logits: Tensor,
    /// SED-branch frame embeddings `[B, T, C]`.
    pub embeddings: Tensor,
}

#[derive(Debug, Clone)]
pub struct MultiTaskCache {
    cnn: CnnCache,
    batch: usize,
    frames: usize,
    embeddings: Vec<f64>,
    encoder: MambaEncoderCache,
    encoded: Vec<f64>,
}

impl MultiTaskModel {
    pub fn new(cfg: ModelConfig) -> Result<Self, FewShotError> {
        if cfg.channels == 0 || cfg.cnn_blocks == 0 || cfg.n_classes == 0 {
            return Err(FewShotError::Config("channels, cnn_blocks and n_classes must be positive".into()));
        }
        if cfg.pooled_blocks > cfg.cnn_blocks || cfg.n_mels >> cfg.pooled_blocks == 0 {
            return Err(FewShotError::Config(format!(
                "{} pooled blocks leave no frequency bins out of {}",
                cfg.pooled_blocks, cfg.n_mels
            )));
        }
        let c = cfg.channels;
        let mut mcfg = cfg.mamba;
        mcfg.d_model = c;
        let cfg = ModelConfig { mamba: mcfg, ..cfg };
        Ok(Self {
            cnn: CnnEncoder::new("cnn", c, cfg.cnn_blocks, cfg.pooled_blocks),
            sed_head: Linear::new("sed_head", c, cfg.n_classes + 1, true),
            encoder: MambaEncoder::new("encoder", mcfg)?,
            fbc_head: Linear::new("fbc_head", c, 2, true),
            cfg,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.cfg.channels
    }

    /// Fresh parameters; each component draws from its own seed stream.
    pub fn init(&self, seed: u64) -> Result<ModelParams, FewShotError> {
        let mut p = ModelParams::new(seed);
        self.cnn.init(&mut p, &mut seed::stream(seed, "init.cnn", 0))?;
        self.sed_head.init(&mut p, &mut seed::stream(seed, "init.sed_head", 0))?;
        self.encoder.init(&mut p, &mut seed::stream(seed, "init.encoder", 0))?;
        self.fbc_head.init(&mut p, &mut seed::stream(seed, "init.fbc_head", 0))?;
        Ok(p)
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize), FewShotError> {
        match *x.shape() {
            [b, 1, t, f] if f == self.cfg.n_mels && b > 0 && t > 0 => Ok((b, t)),
            _ => Err(FewShotError::Shape(format!(
                "expected [batch, 1, time, {}], got {:?}",
                self.cfg.n_mels,
                x.shape()
            ))),
        }
    }

    /// Both branches on a clean batch `x` and its masked copy `xm`.
    pub fn forward(
        &self,
        params: &ModelParams,
        x: &Tensor,
        xm: &Tensor,
        mode: Mode,
    ) -> Result<(MultiTaskOutput, MultiTaskCache), FewShotError> {
        let (b, t) = self.check_input(x)?;
        if xm.shape() != x.shape() {
            return Err(FewShotError::Shape(format!("masked input {:?} vs {:?}", xm.shape(), x.shape())));
        }
        let c = self.cfg.channels;
        let mut both = x.data().to_vec();
        both.extend_from_slice(xm.data());
        let mut shape = x.shape().to_vec();
        shape[0] = 2 * b;
        let (emb_all, cnn_cache) = self.cnn.forward(params, &Tensor::new(shape, both)?, mode)?;
        let (emb, emb_m) = emb_all.data().split_at(b * t * c);
        let sed = self.sed_head.apply(params, emb, b * t)?;
        let fused: Vec<f64> = emb.iter().zip(emb_m).map(|(a, m)| a + m).collect();
        let (enc, enc_cache) = self.encoder.forward(params, &Tensor::new(vec![b, t, c], fused)?)?;
        let fbc = self.fbc_head.apply(params, enc.data(), b * t)?;
        let out = MultiTaskOutput {
            sed_logits: Tensor::new(vec![b, t, self.cfg.n_classes + 1], sed)?,
            fbc_logits: Tensor::new(vec![b, t, 2], fbc)?,
            embeddings: Tensor::new(vec![b, t, c], emb.to_vec())?,
        };
        let cache = MultiTaskCache {
            cnn: cnn_cache,
            batch: b,
            frames: t,
            embeddings: emb.to_vec(),
            encoder: enc_cache,
            encoded: enc.into_data(),
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients for upstream gradients on both heads.
    pub fn backward(
        &self,
        params: &ModelParams,
        cache: &MultiTaskCache,
        d_sed: &[f64],
        d_fbc: &[f64],
        grads: &mut Gradients,
    ) -> Result<(), FewShotError> {
        let (b, t, c) = (cache.batch, cache.frames, self.cfg.channels);
        let rows = b * t;
        if d_sed.len() != rows * (self.cfg.n_classes + 1) || d_fbc.len() != rows * 2 {
            return Err(FewShotError::Shape(format!(
                "head gradients of length {} and {} for {rows} frames",
                d_sed.len(),
                d_fbc.len()
            )));
        }
        let d_enc = self.fbc_head.apply_backward(params, &cache.encoded, d_fbc, rows, grads)?;
        let d_fused = self
            .encoder
            .backward(params, &cache.encoder, &Tensor::new(vec![b, t, c], d_enc)?, grads)?;
        let mut d_emb = self.sed_head.apply_backward(params, &cache.embeddings, d_sed, rows, grads)?;
        for (g, f) in d_emb.iter_mut().zip(d_fused.data()) {
            *g += f;
        }
        d_emb.extend_from_slice(d_fused.data());
        self.cnn
            .backward(params, &cache.cnn, &Tensor::new(vec![2 * b, t, c], d_emb)?, grads)?;
        Ok(())
    }

    /// Eval-mode SED-branch embeddings `[B, T, C]` from the first `depth` CNN blocks.
    pub fn embed_depth(&self, params: &ModelParams, x: &Tensor, depth: usize) -> Result<Tensor, FewShotError> {
        self.check_input(x)?;
        Ok(self.cnn.forward_depth(params, x, Mode::Eval, depth)?.0)
    }

    pub fn embed(&self, params: &ModelParams, x: &Tensor) -> Result<Tensor, FewShotError> {
        self.embed_depth(params, x, self.cfg.cnn_blocks)
    }

    /// SED softmax over `n_classes + 1` for each frame of `x`.
    pub fn sed_probs(&self, params: &ModelParams, x: &Tensor) -> Result<Vec<f64>, FewShotError> {
        let emb = self.embed(params, x)?;
        let rows = emb.numel() / self.cfg.channels;
        let logits = self.sed_head.apply(params, emb.data(), rows)?;
        Ok(crate::nn::softmax_rows(&logits, self.cfg.n_classes + 1))
    }
}

/// Masked multi-class cross-entropy of the SED head.
pub fn loss_l1(logits: &[f64], classes: usize, labels: &[usize], mask: &[u8]) -> Result<(f64, Vec<f64>), FewShotError> {
    Ok(masked_cross_entropy(logits, classes, labels, mask)?)
}

/// Masked binary cross-entropy of the FBC head; 0 with zero gradient when
/// every frame is masked.
pub fn loss_l2(logits: &[f64], foreground: &[usize], mask: &[u8]) -> Result<(f64, Vec<f64>), FewShotError> {
    if mask.iter().all(|&m| m == 0) && logits.len() == 2 * mask.len() && foreground.len() == mask.len() {
        return Ok((0.0, vec![0.0; logits.len()]));
    }
    Ok(masked_cross_entropy(logits, 2, foreground, mask)?)
}

pub fn loss_total(l1: f64, l2: f64) -> f64 {
    l1 + l2
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub episodes: usize,
    pub episode: EpisodeConfig,
    pub adam: AdamConfig,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            episode: EpisodeConfig::default(),
            adam: AdamConfig::default(),
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

/// Clean (noisy) and masked input batches for an episode's support windows.
fn episode_inputs(
    episode: &Episode,
    aug: &AugmentConfig,
    seed: u64,
    step: usize,
) -> Result<(Tensor, Tensor), FewShotError> {
    let (len, bins) = (episode.support.length, episode.support.bins);
    let b = episode.support.len();
    let mut x = Vec::with_capacity(b * len * bins);
    let mut xm = Vec::with_capacity(b * len * bins);
    for (i, w) in episode.support.windows.iter().enumerate() {
        let idx = (step as u64) << 20 | i as u64;
        let mut d = w.data.clone();
        gaussian_noise_in_place(&mut d, aug.noise_sigma, seed::derive_seed(seed, "train.noise", idx))?;
        let mut m = d.clone();
        mask_window(&mut m, len, bins, aug, seed::derive_seed(seed, "train.mask", idx))?;
        x.extend(d);
        xm.extend(m);
    }
    Ok((Tensor::new(vec![b, 1, len, bins], x)?, Tensor::new(vec![b, 1, len, bins], xm)?))
}

/// One Adam step on `l1 + l2` for an episode; BN running statistics are
/// refreshed from the batch.
pub fn train_episode(
    model: &MultiTaskModel,
    params: &mut ModelParams,
    state: &mut AdamState,
    episode: &Episode,
    cfg: &TrainConfig,
    step: usize,
) -> Result<StepLosses, FewShotError> {
    let (x, xm) = episode_inputs(episode, &cfg.augment, cfg.seed, step)?;
    let (out, cache) = model.forward(params, &x, &xm, Mode::Train)?;
    let mask = episode.mask();
    let non_finite = |e: FewShotError| match e {
        FewShotError::Nn(NnError::NonFinite(_)) => FewShotError::NonFiniteLoss { step, l1: f64::NAN, l2: f64::NAN },
        e => e,
    };
    let (l1, d_sed) = loss_l1(out.sed_logits.data(), model.cfg.n_classes + 1, &episode.labels(), &mask).map_err(non_finite)?;
    let (l2, d_fbc) = loss_l2(out.fbc_logits.data(), &episode.foreground(), &mask).map_err(|e| match e {
        FewShotError::Nn(NnError::NonFinite(_)) => FewShotError::NonFiniteLoss { step, l1, l2: f64::NAN },
        e => e,
    })?;
    let total = loss_total(l1, l2);
    if !total.is_finite() {
        return Err(FewShotError::NonFiniteLoss { step, l1, l2 });
    }
    let mut grads = Gradients::new();
    model.backward(params, &cache, &d_sed, &d_fbc, &mut grads)?;
    if !grads.is_finite() {
        return Err(FewShotError::NonFiniteLoss { step, l1, l2 });
    }
    for (name, t) in model.cnn.running_updates(params, &cache.cnn)? {
        params.set(&name, t)?;
    }
    adam_step(params, &grads, state, &cfg.adam).map_err(|e| match e {
        NnError::NonFinite(_) => FewShotError::NonFiniteLoss { step, l1, l2 },
        e => e.into(),
    })?;
    Ok(StepLosses { l1, l2, total })
}

/// Episodic training loop. `on_step` sees every step's losses, e.g. for
/// logging or checkpointing.
pub fn train<F>(
    model: &MultiTaskModel,
    params: &mut ModelParams,
    corpus: &TrainingCorpus,
    cfg: &TrainConfig,
    mut on_step: F,
) -> Result<Vec<StepLosses>, FewShotError>
where
    F: FnMut(usize, &StepLosses, &ModelParams) -> Result<(), FewShotError>,
{
    if corpus.vocabulary().len() != model.cfg.n_classes {
        return Err(FewShotError::Config(format!(
            "model has {} classes, corpus has {}",
            model.cfg.n_classes,
            corpus.vocabulary().len()
        )));
    }
    let mut state = AdamState::new();
    let mut trace = Vec::with_capacity(cfg.episodes);
    for step in 0..cfg.episodes {
        let episode = build_episode(corpus, &cfg.episode, seed::derive_seed(cfg.seed, "train.episode", step as u64))?;
        let losses = train_episode(model, params, &mut state, &episode, cfg, step)?;
        on_step(step, &losses, params)?;
        trace.push(losses);
    }
    Ok(trace)
}
