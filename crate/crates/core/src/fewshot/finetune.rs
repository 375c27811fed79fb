//! Inference-time fine-tuning: support splitting, the binary SED head with
//! pseudo-label cycles, and the centre-token FBC refit.

use log::warn;

use super::infer::{window_average, window_tensor, SupportSet};
use super::model::MultiTaskModel;
use super::FewShotError;
use crate::audio_io::{EventLabel, LabeledEvent};
use crate::features::{frame_span, window_origins, FeatureMatrix, WindowConfig};
use crate::nn::{adam_step, masked_cross_entropy, softmax_rows, AdamConfig, AdamState, Gradients, ModelParams, Tensor};

/// Support events split by onset rank: 1st, 3rd, 5th, ... go to `support1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSplit {
    pub support1: Vec<LabeledEvent>,
    pub support2: Vec<LabeledEvent>,
}

pub fn split_supports(events: &[LabeledEvent]) -> Result<SupportSplit, FewShotError> {
    let mut pos: Vec<&LabeledEvent> = events.iter().filter(|e| e.label == EventLabel::Pos).collect();
    if pos.len() < 2 {
        return Err(FewShotError::TooFewEvents { needed: 2, got: pos.len() });
    }
    pos.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
    let (mut support1, mut support2) = (Vec::new(), Vec::new());
    for (i, e) in pos.into_iter().enumerate() {
        if i % 2 == 0 {
            support1.push(e.clone());
        } else {
            support2.push(e.clone());
        }
    }
    Ok(SupportSplit { support1, support2 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.05,
            weight_decay: 1e-3,
        }
    }
}

/// Binary POS/NEG classifier on standardised embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticHead {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticHead {
    /// Class-balanced logistic regression by full-batch Adam from zero.
    pub fn fit(x: &[f64], dim: usize, y: &[u8], cfg: &LogisticConfig) -> Result<Self, FewShotError> {
        let n = y.len();
        if dim == 0 || x.len() != n * dim {
            return Err(FewShotError::Shape(format!("{} values for {n} rows of dim {dim}", x.len())));
        }
        let n_pos = y.iter().filter(|&&v| v == 1).count();
        if n_pos == 0 {
            return Err(FewShotError::NoPositive);
        }
        let n_neg = n - n_pos;
        let mut mean = vec![0.0; dim];
        for row in x.chunks_exact(dim) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / n as f64);
        }
        let mut scale = vec![0.0; dim];
        for row in x.chunks_exact(dim) {
            scale.iter_mut().zip(row).zip(&mean).for_each(|((s, v), m)| *s += (v - m).powi(2) / n as f64);
        }
        scale.iter_mut().for_each(|s| *s = if *s > 1e-12 { 1.0 / s.sqrt() } else { 1.0 });
        let z: Vec<f64> = x
            .chunks_exact(dim)
            .flat_map(|row| row.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) * s))
            .collect();
        let w_pos = n as f64 / (2.0 * n_pos as f64);
        let w_neg = if n_neg > 0 { n as f64 / (2.0 * n_neg as f64) } else { 0.0 };

        let mut p = ModelParams::new(0);
        p.register("w", Tensor::zeros(&[dim]))?;
        p.register("b", Tensor::zeros(&[1]))?;
        let mut st = AdamState::new();
        let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
        for _ in 0..cfg.epochs {
            let (w, b) = (p.get("w")?.data().to_vec(), p.get("b")?.data()[0]);
            let mut gw: Vec<f64> = w.iter().map(|v| cfg.weight_decay * v).collect();
            let mut gb = 0.0;
            for (row, &t) in z.chunks_exact(dim).zip(y) {
                let s = crate::nn::ops::sigmoid(row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b);
                let g = (s - f64::from(t)) * if t == 1 { w_pos } else { w_neg } / n as f64;
                gw.iter_mut().zip(row).for_each(|(a, v)| *a += g * v);
                gb += g;
            }
            let mut grads = Gradients::new();
            grads.accumulate_slice("w", &[dim], &gw)?;
            grads.accumulate_slice("b", &[1], &[gb])?;
            adam_step(&mut p, &grads, &mut st, &adam)?;
        }
        Ok(Self {
            mean,
            scale,
            weights: p.get("w")?.data().to_vec(),
            bias: p.get("b")?.data()[0],
        })
    }

    /// POS probability of each row of `x`.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        x.chunks_exact(self.weights.len())
            .map(|row| {
                let s: f64 = row
                    .iter()
                    .zip(&self.mean)
                    .zip(&self.scale)
                    .zip(&self.weights)
                    .map(|(((v, m), s), w)| (v - m) * s * w)
                    .sum();
                crate::nn::ops::sigmoid(s + self.bias)
            })
            .collect()
    }
}

/// Frames with probability above `hi` become POS, those below `lo` NEG.
pub fn pseudo_labels(probs: &[f64], hi: f64, lo: f64) -> Vec<(usize, u8)> {
    probs
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| {
            if p > hi {
                Some((i, 1))
            } else if p < lo {
                Some((i, 0))
            } else {
                None
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SedFinetune {
    pub n_cycles: usize,
    pub hi: f64,
    pub lo: f64,
    pub logistic: LogisticConfig,
}

impl Default for SedFinetune {
    fn default() -> Self {
        Self {
            n_cycles: 3,
            hi: 0.85,
            lo: 0.15,
            logistic: LogisticConfig::default(),
        }
    }
}

/// Fits the binary head on the unmasked support frames, then `n_cycles`
/// times predicts the query, adds its confident frames as pseudo-labels and
/// refits on supports plus pseudo-labels.
pub fn finetune_sed(
    support: &[f64],
    dim: usize,
    labels: &[u8],
    mask: &[u8],
    query: &[f64],
    cfg: &SedFinetune,
) -> Result<LogisticHead, FewShotError> {
    if cfg.n_cycles == 0 {
        return Err(FewShotError::Config("n_cycles must be at least 1".into()));
    }
    if labels.len() != mask.len() || support.len() != labels.len() * dim {
        return Err(FewShotError::Shape("support embeddings, labels and mask disagree".into()));
    }
    let mut base_x = Vec::new();
    let mut base_y = Vec::new();
    for ((row, &y), &m) in support.chunks_exact(dim).zip(labels).zip(mask) {
        if m == 1 {
            base_x.extend_from_slice(row);
            base_y.push(y);
        }
    }
    let mut head = LogisticHead::fit(&base_x, dim, &base_y, &cfg.logistic)?;
    for _ in 0..cfg.n_cycles {
        let pl = pseudo_labels(&head.predict(query), cfg.hi, cfg.lo);
        let mut x = base_x.clone();
        let mut y = base_y.clone();
        for (i, l) in pl {
            x.extend_from_slice(&query[i * dim..(i + 1) * dim]);
            y.push(l);
        }
        head = LogisticHead::fit(&x, dim, &y, &cfg.logistic)?;
    }
    Ok(head)
}

/// Mean of the rows of `embeddings` where `mask` is 1; `None` if there are none.
pub fn pos_center(embeddings: &[f64], dim: usize, mask: &[u8]) -> Option<Vec<f64>> {
    let n = mask.iter().filter(|&&m| m == 1).count();
    if n == 0 {
        return None;
    }
    let mut c = vec![0.0; dim];
    for (row, _) in embeddings.chunks_exact(dim).zip(mask).filter(|(_, &m)| m == 1) {
        c.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    c.iter_mut().for_each(|v| *v /= n as f64);
    Some(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SfbcConfig {
    pub steps: usize,
    pub lr: f64,
    /// Minimum number of support events inside a Support₁ window for it to
    /// serve as a TC-Vector.
    pub min_events: usize,
}

impl Default for SfbcConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            lr: 1e-2,
            min_events: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SfbcOutcome {
    pub params: ModelParams,
    /// POS centre token; `None` when no Support₁ window qualified and
    /// nothing was changed.
    pub center: Option<Vec<f64>>,
    pub tc_windows: usize,
}

fn event_frames(events: &[LabeledEvent], fr: f64, n: usize) -> Vec<(usize, usize)> {
    events.iter().map(|e| frame_span(e.onset_s, e.offset_s, fr, n)).collect()
}

/// Encoder + FBC head on `[center; 2·emb]`, centre output dropped. Returns the
/// encoder features `len × C`.
fn centred_encoding(
    model: &MultiTaskModel,
    params: &ModelParams,
    center: &[f64],
    emb: &[f64],
) -> Result<Vec<f64>, FewShotError> {
    let c = model.embedding_dim();
    let len = emb.len() / c;
    let mut seq = center.to_vec();
    seq.extend(emb.iter().map(|v| 2.0 * v));
    let (enc, _) = model.encoder.forward(params, &Tensor::new(vec![1, len + 1, c], seq)?)?;
    Ok(enc.data()[c..].to_vec())
}

/// FBC foreground probability of every frame of a file, with the centre
/// token prepended to each window.
pub(crate) fn fbc_probs_with_center(
    model: &MultiTaskModel,
    params: &ModelParams,
    feat: &FeatureMatrix,
    window: &WindowConfig,
    center: &[f64],
) -> Result<Vec<f64>, FewShotError> {
    window_average(feat, window, 1, |x| {
        let emb = model.embed(params, x)?;
        let enc = centred_encoding(model, params, center, emb.data())?;
        let rows = enc.len() / model.embedding_dim();
        let logits = model.fbc_head.apply(params, &enc, rows)?;
        Ok(softmax_rows(&logits, 2).chunks_exact(2).map(|r| r[1]).collect())
    })
}

/// Builds a POS centre from first-block embeddings of Support₁ windows that
/// hold several support events, runs it through the trained encoder ahead of
/// each Support₂ window and refits the FBC head on the result. A no-op (with a
/// warning) when no Support₁ window qualifies.
pub fn finetune_sfbc(
    model: &MultiTaskModel,
    params: &ModelParams,
    feat: &FeatureMatrix,
    support: &SupportSet,
    split: &SupportSplit,
    window: &WindowConfig,
    cfg: &SfbcConfig,
) -> Result<SfbcOutcome, FewShotError> {
    let (n, fr, len) = (feat.frames(), feat.frame_rate(), window.length);
    let c = model.embedding_dim();
    let all = event_frames(&support.events, fr, n);
    let s1 = event_frames(&split.support1, fr, n);
    let inside = |o: usize, spans: &[(usize, usize)]| spans.iter().filter(|&&(lo, hi)| hi > lo && lo >= o && hi <= o + len).count();

    let mut tc = Vec::new();
    let mut tc_mask = Vec::new();
    let mut tc_windows = 0;
    for o in window_origins(n, window) {
        if inside(o, &s1) == 0 || inside(o, &all) < cfg.min_events {
            continue;
        }
        tc_windows += 1;
        let emb = model.embed_depth(params, &window_tensor(feat, o, len), 1)?;
        tc.extend_from_slice(emb.data());
        tc_mask.extend((o..o + len).map(|t| u8::from(t < n && support.labels[t] == 1 && support.mask[t] == 1)));
    }
    let center = if tc_windows == 0 { None } else { pos_center(&tc, c, &tc_mask) };
    let Some(center) = center else {
        warn!("no Support₁ window holds {} support events; FBC refit skipped", cfg.min_events);
        return Ok(SfbcOutcome { params: params.clone(), center: None, tc_windows });
    };

    let mut feats = Vec::new();
    let mut fg = Vec::new();
    let mut mask = Vec::new();
    let mut origins: Vec<usize> = event_frames(&split.support2, fr, n)
        .into_iter()
        .map(|(lo, hi)| ((lo + hi) / 2).saturating_sub(len / 2).min(n.saturating_sub(len)))
        .collect();
    origins.sort_unstable();
    origins.dedup();
    for o in origins {
        let emb = model.embed(params, &window_tensor(feat, o, len))?;
        feats.extend(centred_encoding(model, params, &center, emb.data())?);
        for t in o..o + len {
            let ok = t < n && t < support.cutoff_frame && support.mask[t] == 1;
            fg.push(if ok { usize::from(support.labels[t]) } else { 0 });
            mask.push(u8::from(ok));
        }
    }
    let mut out = params.clone();
    let rows = fg.len();
    let mut st = AdamState::new();
    let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    for _ in 0..cfg.steps {
        let logits = model.fbc_head.apply(&out, &feats, rows)?;
        let (_, g) = masked_cross_entropy(&logits, 2, &fg, &mask)?;
        let mut grads = Gradients::new();
        model.fbc_head.apply_backward(&out, &feats, &g, rows, &mut grads)?;
        adam_step(&mut out, &grads, &mut st, &adam)?;
    }
    Ok(SfbcOutcome { params: out, center: Some(center), tc_windows })
}
