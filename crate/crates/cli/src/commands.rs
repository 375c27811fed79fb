//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use fsbed_core::audio_io::{
    parse_annotations, parse_detections, read_wav, write_detections, DatasetManifest, EventInterval, LabeledEvent,
    ManifestEntry, Split,
};
use fsbed_core::evaluate::{evaluate_run, EvalReport, FileReference};
use fsbed_core::features::{extract, read_feature_cache, standardize, write_feature_cache, FeatureMatrix};
use fsbed_core::fewshot::{infer_file, train, FewShotError, MultiTaskModel, TrainConfig, TrainingCorpus};
use fsbed_core::nn::{load_params, save_params, ModelParams};

use crate::config::{ConfigError, RunConfig};
use crate::synth;

/// Runs `f` over `items` on `jobs` threads, keeping input order.
fn parallel<T: Sync, U: Send>(jobs: usize, items: &[T], f: impl Fn(&T) -> Result<U> + Sync + Send) -> Result<Vec<U>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building the worker pool")?;
    pool.install(|| items.par_iter().map(&f).collect())
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(path, Split::Train).with_context(|| format!("loading manifest {}", path.display()))
}

/// Content hash of an audio file together with every feature setting.
fn feature_hash(wav: &Path, cfg: &RunConfig) -> Result<String> {
    let bytes = std::fs::read(wav).with_context(|| format!("reading {}", wav.display()))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    for line in cfg.dump().lines().filter(|l| l.starts_with("features.") || l.starts_with("pcen.")) {
        h.update(line.as_bytes());
        h.update(b"\n");
    }
    Ok(format!("{:x}", h.finalize()))
}

fn cache_paths(dir: &Path, entry: &ManifestEntry) -> (PathBuf, PathBuf) {
    let id = entry.file_id();
    (dir.join(format!("{id}.feat")), dir.join(format!("{id}.feat.sha256")))
}

/// Cached features when the sidecar hash matches, otherwise freshly extracted.
fn load_features(entry: &ManifestEntry, cache: Option<&Path>, cfg: &RunConfig) -> Result<FeatureMatrix> {
    let fresh = match cache {
        Some(dir) => {
            let (feat, side) = cache_paths(dir, entry);
            let hash = feature_hash(&entry.audio, cfg)?;
            if std::fs::read_to_string(&side).is_ok_and(|s| s.trim() == hash) {
                Some(read_feature_cache(&feat)?)
            } else {
                warn!("{}: feature cache missing or stale, extracting", entry.file_id());
                None
            }
        }
        None => None,
    };
    let feat = match fresh {
        Some(f) => f,
        None => extract(&read_wav(&entry.audio)?, &cfg.features()?)?,
    };
    Ok(if cfg.standardize()? { standardize(&feat) } else { feat })
}

pub struct FeaturizeSummary {
    pub written: usize,
    pub skipped: usize,
}

pub fn featurize(input: &Path, out: &Path, cfg: &RunConfig, jobs: usize) -> Result<FeaturizeSummary> {
    let manifest = load_manifest(input)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let fc = cfg.features()?;
    let results = parallel(jobs, &manifest.entries, |entry| {
        let (feat_path, side) = cache_paths(out, entry);
        let hash = feature_hash(&entry.audio, cfg)?;
        if feat_path.is_file() && std::fs::read_to_string(&side).is_ok_and(|s| s.trim() == hash) {
            return Ok(false);
        }
        let feat = extract(&read_wav(&entry.audio)?, &fc)?;
        write_feature_cache(&feat, &feat_path)?;
        std::fs::write(&side, format!("{hash}\n")).with_context(|| format!("writing {}", side.display()))?;
        info!("{}: {} frames", entry.file_id(), feat.frames());
        Ok(true)
    })?;
    let written = results.iter().filter(|&&w| w).count();
    Ok(FeaturizeSummary { written, skipped: results.len() - written })
}

/// Model for `n_classes` training classes built from the config.
fn build_model(cfg: &RunConfig, n_classes: usize) -> Result<MultiTaskModel> {
    MultiTaskModel::new(cfg.model(n_classes)?).map_err(|e| ConfigError(e.to_string()).into())
}

pub fn cmd_train(data: &Path, out: &Path, features: Option<&Path>, loss_log: Option<&Path>, cfg: &RunConfig, jobs: usize) -> Result<()> {
    let manifest = load_manifest(data)?;
    let entries: Vec<&ManifestEntry> = manifest.entries.iter().filter(|e| e.annotation.is_some()).collect();
    if entries.is_empty() {
        bail!("no annotated audio under {}", data.display());
    }
    let loaded = parallel(jobs, &entries, |entry| {
        let ann = parse_annotations(entry.annotation.as_ref().expect("filtered"))?;
        let id = entry.file_id();
        let events: Vec<LabeledEvent> = ann.events.into_iter().filter(|e| e.file_id == id).collect();
        Ok((id, load_features(entry, features, cfg)?, events))
    })?;
    let corpus = TrainingCorpus::new(loaded, cfg.window()?)?;
    info!("vocabulary: {}", corpus.vocabulary().join(", "));
    let model = build_model(cfg, corpus.vocabulary().len())?;
    let seed = cfg.seed()?;
    let mut params = model.init(seed)?;
    let (episodes, episode, adam, ckpt_every) = cfg.train()?;
    let tcfg = TrainConfig { episodes, episode, adam, augment: cfg.augment()?, seed };
    let mut log = String::from("episode,l1,l2,total\n");
    let ckpt = out.with_extension("ckpt");
    let trace = train(&model, &mut params, &corpus, &tcfg, |step, l, p| {
        let _ = writeln!(log, "{step},{},{},{}", l.l1, l.l2, l.total);
        if step % 10 == 0 || step + 1 == episodes {
            info!("episode {step}: l1 {:.4} l2 {:.4} total {:.4}", l.l1, l.l2, l.total);
        }
        if ckpt_every > 0 && (step + 1) % ckpt_every == 0 {
            save_params(p, &ckpt).map_err(FewShotError::from)?;
        }
        Ok(())
    })?;
    save_params(&params, out).with_context(|| format!("writing {}", out.display()))?;
    if let Some(path) = loss_log {
        std::fs::write(path, log).with_context(|| format!("writing {}", path.display()))?;
    }
    if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
        info!("l_total {:.4} -> {:.4} over {} episodes", first.total, last.total, trace.len());
    }
    Ok(())
}

/// Loads parameters and rebuilds the matching model; the class count comes
/// from the SED head.
fn load_model(path: &Path, cfg: &RunConfig) -> Result<(MultiTaskModel, ModelParams)> {
    let params = load_params(path).with_context(|| format!("loading {}", path.display()))?;
    let n_classes = params.get("sed_head.bias")?.numel().saturating_sub(1);
    let model = build_model(cfg, n_classes)?;
    params
        .check_matches(&model.init(0)?)
        .map_err(|e| ConfigError(format!("{} does not match the configured model: {e}", path.display())))?;
    Ok((model, params))
}

pub fn cmd_infer(params: &Path, data: &Path, out: &Path, features: Option<&Path>, cfg: &RunConfig, jobs: usize) -> Result<Vec<EventInterval>> {
    let (model, params) = load_model(params, cfg)?;
    let icfg = cfg.infer()?;
    let manifest = load_manifest(data)?;
    let entries: Vec<&ManifestEntry> = manifest.entries.iter().filter(|e| e.annotation.is_some()).collect();
    let per_file = parallel(jobs, &entries, |entry| {
        let id = entry.file_id();
        let ann = parse_annotations(entry.annotation.as_ref().expect("filtered"))?;
        let events: Vec<LabeledEvent> = ann.events.into_iter().filter(|e| e.file_id == id).collect();
        let feat = load_features(entry, features, cfg)?;
        match infer_file(&model, &params, &id, &feat, &events, &icfg) {
            Ok(r) => {
                info!("{id}: {} detections", r.detections.len());
                Ok(r.detections)
            }
            Err(FewShotError::TooFewEvents { needed, got }) => {
                warn!("{id}: {got} POS events, {needed} needed for the support; skipped");
                Ok(Vec::new())
            }
            Err(e) => Err(anyhow::Error::from(e).context(id)),
        }
    })?;
    let mut dets: Vec<EventInterval> = per_file.into_iter().flatten().collect();
    dets.sort_by(|a, b| a.file_id.cmp(&b.file_id).then(a.onset.total_cmp(&b.onset)));
    write_detections(&dets, out)?;
    Ok(dets)
}

pub fn cmd_evaluate(pred: &Path, data: &Path, out: Option<&Path>, cfg: &RunConfig) -> Result<EvalReport> {
    let preds = parse_detections(pred)?;
    let manifest = load_manifest(data)?;
    let mut refs = BTreeMap::new();
    for entry in manifest.entries.iter().filter(|e| e.annotation.is_some()) {
        let id = entry.file_id();
        let ann = parse_annotations(entry.annotation.as_ref().expect("filtered"))?;
        let events = ann.events.into_iter().filter(|e| e.file_id == id).collect();
        refs.insert(id, FileReference { subset: entry.subset.clone(), events });
    }
    let report = evaluate_run(&preds, &refs, &cfg.evaluate()?)?;
    if let Some(path) = out {
        std::fs::write(path, report.to_csv()?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(report)
}

pub fn cmd_synth(out: &Path, cfg: &RunConfig) -> Result<usize> {
    let files = synth::generate(out, &cfg.synth()?)?;
    Ok(files.len())
}
