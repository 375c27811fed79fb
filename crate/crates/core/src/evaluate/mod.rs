//! Event-based matching and precision / recall / F-measure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::AddAssign;

use thiserror::Error;

use crate::audio_io::{interval_iou, EventInterval, EventLabel, LabeledEvent};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("predictions reference unknown files: {}", .0.join(", "))]
    UnknownFiles(Vec<String>),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub min_iou: f64,
    /// Number of leading POS events per file used as support.
    pub n_support: usize,
    /// Exclude the support events from scoring and drop predictions that start
    /// before the last support event ends.
    pub skip_support: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            min_iou: 0.3,
            n_support: 5,
            skip_support: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// Percentages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 in percent; empty denominators give 0.
pub fn prf(tp: usize, fp: usize, fn_: usize) -> Prf {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    Prf {
        precision: 100.0 * p,
        recall: 100.0 * r,
        f1: 100.0 * f1,
    }
}

impl Counts {
    pub fn prf(&self) -> Prf {
        prf(self.tp, self.fp, self.fn_)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub counts: Counts,
    /// `(pred index, ref index)` pairs.
    pub pairs: Vec<(usize, usize)>,
}

fn onset_order(v: &[EventInterval]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].onset.total_cmp(&v[b].onset).then(v[a].offset.total_cmp(&v[b].offset)).then(a.cmp(&b)));
    idx
}

/// Greedy one-to-one matching: references in onset order each take the
/// earliest unmatched prediction with IoU ≥ `min_iou`.
pub fn match_events(pred: &[EventInterval], refs: &[EventInterval], min_iou: f64) -> Matching {
    let pred_order = onset_order(pred);
    let mut used = vec![false; pred.len()];
    let mut pairs = Vec::new();
    for r in onset_order(refs) {
        let rr = (refs[r].onset, refs[r].offset);
        if let Some(&p) = pred_order
            .iter()
            .find(|&&p| !used[p] && interval_iou((pred[p].onset, pred[p].offset), rr) >= min_iou)
        {
            used[p] = true;
            pairs.push((p, r));
        }
    }
    let tp = pairs.len();
    Matching {
        counts: Counts {
            tp,
            fp: pred.len() - tp,
            fn_: refs.len() - tp,
        },
        pairs,
    }
}

/// Scores one file. `reference` holds the file's annotated events; POS events
/// are targets and predictions overlapping an UNK event are not counted as
/// false positives.
pub fn evaluate_file(pred: &[EventInterval], reference: &[LabeledEvent], cfg: &EvalConfig) -> Counts {
    let to_iv = |e: &LabeledEvent| EventInterval::new(e.file_id.clone(), e.onset_s, e.offset_s);
    let mut pos: Vec<EventInterval> = reference.iter().filter(|e| e.label == EventLabel::Pos).map(to_iv).collect();
    pos.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    let unk: Vec<EventInterval> = reference.iter().filter(|e| e.label == EventLabel::Unk).map(to_iv).collect();
    let mut preds: Vec<EventInterval> = pred.to_vec();
    if cfg.skip_support && cfg.n_support > 0 {
        let k = cfg.n_support.min(pos.len());
        if k > 0 {
            let cutoff = pos[..k].iter().map(|e| e.offset).fold(f64::NEG_INFINITY, f64::max);
            pos.drain(..k);
            preds.retain(|p| p.onset >= cutoff);
        }
    }
    let m = match_events(&preds, &pos, cfg.min_iou);
    let matched: Vec<bool> = {
        let mut v = vec![false; preds.len()];
        for &(p, _) in &m.pairs {
            v[p] = true;
        }
        v
    };
    let excused = preds
        .iter()
        .zip(&matched)
        .filter(|(p, &hit)| !hit && unk.iter().any(|u| interval_iou((p.onset, p.offset), (u.onset, u.offset)) >= cfg.min_iou))
        .count();
    Counts {
        tp: m.counts.tp,
        fp: m.counts.fp - excused,
        fn_: m.counts.fn_,
    }
}

#[derive(Debug, Clone)]
pub struct FileReference {
    pub subset: String,
    pub events: Vec<LabeledEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileResult {
    pub file_id: String,
    pub subset: String,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub files: Vec<FileResult>,
    pub subsets: BTreeMap<String, Counts>,
    pub overall: Counts,
}

/// Pools per-file counts (micro-average) overall and per subset.
pub fn evaluate_run(
    pred: &[EventInterval],
    refs: &BTreeMap<String, FileReference>,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let mut by_file: BTreeMap<&str, Vec<EventInterval>> = BTreeMap::new();
    let mut unknown: Vec<String> = Vec::new();
    for p in pred {
        if refs.contains_key(&p.file_id) {
            by_file.entry(p.file_id.as_str()).or_default().push(p.clone());
        } else if !unknown.contains(&p.file_id) {
            unknown.push(p.file_id.clone());
        }
    }
    if !unknown.is_empty() {
        unknown.sort();
        return Err(EvalError::UnknownFiles(unknown));
    }
    let mut files = Vec::new();
    let mut subsets: BTreeMap<String, Counts> = BTreeMap::new();
    let mut overall = Counts::default();
    for (file_id, r) in refs {
        let counts = evaluate_file(by_file.get(file_id.as_str()).map_or(&[][..], |v| v), &r.events, cfg);
        *subsets.entry(r.subset.clone()).or_default() += counts;
        overall += counts;
        files.push(FileResult {
            file_id: file_id.clone(),
            subset: r.subset.clone(),
            counts,
        });
    }
    Ok(EvalReport { files, subsets, overall })
}

impl EvalReport {
    fn rows(&self) -> Vec<(&str, Counts)> {
        let mut rows: Vec<(&str, Counts)> = self.subsets.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        rows.push(("overall", self.overall));
        rows
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}", "subset", "TP", "FP", "FN", "P(%)", "R(%)", "F1(%)");
        for (name, c) in self.rows() {
            let m = c.prf();
            let _ = writeln!(
                s,
                "{:<12} {:>6} {:>6} {:>6} {:>9.2} {:>9.2} {:>9.2}",
                name, c.tp, c.fp, c.fn_, m.precision, m.recall, m.f1
            );
        }
        s
    }

    /// CSV with columns `subset,TP,FP,FN,precision,recall,f1`.
    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["subset", "TP", "FP", "FN", "precision", "recall", "f1"])?;
        for (name, c) in self.rows() {
            let m = c.prf();
            w.write_record([
                name.to_string(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                format!("{:.4}", m.precision),
                format!("{:.4}", m.recall),
                format!("{:.4}", m.f1),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| EvalError::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

#[cfg(test)]
mod tests;
