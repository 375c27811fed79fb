//! From per-frame POS probabilities to event intervals: smoothing, median
//! filtering, the adjusted threshold, change points, NMS, merging of
//! consecutive events and a minimum-length filter.
//!
//! Frame intervals are half-open `[start, end)`.

use thiserror::Error;

use crate::audio_io::{interval_iou, EventInterval};

#[derive(Debug, Error, PartialEq)]
pub enum PostprocError {
    #[error("probability {value} at frame {frame} is outside [0, 1]")]
    OutOfRange { frame: usize, value: f64 },
    #[error("{what} must be odd, got {value}")]
    EvenKernel { what: &'static str, value: usize },
    #[error("invalid postproc config: {0}")]
    Config(String),
}

/// Per-frame POS probabilities of one file.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbCurve {
    pub file_id: String,
    pub probs: Vec<f64>,
    pub frame_rate: f64,
}

impl ProbCurve {
    pub fn new(file_id: impl Into<String>, probs: Vec<f64>, frame_rate: f64) -> Result<Self, PostprocError> {
        if let Some((i, &v)) = probs.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(PostprocError::OutOfRange { frame: i, value: v });
        }
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(PostprocError::Config(format!("frame rate {frame_rate}")));
        }
        Ok(Self {
            file_id: file_id.into(),
            probs,
            frame_rate,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostprocConfig {
    pub base_threshold: f64,
    pub threshold_delta: f64,
    pub threshold_floor: f64,
    pub nms_iou: f64,
    /// Minimum event length in frames.
    pub mfl_frames: usize,
    /// 87 frames ≈ 1 s at 22050 Hz with hop 256.
    pub merge_gap_frames: usize,
    pub merge_prob: f64,
    pub merge: bool,
    pub smooth_window: usize,
    pub median_kernel: usize,
    /// Smooth before thresholding (default); when false the moving average
    /// and median filter run on the binarised curve instead.
    pub smooth_first: bool,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        Self {
            base_threshold: 0.5,
            threshold_delta: 0.05,
            threshold_floor: 0.5,
            nms_iou: 0.7,
            mfl_frames: 5,
            merge_gap_frames: 87,
            merge_prob: 0.5,
            merge: true,
            smooth_window: 5,
            median_kernel: 3,
            smooth_first: true,
        }
    }
}

impl PostprocConfig {
    pub fn validate(&self) -> Result<(), PostprocError> {
        let bad = |m: String| Err(PostprocError::Config(m));
        if !(self.base_threshold > 0.0 && self.base_threshold < 1.0) {
            return bad(format!("base_threshold {} not in (0, 1)", self.base_threshold));
        }
        if !(self.threshold_floor <= 1.0) {
            return bad(format!("threshold_floor {} > 1", self.threshold_floor));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return bad(format!("nms_iou {} not in (0, 1]", self.nms_iou));
        }
        if self.mfl_frames == 0 {
            return bad("mfl_frames must be at least 1".into());
        }
        if self.smooth_window % 2 == 0 {
            return Err(PostprocError::EvenKernel { what: "smooth_window", value: self.smooth_window });
        }
        if self.median_kernel % 2 == 0 {
            return Err(PostprocError::EvenKernel { what: "median_kernel", value: self.median_kernel });
        }
        Ok(())
    }
}

/// A scored frame interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameEvent {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

impl FrameEvent {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    fn iou(&self, other: &FrameEvent) -> f64 {
        interval_iou((self.start as f64, self.end as f64), (other.start as f64, other.end as f64))
    }
}

/// Centred moving average; windows shrink at the edges.
pub fn smooth(curve: &[f64], window: usize) -> Result<Vec<f64>, PostprocError> {
    if window % 2 == 0 {
        return Err(PostprocError::EvenKernel { what: "smooth_window", value: window });
    }
    let half = window / 2;
    let n = curve.len();
    Ok((0..n)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(n);
            let s: f64 = curve[lo..hi].iter().sum();
            (s / (hi - lo) as f64).clamp(0.0, 1.0)
        })
        .collect())
}

/// Centred median with edge replication.
pub fn median_filter(curve: &[f64], k: usize) -> Result<Vec<f64>, PostprocError> {
    if k % 2 == 0 {
        return Err(PostprocError::EvenKernel { what: "median_kernel", value: k });
    }
    let n = curve.len();
    let half = k / 2;
    let mut buf = vec![0.0; k];
    Ok((0..n)
        .map(|t| {
            for (j, b) in buf.iter_mut().enumerate() {
                let idx = (t + j).saturating_sub(half).min(n - 1);
                *b = curve[idx];
            }
            buf.sort_by(f64::total_cmp);
            buf[half]
        })
        .collect())
}

/// `max(t − delta, floor)`.
pub fn adjust_threshold(t: f64, delta: f64, floor: f64) -> f64 {
    (t - delta).max(floor)
}

/// 1 where the probability is strictly above the threshold.
pub fn binarize(curve: &[f64], threshold: f64) -> Vec<u8> {
    curve.iter().map(|&p| u8::from(p > threshold)).collect()
}

/// Runs of ones, found as the ±1 steps of the padded sequence convolved with `[+1, −1]`.
pub fn change_points(binary: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut open = None;
    for t in 0..=binary.len() {
        let at = |i: usize| binary.get(i).map_or(0i8, |&b| i8::from(b != 0));
        let prev = if t == 0 { 0 } else { at(t - 1) };
        let cur = at(t);
        match cur - prev {
            1 => open = Some(t),
            -1 => out.push((open.take().expect("run opened"), t)),
            _ => {}
        }
    }
    out
}

/// Mean of `curve` over each interval.
pub fn score_events(curve: &[f64], intervals: &[(usize, usize)]) -> Vec<FrameEvent> {
    intervals
        .iter()
        .map(|&(start, end)| FrameEvent {
            start,
            end,
            score: curve[start..end].iter().sum::<f64>() / (end - start).max(1) as f64,
        })
        .collect()
}

/// Greedy non-maximum suppression. Higher scores win; ties go to the
/// earlier onset, then the longer event. Survivors are returned in onset order.
pub fn nms(events: &[FrameEvent], iou: f64) -> Vec<FrameEvent> {
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&events[a], &events[b]);
        eb.score
            .total_cmp(&ea.score)
            .then(ea.start.cmp(&eb.start))
            .then(eb.len().cmp(&ea.len()))
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| events[k].iou(&events[i]) <= iou) {
            kept.push(i);
        }
    }
    kept.sort_by_key(|&i| (events[i].start, events[i].end, i));
    kept.into_iter().map(|i| events[i]).collect()
}

/// Sets the curve to 1 over each run of consecutive events (sorted by onset)
/// whose gaps are all below `merge_gap_frames`, whose mean length exceeds
/// `2 · mfl_frames` and whose mean probability over the run span exceeds
/// `merge_prob`. Returns the number of runs merged.
pub fn merge_short_events(curve: &mut [f64], events: &[FrameEvent], cfg: &PostprocConfig) -> usize {
    let mut merged = 0;
    let mut i = 0;
    while i < events.len() {
        let mut j = i;
        while j + 1 < events.len() && events[j + 1].start.saturating_sub(events[j].end) < cfg.merge_gap_frames {
            j += 1;
        }
        if j > i {
            let run = &events[i..=j];
            let mean_len = run.iter().map(|e| e.len() as f64).sum::<f64>() / run.len() as f64;
            let (lo, hi) = (run[0].start, run.iter().map(|e| e.end).max().unwrap_or(run[0].end));
            let mean_prob = curve[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            if mean_len > 2.0 * cfg.mfl_frames as f64 && mean_prob > cfg.merge_prob {
                curve[lo..hi].fill(1.0);
                merged += 1;
            }
        }
        i = j + 1;
    }
    merged
}

/// Drops events shorter than `mfl_frames`.
pub fn min_length_filter(events: &[FrameEvent], mfl_frames: usize) -> Vec<FrameEvent> {
    events.iter().copied().filter(|e| e.len() >= mfl_frames).collect()
}

/// Seconds of a frame interval, shifted by `offset_s`.
pub fn frames_to_seconds(start: usize, end: usize, frame_rate: f64, offset_s: f64) -> (f64, f64) {
    (start as f64 / frame_rate + offset_s, end as f64 / frame_rate + offset_s)
}

/// Minimum event length: `max(floor, ratio × shortest support event)` frames.
pub fn mfl_from_support(support_lengths: &[usize], ratio: f64, floor: usize) -> usize {
    let shortest = support_lengths.iter().copied().min().unwrap_or(0);
    ((ratio * shortest as f64).floor() as usize).max(floor).max(1)
}

/// Frame-domain pipeline; returns scored frame events in onset order.
pub fn run_pipeline_frames(probs: &[f64], cfg: &PostprocConfig) -> Result<Vec<FrameEvent>, PostprocError> {
    cfg.validate()?;
    if probs.is_empty() {
        return Ok(Vec::new());
    }
    let threshold = adjust_threshold(cfg.base_threshold, cfg.threshold_delta, cfg.threshold_floor);
    let filter = |c: &[f64]| -> Result<Vec<f64>, PostprocError> {
        median_filter(&smooth(c, cfg.smooth_window)?, cfg.median_kernel)
    };
    let mut curve = if cfg.smooth_first {
        filter(probs)?
    } else {
        let b: Vec<f64> = binarize(probs, threshold).into_iter().map(f64::from).collect();
        filter(&b)?
    };
    let extract = |c: &[f64]| score_events(c, &change_points(&binarize(c, threshold)));
    let mut events = extract(&curve);
    if cfg.merge && merge_short_events(&mut curve, &events, cfg) > 0 {
        events = extract(&curve);
    }
    let events = nms(&events, cfg.nms_iou);
    Ok(min_length_filter(&events, cfg.mfl_frames))
}

/// Full chain to event intervals in seconds.
pub fn run_pipeline(curve: &ProbCurve, cfg: &PostprocConfig) -> Result<Vec<EventInterval>, PostprocError> {
    let events = run_pipeline_frames(&curve.probs, cfg)?;
    Ok(events
        .into_iter()
        .map(|e| {
            let (on, off) = frames_to_seconds(e.start, e.end, curve.frame_rate, 0.0);
            let mut iv = EventInterval::new(curve.file_id.clone(), on, off);
            iv.score = e.score;
            iv
        })
        .collect())
}

#[cfg(test)]
mod tests;
