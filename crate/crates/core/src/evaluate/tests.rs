use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::audio_io::Provenance;
use crate::seed::rng_from_seed;

fn iv(on: f64, off: f64) -> EventInterval {
    EventInterval::new("f.wav", on, off)
}

fn lab(on: f64, off: f64, label: EventLabel) -> LabeledEvent {
    LabeledEvent {
        file_id: "f.wav".into(),
        onset_s: on,
        offset_s: off,
        label,
        class_name: "Q".into(),
        provenance: Provenance::Annotated,
    }
}

/// Largest matching over pairs with IoU ≥ thr, by exhaustive search.
fn optimal_tp(pred: &[EventInterval], refs: &[EventInterval], thr: f64) -> usize {
    fn go(r: usize, used: u32, pred: &[EventInterval], refs: &[EventInterval], thr: f64) -> usize {
        if r == refs.len() {
            return 0;
        }
        let mut best = go(r + 1, used, pred, refs, thr);
        for p in 0..pred.len() {
            if used & (1 << p) == 0 && interval_iou((pred[p].onset, pred[p].offset), (refs[r].onset, refs[r].offset)) >= thr {
                best = best.max(1 + go(r + 1, used | (1 << p), pred, refs, thr));
            }
        }
        best
    }
    go(0, 0, pred, refs, thr)
}

fn random_intervals(r: &mut impl Rng, n: usize, disjoint: bool) -> Vec<EventInterval> {
    let mut v: Vec<EventInterval> = Vec::new();
    let mut t = 0.0;
    for _ in 0..n {
        if disjoint {
            t += r.random_range(0.0..2.0);
            let len = r.random_range(0.2..2.0);
            v.push(iv(t, t + len));
            t += len;
        } else {
            let on = r.random_range(0.0..10.0);
            v.push(iv(on, on + r.random_range(0.1..3.0)));
        }
    }
    v.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    v
}

#[test]
fn tabulated_f_measures() {
    // TP/FP/FN chosen to reproduce the tabulated precision and recall.
    let m = prf(499_983, 317_517, 455_642);
    assert!((m.precision - 61.16).abs() < 0.005);
    assert!((m.recall - 52.32).abs() < 0.005);
    assert!((m.f1 - 56.40).abs() < 0.01, "{}", m.f1);
    let m = prf(853_936, 1_520_000 - 853_936, 1_755_625 - 853_936);
    assert!((m.precision - 56.18).abs() < 0.005);
    assert!((m.recall - 48.64).abs() < 0.005);
    assert!((m.f1 - 52.14).abs() < 0.01, "{}", m.f1);
}

#[test]
fn degenerate_counts() {
    assert_eq!(prf(0, 5, 5), Prf { precision: 0.0, recall: 0.0, f1: 0.0 });
    assert_eq!(prf(0, 0, 0).f1, 0.0);
    let m = prf(3, 1, 2);
    assert_eq!(m.precision, 75.0);
    assert_eq!(m.recall, 60.0);
    assert!((m.f1 - 66.666_666).abs() < 1e-3);
}

#[test]
fn identical_and_disjoint_lists() {
    let a = vec![iv(0.0, 1.0), iv(2.0, 3.0), iv(4.0, 4.5)];
    let m = match_events(&a, &a, 0.3);
    assert_eq!(m.counts, Counts { tp: 3, fp: 0, fn_: 0 });
    let b = vec![iv(10.0, 11.0), iv(12.0, 13.0)];
    assert_eq!(match_events(&a, &b, 0.3).counts, Counts { tp: 0, fp: 3, fn_: 2 });
}

#[test]
fn iou_threshold_is_inclusive() {
    // IoU = 0.3 exactly: [0, 3] vs [0, 10] is 3/10.
    let m = match_events(&[iv(0.0, 3.0)], &[iv(0.0, 10.0)], 0.3);
    assert_eq!(m.counts.tp, 1);
}

#[test]
fn greedy_against_exhaustive_matching() {
    let mut r = rng_from_seed(1);
    let mut divergent = 0;
    for _ in 0..300 {
        let (np, nr) = (r.random_range(0..=10), r.random_range(0..=10));
        let p = random_intervals(&mut r, np, false);
        let q = random_intervals(&mut r, nr, false);
        let greedy = match_events(&p, &q, 0.3).counts.tp;
        let best = optimal_tp(&p, &q, 0.3);
        assert!(greedy <= best);
        if greedy < best {
            divergent += 1;
        }
    }
    // Overlapping random lists can make greedy fall short; this is rare.
    eprintln!("greedy below optimum on {divergent}/300 overlapping instances");
    assert!(divergent < 30);
    for _ in 0..300 {
        let (np, nr) = (r.random_range(0..=10), r.random_range(0..=10));
        let p = random_intervals(&mut r, np, true);
        let q = random_intervals(&mut r, nr, true);
        assert_eq!(match_events(&p, &q, 0.3).counts.tp, optimal_tp(&p, &q, 0.3));
    }
}

#[test]
fn support_events_and_early_predictions_are_excluded() {
    let mut refs: Vec<LabeledEvent> = (0..7).map(|i| lab(i as f64 * 2.0, i as f64 * 2.0 + 1.0, EventLabel::Pos)).collect();
    refs.push(lab(20.0, 21.0, EventLabel::Unk));
    // Support ends at 9.0. One prediction inside the support region, two
    // correct query detections, one on the UNK event and one spurious.
    let preds = vec![iv(4.0, 5.0), iv(10.0, 11.0), iv(12.0, 13.0), iv(20.0, 21.0), iv(30.0, 31.0)];
    let c = evaluate_file(&preds, &refs, &EvalConfig::default());
    assert_eq!(c, Counts { tp: 2, fp: 1, fn_: 0 });
    let all = evaluate_file(&preds, &refs, &EvalConfig { skip_support: false, ..Default::default() });
    assert_eq!(all, Counts { tp: 3, fp: 1, fn_: 4 });
}

#[test]
fn predictions_straddling_the_support_end_are_dropped() {
    let refs: Vec<LabeledEvent> = (0..6).map(|i| lab(i as f64 * 2.0, i as f64 * 2.0 + 1.0, EventLabel::Pos)).collect();
    // Support ends at 9.0; the query event is [10, 11).
    let c = evaluate_file(&[iv(8.5, 9.2), iv(9.0, 9.4), iv(10.0, 11.0)], &refs, &EvalConfig::default());
    assert_eq!(c, Counts { tp: 1, fp: 1, fn_: 0 });
}

fn reference(subset: &str, events: Vec<LabeledEvent>) -> FileReference {
    FileReference { subset: subset.into(), events }
}

#[test]
fn run_pooling_and_subsets() {
    let cfg = EvalConfig { skip_support: false, ..Default::default() };
    let mut refs = BTreeMap::new();
    refs.insert("a.wav".to_string(), reference("HB", vec![lab(0.0, 1.0, EventLabel::Pos), lab(2.0, 3.0, EventLabel::Pos)]));
    refs.insert("b.wav".to_string(), reference("ME", vec![lab(0.0, 1.0, EventLabel::Pos)]));
    let mut preds = vec![EventInterval::new("a.wav", 0.0, 1.0), EventInterval::new("a.wav", 5.0, 6.0)];
    preds.push(EventInterval::new("b.wav", 0.1, 1.0));
    let rep = evaluate_run(&preds, &refs, &cfg).unwrap();
    assert_eq!(rep.subsets["HB"], Counts { tp: 1, fp: 1, fn_: 1 });
    assert_eq!(rep.subsets["ME"], Counts { tp: 1, fp: 0, fn_: 0 });
    let mut sum = Counts::default();
    for f in &rep.files {
        sum += f.counts;
    }
    assert_eq!(rep.overall, sum);
    let csv = rep.to_csv().unwrap();
    assert!(csv.starts_with("subset,TP,FP,FN,precision,recall,f1\n"));
    assert!(csv.contains("overall,2,1,1,66.6667,66.6667,66.6667"));
    assert!(rep.table().contains("HB"));

    let mut perfect = BTreeMap::new();
    perfect.insert("b.wav".to_string(), refs["b.wav"].clone());
    let rep = evaluate_run(&[EventInterval::new("b.wav", 0.0, 1.0)], &perfect, &cfg).unwrap();
    let m = rep.overall.prf();
    assert_eq!((m.precision, m.recall, m.f1), (100.0, 100.0, 100.0));
}

#[test]
fn hand_counted_fixture() {
    let cfg = EvalConfig { skip_support: false, ..Default::default() };
    let mut refs = BTreeMap::new();
    let ev: Vec<LabeledEvent> = [(0.0, 1.0), (2.0, 3.0), (4.0, 5.0), (6.0, 7.0), (8.0, 9.0)]
        .iter()
        .map(|&(a, b)| lab(a, b, EventLabel::Pos))
        .collect();
    refs.insert("f.wav".to_string(), reference("X", ev));
    let preds = vec![iv(0.0, 1.0), iv(2.1, 3.0), iv(4.0, 4.9), iv(11.0, 12.0)];
    let rep = evaluate_run(&preds, &refs, &cfg).unwrap();
    assert_eq!(rep.overall, Counts { tp: 3, fp: 1, fn_: 2 });
    let m = rep.overall.prf();
    assert_eq!((m.precision, m.recall), (75.0, 60.0));
    assert!((m.f1 - 66.67).abs() < 0.01);
}

#[test]
fn unknown_file_is_an_error() {
    let refs: BTreeMap<String, FileReference> = BTreeMap::new();
    let err = evaluate_run(&[EventInterval::new("ghost.wav", 0.0, 1.0)], &refs, &EvalConfig::default()).unwrap_err();
    assert!(err.to_string().contains("ghost.wav"));
}

proptest! {
    #[test]
    fn harmonic_mean_bounds(tp in 1usize..1000, fp in 0usize..1000, fn_ in 0usize..1000) {
        let m = prf(tp, fp, fn_);
        prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-9);
        prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-9);
        prop_assert!((0.0..=100.0).contains(&m.f1));
    }

    #[test]
    fn extra_unmatched_prediction_lowers_precision_only(seed in 0u64..10_000) {
        let mut r = rng_from_seed(seed);
        let p = random_intervals(&mut r, 6, true);
        let q = random_intervals(&mut r, 6, true);
        let base = match_events(&p, &q, 0.3).counts;
        let mut p2 = p.clone();
        p2.push(iv(1000.0, 1001.0));
        let more = match_events(&p2, &q, 0.3).counts;
        prop_assert_eq!(more.tp, base.tp);
        prop_assert_eq!(more.fn_, base.fn_);
        prop_assert_eq!(more.fp, base.fp + 1);
        if base.tp > 0 {
            prop_assert!(more.prf().precision < base.prf().precision);
        }
        prop_assert_eq!(more.prf().recall, base.prf().recall);
    }

    #[test]
    fn swapping_roles_swaps_precision_and_recall(seed in 0u64..10_000) {
        let mut r = rng_from_seed(seed);
        let np = r.random_range(0..10);
        let nq = r.random_range(0..10);
        let p = random_intervals(&mut r, np, true);
        let q = random_intervals(&mut r, nq, true);
        let a = match_events(&p, &q, 0.3).counts.prf();
        let b = match_events(&q, &p, 0.3).counts.prf();
        prop_assert_eq!(a.precision, b.recall);
        prop_assert_eq!(a.recall, b.precision);
    }
}
