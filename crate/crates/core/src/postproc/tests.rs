use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::seed::rng_from_seed;

fn ev(start: usize, end: usize, score: f64) -> FrameEvent {
    FrameEvent { start, end, score }
}

#[test]
fn smooth_examples() {
    assert_eq!(smooth(&[0.3; 9], 5).unwrap(), vec![0.3; 9]);
    let mut c = vec![0.0; 21];
    c[10] = 1.0;
    let s = smooth(&c, 5).unwrap();
    for (t, v) in s.iter().enumerate() {
        let expected = if (8..=12).contains(&t) { 0.2 } else { 0.0 };
        assert!((v - expected).abs() < 1e-15, "{t}: {v}");
    }
    assert!(smooth(&c, 4).is_err());
}

#[test]
fn smooth_matches_direct_mean() {
    let mut r = rng_from_seed(1);
    let c: Vec<f64> = (0..60).map(|_| r.random::<f64>()).collect();
    let s = smooth(&c, 5).unwrap();
    for t in 0..60usize {
        let lo = t.saturating_sub(2);
        let hi = (t + 3).min(60);
        let m = c[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
        assert!((s[t] - m).abs() < 1e-15);
    }
}

#[test]
fn median_examples() {
    let mono: Vec<f64> = (0..10).map(|v| v as f64 / 10.0).collect();
    assert_eq!(median_filter(&mono, 3).unwrap(), mono);
    let mut spike = vec![0.2; 9];
    spike[4] = 0.9;
    assert_eq!(median_filter(&spike, 3).unwrap(), vec![0.2; 9]);
    assert!(median_filter(&spike, 2).is_err());
}

#[test]
fn median_matches_sort_oracle() {
    let mut r = rng_from_seed(2);
    for k in [1usize, 3, 5, 7] {
        let c: Vec<f64> = (0..40).map(|_| r.random::<f64>()).collect();
        let m = median_filter(&c, k).unwrap();
        for t in 0..40i64 {
            let mut w: Vec<f64> = (t - k as i64 / 2..=t + k as i64 / 2)
                .map(|i| c[i.clamp(0, 39) as usize])
                .collect();
            w.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(m[t as usize], w[k / 2]);
        }
    }
}

#[test]
fn threshold_adjustment() {
    assert!((adjust_threshold(0.62, 0.05, 0.5) - 0.57).abs() < 1e-12);
    assert_eq!(adjust_threshold(0.51, 0.05, 0.5), 0.5);
    let t = adjust_threshold(0.55, 0.05, 0.5);
    assert!((t - 0.5).abs() < 1e-12 && t >= 0.5);
}

#[test]
fn binarize_is_strict() {
    assert_eq!(binarize(&[0.57; 4], 0.57), vec![0; 4]);
    assert_eq!(binarize(&[0.0, 1e-9, 0.3, 0.0], 0.0), vec![0, 1, 1, 0]);
    let mut r = rng_from_seed(3);
    let c: Vec<f64> = (0..500).map(|_| r.random::<f64>()).collect();
    let ones = binarize(&c, 0.4).iter().filter(|&&b| b == 1).count();
    assert_eq!(ones, c.iter().filter(|&&p| p > 0.4).count());
}

fn rle_oracle(b: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if b[i] == 1 {
            let s = i;
            while i < b.len() && b[i] == 1 {
                i += 1;
            }
            out.push((s, i));
        } else {
            i += 1;
        }
    }
    out
}

#[test]
fn change_point_examples() {
    assert_eq!(change_points(&[0, 0, 0, 1, 1, 1, 0]), vec![(3, 6)]);
    assert_eq!(change_points(&[1; 8]), vec![(0, 8)]);
    assert!(change_points(&[]).is_empty());
    assert!(change_points(&[0, 0]).is_empty());
}

fn brute_nms(events: &[FrameEvent], thr: f64) -> Vec<FrameEvent> {
    let mut remaining: Vec<usize> = (0..events.len()).collect();
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let mut best = remaining[0];
        for &i in &remaining[1..] {
            let (a, b) = (&events[i], &events[best]);
            let better = a.score > b.score
                || (a.score == b.score
                    && (a.start < b.start || (a.start == b.start && (a.len() > b.len() || (a.len() == b.len() && i < best)))));
            if better {
                best = i;
            }
        }
        kept.push(best);
        let bx = events[best];
        remaining.retain(|&i| {
            let e = events[i];
            let inter = (e.end.min(bx.end) as f64 - e.start.max(bx.start) as f64).max(0.0);
            let union = (e.len() + bx.len()) as f64 - inter;
            i != best && !(union > 0.0 && inter / union > thr)
        });
    }
    kept.sort_by_key(|&i| (events[i].start, events[i].end, i));
    kept.into_iter().map(|i| events[i]).collect()
}

fn random_events(r: &mut impl Rng, n: usize) -> Vec<FrameEvent> {
    (0..n)
        .map(|_| {
            let s = r.random_range(0..200);
            let l = r.random_range(1..40);
            // Coarse scores so ties occur.
            ev(s, s + l, r.random_range(0..6) as f64 / 5.0)
        })
        .collect()
}

#[test]
fn nms_examples() {
    let out = nms(&[ev(10, 20, 0.8), ev(10, 20, 0.9)], 0.7);
    assert_eq!(out, vec![ev(10, 20, 0.9)]);
    let disjoint = vec![ev(0, 5, 0.1), ev(10, 15, 0.9), ev(20, 30, 0.5)];
    assert_eq!(nms(&disjoint, 0.7), disjoint);
    // Tie: earlier onset wins; then longer.
    assert_eq!(nms(&[ev(1, 11, 0.5), ev(0, 10, 0.5)], 0.7), vec![ev(0, 10, 0.5)]);
    assert_eq!(nms(&[ev(0, 10, 0.5), ev(0, 11, 0.5)], 0.7), vec![ev(0, 11, 0.5)]);
}

#[test]
fn nms_matches_brute_force_on_50_events() {
    let mut r = rng_from_seed(4);
    for _ in 0..20 {
        let e = random_events(&mut r, 50);
        assert_eq!(nms(&e, 0.7), brute_nms(&e, 0.7));
    }
}

#[test]
fn merge_rule_arithmetic() {
    let cfg = PostprocConfig { mfl_frames: 87, ..Default::default() };
    let build = |gap: usize| {
        let mut c = vec![0.0; 200 + gap + 200 + 20];
        c[10..210].fill(0.8);
        c[210..210 + gap].fill(0.45);
        c[210 + gap..410 + gap].fill(0.8);
        let events = vec![ev(10, 210, 0.8), ev(210 + gap, 410 + gap, 0.8)];
        (c, events)
    };
    // Mean over the span: (400·0.8 + 80·0.45)/480 ≈ 0.74 > 0.5
    let (mut c, events) = build(80);
    assert_eq!(merge_short_events(&mut c, &events, &cfg), 1);
    assert!(c[10..490].iter().all(|&v| v == 1.0));
    assert_eq!(c[9], 0.0);
    let (mut c, events) = build(87);
    let before = c.clone();
    assert_eq!(merge_short_events(&mut c, &events, &cfg), 0);
    assert_eq!(c, before);
    // Single event: nothing to merge.
    let (mut c, events) = build(80);
    assert_eq!(merge_short_events(&mut c, &events[..1], &cfg), 0);
    // Mean length not above 2·mfl.
    let short_cfg = PostprocConfig { mfl_frames: 100, ..Default::default() };
    let (mut c, events) = build(80);
    assert_eq!(merge_short_events(&mut c, &events, &short_cfg), 0);
}

#[test]
fn min_length_boundary() {
    let e = vec![ev(0, 5, 1.0), ev(10, 14, 1.0)];
    assert_eq!(min_length_filter(&e, 5), vec![ev(0, 5, 1.0)]);
    assert!(min_length_filter(&[], 5).is_empty());
    let mut r = rng_from_seed(5);
    let e = random_events(&mut r, 100);
    let kept = min_length_filter(&e, 17);
    assert_eq!(kept, e.iter().copied().filter(|x| x.end - x.start >= 17).collect::<Vec<_>>());
}

#[test]
fn seconds_conversion() {
    let (on, off) = frames_to_seconds(0, 86, 86.13, 0.0);
    assert_eq!(on, 0.0);
    assert!((off - 0.9985).abs() < 1e-3);
    let fr = 22050.0 / 256.0;
    for s in [0.0, 0.37, 1.0, 12.345] {
        let f = (s * fr as f64).round() as usize;
        let (back, _) = frames_to_seconds(f, f + 1, fr, 0.0);
        assert!((back - s).abs() <= 1.0 / fr);
    }
    assert_eq!(frames_to_seconds(10, 20, 10.0, 5.0), (6.0, 7.0));
}

#[test]
fn mfl_rule() {
    assert_eq!(mfl_from_support(&[40, 30, 50], 0.5, 5), 15);
    assert_eq!(mfl_from_support(&[6, 30], 0.5, 5), 5);
}

#[test]
fn pipeline_examples() {
    let cfg = PostprocConfig::default();
    assert!(run_pipeline_frames(&[0.0; 300], &cfg).unwrap().is_empty());
    let mut c = vec![0.05; 400];
    c[50..120].fill(0.95);
    c[250..330].fill(0.9);
    let out = run_pipeline_frames(&c, &cfg).unwrap();
    assert_eq!(out.len(), 2);
    for (e, (s, t)) in out.iter().zip([(50usize, 120usize), (250, 330)]) {
        assert!(e.start.abs_diff(s) <= 2 && e.end.abs_diff(t) <= 2, "{e:?}");
    }
    let curve = ProbCurve::new("f.wav", c, 10.0).unwrap();
    let secs = run_pipeline(&curve, &cfg).unwrap();
    assert_eq!(secs.len(), 2);
    assert!((secs[0].onset - 5.0).abs() <= 0.2);
}

#[test]
fn pipeline_is_a_fixpoint_on_its_binarised_output() {
    let mut r = rng_from_seed(6);
    let cfg = PostprocConfig { merge: false, ..Default::default() };
    for _ in 0..20 {
        let c: Vec<f64> = (0..600)
            .map(|t| {
                let on = (t / 60) % 2 == 1;
                let base = if on { 0.8 } else { 0.2 };
                (base + r.random_range(-0.15..0.15f64)).clamp(0.0, 1.0)
            })
            .collect();
        let first = run_pipeline_frames(&c, &cfg).unwrap();
        let mut b = vec![0.0; 600];
        for e in &first {
            b[e.start..e.end].fill(1.0);
        }
        let second = run_pipeline_frames(&b, &cfg).unwrap();
        let spans = |v: &[FrameEvent]| v.iter().map(|e| (e.start, e.end)).collect::<Vec<_>>();
        assert_eq!(spans(&first), spans(&second));
    }
}

#[test]
fn curve_validation() {
    assert!(matches!(ProbCurve::new("a", vec![0.2, 1.5], 10.0), Err(PostprocError::OutOfRange { frame: 1, .. })));
    assert!(PostprocConfig { median_kernel: 4, ..Default::default() }.validate().is_err());
}

proptest! {
    #[test]
    fn change_points_match_rle(b in prop::collection::vec(0u8..2, 0..200)) {
        prop_assert_eq!(change_points(&b), rle_oracle(&b));
    }

    #[test]
    fn nms_matches_brute_force(seed in 0u64..100_000, n in 0usize..30, thr in 0.05f64..1.0) {
        let mut r = rng_from_seed(seed);
        let e = random_events(&mut r, n);
        let out = nms(&e, thr);
        prop_assert_eq!(&out, &brute_nms(&e, thr));
        prop_assert!(out.iter().all(|x| e.contains(x)));
    }

    #[test]
    fn raising_threshold_never_adds_ones(c in prop::collection::vec(0.0f64..1.0, 1..100), t1 in 0.0f64..1.0, dt in 0.0f64..0.5) {
        let a = binarize(&c, t1).iter().filter(|&&v| v == 1).count();
        let b = binarize(&c, t1 + dt).iter().filter(|&&v| v == 1).count();
        prop_assert!(b <= a);
    }

    #[test]
    fn pipeline_output_is_sorted_disjoint_and_long_enough(seed in 0u64..10_000, mfl in 1usize..20) {
        let mut r = rng_from_seed(seed);
        let mut c = vec![0.0; 500];
        for _ in 0..8 {
            let s = r.random_range(0..480);
            let l = r.random_range(1..60).min(500 - s);
            let p = r.random_range(0.3..1.0);
            c[s..s + l].fill(p);
        }
        let cfg = PostprocConfig { mfl_frames: mfl, ..Default::default() };
        let out = run_pipeline_frames(&c, &cfg).unwrap();
        prop_assert!(out.iter().all(|e| e.len() >= mfl));
        prop_assert!(out.windows(2).all(|w| w[0].end <= w[1].start));
    }
}
