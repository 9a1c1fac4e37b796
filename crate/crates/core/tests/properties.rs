mod support;

use blinkseg::data::{
    load_recording, make_split, write_recording_csv, Cohort, ManifestEntry, Subject,
};
use blinkseg::metrics::{confusion, event_match, event_scores, f1_micro};
use blinkseg::segment::{events_from_labels, plan_windows, rasterize, vote, Span, WindowPlan};
use blinkseg::synth::{generate, SynthConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use support::{brute_force_vote, naive_confusion, naive_f1, optimal_match_count, rle_ones, rng};

fn labels(max: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..=1, 1..=max)
}

fn pair(max: usize) -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
    (1..=max).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..=1, n),
            prop::collection::vec(0u8..=1, n),
        )
    })
}

/// A plan with random length, stride and offsets over a sequence of length
/// `t`, with small integer weights so tallies are exact in any order.
fn plan_case() -> impl Strategy<Value = (usize, WindowPlan)> {
    (1usize..=16, 0usize..=48).prop_flat_map(|(len, extra)| {
        let t = len + extra;
        (
            Just(t),
            Just(len),
            1..=len,
            prop::collection::btree_set(0..len, 1..=len.min(5)),
            prop::collection::vec(1u8..=3, 5),
        )
            .prop_map(|(t, len, stride, offsets, w)| {
                let offsets: Vec<usize> = offsets.into_iter().collect();
                let weights = w[..offsets.len()].iter().map(|&v| v as f64).collect();
                let plan = WindowPlan::new(len, stride, offsets)
                    .unwrap()
                    .with_weights(weights)
                    .unwrap();
                (t, plan)
            })
    })
}

proptest! {
    #[test]
    fn confusion_matches_naive((pred, truth) in pair(64)) {
        let c = confusion(&pred, &truth).unwrap();
        prop_assert_eq!((c.tp, c.fp, c.fn_, c.tn), naive_confusion(&pred, &truth));
        prop_assert_eq!(c.total(), pred.len());
    }

    #[test]
    fn f1_micro_matches_naive((pred, truth) in pair(64)) {
        let (tp, fp, fneg, _) = naive_confusion(&pred, &truth);
        prop_assert_eq!(f1_micro(&pred, &truth).unwrap(), naive_f1(tp, fp, fneg));
    }

    #[test]
    fn f1_micro_is_symmetric_and_bounded((pred, truth) in pair(64)) {
        let a = f1_micro(&pred, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a - f1_micro(&truth, &pred).unwrap()).abs() < 1e-15);
        prop_assert_eq!(f1_micro(&truth, &truth).unwrap(), if truth.contains(&1) { 1.0 } else { 0.0 });
    }

    #[test]
    fn events_match_run_length_encoding(l in labels(64)) {
        let ev: Vec<(usize, usize)> = events_from_labels(&l).iter().map(|e| (e.onset, e.offset)).collect();
        prop_assert_eq!(ev, rle_ones(&l));
    }

    #[test]
    fn events_rasterize_back_to_labels(l in labels(64)) {
        let ev = events_from_labels(&l);
        prop_assert_eq!(rasterize(&ev, l.len()), l);
        for w in ev.windows(2) {
            prop_assert!(w[0].offset + 1 < w[1].onset);
        }
    }

    #[test]
    fn event_scores_are_bounded((pred, truth) in pair(64), th in 0.05f64..1.0) {
        let s = event_scores(&events_from_labels(&pred), &events_from_labels(&truth), th);
        for v in [s.event_precision, s.event_recall, s.f1_macro] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(s.matched <= s.pred_events.min(s.true_events));
    }

    #[test]
    fn vote_matches_brute_force_tally((t, plan) in plan_case(), seed in any::<u64>()) {
        let spans = plan_windows(t, &plan).unwrap();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let preds: Vec<Vec<u8>> = spans.iter().map(|s| (0..s.len).map(|_| r.random_range(0..=1)).collect()).collect();
        let starts: Vec<usize> = spans.iter().map(|s| s.start).collect();
        let weights: Vec<f64> = spans.iter().map(|s| s.weight).collect();
        prop_assert_eq!(vote(&preds, &spans, t).unwrap(), brute_force_vote(&preds, &starts, &weights, t));
    }

    #[test]
    fn vote_ignores_window_order((t, plan) in plan_case(), seed in any::<u64>()) {
        let spans = plan_windows(t, &plan).unwrap();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let preds: Vec<Vec<u8>> = spans.iter().map(|s| (0..s.len).map(|_| r.random_range(0..=1)).collect()).collect();
        let mut pairs: Vec<(Span, Vec<u8>)> = spans.iter().copied().zip(preds.iter().cloned()).collect();
        pairs.shuffle(&mut r);
        let (s2, p2): (Vec<Span>, Vec<Vec<u8>>) = pairs.into_iter().unzip();
        prop_assert_eq!(vote(&preds, &spans, t).unwrap(), vote(&p2, &s2, t).unwrap());
    }

    #[test]
    fn plans_cover_every_sample_inside_bounds((t, plan) in plan_case()) {
        let spans = plan_windows(t, &plan).unwrap();
        let mut covered = vec![false; t];
        for s in &spans {
            prop_assert!(s.end() <= t && s.len == plan.window_len);
            covered[s.start..s.end()].iter_mut().for_each(|c| *c = true);
        }
        // Without offset 0 the samples before the first offset stay uncovered.
        if plan.offsets.contains(&0) {
            prop_assert!(covered.iter().all(|&c| c));
        }
    }

    #[test]
    fn single_offset_full_stride_vote_is_concatenation(len in 1usize..=16, k in 1usize..=4, seed in any::<u64>()) {
        let t = len * k;
        let plan = WindowPlan::new(len, len, vec![0]).unwrap();
        let spans = plan_windows(t, &plan).unwrap();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let preds: Vec<Vec<u8>> = spans.iter().map(|_| (0..len).map(|_| r.random_range(0..=1)).collect()).collect();
        prop_assert_eq!(vote(&preds, &spans, t).unwrap(), preds.concat());
    }

    #[test]
    fn split_is_deterministic_and_leak_free(hc in 0usize..12, pd in 0usize..12, seed in any::<u64>()) {
        prop_assume!(hc + pd > 0);
        let subjects: Vec<Subject> = (0..hc)
            .map(|i| Subject::new(format!("hc{i}"), Cohort::Hc))
            .chain((0..pd).map(|i| Subject::new(format!("pd{i}"), Cohort::Pd)))
            .collect();
        let a = make_split(&subjects, seed).unwrap();
        prop_assert_eq!(&a, &make_split(&subjects, seed).unwrap());
        prop_assert!(a.is_disjoint());
        let mut all: Vec<String> = a.train.iter().chain(&a.search).chain(&a.validation).cloned().collect();
        all.sort();
        let mut ids: Vec<String> = subjects.iter().map(|s| s.id.clone()).collect();
        ids.sort();
        prop_assert_eq!(all, ids);
        prop_assert!(!a.train.is_empty());
        if hc > 3 && pd > 3 {
            let count = |p: &str| a.validation.iter().filter(|id| id.starts_with(p)).count();
            prop_assert_eq!((count("hc"), count("pd")), (3, 3));
            prop_assert!(a.note.is_none());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn synthetic_csv_round_trip(seed in any::<u64>(), pd in any::<bool>()) {
        let mut cfg = SynthConfig {
            subject_id: "r".into(),
            duration_s: 3.0,
            blink_rate_per_min: 40.0,
            seed,
            ..SynthConfig::default()
        };
        if pd {
            cfg = cfg.with_tremor();
        }
        let raw = generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_recording_csv(&path, &raw).unwrap();
        let entry = ManifestEntry {
            subject_id: "r".into(),
            cohort: raw.cohort,
            path: "r.csv".into(),
            sample_rate_hz: cfg.sample_rate_hz,
        };
        let loaded = load_recording(&path, &entry).unwrap();
        let expected = raw.normalized();
        prop_assert_eq!(&loaded.labels, &expected.labels);
        prop_assert_eq!(&loaded.channel_names, &expected.channel_names);
        for (a, b) in loaded.channels.iter().flatten().zip(expected.channels.iter().flatten()) {
            prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
        }
        for (a, b) in loaded.denormalized().channels.iter().flatten().zip(raw.channels.iter().flatten()) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }
}

fn random_events(r: &mut rand_chacha::ChaCha8Rng, t: usize) -> Vec<u8> {
    let p = r.random_range(0.2..0.8);
    let mut l = vec![0u8; t];
    let mut i = 0;
    while i < t {
        let run = r.random_range(1..6);
        let v = u8::from(r.random_bool(p * 0.5));
        l[i..(i + run).min(t)].iter_mut().for_each(|x| *x = v);
        i += run;
    }
    l
}

#[test]
fn greedy_matching_is_optimal_at_half_iou() {
    let mut r = rng(99);
    for _ in 0..1000 {
        let t = r.random_range(1..=64);
        let (p, q) = (random_events(&mut r, t), random_events(&mut r, t));
        let (pe, te) = (events_from_labels(&p), events_from_labels(&q));
        let greedy = event_match(&pe, &te, 0.5).matches.len();
        assert_eq!(
            greedy,
            optimal_match_count(&rle_ones(&p), &rle_ones(&q), 0.5)
        );
    }
}

#[test]
fn greedy_matching_is_near_optimal_at_low_iou() {
    let mut r = rng(100);
    let mut agree = 0;
    for _ in 0..1000 {
        let t = r.random_range(1..=64);
        let th = r.random_range(0.1..0.5);
        let (p, q) = (random_events(&mut r, t), random_events(&mut r, t));
        let (pe, te) = (events_from_labels(&p), events_from_labels(&q));
        let greedy = event_match(&pe, &te, th).matches.len();
        let best = optimal_match_count(&rle_ones(&p), &rle_ones(&q), th);
        assert!(greedy <= best);
        agree += usize::from(greedy == best);
    }
    assert!(agree >= 950, "greedy optimal in {agree}/1000");
}
