use gazecheck_core::fusion::{compute_metrics, fuse, streaming_verdicts, StreamingVoter, VoteMode};
use gazecheck_core::ingest::ClassLabel;
use gazecheck_core::windowing::WindowParams;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_hard(probs: &[f64], t: f64) -> ClassLabel {
    let fake = probs.iter().filter(|&&p| p >= t).count();
    let genuine = probs.len() - fake;
    if fake >= genuine {
        ClassLabel::Fake
    } else {
        ClassLabel::Genuine
    }
}

fn brute_soft(probs: &[f64], t: f64) -> (ClassLabel, f64) {
    let mut sum = 0.0;
    for p in probs {
        sum += p;
    }
    let mean = sum / probs.len() as f64;
    (if mean >= t { ClassLabel::Fake } else { ClassLabel::Genuine }, mean)
}

#[test]
fn every_label_pattern_up_to_five() {
    let p = WindowParams::default();
    for n in 1..=5usize {
        for mask in 0u32..(1 << n) {
            let probs: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { 0.9 } else { 0.1 }).collect();
            let fakes = mask.count_ones() as usize;
            let h = fuse(VoteMode::Hard, &probs, 0.5, p, 0).unwrap();
            assert_eq!(h.label, brute_hard(&probs, 0.5));
            assert_eq!(h.fake_votes, fakes);
            assert_eq!(h.label == ClassLabel::Fake, 2 * fakes >= n);
            let s = fuse(VoteMode::Soft, &probs, 0.5, p, 0).unwrap();
            assert_eq!(s.label, brute_soft(&probs, 0.5).0);
        }
    }
}

#[test]
fn random_probability_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = WindowParams::default();
    let start = std::time::Instant::now();
    for _ in 0..10_000 {
        let n = rng.random_range(1..=60);
        let t = rng.random_range(0.05..0.95);
        let probs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let h = fuse(VoteMode::Hard, &probs, t, p, 0).unwrap();
        assert_eq!(h.label, brute_hard(&probs, t));
        let s = fuse(VoteMode::Soft, &probs, t, p, 0).unwrap();
        let (label, mean) = brute_soft(&probs, t);
        assert!((s.probability - mean).abs() < 1e-12);
        assert_eq!(s.label, label);
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn streaming_matches_batch_votes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = WindowParams::default();
    for _ in 0..200 {
        let len: usize = rng.random_range(1..120);
        let n = rng.random_range(1..=15);
        let probs: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
        for mode in [VoteMode::Hard, VoteMode::Soft] {
            let streamed = streaming_verdicts(&probs, n, mode, 0.5, params).unwrap();
            assert_eq!(streamed.len(), (len + 1).saturating_sub(n));
            for (k, v) in streamed.iter().enumerate() {
                let batch = fuse(mode, &probs[k..k + n], 0.5, params, k).unwrap();
                assert_eq!(v, &batch);
                assert_eq!(v.frame, (k + n - 1) * params.stride + params.length);
            }
        }
    }
}

#[test]
fn first_verdict_frames() {
    let p = WindowParams::default();
    for (n, frame) in [(1usize, 1800usize), (10, 3420)] {
        let mut voter = StreamingVoter::new(VoteMode::Soft, n, 0.5, p).unwrap();
        let first = (0..).find_map(|_| voter.push(0.7).unwrap()).unwrap();
        assert_eq!(first.frame, frame);
        assert_eq!(first.latency_frames, frame);
    }
}

/// Probability that a random positive outscores a random negative (ties count half).
fn mann_whitney(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (s1, _) in scores.iter().zip(labels).filter(|(_, l)| **l == 1) {
        for (s0, _) in scores.iter().zip(labels).filter(|(_, l)| **l == 0) {
            pairs += 1.0;
            wins += if s1 > s0 {
                1.0
            } else if s1 == s0 {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / pairs
}

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    prop::collection::vec(((0u8..20).prop_map(|q| q as f64 / 19.0), 0u8..2), 2..80)
        .prop_map(|v| v.into_iter().unzip())
        .prop_filter("both classes", |(_, l): &(Vec<f64>, Vec<u8>)| l.contains(&0) && l.contains(&1))
}

proptest! {
    #[test]
    fn auc_equals_mann_whitney((scores, labels) in scored()) {
        let m = compute_metrics(&scores, &labels, 0.5).unwrap();
        prop_assert!((m.auc - mann_whitney(&scores, &labels)).abs() < 1e-12);
    }

    #[test]
    fn roc_is_monotone_and_eer_is_bounded((scores, labels) in scored()) {
        let m = compute_metrics(&scores, &labels, 0.5).unwrap();
        prop_assert_eq!((m.roc[0].fpr, m.roc[0].tpr), (0.0, 0.0));
        let last = m.roc.last().unwrap();
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in m.roc.windows(2) {
            prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        }
        prop_assert!((0.0..=1.0).contains(&m.eer));
        let acc = scores.iter().zip(&labels).filter(|(s, l)| (**s >= 0.5) == (**l == 1)).count() as f64 / labels.len() as f64;
        prop_assert!((m.accuracy - acc).abs() < 1e-15);
    }

    #[test]
    fn hard_and_soft_agree_on_unanimous_windows(n in 1usize..30, p in 0.0f64..1.0) {
        let probs = vec![p; n];
        let params = WindowParams::default();
        let h = fuse(VoteMode::Hard, &probs, 0.5, params, 0).unwrap();
        let s = fuse(VoteMode::Soft, &probs, 0.5, params, 0).unwrap();
        prop_assert_eq!(h.label, s.label);
    }
}

#[test]
fn separable_scores_have_zero_eer() {
    let m = compute_metrics(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1], 0.5).unwrap();
    assert_eq!((m.auc, m.eer, m.accuracy), (1.0, 0.0, 1.0));
    let m = compute_metrics(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1], 0.5).unwrap();
    assert_eq!((m.auc, m.eer, m.accuracy), (0.0, 1.0, 0.0));
}
