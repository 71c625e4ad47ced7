mod common;

use afdsc::corpus::{AspectQuery, LabeledQuery, PolarityLabel};
use afdsc::eval::{confusion_from_pairs, evaluate, metrics_from_confusion};
use afdsc::params::Parameters;
use proptest::prelude::*;
use PolarityLabel::{Neg, Neu, Pos};

#[test]
fn six_query_hand_computed() {
    let pairs = [
        (Pos, Pos),
        (Pos, Pos),
        (Pos, Neg),
        (Neg, Neg),
        (Neg, Neu),
        (Neu, Neu),
    ];
    let c = confusion_from_pairs(pairs);
    assert_eq!(c, [[2, 1, 0], [0, 1, 1], [0, 0, 1]]);
    let r = metrics_from_confusion(&c);
    // POS: P 2/2, R 2/3, F1 0.8. NEG: P 1/2, R 1/2, F1 0.5. NEU: P 1/2, R 1, F1 2/3.
    let expected = (0.8 + 0.5 + 2.0 / 3.0) / 3.0;
    assert!((r.macro_f1 - expected).abs() < 1e-12);
    assert!((r.accuracy - 4.0 / 6.0).abs() < 1e-12);
    assert!((r.per_class[0].recall - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(r.per_class[2].support, 1);
}

#[test]
fn scaled_identity_is_perfect() {
    for k in 1..4 {
        let r = metrics_from_confusion(&[[k, 0, 0], [0, k, 0], [0, 0, k]]);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_f1, 1.0);
    }
}

#[test]
fn absent_class_contributes_zero_f1() {
    let r = metrics_from_confusion(&[[3, 0, 0], [0, 3, 0], [0, 0, 0]]);
    assert_eq!(r.per_class[2].f1, 0.0);
    assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
}

fn queries() -> Vec<LabeledQuery> {
    let d = common::doc(
        &["good", "food", "bad", "service"],
        &["ADJ", "NOUN", "ADJ", "NOUN"],
        None,
    );
    let n = common::doc(&["the", "staff"], &["DET", "NOUN"], None);
    vec![
        LabeledQuery {
            query: AspectQuery::new(d.clone(), 1..2).unwrap(),
            gold: Pos,
        },
        LabeledQuery {
            query: AspectQuery::new(d, 3..4).unwrap(),
            gold: Neg,
        },
        LabeledQuery {
            query: AspectQuery::new(n, 1..2).unwrap(),
            gold: Neu,
        },
    ]
}

#[test]
fn evaluate_leaves_model_untouched_and_counts() {
    let (model, vocab) = common::model(2, 8, 2, 3);
    let before = model.flatten();
    let (r, preds) = evaluate(&model, &vocab, &queries()).unwrap();
    assert_eq!(model.flatten(), before);
    assert_eq!(preds.len(), 3);
    assert_eq!(r.num_queries, 3);
    let trace: usize = (0..3).map(|k| r.confusion[k][k]).sum();
    assert!((r.accuracy - trace as f64 / 3.0).abs() < 1e-12);
}

#[test]
fn empty_query_set_is_an_error() {
    let (model, vocab) = common::model(1, 8, 2, 3);
    assert!(evaluate(&model, &vocab, &[]).is_err());
}

#[test]
fn no_noun_document_flags_fallback() {
    let (model, vocab) = common::model(1, 8, 2, 3);
    let d = common::doc(&["was", "good"], &["AUX", "ADJ"], None);
    let q = LabeledQuery {
        query: AspectQuery::new(d, 1..2).unwrap(),
        gold: Pos,
    };
    let (r, preds) = evaluate(&model, &vocab, &[q]).unwrap();
    assert!(preds[0].no_aspect_fallback);
    assert_eq!(r.no_aspect_fallbacks, 1);
}

fn label(i: usize) -> PolarityLabel {
    PolarityLabel::ALL[i]
}

proptest! {
    #[test]
    fn metrics_are_permutation_invariant(
        pairs in prop::collection::vec((0usize..3, 0usize..3), 1..40),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = metrics_from_confusion(&confusion_from_pairs(pairs.iter().map(|&(g, p)| (label(g), label(p)))));
        let b = metrics_from_confusion(&confusion_from_pairs(shuffled.iter().map(|&(g, p)| (label(g), label(p)))));
        prop_assert_eq!(a, b);
    }

    // Direct per-class recomputation from the raw pairs.
    #[test]
    fn macro_f1_matches_direct_count(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..40)) {
        let r = metrics_from_confusion(&confusion_from_pairs(pairs.iter().map(|&(g, p)| (label(g), label(p)))));
        let mut f1s = 0.0;
        for k in 0..3 {
            let tp = pairs.iter().filter(|&&(g, p)| g == k && p == k).count() as f64;
            let fp = pairs.iter().filter(|&&(g, p)| g != k && p == k).count() as f64;
            let fneg = pairs.iter().filter(|&&(g, p)| g == k && p != k).count() as f64;
            let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fneg) };
            f1s += f1;
        }
        prop_assert!((r.macro_f1 - f1s / 3.0).abs() < 1e-12);
    }
}
