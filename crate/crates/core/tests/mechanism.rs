mod common;

use afdsc::composition::{
    mask_and_normalize, pool, rating_loss, score_aspects, AttentionParams, RatingHead, RatingRep,
};
use afdsc::corpus::{LexPolarity, Rating};
use afdsc::encoder::HiddenStates;
use afdsc::masking::{joint_loss, mwp_loss, wsp_loss, LossConfig, MwpScope};
use afdsc::model::ObjectiveConfig;
use afdsc::tensor::Tensor;
use common::*;
use proptest::prelude::*;

fn states(rows: &[&[f64]]) -> HiddenStates {
    HiddenStates::new(rows.concat(), rows[0].len(), vec![true; rows.len()])
}

#[test]
fn hand_scores_three_tokens() {
    let h = states(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
    let p = AttentionParams::new(vec![2.0, -1.0], 0.5);
    assert_eq!(score_aspects(&h, &p), vec![2.5, -0.5, 1.5]);
}

#[test]
fn hand_masked_softmax_three_tokens() {
    let w = mask_and_normalize(&[2.5, -0.5, 1.5], &[true, false, true]).unwrap();
    // Scores differ by one on the support.
    let a0 = 1.0 / (1.0 + (-1.0f64).exp());
    let a2 = 1.0 / (1.0 + 1.0f64.exp());
    assert_eq!(w.alpha[1], 0.0);
    assert!((w.alpha[0] - a0).abs() < 1e-15);
    assert!((w.alpha[2] - a2).abs() < 1e-15);
}

#[test]
fn ln3_gap_gives_quarter_and_three_quarters() {
    let w = mask_and_normalize(&[0.0, 3f64.ln()], &[true, true]).unwrap();
    assert!((w.alpha[0] - 0.25).abs() < 1e-15);
    assert!((w.alpha[1] - 0.75).abs() < 1e-15);
}

#[test]
fn hand_weighted_sum() {
    let h = states(&[&[1.0, 2.0], &[3.0, -1.0]]);
    assert_eq!(pool(&h, &[0.25, 0.75]).0, vec![2.5, -0.25]);
}

#[test]
fn hand_rating_loss() {
    let head = RatingHead::new(
        Tensor::zeros(&[5, 3]),
        Tensor::from_vec(&[5], vec![1.0, 0.0, 0.0, 0.0, 0.0]),
    );
    let (loss, dist) = rating_loss(
        &RatingRep(vec![0.4, -2.0, 7.0]),
        &head,
        Rating::new(1).unwrap(),
    );
    let e = 1f64.exp();
    assert!((loss + (e / (e + 4.0)).ln()).abs() < 1e-15);
    assert!((dist[1] - 1.0 / (e + 4.0)).abs() < 1e-15);
}

#[test]
fn joint_loss_weights() {
    assert!((joint_loss(1.0, 2.0, 3.0, &LossConfig::default()) - 4.02).abs() < 1e-12);
}

// The model's total must equal the three terms recomputed from scratch.
#[test]
fn model_total_matches_recomputed_terms() {
    let (model, vocab) = model(2, 16, 2, 21);
    let input = mixed_input(&vocab);
    let masked = fixed_corruption(&input, &vocab);
    let out = model
        .loss(
            &input,
            Some(&masked),
            &ObjectiveConfig::default(),
            None,
            None,
        )
        .unwrap();

    let h = model.encoder.encode(&masked.ids, &input.valid).unwrap();
    let l_wsp = wsp_loss(&h, &input.lex, &model.wsp_head);
    let l_mwp = mwp_loss(&h, &masked, &model.mwp_head, MwpScope::Masked);
    let w = mask_and_normalize(&score_aspects(&h, &model.attention), &input.aspect_mask).unwrap();
    let (l_rating, _) = rating_loss(
        &pool(&h, &w.alpha),
        &model.rating_head,
        Rating::new(3).unwrap(),
    );
    let expected = l_wsp + 0.01 * l_mwp + l_rating;
    assert!((out.losses.total - expected).abs() < 1e-12);
    assert!((out.losses.wsp - l_wsp).abs() < 1e-12);
    assert!((out.losses.mwp - l_mwp).abs() < 1e-12);
}

#[test]
fn wsp_is_additive_over_lexicon_words() {
    let (model, vocab) = model(1, 8, 2, 1);
    let input = mixed_input(&vocab);
    let h = model.encoder.encode(&input.ids, &input.valid).unwrap();
    let both = wsp_loss(&h, &input.lex, &model.wsp_head);
    let singles: f64 = input
        .lex
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_some())
        .map(|(i, _)| {
            let mut only = vec![None; input.lex.len()];
            only[i] = input.lex[i];
            wsp_loss(&h, &only, &model.wsp_head)
        })
        .sum();
    assert_eq!(input.lex.iter().flatten().count(), 2);
    assert!((both - singles).abs() < 1e-12);
    assert_eq!(
        wsp_loss(&h, &vec![None; input.lex.len()], &model.wsp_head),
        0.0
    );
}

#[test]
fn mwp_is_additive_over_masked_positions() {
    let (model, vocab) = model(1, 8, 2, 1);
    let input = mixed_input(&vocab);
    let masked = fixed_corruption(&input, &vocab);
    let h = model.encoder.encode(&masked.ids, &input.valid).unwrap();
    let all = mwp_loss(&h, &masked, &model.mwp_head, MwpScope::Masked);
    let singles: f64 = (0..masked.ids.len())
        .filter(|&i| masked.flags[i])
        .map(|i| {
            let mut one = masked.clone();
            for j in 0..one.flags.len() {
                if j != i {
                    one.flags[j] = false;
                    one.originals[j] = None;
                }
            }
            mwp_loss(&h, &one, &model.mwp_head, MwpScope::Masked)
        })
        .sum();
    assert!((all - singles).abs() < 1e-12);
}

#[test]
fn lexicon_label_changes_only_wsp() {
    let (model, vocab) = model(1, 8, 2, 6);
    let mut input = mixed_input(&vocab);
    let obj = ObjectiveConfig::default();
    let before = model.loss(&input, None, &obj, None, None).unwrap().losses;
    input.lex[1] = Some(LexPolarity::Negative);
    let after = model.loss(&input, None, &obj, None, None).unwrap().losses;
    assert_eq!(before.rating, after.rating);
    assert_ne!(before.wsp, after.wsp);
}

proptest! {
    #[test]
    fn alpha_is_a_distribution_on_the_support(
        scores in prop::collection::vec(-30.0f64..30.0, 1..12),
        bits in prop::collection::vec(any::<bool>(), 12),
    ) {
        let mut mask: Vec<bool> = bits[..scores.len()].to_vec();
        mask[0] = true;
        let w = mask_and_normalize(&scores, &mask).unwrap();
        let sum: f64 = w.alpha.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        for (a, m) in w.alpha.iter().zip(&mask) {
            if *m { prop_assert!(*a > 0.0 || scores.iter().any(|s| *s > 700.0)); }
            else { prop_assert_eq!(*a, 0.0); }
        }
    }

    #[test]
    fn alpha_ignores_a_common_shift(
        scores in prop::collection::vec(-20.0f64..20.0, 1..10),
        shift in -50.0f64..50.0,
    ) {
        let mask = vec![true; scores.len()];
        let a = mask_and_normalize(&scores, &mask).unwrap().alpha;
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let b = mask_and_normalize(&shifted, &mask).unwrap().alpha;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    // With d = 1 the pooled value lies between the smallest and largest
    // state on the support.
    #[test]
    fn pooled_state_in_convex_hull(
        values in prop::collection::vec(-10.0f64..10.0, 1..10),
        t in -3.0f64..3.0,
        b in -3.0f64..3.0,
        bits in prop::collection::vec(any::<bool>(), 10),
    ) {
        let n = values.len();
        let mut mask = bits[..n].to_vec();
        mask[n - 1] = true;
        let h = HiddenStates::new(values.clone(), 1, vec![true; n]);
        let w = mask_and_normalize(&score_aspects(&h, &AttentionParams::new(vec![t], b)), &mask).unwrap();
        let rep = pool(&h, &w.alpha).0[0];
        let support: Vec<f64> = values.iter().zip(&mask).filter(|(_, m)| **m).map(|(v, _)| *v).collect();
        let lo = support.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = support.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(rep >= lo - 1e-12 && rep <= hi + 1e-12);
    }

    #[test]
    fn joint_loss_formula(w in 0.0f64..10.0, m in 0.0f64..10.0, r in 0.0f64..10.0) {
        let total = joint_loss(w, m, r, &LossConfig::default());
        prop_assert!((total - (w + 0.01 * m + r)).abs() < 1e-12);
    }
}
