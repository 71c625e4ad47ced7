#![allow(dead_code)]

use afdsc::corpus::{AspectRuleConfig, Document, LexPolarity, Rating, Vocabulary};
use afdsc::encoder::EncoderConfig;
use afdsc::masking::MaskedBatch;
use afdsc::model::{Model, ModelInput, ObjectiveConfig};
use afdsc::params::Parameters;

pub const WORDS: [&str; 8] = [
    "good", "food", "the", "bad", "service", "was", "staff", "slow",
];

pub fn vocab() -> Vocabulary {
    Vocabulary::from_words(WORDS).unwrap()
}

pub fn model(layers: usize, dim: usize, heads: usize, seed: u64) -> (Model, Vocabulary) {
    let vocab = vocab();
    let cfg = EncoderConfig {
        vocab_size: vocab.len(),
        max_len: 16,
        model_dim: dim,
        num_layers: layers,
        num_heads: heads,
        ffn_dim: 2 * dim,
        dropout_rate: 0.1,
        seed,
    };
    (Model::init(&cfg).unwrap(), vocab)
}

pub fn doc(words: &[&str], tags: &[&str], rating: Option<i64>) -> Document {
    Document::annotate(
        words.iter().map(|s| s.to_string()).collect(),
        tags.iter().map(|s| s.to_string()).collect(),
        rating.map(|r| Rating::new(r).unwrap()),
        &AspectRuleConfig::default(),
        None,
    )
    .unwrap()
}

/// "good food was bad service": two aspects, two lexicon words.
pub fn mixed_input(vocab: &Vocabulary) -> ModelInput {
    let mut d = doc(
        &["good", "food", "was", "bad", "service"],
        &["ADJ", "NOUN", "AUX", "ADJ", "NOUN"],
        Some(3),
    );
    d.tokens[0].lex = Some(LexPolarity::Positive);
    d.tokens[3].lex = Some(LexPolarity::Negative);
    ModelInput::from_document(&d, vocab)
}

/// Fixed corruption: position 2 ("food") masked, position 4 ("bad")
/// replaced by "staff", position 5 ("service") kept but flagged.
pub fn fixed_corruption(input: &ModelInput, vocab: &Vocabulary) -> MaskedBatch {
    let mut m = MaskedBatch::identity(&input.ids);
    for i in [2, 4, 5] {
        m.flags[i] = true;
        m.originals[i] = Some(input.ids[i]);
    }
    m.ids[2] = Vocabulary::MASK;
    m.ids[4] = vocab.id("staff");
    m
}

/// Central-difference gradient of `f` with respect to every parameter.
pub fn numeric_gradient<P, F>(params: &P, step: f64, f: F) -> Vec<f64>
where
    P: Parameters + Clone,
    F: Fn(&P) -> f64,
{
    let base = params.flatten();
    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        flat[i] = base[i] + step;
        probe.load_flat(&flat);
        let plus = f(&probe);
        flat[i] = base[i] - step;
        probe.load_flat(&flat);
        let minus = f(&probe);
        flat[i] = base[i];
        out.push((plus - minus) / (2.0 * step));
    }
    out
}

/// Floor on the relative-error denominator so entries whose true gradient is
/// zero are judged by absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-5;

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = (0.0, 0);
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    worst
}

/// Analytic vs numeric gradient of the joint loss for one input; returns
/// the worst relative error and the parameter name it occurred at.
pub fn check_loss_gradient(
    model: &Model,
    input: &ModelInput,
    masked: Option<&MaskedBatch>,
    obj: &ObjectiveConfig,
) -> (f64, String) {
    let mut grads = model.zeros_like();
    model
        .loss(input, masked, obj, None, Some((&mut grads, 1.0)))
        .unwrap();
    let numeric = numeric_gradient(model, 1e-5, |m| {
        m.loss(input, masked, obj, None, None).unwrap().losses.total
    });
    let (err, idx) = max_relative_error(&grads.flatten(), &numeric);
    let name = model
        .layout()
        .into_iter()
        .find(|(_, off, len)| idx >= *off && idx < off + len)
        .map(|(n, _, _)| n)
        .unwrap_or_default();
    (err, name)
}
