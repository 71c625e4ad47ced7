//! Word-sentiment prediction, masked-word prediction with POS-dependent
//! selection rates, and the joint objective.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, LexPolarity, Vocabulary};
use crate::encoder::HiddenStates;
use crate::error::{Error, Result};
use crate::tensor::{cross_entropy, head_logits, head_logits_backward, Tensor};

/// Two-way (P, N) classifier over token states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WspHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Projection from token states to vocabulary logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MwpHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Proportions applied to a selected position: replace by `[MASK]`, by a
/// random word, or keep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSplit {
    pub mask: f64,
    pub random: f64,
    pub keep: f64,
}

impl Default for CorruptionSplit {
    fn default() -> Self {
        CorruptionSplit {
            mask: 0.8,
            random: 0.1,
            keep: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskPolicy {
    pub boosted_tags: BTreeSet<String>,
    pub boosted_rate: f64,
    pub base_rate: f64,
    pub split: CorruptionSplit,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        MaskPolicy {
            boosted_tags: ["NOUN", "PROPN", "ADJ", "ADV"]
                .into_iter()
                .map(String::from)
                .collect(),
            boosted_rate: 0.30,
            base_rate: 0.15,
            split: CorruptionSplit::default(),
        }
    }
}

impl MaskPolicy {
    pub fn validate(&self) -> Result<()> {
        let s = &self.split;
        for (name, p) in [
            ("boosted_rate", self.boosted_rate),
            ("base_rate", self.base_rate),
            ("split.mask", s.mask),
            ("split.random", s.random),
            ("split.keep", s.keep),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if (s.mask + s.random + s.keep - 1.0).abs() > 1e-9 {
            return Err(Error::Config("corruption split must sum to 1".into()));
        }
        Ok(())
    }

    pub fn rate_for(&self, tag: &str) -> f64 {
        if self.boosted_tags.contains(tag) {
            self.boosted_rate
        } else {
            self.base_rate
        }
    }
}

/// Which positions the masked-word loss sums over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MwpScope {
    /// Only corrupted (selected) positions.
    #[default]
    Masked,
    /// Every non-special position.
    AllTokens,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedBatch {
    pub ids: Vec<usize>,
    pub flags: Vec<bool>,
    /// Original id where flagged, `None` elsewhere.
    pub originals: Vec<Option<usize>>,
}

impl MaskedBatch {
    /// Unchanged input.
    pub fn identity(ids: &[usize]) -> Self {
        MaskedBatch {
            ids: ids.to_vec(),
            flags: vec![false; ids.len()],
            originals: vec![None; ids.len()],
        }
    }

    pub fn original_id(&self, i: usize) -> usize {
        self.originals[i].unwrap_or(self.ids[i])
    }

    pub fn num_masked(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda: 0.01 }
    }
}

/// Flags each token independently with its POS-dependent rate.
pub fn select_mask_positions<R: Rng>(
    doc: &Document,
    policy: &MaskPolicy,
    rng: &mut R,
) -> Vec<bool> {
    let rates: Vec<f64> = doc.tokens.iter().map(|t| policy.rate_for(&t.pos)).collect();
    select_with_rates(&rates, rng)
}

/// One uniform draw per position, flagged when below that position's rate.
pub fn select_with_rates<R: Rng>(rates: &[f64], rng: &mut R) -> Vec<bool> {
    rates.iter().map(|&r| rng.gen::<f64>() < r).collect()
}

/// Corrupts flagged positions per `split`. Random replacements are drawn
/// uniformly from the non-reserved words of `vocab`.
pub fn corrupt<R: Rng>(
    ids: &[usize],
    flags: &[bool],
    split: &CorruptionSplit,
    vocab: &Vocabulary,
    rng: &mut R,
) -> MaskedBatch {
    let mut out = MaskedBatch::identity(ids);
    let first_word = vocab.num_reserved();
    for (i, &flag) in flags.iter().enumerate() {
        if !flag {
            continue;
        }
        out.flags[i] = true;
        out.originals[i] = Some(ids[i]);
        let u: f64 = rng.gen();
        if u < split.mask {
            out.ids[i] = Vocabulary::MASK;
        } else if u < split.mask + split.random && vocab.len() > first_word {
            out.ids[i] = rng.gen_range(first_word..vocab.len());
        }
    }
    out
}

/// `-Σ_{S_i=1} log P(polar_i | h_i)`.
pub fn wsp_loss(h: &HiddenStates, labels: &[Option<LexPolarity>], head: &WspHead) -> f64 {
    wsp_loss_and_grad(h, labels, head, 1.0, None)
}

/// [`wsp_loss`] that also accumulates `scale`-weighted gradients.
pub(crate) fn wsp_loss_and_grad(
    h: &HiddenStates,
    labels: &[Option<LexPolarity>],
    head: &WspHead,
    scale: f64,
    mut grads: Option<(&mut WspHead, &mut [f64])>,
) -> f64 {
    let d = h.dim();
    let mut total = 0.0;
    for (i, label) in labels.iter().enumerate() {
        let Some(polarity) = label else { continue };
        let target = polarity.class_index();
        let (loss, mut probs) =
            cross_entropy(&head_logits(&head.weight, &head.bias, h.row(i)), target);
        total += loss;
        if let Some((g, dh)) = grads.as_mut() {
            probs[target] -= 1.0;
            probs.iter_mut().for_each(|p| *p *= scale);
            head_logits_backward(
                &head.weight,
                h.row(i),
                &probs,
                &mut g.weight,
                &mut g.bias,
                &mut dh[i * d..(i + 1) * d],
            );
        }
    }
    total
}

/// `-Σ log P(x_i | h_i)` over masked positions (or all positions, per
/// `scope`; `special[i]` positions are never scored).
pub fn mwp_loss(h: &HiddenStates, batch: &MaskedBatch, head: &MwpHead, scope: MwpScope) -> f64 {
    let special = vec![false; batch.ids.len()];
    mwp_loss_and_grad(h, batch, &special, head, scope, 1.0, None)
}

pub(crate) fn mwp_loss_and_grad(
    h: &HiddenStates,
    batch: &MaskedBatch,
    special: &[bool],
    head: &MwpHead,
    scope: MwpScope,
    scale: f64,
    mut grads: Option<(&mut MwpHead, &mut [f64])>,
) -> f64 {
    let d = h.dim();
    let mut total = 0.0;
    for i in 0..batch.ids.len() {
        let scored = match scope {
            MwpScope::Masked => batch.flags[i],
            MwpScope::AllTokens => h.is_valid(i) && !special[i],
        };
        if !scored {
            continue;
        }
        let target = batch.original_id(i);
        let (loss, mut probs) =
            cross_entropy(&head_logits(&head.weight, &head.bias, h.row(i)), target);
        total += loss;
        if let Some((g, dh)) = grads.as_mut() {
            probs[target] -= 1.0;
            probs.iter_mut().for_each(|p| *p *= scale);
            head_logits_backward(
                &head.weight,
                h.row(i),
                &probs,
                &mut g.weight,
                &mut g.bias,
                &mut dh[i * d..(i + 1) * d],
            );
        }
    }
    total
}

/// `wsp + λ·mwp + rating`.
pub fn joint_loss(wsp: f64, mwp: f64, rating: f64, cfg: &LossConfig) -> f64 {
    wsp + cfg.lambda * mwp + rating
}

/// The three objective terms and their weighted total for one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub wsp: f64,
    pub mwp: f64,
    pub rating: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn add_scaled(&mut self, other: &LossBundle, factor: f64) {
        self.wsp += factor * other.wsp;
        self.mwp += factor * other.mwp;
        self.rating += factor * other.rating;
        self.total += factor * other.total;
    }

    pub fn is_finite(&self) -> bool {
        self.wsp.is_finite()
            && self.mwp.is_finite()
            && self.rating.is_finite()
            && self.total.is_finite()
    }
}
