//! Aspect-focused attention pooling and the rating classifier.
//!
//! Each position gets a score `t·h_i + b`; positions outside the aspect mask
//! are removed from the softmax support (their weight is exactly zero), and
//! the document representation is the weighted sum of the remaining rows.
//! The same rating head is later applied to averaged aspect-span states to
//! read off aspect polarity.

use serde::{Deserialize, Serialize};

use crate::corpus::{PolarityLabel, Rating};
use crate::encoder::HiddenStates;
use crate::error::{Error, Result};
use crate::tensor::{axpy, cross_entropy, dot, head_logits, softmax_in_place, Tensor};

/// How the document representation fed to the rating head is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Attention restricted to aspect positions.
    PosAttention,
    /// Hidden state of the prepended classifier token.
    Cls,
    /// Mean over all non-padding positions.
    Avg,
}

impl Pooling {
    pub fn name(self) -> &'static str {
        match self {
            Pooling::PosAttention => "POS+ATT",
            Pooling::Cls => "Pool_rep",
            Pooling::Avg => "AVG",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub t: Tensor,
    pub b: Tensor,
}

impl AttentionParams {
    pub fn new(t: Vec<f64>, b: f64) -> Self {
        let d = t.len();
        AttentionParams {
            t: Tensor::from_vec(&[d], t),
            b: Tensor::from_vec(&[1], vec![b]),
        }
    }

    pub fn bias(&self) -> f64 {
        self.b.data()[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    /// `t·h_i + b` for every position.
    pub raw: Vec<f64>,
    /// Raw score where the position is in the support, `None` (i.e. `-inf`)
    /// elsewhere.
    pub masked: Vec<Option<f64>>,
    pub alpha: Vec<f64>,
}

/// Document representation (`d`-vector).
#[derive(Clone, Debug, PartialEq)]
pub struct RatingRep(pub Vec<f64>);

impl RatingRep {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Affine map to five rating logits, one row per rating.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl RatingHead {
    pub fn new(weight: Tensor, bias: Tensor) -> Self {
        assert_eq!(weight.shape()[0], Rating::COUNT);
        assert_eq!(bias.len(), Rating::COUNT);
        RatingHead { weight, bias }
    }

    pub fn logits(&self, rep: &[f64]) -> Vec<f64> {
        head_logits(&self.weight, &self.bias, rep)
    }

    /// Rating distribution (sums to one).
    pub fn distribution(&self, rep: &[f64]) -> Vec<f64> {
        let mut z = self.logits(rep);
        softmax_in_place(&mut z);
        z
    }
}

pub fn score_aspects(h: &HiddenStates, params: &AttentionParams) -> Vec<f64> {
    let b = params.bias();
    (0..h.len())
        .map(|i| dot(params.t.data(), h.row(i)) + b)
        .collect()
}

/// Softmax over `{i : mask[i]}` only; every other weight is exactly zero.
/// Fails with [`Error::NoAspect`] when the support is empty.
pub fn mask_and_normalize(raw: &[f64], mask: &[bool]) -> Result<AttentionWeights> {
    if raw.len() != mask.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores but {} mask bits",
            raw.len(),
            mask.len()
        )));
    }
    let masked: Vec<Option<f64>> = raw
        .iter()
        .zip(mask)
        .map(|(&s, &m)| m.then_some(s))
        .collect();
    let max = masked
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::NoAspect);
    }
    let mut alpha: Vec<f64> = masked
        .iter()
        .map(|s| s.map_or(0.0, |s| (s - max).exp()))
        .collect();
    let sum: f64 = alpha.iter().sum();
    alpha.iter_mut().for_each(|a| *a /= sum);
    Ok(AttentionWeights {
        raw: raw.to_vec(),
        masked,
        alpha,
    })
}

/// `Σ α_i h_i`.
pub fn pool(h: &HiddenStates, alpha: &[f64]) -> RatingRep {
    let mut rep = vec![0.0; h.dim()];
    for (i, &a) in alpha.iter().enumerate() {
        if a != 0.0 {
            axpy(a, h.row(i), &mut rep);
        }
    }
    RatingRep(rep)
}

/// Hidden state of the classifier token (row 0).
pub fn pool_cls(h: &HiddenStates) -> RatingRep {
    RatingRep(h.row(0).to_vec())
}

/// Mean over non-padding rows.
pub fn pool_avg(h: &HiddenStates) -> RatingRep {
    RatingRep(average_rows(h, (0..h.len()).filter(|&i| h.is_valid(i))))
}

/// Mean of the given rows.
pub fn average_rows(h: &HiddenStates, rows: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut acc = vec![0.0; h.dim()];
    let mut count = 0usize;
    for i in rows {
        axpy(1.0, h.row(i), &mut acc);
        count += 1;
    }
    if count > 0 {
        acc.iter_mut().for_each(|v| *v /= count as f64);
    }
    acc
}

/// `-log P(rating | rep)` and the predicted distribution.
pub fn rating_loss(rep: &RatingRep, head: &RatingHead, rating: Rating) -> (f64, Vec<f64>) {
    cross_entropy(&head.logits(rep.as_slice()), rating.class_index())
}

/// Index of the most probable rating; ties resolve to the lower rating.
pub fn argmax_rating(dist: &[f64]) -> Rating {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > dist[best] {
            best = i;
        }
    }
    Rating::from_class(best)
}

pub fn polarity_for(rating: Rating) -> PolarityLabel {
    PolarityLabel::from_rating(rating)
}

/// Backward of attention pooling: given `d rep`, accumulate into the
/// attention parameter gradients and `dh` (`n × d`).
pub(crate) fn attention_pool_backward(
    h: &HiddenStates,
    weights: &AttentionWeights,
    params: &AttentionParams,
    d_rep: &[f64],
    grad: &mut AttentionParams,
    dh: &mut [f64],
) {
    let d = h.dim();
    let alpha = &weights.alpha;
    let d_alpha: Vec<f64> = (0..h.len())
        .map(|i| {
            if alpha[i] != 0.0 {
                dot(d_rep, h.row(i))
            } else {
                0.0
            }
        })
        .collect();
    let mean: f64 = alpha.iter().zip(&d_alpha).map(|(a, g)| a * g).sum();
    for i in 0..h.len() {
        if weights.masked[i].is_none() {
            continue;
        }
        let d_score = alpha[i] * (d_alpha[i] - mean);
        let row = &mut dh[i * d..(i + 1) * d];
        axpy(alpha[i], d_rep, row);
        axpy(d_score, params.t.data(), row);
        axpy(d_score, h.row(i), grad.t.data_mut());
        grad.b.data_mut()[0] += d_score;
    }
}
