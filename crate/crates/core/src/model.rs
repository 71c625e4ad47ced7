//! The full network: encoder, attention pooling, rating head and the two
//! auxiliary heads, with a per-document loss and backward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::composition::{
    argmax_rating, attention_pool_backward, average_rows, mask_and_normalize, polarity_for, pool,
    pool_avg, pool_cls, rating_loss, score_aspects, AttentionParams, AttentionWeights, Pooling,
    RatingHead, RatingRep,
};
use crate::corpus::{AspectQuery, Document, LexPolarity, PolarityLabel, Rating, Vocabulary};
use crate::encoder::{Encoder, EncoderConfig, HiddenStates};
use crate::error::{Error, Result};
use crate::masking::{
    joint_loss, mwp_loss_and_grad, wsp_loss_and_grad, LossBundle, LossConfig, MaskedBatch, MwpHead,
    MwpScope, WspHead,
};
use crate::params::Parameters;
use crate::tensor::{axpy, head_logits_backward, Tensor};

/// Which objective terms and which pooling a model is trained with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub pooling: Pooling,
    pub use_pos_mask: bool,
    pub use_wsp: bool,
    pub use_mwp: bool,
    pub lambda: f64,
    pub mwp_scope: MwpScope,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            pooling: Pooling::PosAttention,
            use_pos_mask: true,
            use_wsp: true,
            use_mwp: true,
            lambda: LossConfig::default().lambda,
            mwp_scope: MwpScope::Masked,
        }
    }
}

/// A document prepared for the network: `[CLS]` prepended at position 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub ids: Vec<usize>,
    pub valid: Vec<bool>,
    pub aspect_mask: Vec<bool>,
    pub lex: Vec<Option<LexPolarity>>,
    /// `true` for tokens the model adds (never masked or reconstructed).
    pub special: Vec<bool>,
    pub pos: Vec<String>,
    pub rating: Option<Rating>,
}

impl ModelInput {
    pub fn from_document(doc: &Document, vocab: &Vocabulary) -> Self {
        let n = doc.len() + 1;
        let mut ids = Vec::with_capacity(n);
        let mut aspect_mask = Vec::with_capacity(n);
        let mut lex = Vec::with_capacity(n);
        let mut special = Vec::with_capacity(n);
        let mut pos = Vec::with_capacity(n);
        ids.push(Vocabulary::CLS);
        aspect_mask.push(false);
        lex.push(None);
        special.push(true);
        pos.push(crate::corpus::CLS_POS_TAG.to_string());
        for t in &doc.tokens {
            ids.push(vocab.id(&t.surface));
            aspect_mask.push(t.aspect_mask);
            lex.push(t.lex);
            special.push(false);
            pos.push(t.pos.clone());
        }
        ModelInput {
            ids,
            valid: vec![true; n],
            aspect_mask,
            lex,
            special,
            pos,
            rating: doc.rating,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn has_aspect(&self) -> bool {
        self.aspect_mask
            .iter()
            .zip(&self.valid)
            .any(|(m, v)| *m && *v)
    }
}

/// Loss terms for one document.
#[derive(Clone, Debug, PartialEq)]
pub struct DocLoss {
    pub losses: LossBundle,
    pub rating_dist: Vec<f64>,
    pub no_aspect_fallback: bool,
}

/// Document-level forward results, exposed for probing.
#[derive(Clone, Debug)]
pub struct DocumentView {
    pub hidden: HiddenStates,
    pub rep: RatingRep,
    pub attention: Option<AttentionWeights>,
    pub no_aspect_fallback: bool,
}

/// Zero-shot output for one aspect query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub span: [usize; 2],
    pub rating_dist: Vec<f64>,
    pub pred_rating: u8,
    pub polarity: PolarityLabel,
    pub no_aspect_fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub encoder: Encoder,
    pub attention: AttentionParams,
    pub rating_head: RatingHead,
    pub wsp_head: WspHead,
    pub mwp_head: MwpHead,
}

impl Parameters for Model {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.encoder.visit(f);
        f("attention.t", &self.attention.t);
        f("attention.b", &self.attention.b);
        f("rating.weight", &self.rating_head.weight);
        f("rating.bias", &self.rating_head.bias);
        f("wsp.weight", &self.wsp_head.weight);
        f("wsp.bias", &self.wsp_head.bias);
        f("mwp.weight", &self.mwp_head.weight);
        f("mwp.bias", &self.mwp_head.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.encoder.visit_mut(f);
        f("attention.t", &mut self.attention.t);
        f("attention.b", &mut self.attention.b);
        f("rating.weight", &mut self.rating_head.weight);
        f("rating.bias", &mut self.rating_head.bias);
        f("wsp.weight", &mut self.wsp_head.weight);
        f("wsp.bias", &mut self.wsp_head.bias);
        f("mwp.weight", &mut self.mwp_head.weight);
        f("mwp.bias", &mut self.mwp_head.bias);
    }
}

impl Model {
    /// Deterministic initialisation from `config.seed`.
    pub fn init(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = Encoder::init_with(config, &mut rng);
        let d = config.model_dim;
        let v = config.vocab_size;
        Ok(Model {
            encoder,
            attention: AttentionParams {
                t: Tensor::glorot(&[d], d, 1, &mut rng),
                b: Tensor::zeros(&[1]),
            },
            rating_head: RatingHead::new(
                Tensor::glorot(&[Rating::COUNT, d], d, Rating::COUNT, &mut rng),
                Tensor::zeros(&[Rating::COUNT]),
            ),
            wsp_head: WspHead {
                weight: Tensor::glorot(&[2, d], d, 2, &mut rng),
                bias: Tensor::zeros(&[2]),
            },
            mwp_head: MwpHead {
                weight: Tensor::glorot(&[v, d], d, v, &mut rng),
                bias: Tensor::zeros(&[v]),
            },
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.zero();
        g
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.encoder.config
    }

    /// Attention support for the given objective, and whether the no-aspect
    /// fallback (all non-padding positions) was taken.
    fn attention_support(input: &ModelInput, obj: &ObjectiveConfig) -> (Vec<bool>, bool) {
        if !obj.use_pos_mask {
            return (input.valid.clone(), false);
        }
        if input.has_aspect() {
            let support = input
                .aspect_mask
                .iter()
                .zip(&input.valid)
                .map(|(m, v)| *m && *v)
                .collect();
            (support, false)
        } else {
            (input.valid.clone(), true)
        }
    }

    fn represent(
        &self,
        h: &HiddenStates,
        input: &ModelInput,
        obj: &ObjectiveConfig,
    ) -> Result<(RatingRep, Option<AttentionWeights>, bool)> {
        match obj.pooling {
            Pooling::PosAttention => {
                let (support, fallback) = Self::attention_support(input, obj);
                let weights = mask_and_normalize(&score_aspects(h, &self.attention), &support)?;
                let rep = pool(h, &weights.alpha);
                Ok((rep, Some(weights), fallback))
            }
            Pooling::Cls => Ok((pool_cls(h), None, false)),
            Pooling::Avg => Ok((pool_avg(h), None, false)),
        }
    }

    /// Inference-mode document representation.
    pub fn view(&self, input: &ModelInput, obj: &ObjectiveConfig) -> Result<DocumentView> {
        let hidden = self.encoder.encode(&input.ids, &input.valid)?;
        let (rep, attention, no_aspect_fallback) = self.represent(&hidden, input, obj)?;
        Ok(DocumentView {
            hidden,
            rep,
            attention,
            no_aspect_fallback,
        })
    }

    /// Joint loss for one document. When `grads` is given, gradients of
    /// `scale · total` are accumulated into it.
    pub fn loss(
        &self,
        input: &ModelInput,
        masked: Option<&MaskedBatch>,
        obj: &ObjectiveConfig,
        dropout: Option<&mut ChaCha8Rng>,
        grads: Option<(&mut Model, f64)>,
    ) -> Result<DocLoss> {
        let rating = input
            .rating
            .ok_or_else(|| Error::InvalidInput("training document without rating".into()))?;
        let ids = masked.map_or(&input.ids, |m| &m.ids);
        let (h, trace) = self.encoder.forward(ids, &input.valid, dropout)?;
        let (rep, weights, fallback) = self.represent(&h, input, obj)?;

        let (l_rating, dist) = rating_loss(&rep, &self.rating_head, rating);
        let d = h.dim();
        let n = h.len();

        let Some((g, scale)) = grads else {
            let l_wsp = if obj.use_wsp {
                wsp_loss_and_grad(&h, &input.lex, &self.wsp_head, 1.0, None)
            } else {
                0.0
            };
            let l_mwp = match masked {
                Some(m) if obj.use_mwp => mwp_loss_and_grad(
                    &h,
                    m,
                    &input.special,
                    &self.mwp_head,
                    obj.mwp_scope,
                    1.0,
                    None,
                ),
                _ => 0.0,
            };
            return Ok(Self::finish(l_wsp, l_mwp, l_rating, obj, dist, fallback));
        };

        let mut dh = vec![0.0; n * d];
        let l_wsp = if obj.use_wsp {
            wsp_loss_and_grad(
                &h,
                &input.lex,
                &self.wsp_head,
                scale,
                Some((&mut g.wsp_head, &mut dh)),
            )
        } else {
            0.0
        };
        let l_mwp = match masked {
            Some(m) if obj.use_mwp => mwp_loss_and_grad(
                &h,
                m,
                &input.special,
                &self.mwp_head,
                obj.mwp_scope,
                scale * obj.lambda,
                Some((&mut g.mwp_head, &mut dh)),
            ),
            _ => 0.0,
        };

        let mut d_logits: Vec<f64> = dist.iter().map(|p| p * scale).collect();
        d_logits[rating.class_index()] -= scale;
        let mut d_rep = vec![0.0; d];
        head_logits_backward(
            &self.rating_head.weight,
            rep.as_slice(),
            &d_logits,
            &mut g.rating_head.weight,
            &mut g.rating_head.bias,
            &mut d_rep,
        );
        match obj.pooling {
            Pooling::PosAttention => attention_pool_backward(
                &h,
                weights.as_ref().expect("attention pooling records weights"),
                &self.attention,
                &d_rep,
                &mut g.attention,
                &mut dh,
            ),
            Pooling::Cls => axpy(1.0, &d_rep, &mut dh[..d]),
            Pooling::Avg => {
                let count = h.valid().iter().filter(|v| **v).count() as f64;
                for i in (0..n).filter(|&i| h.is_valid(i)) {
                    axpy(1.0 / count, &d_rep, &mut dh[i * d..(i + 1) * d]);
                }
            }
        }
        self.encoder.backward(&trace, &dh, &mut g.encoder)?;
        Ok(Self::finish(l_wsp, l_mwp, l_rating, obj, dist, fallback))
    }

    fn finish(
        wsp: f64,
        mwp: f64,
        rating: f64,
        obj: &ObjectiveConfig,
        rating_dist: Vec<f64>,
        no_aspect_fallback: bool,
    ) -> DocLoss {
        let total = joint_loss(wsp, mwp, rating, &LossConfig { lambda: obj.lambda });
        DocLoss {
            losses: LossBundle {
                wsp,
                mwp,
                rating,
                total,
            },
            rating_dist,
            no_aspect_fallback,
        }
    }

    /// Zero-shot aspect polarity: average the span's hidden states, apply the
    /// rating head, take the most probable rating and map it to a polarity.
    pub fn predict_aspect_polarity(
        &self,
        vocab: &Vocabulary,
        query: &AspectQuery,
    ) -> Result<Prediction> {
        let input = ModelInput::from_document(&query.document, vocab);
        let hidden = self.encoder.encode(&input.ids, &input.valid)?;
        let span = query.span();
        // +1 for the prepended [CLS].
        let rep = average_rows(&hidden, (span.start + 1)..(span.end + 1));
        let rating_dist = self.rating_head.distribution(&rep);
        let rating = argmax_rating(&rating_dist);
        Ok(Prediction {
            span: [span.start, span.end],
            rating_dist,
            pred_rating: rating.get(),
            polarity: polarity_for(rating),
            no_aspect_fallback: !input.has_aspect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AspectRuleConfig;

    fn tiny(layers: usize) -> (Model, Vocabulary) {
        let vocab = Vocabulary::from_words(["good", "food", "the", "bad", "service"]).unwrap();
        let cfg = EncoderConfig {
            vocab_size: vocab.len(),
            max_len: 10,
            model_dim: 8,
            num_layers: layers,
            num_heads: 2,
            ffn_dim: 8,
            dropout_rate: 0.0,
            seed: 5,
        };
        (Model::init(&cfg).unwrap(), vocab)
    }

    fn doc(words: &[&str], tags: &[&str], rating: Option<i64>) -> Document {
        Document::annotate(
            words.iter().map(|s| s.to_string()).collect(),
            tags.iter().map(|s| s.to_string()).collect(),
            rating.map(|r| Rating::new(r).unwrap()),
            &AspectRuleConfig::default(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn cls_is_prepended_and_never_an_aspect() {
        let (_, vocab) = tiny(1);
        let input =
            ModelInput::from_document(&doc(&["good", "food"], &["ADJ", "NOUN"], Some(4)), &vocab);
        assert_eq!(input.ids[0], Vocabulary::CLS);
        assert_eq!(input.aspect_mask, vec![false, false, true]);
    }

    #[test]
    fn attention_zero_off_support() {
        let (model, vocab) = tiny(2);
        let input = ModelInput::from_document(
            &doc(
                &["good", "food", "bad", "service"],
                &["ADJ", "NOUN", "ADJ", "NOUN"],
                Some(3),
            ),
            &vocab,
        );
        let view = model.view(&input, &ObjectiveConfig::default()).unwrap();
        let alpha = view.attention.unwrap().alpha;
        assert_eq!(alpha[0], 0.0);
        assert_eq!(alpha[1], 0.0);
        assert_eq!(alpha[3], 0.0);
        assert!((alpha[2] + alpha[4] - 1.0).abs() < 1e-12);
        assert!(!view.no_aspect_fallback);
    }

    #[test]
    fn no_aspect_document_falls_back_to_all_tokens() {
        let (model, vocab) = tiny(1);
        let input =
            ModelInput::from_document(&doc(&["good", "the"], &["ADJ", "DET"], Some(4)), &vocab);
        let view = model.view(&input, &ObjectiveConfig::default()).unwrap();
        assert!(view.no_aspect_fallback);
        let alpha = view.attention.unwrap().alpha;
        assert!(alpha.iter().all(|a| *a > 0.0));
        let out = model
            .loss(&input, None, &ObjectiveConfig::default(), None, None)
            .unwrap();
        assert!(out.no_aspect_fallback);
    }

    #[test]
    fn without_pos_mask_non_nouns_get_weight() {
        let (model, vocab) = tiny(1);
        let input =
            ModelInput::from_document(&doc(&["good", "food"], &["ADJ", "NOUN"], Some(4)), &vocab);
        let obj = ObjectiveConfig {
            use_pos_mask: false,
            ..ObjectiveConfig::default()
        };
        let w = model.view(&input, &obj).unwrap().attention.unwrap();
        assert!(w.alpha[1] > 0.0);
        assert_eq!(
            w.raw,
            w.masked.iter().map(|m| m.unwrap()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn single_token_span_uses_that_row() {
        let (model, vocab) = tiny(2);
        let d = doc(&["good", "food", "the"], &["ADJ", "NOUN", "DET"], None);
        let q = AspectQuery::new(d.clone(), 1..2).unwrap();
        let p = model.predict_aspect_polarity(&vocab, &q).unwrap();
        let input = ModelInput::from_document(&d, &vocab);
        let h = model.encoder.encode(&input.ids, &input.valid).unwrap();
        assert_eq!(p.rating_dist, model.rating_head.distribution(h.row(2)));
        assert_eq!(p.span, [1, 2]);
    }

    #[test]
    fn zero_layer_prediction_ignores_other_tokens() {
        let (model, vocab) = tiny(0);
        let a = doc(&["good", "food", "the"], &["ADJ", "NOUN", "DET"], None);
        let b = doc(&["bad", "food", "service"], &["ADJ", "NOUN", "NOUN"], None);
        let pa = model
            .predict_aspect_polarity(&vocab, &AspectQuery::new(a, 1..2).unwrap())
            .unwrap();
        let pb = model
            .predict_aspect_polarity(&vocab, &AspectQuery::new(b, 1..2).unwrap())
            .unwrap();
        assert_eq!(pa.rating_dist, pb.rating_dist);
    }

    #[test]
    fn ablated_terms_are_zero() {
        let (model, vocab) = tiny(1);
        let mut d = doc(&["good", "food"], &["ADJ", "NOUN"], Some(4));
        d.tokens[0].lex = Some(LexPolarity::Positive);
        let input = ModelInput::from_document(&d, &vocab);
        let mut masked = MaskedBatch::identity(&input.ids);
        masked.flags[2] = true;
        masked.originals[2] = Some(input.ids[2]);
        masked.ids[2] = Vocabulary::MASK;
        let obj = ObjectiveConfig {
            use_wsp: false,
            use_mwp: false,
            ..ObjectiveConfig::default()
        };
        let out = model.loss(&input, Some(&masked), &obj, None, None).unwrap();
        assert_eq!(out.losses.wsp, 0.0);
        assert_eq!(out.losses.mwp, 0.0);
        assert_eq!(out.losses.total, out.losses.rating);
    }
}
