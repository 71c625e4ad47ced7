//! Small pre-norm transformer encoder with learned positions and a manual
//! backward pass.
//!
//! Layout of one block:
//! ```text
//! x = x + Dropout(SelfAttn(LN1(x)))
//! x = x + Dropout(W2 · gelu(W1 · LN2(x)))
//! ```
//! The input is `Dropout(LN_emb(tok[id] + pos[i]))`. Padding positions never
//! act as attention keys, so the outputs at valid positions do not depend on
//! padding at all.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::tensor::{
    dot, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, Tensor,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub model_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl EncoderConfig {
    /// Two layers, d=64, four heads, FFN width 128.
    pub fn desk(vocab_size: usize, max_len: usize, seed: u64) -> Self {
        EncoderConfig {
            vocab_size,
            max_len,
            model_dim: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 128,
            dropout_rate: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.max_len == 0 || self.model_dim == 0 {
            return Err(Error::Config(
                "vocab_size, max_len and model_dim must be positive".into(),
            ));
        }
        if self.num_heads == 0 || !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.num_layers > 0 && self.ffn_dim == 0 {
            return Err(Error::Config("ffn_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl EncoderLayer {
    fn init(d: usize, ffn: usize, rng: &mut ChaCha8Rng) -> Self {
        EncoderLayer {
            ln1_gain: Tensor::filled(&[d], 1.0),
            ln1_bias: Tensor::zeros(&[d]),
            wq: Tensor::glorot(&[d, d], d, d, rng),
            bq: Tensor::zeros(&[d]),
            wk: Tensor::glorot(&[d, d], d, d, rng),
            bk: Tensor::zeros(&[d]),
            wv: Tensor::glorot(&[d, d], d, d, rng),
            bv: Tensor::zeros(&[d]),
            wo: Tensor::glorot(&[d, d], d, d, rng),
            bo: Tensor::zeros(&[d]),
            ln2_gain: Tensor::filled(&[d], 1.0),
            ln2_bias: Tensor::zeros(&[d]),
            w1: Tensor::glorot(&[d, ffn], d, ffn, rng),
            b1: Tensor::zeros(&[ffn]),
            w2: Tensor::glorot(&[ffn, d], ffn, d, rng),
            b2: Tensor::zeros(&[d]),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (name, t) in [
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ] {
            f(&format!("{prefix}.{name}"), t);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (name, t) in [
            ("ln1_gain", &mut self.ln1_gain),
            ("ln1_bias", &mut self.ln1_bias),
            ("wq", &mut self.wq),
            ("bq", &mut self.bq),
            ("wk", &mut self.wk),
            ("bk", &mut self.bk),
            ("wv", &mut self.wv),
            ("bv", &mut self.bv),
            ("wo", &mut self.wo),
            ("bo", &mut self.bo),
            ("ln2_gain", &mut self.ln2_gain),
            ("ln2_bias", &mut self.ln2_bias),
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ] {
            f(&format!("{prefix}.{name}"), t);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub token_embedding: Tensor,
    pub position_embedding: Tensor,
    pub emb_ln_gain: Tensor,
    pub emb_ln_bias: Tensor,
    pub layers: Vec<EncoderLayer>,
}

impl Parameters for Encoder {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("encoder.token_embedding", &self.token_embedding);
        f("encoder.position_embedding", &self.position_embedding);
        f("encoder.emb_ln_gain", &self.emb_ln_gain);
        f("encoder.emb_ln_bias", &self.emb_ln_bias);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&format!("encoder.layers.{i}"), f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("encoder.token_embedding", &mut self.token_embedding);
        f("encoder.position_embedding", &mut self.position_embedding);
        f("encoder.emb_ln_gain", &mut self.emb_ln_gain);
        f("encoder.emb_ln_bias", &mut self.emb_ln_bias);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&format!("encoder.layers.{i}"), f);
        }
    }
}

/// Per-token output vectors plus validity flags (`false` = padding).
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenStates {
    data: Vec<f64>,
    dim: usize,
    valid: Vec<bool>,
}

impl HiddenStates {
    pub fn new(data: Vec<f64>, dim: usize, valid: Vec<bool>) -> Self {
        assert_eq!(data.len(), dim * valid.len());
        HiddenStates { data, dim, valid }
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid[i]
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

struct LayerTrace {
    a: Vec<f64>,
    xhat1: Vec<f64>,
    inv1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `heads × n × n`, zero in padded key columns.
    probs: Vec<f64>,
    ctx: Vec<f64>,
    drop1: Option<Vec<f64>>,
    xhat2: Vec<f64>,
    inv2: Vec<f64>,
    f: Vec<f64>,
    u_pre: Vec<f64>,
    u: Vec<f64>,
    drop2: Option<Vec<f64>>,
}

/// Activations recorded by [`Encoder::forward`] for the backward pass.
pub struct EncoderTrace {
    ids: Vec<usize>,
    valid: Vec<bool>,
    emb_xhat: Vec<f64>,
    emb_inv: Vec<f64>,
    emb_drop: Option<Vec<f64>>,
    layers: Vec<LayerTrace>,
}

fn dropout_mask(len: usize, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some(
        (0..len)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect(),
    )
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (v, k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

impl Encoder {
    /// Deterministic initialisation from `config.seed`: Glorot-uniform
    /// matrices, uniform embeddings, unit layer-norm gains and zero biases.
    pub fn init(config: &EncoderConfig) -> Result<Self> {
        use rand::SeedableRng;
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self::init_with(config, &mut rng))
    }

    pub(crate) fn init_with(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = config.model_dim;
        let emb_limit = (3.0 / d as f64).sqrt();
        let token_embedding = Tensor::uniform(&[config.vocab_size, d], emb_limit, rng);
        let position_embedding = Tensor::uniform(&[config.max_len, d], emb_limit, rng);
        let layers = (0..config.num_layers)
            .map(|_| EncoderLayer::init(d, config.ffn_dim, rng))
            .collect();
        Encoder {
            config: config.clone(),
            token_embedding,
            position_embedding,
            emb_ln_gain: Tensor::filled(&[d], 1.0),
            emb_ln_bias: Tensor::zeros(&[d]),
            layers,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.zero();
        g
    }

    fn check_input(&self, ids: &[usize], valid: &[bool]) -> Result<()> {
        if ids.len() != valid.len() {
            return Err(Error::InvalidInput(format!(
                "{} ids but {} padding flags",
                ids.len(),
                valid.len()
            )));
        }
        if ids.len() > self.config.max_len {
            return Err(Error::LengthOverflow {
                len: ids.len(),
                max_len: self.config.max_len,
            });
        }
        if !valid.iter().any(|v| *v) {
            return Err(Error::InvalidInput(
                "input has no non-padding positions".into(),
            ));
        }
        if let Some(bad) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::InvalidInput(format!(
                "token id {bad} >= vocab_size {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Inference forward pass (no dropout).
    pub fn encode(&self, ids: &[usize], valid: &[bool]) -> Result<HiddenStates> {
        self.forward(ids, valid, None).map(|(h, _)| h)
    }

    /// Forward pass. Dropout is active iff `dropout_rng` is given.
    pub fn forward(
        &self,
        ids: &[usize],
        valid: &[bool],
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(HiddenStates, EncoderTrace)> {
        self.check_input(ids, valid)?;
        let cfg = &self.config;
        let n = ids.len();
        let d = cfg.model_dim;
        let rate = cfg.dropout_rate;

        let mut e = Vec::with_capacity(n * d);
        for (i, &id) in ids.iter().enumerate() {
            e.extend(
                self.token_embedding
                    .row(id)
                    .iter()
                    .zip(self.position_embedding.row(i))
                    .map(|(a, b)| a + b),
            );
        }
        let (mut x, emb_xhat, emb_inv) =
            layer_norm(&e, self.emb_ln_gain.data(), self.emb_ln_bias.data(), n, d);
        let emb_drop = dropout_mask(n * d, rate, dropout_rng.as_deref_mut());
        apply_mask(&mut x, &emb_drop);

        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, trace) = self.layer_forward(layer, &x, valid, dropout_rng.as_deref_mut());
            x = next;
            traces.push(trace);
        }

        let trace = EncoderTrace {
            ids: ids.to_vec(),
            valid: valid.to_vec(),
            emb_xhat,
            emb_inv,
            emb_drop,
            layers: traces,
        };
        Ok((HiddenStates::new(x, d, valid.to_vec()), trace))
    }

    fn layer_forward(
        &self,
        layer: &EncoderLayer,
        x_in: &[f64],
        valid: &[bool],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Vec<f64>, LayerTrace) {
        let cfg = &self.config;
        let n = valid.len();
        let d = cfg.model_dim;
        let heads = cfg.num_heads;
        let dh = cfg.head_dim();
        let ffn = cfg.ffn_dim;
        let scale = 1.0 / (dh as f64).sqrt();

        let (a, xhat1, inv1) = layer_norm(x_in, layer.ln1_gain.data(), layer.ln1_bias.data(), n, d);
        let q = linear(&a, layer.wq.data(), layer.bq.data(), n, d, d);
        let k = linear(&a, layer.wk.data(), layer.bk.data(), n, d, d);
        let v = linear(&a, layer.wv.data(), layer.bv.data(), n, d, d);

        let mut probs = vec![0.0; heads * n * n];
        let mut ctx = vec![0.0; n * d];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let qi = &q[i * d + off..i * d + off + dh];
                let row = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
                let mut max = f64::NEG_INFINITY;
                for j in (0..n).filter(|&j| valid[j]) {
                    let s = dot(qi, &k[j * d + off..j * d + off + dh]) * scale;
                    row[j] = s;
                    max = max.max(s);
                }
                let mut sum = 0.0;
                for j in (0..n).filter(|&j| valid[j]) {
                    row[j] = (row[j] - max).exp();
                    sum += row[j];
                }
                let ci = &mut ctx[i * d + off..i * d + off + dh];
                for j in (0..n).filter(|&j| valid[j]) {
                    row[j] /= sum;
                    let p = row[j];
                    for (c, vj) in ci.iter_mut().zip(&v[j * d + off..j * d + off + dh]) {
                        *c += p * vj;
                    }
                }
            }
        }

        let mut o = linear(&ctx, layer.wo.data(), layer.bo.data(), n, d, d);
        let drop1 = dropout_mask(n * d, cfg.dropout_rate, rng.as_deref_mut());
        apply_mask(&mut o, &drop1);
        let x_mid: Vec<f64> = x_in.iter().zip(&o).map(|(a, b)| a + b).collect();

        let (f, xhat2, inv2) =
            layer_norm(&x_mid, layer.ln2_gain.data(), layer.ln2_bias.data(), n, d);
        let u_pre = linear(&f, layer.w1.data(), layer.b1.data(), n, d, ffn);
        let u: Vec<f64> = u_pre.iter().map(|&z| gelu(z)).collect();
        let mut y = linear(&u, layer.w2.data(), layer.b2.data(), n, ffn, d);
        let drop2 = dropout_mask(n * d, cfg.dropout_rate, rng);
        apply_mask(&mut y, &drop2);
        let x_out = x_mid.iter().zip(&y).map(|(a, b)| a + b).collect();

        (
            x_out,
            LayerTrace {
                a,
                xhat1,
                inv1,
                q,
                k,
                v,
                probs,
                ctx,
                drop1,
                xhat2,
                inv2,
                f,
                u_pre,
                u,
                drop2,
            },
        )
    }

    /// Accumulates parameter gradients into `grads` given the gradient of the
    /// loss w.r.t. the hidden states (`n × d`, row-major).
    pub fn backward(
        &self,
        trace: &EncoderTrace,
        d_hidden: &[f64],
        grads: &mut Encoder,
    ) -> Result<()> {
        if d_hidden.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                step: 0,
                detail: "non-finite upstream gradient".into(),
            });
        }
        let n = trace.ids.len();
        let d = self.config.model_dim;
        let mut dx = d_hidden.to_vec();
        for (layer, (lt, lg)) in self
            .layers
            .iter()
            .zip(trace.layers.iter().zip(grads.layers.iter_mut()))
            .rev()
        {
            dx = self.layer_backward(layer, lt, &trace.valid, &dx, lg);
        }

        apply_mask(&mut dx, &trace.emb_drop);
        let mut de = vec![0.0; n * d];
        layer_norm_backward(
            &dx,
            &trace.emb_xhat,
            &trace.emb_inv,
            self.emb_ln_gain.data(),
            n,
            d,
            &mut de,
            grads.emb_ln_gain.data_mut(),
            grads.emb_ln_bias.data_mut(),
        );
        for (i, &id) in trace.ids.iter().enumerate() {
            let dei = &de[i * d..(i + 1) * d];
            for (g, v) in grads.token_embedding.row_mut(id).iter_mut().zip(dei) {
                *g += v;
            }
            for (g, v) in grads.position_embedding.row_mut(i).iter_mut().zip(dei) {
                *g += v;
            }
        }
        Ok(())
    }

    fn layer_backward(
        &self,
        layer: &EncoderLayer,
        t: &LayerTrace,
        valid: &[bool],
        dx_out: &[f64],
        g: &mut EncoderLayer,
    ) -> Vec<f64> {
        let cfg = &self.config;
        let n = valid.len();
        let d = cfg.model_dim;
        let heads = cfg.num_heads;
        let dh = cfg.head_dim();
        let ffn = cfg.ffn_dim;
        let scale = 1.0 / (dh as f64).sqrt();

        // Feed-forward sub-block.
        let mut dx_mid = dx_out.to_vec();
        let mut dy = dx_out.to_vec();
        apply_mask(&mut dy, &t.drop2);
        let mut du = vec![0.0; n * ffn];
        linear_backward(
            &t.u,
            layer.w2.data(),
            &dy,
            n,
            ffn,
            d,
            &mut du,
            g.w2.data_mut(),
            g.b2.data_mut(),
        );
        for (gu, &z) in du.iter_mut().zip(&t.u_pre) {
            *gu *= gelu_grad(z);
        }
        let mut df = vec![0.0; n * d];
        linear_backward(
            &t.f,
            layer.w1.data(),
            &du,
            n,
            d,
            ffn,
            &mut df,
            g.w1.data_mut(),
            g.b1.data_mut(),
        );
        layer_norm_backward(
            &df,
            &t.xhat2,
            &t.inv2,
            layer.ln2_gain.data(),
            n,
            d,
            &mut dx_mid,
            g.ln2_gain.data_mut(),
            g.ln2_bias.data_mut(),
        );

        // Attention sub-block.
        let mut dx_in = dx_mid.clone();
        let mut d_o = dx_mid;
        apply_mask(&mut d_o, &t.drop1);
        let mut dctx = vec![0.0; n * d];
        linear_backward(
            &t.ctx,
            layer.wo.data(),
            &d_o,
            n,
            d,
            d,
            &mut dctx,
            g.wo.data_mut(),
            g.bo.data_mut(),
        );

        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut dp = vec![0.0; n];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let p = &t.probs[(h * n + i) * n..(h * n + i + 1) * n];
                let dci = &dctx[i * d + off..i * d + off + dh];
                let mut weighted = 0.0;
                for j in (0..n).filter(|&j| valid[j]) {
                    let vj = &t.v[j * d + off..j * d + off + dh];
                    dp[j] = dot(dci, vj);
                    weighted += p[j] * dp[j];
                    for (gv, c) in dv[j * d + off..j * d + off + dh].iter_mut().zip(dci) {
                        *gv += p[j] * c;
                    }
                }
                let qi = &t.q[i * d + off..i * d + off + dh];
                for j in (0..n).filter(|&j| valid[j]) {
                    let ds = p[j] * (dp[j] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &t.k[j * d + off..j * d + off + dh];
                    for (gq, kv) in dq[i * d + off..i * d + off + dh].iter_mut().zip(kj) {
                        *gq += ds * kv;
                    }
                    for (gk, qv) in dk[j * d + off..j * d + off + dh].iter_mut().zip(qi) {
                        *gk += ds * qv;
                    }
                }
            }
        }

        let mut da = vec![0.0; n * d];
        linear_backward(
            &t.a,
            layer.wq.data(),
            &dq,
            n,
            d,
            d,
            &mut da,
            g.wq.data_mut(),
            g.bq.data_mut(),
        );
        linear_backward(
            &t.a,
            layer.wk.data(),
            &dk,
            n,
            d,
            d,
            &mut da,
            g.wk.data_mut(),
            g.bk.data_mut(),
        );
        linear_backward(
            &t.a,
            layer.wv.data(),
            &dv,
            n,
            d,
            d,
            &mut da,
            g.wv.data_mut(),
            g.bv.data_mut(),
        );
        layer_norm_backward(
            &da,
            &t.xhat1,
            &t.inv1,
            layer.ln1_gain.data(),
            n,
            d,
            &mut dx_in,
            g.ln1_gain.data_mut(),
            g.ln1_bias.data_mut(),
        );
        dx_in
    }

    /// Attention probabilities of `layer`, head `head` (`n × n`), for probing.
    pub fn attention_probs(trace: &EncoderTrace, layer: usize, head: usize) -> Vec<Vec<f64>> {
        let n = trace.ids.len();
        let lt = &trace.layers[layer];
        (0..n)
            .map(|i| lt.probs[(head * n + i) * n..(head * n + i + 1) * n].to_vec())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(layers: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size: 12,
            max_len: 8,
            model_dim: 8,
            num_layers: layers,
            num_heads: 2,
            ffn_dim: 16,
            dropout_rate: 0.1,
            seed: 42,
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Encoder::init(&cfg(2)).unwrap();
        let b = Encoder::init(&cfg(2)).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        let c = Encoder::init(&EncoderConfig { seed: 43, ..cfg(2) }).unwrap();
        assert_ne!(a.flatten(), c.flatten());
    }

    #[test]
    fn heads_must_divide_dim() {
        let bad = EncoderConfig {
            num_heads: 3,
            ..cfg(1)
        };
        assert!(matches!(Encoder::init(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn layer_norm_init_values() {
        let e = Encoder::init(&cfg(1)).unwrap();
        assert!(e.emb_ln_gain.data().iter().all(|&v| v == 1.0));
        assert!(e.layers[0].ln2_bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_layers_is_embedding_layer_norm() {
        let e = Encoder::init(&cfg(0)).unwrap();
        let ids = [4, 7, 5];
        let h = e.encode(&ids, &[true; 3]).unwrap();
        let d = 8;
        let mut sum = Vec::new();
        for (i, &id) in ids.iter().enumerate() {
            for j in 0..d {
                sum.push(e.token_embedding.row(id)[j] + e.position_embedding.row(i)[j]);
            }
        }
        let (expected, _, _) = layer_norm(&sum, &[1.0; 8], &[0.0; 8], 3, d);
        assert_eq!(h.as_slice(), &expected[..]);
    }

    #[test]
    fn single_token_attends_to_itself() {
        let e = Encoder::init(&cfg(1)).unwrap();
        let (_, trace) = e.forward(&[5], &[true], None).unwrap();
        for head in 0..2 {
            assert_eq!(Encoder::attention_probs(&trace, 0, head), vec![vec![1.0]]);
        }
    }

    #[test]
    fn appending_padding_leaves_outputs_unchanged() {
        let e = Encoder::init(&cfg(2)).unwrap();
        let base = e.encode(&[4, 6, 9], &[true; 3]).unwrap();
        let padded = e
            .encode(&[4, 6, 9, 0, 0], &[true, true, true, false, false])
            .unwrap();
        for i in 0..3 {
            assert_eq!(base.row(i), padded.row(i));
        }
        assert!(!padded.is_valid(3));
    }

    #[test]
    fn permuting_padding_leaves_outputs_unchanged() {
        let e = Encoder::init(&cfg(2)).unwrap();
        let valid = [true, false, true, false];
        let a = e.encode(&[4, 0, 6, 2], &valid).unwrap();
        let b = e.encode(&[4, 2, 6, 0], &valid).unwrap();
        assert_eq!(a.row(0), b.row(0));
        assert_eq!(a.row(2), b.row(2));
    }

    #[test]
    fn length_overflow_rejected() {
        let e = Encoder::init(&cfg(1)).unwrap();
        let ids = vec![4; 9];
        assert!(matches!(
            e.encode(&ids, &[true; 9]),
            Err(Error::LengthOverflow { len: 9, max_len: 8 })
        ));
    }

    #[test]
    fn eval_mode_is_deterministic_train_mode_is_not() {
        use rand::SeedableRng;
        let e = Encoder::init(&cfg(2)).unwrap();
        let ids = [4, 5, 6, 7];
        let a = e.encode(&ids, &[true; 4]).unwrap();
        let b = e.encode(&ids, &[true; 4]).unwrap();
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, _) = e.forward(&ids, &[true; 4], Some(&mut rng)).unwrap();
        assert_ne!(a, c);
    }
}
