//! Optimisation loop: Adam with linear warmup then linear decay, global-norm
//! gradient clipping, and exactly resumable checkpoints.
//!
//! All randomness is derived from `(seed, purpose, index)`: the epoch shuffle
//! from the epoch number and the masking/dropout stream from the global step.
//! A run is therefore a pure function of corpus order, config and seed, and
//! resuming from a checkpoint only needs the step counter.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::composition::Pooling;
use crate::corpus::{build_vocab, AspectRuleConfig, Document, Vocabulary};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::masking::{corrupt, select_with_rates, LossBundle, MaskPolicy, MwpScope};
use crate::model::{Model, ModelInput, ObjectiveConfig};
use crate::params::Parameters;

/// Encoder hyper-parameters that do not depend on the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelShape {
    pub max_len: usize,
    pub model_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub dropout_rate: f64,
}

impl Default for ModelShape {
    fn default() -> Self {
        let desk = EncoderConfig::desk(0, 64, 0);
        ModelShape {
            max_len: desk.max_len,
            model_dim: desk.model_dim,
            num_layers: desk.num_layers,
            num_heads: desk.num_heads,
            ffn_dim: desk.ffn_dim,
            dropout_rate: desk.dropout_rate,
        }
    }
}

impl ModelShape {
    pub fn encoder_config(&self, vocab_size: usize, seed: u64) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            max_len: self.max_len,
            model_dim: self.model_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            dropout_rate: self.dropout_rate,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub max_grad_norm: f64,
    pub epochs: usize,
    pub seed: u64,
    pub lambda: f64,
    pub use_wsp: bool,
    pub use_mwp: bool,
    pub use_pos_mask: bool,
    pub pooling: Pooling,
    pub mwp_scope: MwpScope,
    pub mask_policy: MaskPolicy,
    pub model: ModelShape,
    pub adam: AdamConfig,
    pub min_count: usize,
    pub aspect_rules: AspectRuleConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

impl TrainConfig {
    /// Toy-model defaults that train in minutes on one CPU core.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-3,
            warmup_ratio: 0.1,
            max_grad_norm: 1.0,
            epochs: 6,
            seed: 0,
            lambda: 0.01,
            use_wsp: true,
            use_mwp: true,
            use_pos_mask: true,
            pooling: Pooling::PosAttention,
            mwp_scope: MwpScope::Masked,
            mask_policy: MaskPolicy::default(),
            model: ModelShape::default(),
            adam: AdamConfig::default(),
            min_count: 1,
            aspect_rules: AspectRuleConfig::default(),
        }
    }

    /// Full-scale optimiser settings (batch 32, lr 2e-5, warmup 0.1,
    /// clip 1.0), two epochs.
    pub fn paper() -> Self {
        TrainConfig {
            learning_rate: 2e-5,
            epochs: 2,
            ..TrainConfig::desk()
        }
    }

    /// Like [`paper`](Self::paper) with three epochs.
    pub fn paper_three_epochs() -> Self {
        TrainConfig {
            epochs: 3,
            ..TrainConfig::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper-2ep" | "yelp" => Ok(Self::paper()),
            "paper-3ep" | "electronics" => Ok(Self::paper_three_epochs()),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config(format!(
                "warmup_ratio {} outside [0, 1]",
                self.warmup_ratio
            )));
        }
        if self.learning_rate.is_nan()
            || self.learning_rate < 0.0
            || self.max_grad_norm.is_nan()
            || self.max_grad_norm <= 0.0
        {
            return Err(Error::Config(
                "learning_rate must be >= 0 and max_grad_norm > 0".into(),
            ));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda {} must be >= 0",
                self.lambda
            )));
        }
        if self.min_count == 0 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        self.mask_policy.validate()?;
        self.model.encoder_config(1, self.seed).validate()
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            pooling: self.pooling,
            use_pos_mask: self.use_pos_mask,
            use_wsp: self.use_wsp,
            use_mwp: self.use_mwp,
            lambda: self.lambda,
            mwp_scope: self.mwp_scope,
        }
    }

    /// Short stable digest of the serialized config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

/// Linear warmup from 0 to `learning_rate` over `warmup_ratio · total`
/// steps, then linear decay to 0 at `total`.
pub fn lr_schedule(step: u64, total_steps: u64, cfg: &TrainConfig) -> f64 {
    let lr = cfg.learning_rate;
    if step >= total_steps {
        return 0.0;
    }
    let warmup = (cfg.warmup_ratio * total_steps as f64).floor() as u64;
    if step < warmup {
        lr * step as f64 / warmup as f64
    } else {
        lr * (total_steps - step) as f64 / (total_steps - warmup) as f64
    }
}

/// Rescales `grads` so the global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_gradients<P: Parameters>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Adam moments, flattened in parameter visiting order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    /// One bias-corrected Adam update; `t` is the 1-based update count.
    pub fn update<P: Parameters>(
        &mut self,
        params: &mut P,
        grads: &P,
        lr: f64,
        t: u64,
        cfg: &AdamConfig,
    ) {
        let g = grads.flatten();
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        let mut offset = 0;
        let (m, v) = (&mut self.m, &mut self.v);
        params.visit_mut(&mut |_, tensor| {
            for (k, p) in tensor.data_mut().iter_mut().enumerate() {
                let i = offset + k;
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
            offset += tensor.len();
        });
    }
}

/// Everything needed to continue a run bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub model: Model,
    pub optimizer: AdamState,
    /// Number of updates applied so far.
    pub step: u64,
    pub total_steps: u64,
    /// Root of every derived random stream.
    pub rng_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub wsp: f64,
    pub mwp: f64,
    pub rating: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean: LossBundle,
    pub no_aspect_fallbacks: usize,
}

const EPOCH_STREAM: u64 = 0x0100_0000_0000;
const STEP_STREAM: u64 = 0x0200_0000_0000;

fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub struct Trainer {
    state: TrainState,
    inputs: Vec<ModelInput>,
    mask_rates: Vec<Vec<f64>>,
    order: Option<(usize, Vec<usize>)>,
    grads: Model,
    log: Vec<StepRecord>,
    epoch_acc: (LossBundle, usize, usize),
    epochs: Vec<EpochMetrics>,
}

impl Trainer {
    /// Builds the vocabulary and a freshly initialised model.
    pub fn new(corpus: &[Document], config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(Error::InvalidInput("training corpus is empty".into()));
        }
        let vocab = build_vocab(corpus, config.min_count)?;
        let model = Model::init(&config.model.encoder_config(vocab.len(), config.seed))?;
        let steps_per_epoch = corpus.len().div_ceil(config.batch_size) as u64;
        let state = TrainState {
            optimizer: AdamState::new(model.num_parameters()),
            total_steps: steps_per_epoch * config.epochs as u64,
            rng_seed: config.seed,
            step: 0,
            vocab,
            model,
            config,
        };
        Self::from_state(corpus, state)
    }

    /// Continues a run from a saved state over the same corpus.
    pub fn from_state(corpus: &[Document], state: TrainState) -> Result<Self> {
        state.config.validate()?;
        let expected =
            corpus.len().div_ceil(state.config.batch_size) as u64 * state.config.epochs as u64;
        if expected != state.total_steps {
            return Err(Error::InvalidInput(format!(
                "corpus of {} documents does not match checkpoint ({} total steps)",
                corpus.len(),
                state.total_steps
            )));
        }
        let inputs: Vec<ModelInput> = corpus
            .iter()
            .map(|d| {
                if d.rating.is_none() {
                    return Err(Error::InvalidInput(
                        "training document without rating".into(),
                    ));
                }
                Ok(ModelInput::from_document(d, &state.vocab))
            })
            .collect::<Result<_>>()?;
        if let Some(long) = inputs.iter().find(|i| i.len() > state.config.model.max_len) {
            return Err(Error::LengthOverflow {
                len: long.len(),
                max_len: state.config.model.max_len,
            });
        }
        let policy = &state.config.mask_policy;
        let mask_rates = inputs
            .iter()
            .map(|inp| {
                inp.pos
                    .iter()
                    .zip(&inp.special)
                    .map(|(tag, &sp)| if sp { 0.0 } else { policy.rate_for(tag) })
                    .collect()
            })
            .collect();
        let grads = state.model.zeros_like();
        Ok(Trainer {
            state,
            inputs,
            mask_rates,
            order: None,
            grads,
            log: Vec::new(),
            epoch_acc: (LossBundle::default(), 0, 0),
            epochs: Vec::new(),
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn log(&self) -> &[StepRecord] {
        &self.log
    }

    pub fn epoch_metrics(&self) -> &[EpochMetrics] {
        &self.epochs
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.inputs.len().div_ceil(self.state.config.batch_size) as u64
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.state.total_steps
    }

    fn epoch_order(&mut self, epoch: usize) -> &[usize] {
        if self.order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut idx: Vec<usize> = (0..self.inputs.len()).collect();
            let mut rng = derived_rng(self.state.rng_seed, EPOCH_STREAM + epoch as u64);
            idx.shuffle(&mut rng);
            self.order = Some((epoch, idx));
        }
        &self.order.as_ref().expect("just set").1
    }

    /// Applies one optimiser update.
    pub fn step(&mut self) -> Result<StepRecord> {
        if self.is_done() {
            return Err(Error::InvalidInput("training already finished".into()));
        }
        let spe = self.steps_per_epoch();
        let step = self.state.step;
        let epoch = (step / spe) as usize;
        let batch_idx = (step % spe) as usize;
        let bs = self.state.config.batch_size;
        let batch: Vec<usize> = {
            let order = self.epoch_order(epoch);
            let end = ((batch_idx + 1) * bs).min(order.len());
            order[batch_idx * bs..end].to_vec()
        };

        let cfg = &self.state.config;
        let obj = cfg.objective();
        let model = &self.state.model;
        let vocab = &self.state.vocab;
        let mut rng = derived_rng(self.state.rng_seed, STEP_STREAM + step);
        let scale = 1.0 / batch.len() as f64;
        self.grads.zero();
        let mut losses = LossBundle::default();
        let mut fallbacks = 0;
        for &i in &batch {
            let input = &self.inputs[i];
            let masked = if cfg.use_mwp {
                let flags = select_with_rates(&self.mask_rates[i], &mut rng);
                Some(corrupt(
                    &input.ids,
                    &flags,
                    &cfg.mask_policy.split,
                    vocab,
                    &mut rng,
                ))
            } else {
                None
            };
            let out = model
                .loss(
                    input,
                    masked.as_ref(),
                    &obj,
                    Some(&mut rng),
                    Some((&mut self.grads, scale)),
                )
                .map_err(|e| match e {
                    Error::Diverged { detail, .. } => Error::Diverged { step, detail },
                    other => other,
                })?;
            losses.add_scaled(&out.losses, scale);
            fallbacks += out.no_aspect_fallback as usize;
        }
        if !losses.is_finite() || !self.grads.all_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!(
                    "loss total={} wsp={} mwp={} rating={}",
                    losses.total, losses.wsp, losses.mwp, losses.rating
                ),
            });
        }

        clip_gradients(&mut self.grads, cfg.max_grad_norm);
        let lr = lr_schedule(step, self.state.total_steps, cfg);
        let adam = cfg.adam;
        self.state
            .optimizer
            .update(&mut self.state.model, &self.grads, lr, step + 1, &adam);
        self.state.step += 1;

        let record = StepRecord {
            step,
            loss: losses.total,
            wsp: losses.wsp,
            mwp: losses.mwp,
            rating: losses.rating,
            lr,
        };
        self.log.push(record);
        log::debug!(
            "step {step} loss {:.4} wsp {:.4} mwp {:.4} rating {:.4} lr {lr:.2e}",
            losses.total,
            losses.wsp,
            losses.mwp,
            losses.rating
        );

        let (acc, n, fb) = &mut self.epoch_acc;
        acc.add_scaled(&losses, 1.0);
        *n += 1;
        *fb += fallbacks;
        if batch_idx as u64 + 1 == spe {
            let mut mean = LossBundle::default();
            mean.add_scaled(acc, 1.0 / *n as f64);
            let m = EpochMetrics {
                epoch,
                mean,
                no_aspect_fallbacks: *fb,
            };
            log::info!(
                "epoch {epoch}: loss {:.4} (wsp {:.4}, mwp {:.4}, rating {:.4})",
                mean.total,
                mean.wsp,
                mean.mwp,
                mean.rating
            );
            self.epochs.push(m);
            self.epoch_acc = (LossBundle::default(), 0, 0);
        }
        Ok(record)
    }

    /// Runs until `step == target` (or the end of training).
    pub fn run_to(&mut self, target: u64) -> Result<()> {
        while self.state.step < target.min(self.state.total_steps) {
            self.step()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_to(self.state.total_steps)
    }
}

/// Trains from scratch to completion.
pub fn train(corpus: &[Document], config: TrainConfig) -> Result<(TrainState, Vec<EpochMetrics>)> {
    let mut trainer = Trainer::new(corpus, config)?;
    trainer.run()?;
    let metrics = trainer.epochs.clone();
    Ok((trainer.into_state(), metrics))
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile<S> {
    format_version: u32,
    state: S,
}

pub fn checkpoint_bytes(state: &TrainState) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec(&CheckpointFile {
        format_version: CHECKPOINT_VERSION,
        state,
    })?)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<TrainState> {
    let raw: CheckpointFile<serde_json::Value> = serde_json::from_slice(bytes)?;
    if raw.format_version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: raw.format_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    Ok(serde_json::from_value(raw.state)?)
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(state)?;
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    std::io::Read::read_to_end(&mut BufReader::new(f), &mut bytes)
        .map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}

/// Writes the per-step log as `step,loss,wsp,mwp,rating,lr`.
pub fn write_metrics_csv(path: &Path, log: &[StepRecord]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    writeln!(f, "step,loss,wsp,mwp,rating,lr").map_err(io)?;
    for r in log {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            r.step, r.loss, r.wsp, r.mwp, r.rating, r.lr
        )
        .map_err(io)?;
    }
    f.flush().map_err(io)
}
