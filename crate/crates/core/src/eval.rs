//! Zero-shot aspect polarity evaluation, ablations and pooling comparisons.

use serde::{Deserialize, Serialize};

use crate::composition::Pooling;
use crate::corpus::{Document, LabeledQuery, PolarityLabel, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{Model, Prediction};
use crate::trainer::{train, TrainConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Rows are gold, columns predicted, both in POS, NEG, NEU order.
pub type Confusion = [[usize; 3]; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: [ClassMetrics; 3],
    pub confusion: Confusion,
    pub num_queries: usize,
    pub no_aspect_fallbacks: usize,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Accuracy, per-class P/R/F1 and macro-F1. A zero denominator yields 0.
pub fn metrics_from_confusion(confusion: &Confusion) -> EvalResult {
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..3).map(|k| confusion[k][k]).sum();
    let mut per_class = [ClassMetrics::default(); 3];
    for (k, m) in per_class.iter_mut().enumerate() {
        let tp = confusion[k][k] as f64;
        let predicted: usize = (0..3).map(|g| confusion[g][k]).sum();
        let support: usize = confusion[k].iter().sum();
        let precision = ratio(tp, predicted as f64);
        let recall = ratio(tp, support as f64);
        *m = ClassMetrics {
            precision,
            recall,
            f1: ratio(2.0 * precision * recall, precision + recall),
            support,
        };
    }
    EvalResult {
        accuracy: ratio(correct as f64, total as f64),
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / 3.0,
        per_class,
        confusion: *confusion,
        num_queries: total,
        no_aspect_fallbacks: 0,
    }
}

pub fn confusion_from_pairs<I>(pairs: I) -> Confusion
where
    I: IntoIterator<Item = (PolarityLabel, PolarityLabel)>,
{
    let mut c = [[0; 3]; 3];
    for (gold, pred) in pairs {
        c[gold.index()][pred.index()] += 1;
    }
    c
}

/// Predicts every query and scores against gold labels.
pub fn evaluate(
    model: &Model,
    vocab: &Vocabulary,
    queries: &[LabeledQuery],
) -> Result<(EvalResult, Vec<Prediction>)> {
    if queries.is_empty() {
        return Err(Error::InvalidInput("evaluation set is empty".into()));
    }
    let predictions = queries
        .iter()
        .map(|q| model.predict_aspect_polarity(vocab, &q.query))
        .collect::<Result<Vec<_>>>()?;
    let confusion = confusion_from_pairs(
        queries
            .iter()
            .zip(&predictions)
            .map(|(q, p)| (q.gold, p.polarity)),
    );
    let mut result = metrics_from_confusion(&confusion);
    result.no_aspect_fallbacks = predictions.iter().filter(|p| p.no_aspect_fallback).count();
    Ok((result, predictions))
}

/// Objective ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoWsp,
    NoMwp,
    NoPosMask,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoWsp,
        Variant::NoMwp,
        Variant::NoPosMask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoWsp => "-wsp",
            Variant::NoMwp => "-mwp",
            Variant::NoPosMask => "-pos_mask",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == name || v.name().trim_start_matches('-') == name)
            .ok_or_else(|| Error::Config(format!("unknown variant {name:?}")))
    }

    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoWsp => cfg.use_wsp = false,
            Variant::NoMwp => cfg.use_mwp = false,
            Variant::NoPosMask => cfg.use_pos_mask = false,
        }
        cfg
    }
}

/// One configuration evaluated across several seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub label: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<EvalResult>,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
}

impl SeedReport {
    pub fn from_runs(label: impl Into<String>, seeds: Vec<u64>, runs: Vec<EvalResult>) -> Self {
        let n = runs.len().max(1) as f64;
        SeedReport {
            label: label.into(),
            mean_accuracy: runs.iter().map(|r| r.accuracy).sum::<f64>() / n,
            mean_macro_f1: runs.iter().map(|r| r.macro_f1).sum::<f64>() / n,
            seeds,
            runs,
        }
    }
}

/// Trains `config` once per seed and evaluates each model on `queries`.
pub fn run_seeds(
    label: &str,
    corpus: &[Document],
    queries: &[LabeledQuery],
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<SeedReport> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = TrainConfig {
            seed,
            ..config.clone()
        };
        let (state, _) = train(corpus, cfg)?;
        let (result, _) = evaluate(&state.model, &state.vocab, queries)?;
        log::info!(
            "{label} seed {seed}: accuracy {:.4} macro-F1 {:.4}",
            result.accuracy,
            result.macro_f1
        );
        runs.push(result);
    }
    Ok(SeedReport::from_runs(label, seeds.to_vec(), runs))
}

pub fn run_ablation(
    corpus: &[Document],
    queries: &[LabeledQuery],
    base: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<Vec<SeedReport>> {
    variants
        .iter()
        .map(|v| run_seeds(v.name(), corpus, queries, &v.apply(base), seeds))
        .collect()
}

/// Trains one model per pooling strategy; all are scored with the same
/// span-average zero-shot procedure.
pub fn compare_poolers(
    corpus: &[Document],
    queries: &[LabeledQuery],
    base: &TrainConfig,
    poolers: &[Pooling],
    seeds: &[u64],
) -> Result<Vec<SeedReport>> {
    poolers
        .iter()
        .map(|&p| {
            let cfg = TrainConfig {
                pooling: p,
                ..base.clone()
            };
            run_seeds(p.name(), corpus, queries, &cfg, seeds)
        })
        .collect()
}

/// Trains on a source-domain corpus and evaluates on target-domain queries.
pub fn cross_domain(
    source: &[Document],
    target: &[LabeledQuery],
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<SeedReport> {
    run_seeds("cross_domain", source, target, config, seeds)
}

/// Results file written next to every experiment's outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultsFile {
    pub config_hash: String,
    pub config: TrainConfig,
    pub reports: Vec<SeedReport>,
}

impl ResultsFile {
    pub fn new(config: &TrainConfig, reports: Vec<SeedReport>) -> Self {
        ResultsFile {
            config_hash: config.hash(),
            config: config.clone(),
            reports,
        }
    }
}

/// Plain-text table: one row per report.
pub fn format_table(reports: &[SeedReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.label.len())
        .max()
        .unwrap_or(0)
        .max(7);
    let mut out = format!(
        "{:<width$}  {:>8}  {:>8}  {:>5}\n",
        "variant", "accuracy", "macro_f1", "seeds"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<width$}  {:>8.4}  {:>8.4}  {:>5}\n",
            r.label,
            r.mean_accuracy,
            r.mean_macro_f1,
            r.seeds.len()
        ));
    }
    out
}
