//! Synthetic review generator whose ratings are an exact function of the
//! aspect polarities it plants: `rating = clip(3 + #pos - #neg, 1, 5)`.
//!
//! A document is a shuffled concatenation of clauses
//! `<polarity-word> <aspect-noun> <filler…>`; neutral aspects carry no
//! polarity word. Fillers come from a fixed vocabulary disjoint from the
//! lexicon and from every aspect list.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    AspectQuery, AspectRuleConfig, Document, LabeledQuery, Lexicon, PolarityLabel, Rating,
};
use crate::error::{Error, Result};

const POSITIVE_WORDS: &[&str] = &[
    "good",
    "great",
    "nice",
    "excellent",
    "delicious",
    "friendly",
    "amazing",
    "superb",
    "lovely",
    "fantastic",
];

const NEGATIVE_WORDS: &[&str] = &[
    "bad", "terrible", "awful", "rude", "horrible", "poor", "bland", "dirty", "heedless", "slow",
];

const RESTAURANT_ASPECTS: &[&str] = &[
    "food", "service", "staff", "price", "ambiance", "menu", "drinks", "dessert", "waiter",
    "decor", "music", "location",
];

const ELECTRONICS_ASPECTS: &[&str] = &[
    "battery", "screen", "keyboard", "speaker", "camera", "charger", "trackpad", "software",
    "case", "memory", "fan", "webcam",
];

const FILLERS: &[(&str, &str)] = &[
    ("the", "DET"),
    ("was", "AUX"),
    ("is", "AUX"),
    ("and", "CCONJ"),
    ("we", "PRON"),
    ("it", "PRON"),
    ("they", "PRON"),
    ("then", "ADV"),
    ("also", "ADV"),
    ("here", "ADV"),
    ("of", "ADP"),
    ("at", "ADP"),
    ("to", "PART"),
    ("seemed", "VERB"),
    ("came", "VERB"),
];

const MAX_FILLERS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Restaurant,
    Electronics,
}

impl Domain {
    pub fn aspects(self) -> &'static [&'static str] {
        match self {
            Domain::Restaurant => RESTAURANT_ASPECTS,
            Domain::Electronics => ELECTRONICS_ASPECTS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_docs: usize,
    pub num_queries: usize,
    pub min_aspects: usize,
    pub max_aspects: usize,
    pub domain: Domain,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_docs: 5000,
            num_queries: 1000,
            min_aspects: 1,
            max_aspects: 3,
            domain: Domain::Restaurant,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.min_aspects < 1 || self.max_aspects > 3 || self.min_aspects > self.max_aspects {
            return Err(Error::Config(format!(
                "aspects per document {}..={} must lie within 1..=3",
                self.min_aspects, self.max_aspects
            )));
        }
        Ok(())
    }
}

/// A generated document with the planted aspects and their polarities.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDoc {
    pub document: Document,
    pub aspects: Vec<(Range<usize>, PolarityLabel)>,
}

impl SyntheticDoc {
    pub fn queries(&self) -> impl Iterator<Item = LabeledQuery> + '_ {
        self.aspects.iter().map(|(span, gold)| LabeledQuery {
            query: AspectQuery::new(self.document.clone(), span.clone())
                .expect("generator emits valid spans"),
            gold: *gold,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub train: Vec<SyntheticDoc>,
    pub heldout: Vec<LabeledQuery>,
    pub lexicon: Lexicon,
}

impl SyntheticCorpus {
    pub fn documents(&self) -> Vec<Document> {
        self.train.iter().map(|d| d.document.clone()).collect()
    }
}

/// Lexicon covering the generator's polarity words.
pub fn synthetic_lexicon() -> Lexicon {
    Lexicon::from_lists(POSITIVE_WORDS, NEGATIVE_WORDS)
}

const TRAIN_STREAM: u64 = 1;
const HELDOUT_STREAM: u64 = 2;
const MIXED_STREAM: u64 = 3;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn generate_synthetic_corpus(cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let lexicon = synthetic_lexicon();
    let rules = AspectRuleConfig::default();

    let mut rng = stream_rng(cfg.seed, TRAIN_STREAM);
    let train = (0..cfg.num_docs)
        .map(|_| {
            let polarities = random_polarities(&mut rng, cfg.min_aspects..=cfg.max_aspects);
            render(&polarities, cfg.domain, &lexicon, &rules, &mut rng)
        })
        .collect();

    let mut rng = stream_rng(cfg.seed, HELDOUT_STREAM);
    let mut heldout = Vec::with_capacity(cfg.num_queries);
    while heldout.len() < cfg.num_queries {
        let polarities = random_polarities(&mut rng, cfg.min_aspects..=cfg.max_aspects);
        let doc = render(&polarities, cfg.domain, &lexicon, &rules, &mut rng);
        heldout.extend(doc.queries().take(cfg.num_queries - heldout.len()));
    }

    Ok(SyntheticCorpus {
        train,
        heldout,
        lexicon,
    })
}

/// Mixed-polarity probe: every document has exactly one positive and one
/// negative aspect (rating 3). Yields one query per aspect.
pub fn generate_mixed_probe(num_docs: usize, domain: Domain, seed: u64) -> Vec<LabeledQuery> {
    let lexicon = synthetic_lexicon();
    let rules = AspectRuleConfig::default();
    let mut rng = stream_rng(seed, MIXED_STREAM);
    let mut out = Vec::with_capacity(2 * num_docs);
    for _ in 0..num_docs {
        let mut polarities = vec![PolarityLabel::Pos, PolarityLabel::Neg];
        polarities.shuffle(&mut rng);
        let doc = render(&polarities, domain, &lexicon, &rules, &mut rng);
        out.extend(doc.queries());
    }
    out
}

fn random_polarities<R: Rng>(
    rng: &mut R,
    range: std::ops::RangeInclusive<usize>,
) -> Vec<PolarityLabel> {
    let k = rng.gen_range(range);
    (0..k)
        .map(|_| PolarityLabel::ALL[rng.gen_range(0..PolarityLabel::ALL.len())])
        .collect()
}

fn rating_for(polarities: &[PolarityLabel]) -> Rating {
    let pos = polarities
        .iter()
        .filter(|p| **p == PolarityLabel::Pos)
        .count() as i64;
    let neg = polarities
        .iter()
        .filter(|p| **p == PolarityLabel::Neg)
        .count() as i64;
    Rating::clamped(3 + pos - neg)
}

fn render<R: Rng>(
    polarities: &[PolarityLabel],
    domain: Domain,
    lexicon: &Lexicon,
    rules: &AspectRuleConfig,
    rng: &mut R,
) -> SyntheticDoc {
    let aspects: Vec<&str> = domain
        .aspects()
        .choose_multiple(rng, polarities.len())
        .copied()
        .collect();
    let mut words = Vec::new();
    let mut tags = Vec::new();
    let mut spans = Vec::with_capacity(polarities.len());
    for (&aspect, &polarity) in aspects.iter().zip(polarities) {
        let opinion = match polarity {
            PolarityLabel::Pos => Some(*POSITIVE_WORDS.choose(rng).expect("non-empty")),
            PolarityLabel::Neg => Some(*NEGATIVE_WORDS.choose(rng).expect("non-empty")),
            PolarityLabel::Neu => None,
        };
        if let Some(w) = opinion {
            words.push(w.to_string());
            tags.push("ADJ".to_string());
        }
        spans.push((words.len()..words.len() + 1, polarity));
        words.push(aspect.to_string());
        tags.push("NOUN".to_string());
        for _ in 0..rng.gen_range(1..=MAX_FILLERS) {
            let (w, t) = FILLERS.choose(rng).expect("non-empty");
            words.push(w.to_string());
            tags.push(t.to_string());
        }
    }
    let document = Document::annotate(
        words,
        tags,
        Some(rating_for(polarities)),
        rules,
        Some(lexicon),
    )
    .expect("generator emits aligned tokens");
    SyntheticDoc {
        document,
        aspects: spans,
    }
}
