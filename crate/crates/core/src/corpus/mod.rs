//! Documents, aspect queries, lexicon annotation and JSONL ingestion.
//!
//! Tokenisation is whitespace word-level: the token sequence in a corpus line
//! is taken as-is and POS tags align one-to-one with tokens.

mod synth;
mod vocab;

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synth::{
    generate_mixed_probe, generate_synthetic_corpus, synthetic_lexicon, Domain, SynthConfig,
    SyntheticCorpus, SyntheticDoc,
};
pub use vocab::{build_vocab, Vocabulary};

/// POS tag assigned to the prepended classifier token. Never an aspect.
pub const CLS_POS_TAG: &str = "[CLS]";

/// Lexicon polarity of a sentiment word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LexPolarity {
    #[serde(rename = "P")]
    Positive,
    #[serde(rename = "N")]
    Negative,
}

impl LexPolarity {
    /// Class index used by the word-sentiment head.
    pub fn class_index(self) -> usize {
        match self {
            LexPolarity::Positive => 0,
            LexPolarity::Negative => 1,
        }
    }
}

/// Aspect-level sentiment label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolarityLabel {
    #[serde(rename = "POS")]
    Pos,
    #[serde(rename = "NEG")]
    Neg,
    #[serde(rename = "NEU")]
    Neu,
}

impl PolarityLabel {
    pub const ALL: [PolarityLabel; 3] =
        [PolarityLabel::Pos, PolarityLabel::Neg, PolarityLabel::Neu];

    pub fn index(self) -> usize {
        match self {
            PolarityLabel::Pos => 0,
            PolarityLabel::Neg => 1,
            PolarityLabel::Neu => 2,
        }
    }

    /// Ratings below 3 are negative, above 3 positive, exactly 3 neutral.
    pub fn from_rating(rating: Rating) -> Self {
        match rating.get() {
            1 | 2 => PolarityLabel::Neg,
            3 => PolarityLabel::Neu,
            _ => PolarityLabel::Pos,
        }
    }
}

impl fmt::Display for PolarityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolarityLabel::Pos => "POS",
            PolarityLabel::Neg => "NEG",
            PolarityLabel::Neu => "NEU",
        })
    }
}

/// Star rating in `1..=5`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct Rating(u8);

impl Rating {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 5;
    pub const COUNT: usize = 5;

    pub fn new(value: i64) -> Result<Self> {
        if (Self::MIN as i64..=Self::MAX as i64).contains(&value) {
            Ok(Rating(value as u8))
        } else {
            Err(Error::InvalidInput(format!("rating {value} outside 1..=5")))
        }
    }

    /// `clip(value, 1, 5)`.
    pub fn clamped(value: i64) -> Self {
        Rating(value.clamp(Self::MIN as i64, Self::MAX as i64) as u8)
    }

    pub fn from_class(class: usize) -> Self {
        assert!(class < Self::COUNT);
        Rating(class as u8 + 1)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Zero-based class index for the rating head.
    pub fn class_index(self) -> usize {
        self.0 as usize - 1
    }
}

impl TryFrom<i64> for Rating {
    type Error = Error;
    fn try_from(v: i64) -> Result<Self> {
        Rating::new(v)
    }
}

impl From<Rating> for i64 {
    fn from(r: Rating) -> i64 {
        r.0 as i64
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub pos: String,
    pub aspect_mask: bool,
    pub lex: Option<LexPolarity>,
}

impl Token {
    pub fn lex_flag(&self) -> bool {
        self.lex.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub tokens: Vec<Token>,
    /// Required for training documents; ignored for aspect queries.
    pub rating: Option<Rating>,
}

impl Document {
    /// Builds a document, deriving aspect bits from `rules` and lexicon flags
    /// from `lexicon` (if any).
    pub fn annotate(
        surfaces: Vec<String>,
        pos: Vec<String>,
        rating: Option<Rating>,
        rules: &AspectRuleConfig,
        lexicon: Option<&Lexicon>,
    ) -> Result<Self> {
        if surfaces.len() != pos.len() {
            return Err(Error::InvalidInput(format!(
                "{} tokens but {} POS tags",
                surfaces.len(),
                pos.len()
            )));
        }
        if surfaces.is_empty() {
            return Err(Error::InvalidInput("document has no tokens".into()));
        }
        let mask = compute_aspect_mask(&pos, rules);
        let lex: Vec<Option<LexPolarity>> = match lexicon {
            Some(l) => annotate_lexicon(&surfaces, l)
                .into_iter()
                .map(|(_, p)| p)
                .collect(),
            None => vec![None; surfaces.len()],
        };
        let tokens = surfaces
            .into_iter()
            .zip(pos)
            .zip(mask)
            .zip(lex)
            .map(|(((surface, pos), aspect_mask), lex)| Token {
                surface,
                pos,
                aspect_mask,
                lex,
            })
            .collect();
        Ok(Document { tokens, rating })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn has_aspect(&self) -> bool {
        self.tokens.iter().any(|t| t.aspect_mask)
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.surface.as_str())
    }
}

/// The set of POS tags counted as potential aspects.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct AspectRuleConfig {
    noun_tags: BTreeSet<String>,
}

impl AspectRuleConfig {
    pub fn new<I, S>(tags: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let noun_tags: BTreeSet<String> = tags.into_iter().map(Into::into).collect();
        if noun_tags.is_empty() {
            return Err(Error::Config(
                "aspect rule needs at least one noun tag".into(),
            ));
        }
        Ok(AspectRuleConfig { noun_tags })
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.noun_tags.contains(tag)
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.noun_tags.iter().map(String::as_str)
    }
}

impl Default for AspectRuleConfig {
    fn default() -> Self {
        AspectRuleConfig::new(["NOUN", "PROPN"]).expect("non-empty")
    }
}

impl TryFrom<Vec<String>> for AspectRuleConfig {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        AspectRuleConfig::new(v)
    }
}

impl From<AspectRuleConfig> for Vec<String> {
    fn from(r: AspectRuleConfig) -> Vec<String> {
        r.noun_tags.into_iter().collect()
    }
}

/// `m_i = 1` iff `pos[i]` is one of the rule's noun tags.
pub fn compute_aspect_mask<S: AsRef<str>>(pos: &[S], rules: &AspectRuleConfig) -> Vec<bool> {
    pos.iter().map(|p| rules.contains(p.as_ref())).collect()
}

/// Opinion lexicon with disjoint positive and negative word sets.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    positive: BTreeSet<String>,
    negative: BTreeSet<String>,
}

impl Lexicon {
    /// Lowercases every entry; words listed under both polarities are dropped.
    pub fn from_lists<I, J, S, T>(positive: I, negative: J) -> Self
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        let mut positive: BTreeSet<String> = positive
            .into_iter()
            .map(|w| w.as_ref().to_lowercase())
            .collect();
        let mut negative: BTreeSet<String> = negative
            .into_iter()
            .map(|w| w.as_ref().to_lowercase())
            .collect();
        let conflicts: Vec<String> = positive.intersection(&negative).cloned().collect();
        for word in &conflicts {
            log::warn!("lexicon word {word:?} listed as both positive and negative; dropped");
            positive.remove(word);
            negative.remove(word);
        }
        Lexicon { positive, negative }
    }

    /// Reads two plaintext word lists (one word per line). Blank lines and
    /// `;` comment lines are skipped.
    pub fn load(positive: &Path, negative: &Path) -> Result<Self> {
        Ok(Lexicon::from_lists(
            read_word_list(positive)?,
            read_word_list(negative)?,
        ))
    }

    pub fn write(&self, positive: &Path, negative: &Path) -> Result<()> {
        write_word_list(positive, &self.positive)?;
        write_word_list(negative, &self.negative)
    }

    pub fn lookup(&self, word: &str) -> Option<LexPolarity> {
        let lower = word.to_lowercase();
        if self.positive.contains(&lower) {
            Some(LexPolarity::Positive)
        } else if self.negative.contains(&lower) {
            Some(LexPolarity::Negative)
        } else {
            None
        }
    }

    pub fn positive(&self) -> &BTreeSet<String> {
        &self.positive
    }

    pub fn negative(&self) -> &BTreeSet<String> {
        &self.negative
    }
}

fn read_word_list(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut words = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let word = line.trim();
        if word.is_empty() || word.starts_with(';') {
            continue;
        }
        words.push(word.to_string());
    }
    Ok(words)
}

fn write_word_list(path: &Path, words: &BTreeSet<String>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for w in words {
        writeln!(out, "{w}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// `(S_i, polarity_i)` per token; case-insensitive.
pub fn annotate_lexicon<S: AsRef<str>>(
    tokens: &[S],
    lexicon: &Lexicon,
) -> Vec<(bool, Option<LexPolarity>)> {
    tokens
        .iter()
        .map(|t| {
            let p = lexicon.lookup(t.as_ref());
            (p.is_some(), p)
        })
        .collect()
}

/// A document plus the half-open token span whose polarity is requested.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AspectQuery {
    pub document: Document,
    span: Range<usize>,
}

impl AspectQuery {
    pub fn new(document: Document, span: Range<usize>) -> Result<Self> {
        if span.start >= span.end || span.end > document.len() {
            return Err(Error::InvalidInput(format!(
                "span {}..{} invalid for document of {} tokens",
                span.start,
                span.end,
                document.len()
            )));
        }
        Ok(AspectQuery { document, span })
    }

    pub fn span(&self) -> Range<usize> {
        self.span.clone()
    }
}

/// An aspect query with its gold polarity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledQuery {
    pub query: AspectQuery,
    pub gold: PolarityLabel,
}

/// Options controlling annotation during ingestion.
#[derive(Clone, Debug, Default)]
pub struct LoadOptions<'a> {
    pub rules: AspectRuleConfig,
    /// Used to fill `lex` when a line omits it.
    pub lexicon: Option<&'a Lexicon>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusLine {
    tokens: Vec<String>,
    pos: Vec<String>,
    rating: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lex: Option<Vec<Option<LexPolarity>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aspect_mask: Option<Vec<u8>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AscLine {
    tokens: Vec<String>,
    pos: Vec<String>,
    span: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    polarity: Option<PolarityLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rating: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lex: Option<Vec<Option<LexPolarity>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aspect_mask: Option<Vec<u8>>,
}

/// Loads a corpus with the default noun rule and no lexicon.
pub fn load_corpus(path: &Path) -> Result<Vec<Document>> {
    load_corpus_with(path, &LoadOptions::default())
}

pub fn load_corpus_with(path: &Path, opts: &LoadOptions<'_>) -> Result<Vec<Document>> {
    read_jsonl(path, |line_no, line: CorpusLine| {
        let rating = Rating::new(line.rating).map_err(|e| validation(path, line_no, e))?;
        build_document(
            line.tokens,
            line.pos,
            Some(rating),
            line.lex,
            line.aspect_mask,
            opts,
        )
        .map_err(|e| validation(path, line_no, e))
    })
}

pub fn write_corpus(path: &Path, docs: &[Document]) -> Result<()> {
    write_jsonl(
        path,
        docs.iter().map(|d| CorpusLine {
            tokens: d.surfaces().map(str::to_string).collect(),
            pos: d.tokens.iter().map(|t| t.pos.clone()).collect(),
            rating: d.rating.map(i64::from).unwrap_or(0),
            lex: Some(d.tokens.iter().map(|t| t.lex).collect()),
            aspect_mask: Some(d.tokens.iter().map(|t| t.aspect_mask as u8).collect()),
        }),
    )
}

/// Loads an aspect-level evaluation file.
pub fn load_asc_file(path: &Path, opts: &LoadOptions<'_>) -> Result<Vec<LabeledQuery>> {
    read_jsonl(path, |line_no, line: AscLine| {
        let err = |e| validation(path, line_no, e);
        let rating = line.rating.map(Rating::new).transpose().map_err(err)?;
        let doc = build_document(
            line.tokens,
            line.pos,
            rating,
            line.lex,
            line.aspect_mask,
            opts,
        )
        .map_err(err)?;
        let query = AspectQuery::new(doc, line.span[0]..line.span[1]).map_err(err)?;
        let gold = line
            .polarity
            .ok_or_else(|| err(Error::InvalidInput("missing polarity".into())))?;
        Ok(LabeledQuery { query, gold })
    })
}

/// Loads aspect queries; a `polarity` field, if present, is ignored.
pub fn load_queries(path: &Path, opts: &LoadOptions<'_>) -> Result<Vec<AspectQuery>> {
    read_jsonl(path, |line_no, line: AscLine| {
        let err = |e| validation(path, line_no, e);
        let rating = line.rating.map(Rating::new).transpose().map_err(err)?;
        let doc = build_document(
            line.tokens,
            line.pos,
            rating,
            line.lex,
            line.aspect_mask,
            opts,
        )
        .map_err(err)?;
        AspectQuery::new(doc, line.span[0]..line.span[1]).map_err(err)
    })
}

pub fn write_asc_file(path: &Path, queries: &[LabeledQuery]) -> Result<()> {
    write_jsonl(
        path,
        queries.iter().map(|q| {
            let d = &q.query.document;
            let span = q.query.span();
            AscLine {
                tokens: d.surfaces().map(str::to_string).collect(),
                pos: d.tokens.iter().map(|t| t.pos.clone()).collect(),
                span: [span.start, span.end],
                polarity: Some(q.gold),
                rating: d.rating.map(i64::from),
                lex: Some(d.tokens.iter().map(|t| t.lex).collect()),
                aspect_mask: Some(d.tokens.iter().map(|t| t.aspect_mask as u8).collect()),
            }
        }),
    )
}

fn validation(path: &Path, line: usize, e: Error) -> Error {
    Error::Validation {
        path: path.to_path_buf(),
        line,
        message: match e {
            Error::InvalidInput(m) => m,
            other => other.to_string(),
        },
    }
}

fn build_document(
    surfaces: Vec<String>,
    pos: Vec<String>,
    rating: Option<Rating>,
    lex: Option<Vec<Option<LexPolarity>>>,
    aspect_mask: Option<Vec<u8>>,
    opts: &LoadOptions<'_>,
) -> Result<Document> {
    let n = surfaces.len();
    let mut doc = Document::annotate(surfaces, pos, rating, &opts.rules, opts.lexicon)?;
    if let Some(lex) = lex {
        if lex.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} tokens but {} lex entries",
                n,
                lex.len()
            )));
        }
        for (tok, l) in doc.tokens.iter_mut().zip(lex) {
            tok.lex = l;
        }
    }
    if let Some(mask) = aspect_mask {
        if mask.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} tokens but {} aspect_mask entries",
                n,
                mask.len()
            )));
        }
        for (i, (tok, m)) in doc.tokens.iter().zip(mask).enumerate() {
            let expected = tok.aspect_mask as u8;
            if m > 1 {
                return Err(Error::InvalidInput(format!(
                    "aspect_mask[{i}] = {m} is not a bit"
                )));
            }
            if m != expected {
                return Err(Error::InvalidInput(format!(
                    "aspect_mask[{i}] = {m} disagrees with POS tag {:?}",
                    tok.pos
                )));
            }
        }
    }
    Ok(doc)
}

/// Parses one record per non-blank line. A first line that is a JSON object
/// without a `tokens` field is a file header and is skipped.
fn read_jsonl<T, L, F>(path: &Path, mut convert: F) -> Result<Vec<T>>
where
    L: for<'de> Deserialize<'de>,
    F: FnMut(usize, L) -> Result<T>,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen_record = false;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if !seen_record {
            seen_record = true;
            if let Ok(serde_json::Value::Object(map)) = serde_json::from_str(&line) {
                if !map.contains_key("tokens") {
                    log::debug!("{}: skipping header line", path.display());
                    continue;
                }
            }
        }
        let parsed: L = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(convert(line_no, parsed)?);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, records: impl Iterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, &r)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
