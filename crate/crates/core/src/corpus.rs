//! Utterances, entity catalogs, word vectors and token frequency tables.
//!
//! Everything here is immutable once loaded and can be shared across worker
//! threads by reference.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::io::{open, read_jsonl};

/// A labelled token range `[start, end)` inside an utterance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub entity_type: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, entity_type: impl Into<String>) -> Self {
        EntitySpan {
            start,
            end,
            entity_type: entity_type.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index < self.end
    }
}

/// Checks that `spans` are non-empty, lie inside `[0, len]` and do not overlap.
pub fn validate_spans(len: usize, spans: &[EntitySpan]) -> std::result::Result<(), String> {
    for span in spans {
        if span.start >= span.end {
            return Err(format!("empty entity span [{}, {})", span.start, span.end));
        }
        if span.end > len {
            return Err(format!(
                "entity span [{}, {}) exceeds sentence length {len}",
                span.start, span.end
            ));
        }
    }
    let mut sorted: Vec<&EntitySpan> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    for pair in sorted.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(format!(
                "entity spans [{}, {}) and [{}, {}) overlap",
                pair[0].start, pair[0].end, pair[1].start, pair[1].end
            ));
        }
    }
    Ok(())
}

/// A tokenized sentence with named-entity annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub tokens: Vec<String>,
    pub entities: Vec<EntitySpan>,
    pub scenario: Option<String>,
}

impl Utterance {
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<String>,
        entities: Vec<EntitySpan>,
        scenario: Option<String>,
    ) -> Result<Self> {
        let utt = Utterance {
            id: id.into(),
            tokens,
            entities,
            scenario,
        };
        utt.validate()?;
        Ok(utt)
    }

    /// Convenience constructor for unannotated text; the text is normalized
    /// with [`normalize_tokens`].
    pub fn from_text(id: impl Into<String>, text: &str) -> Result<Self> {
        Utterance::new(id, normalize_tokens(text), Vec::new(), None)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::validation(&self.id, "utterance has no tokens"));
        }
        if let Some(pos) = self.tokens.iter().position(|t| t.trim().is_empty()) {
            return Err(Error::validation(
                &self.id,
                format!("token {pos} is empty"),
            ));
        }
        validate_spans(self.tokens.len(), &self.entities)
            .map_err(|msg| Error::validation(&self.id, msg))
    }

    /// Tokens covered by an entity span.
    pub fn entity_tokens(&self, span: &EntitySpan) -> &[String] {
        &self.tokens[span.start..span.end]
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct UtteranceRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default)]
    entities: Vec<EntitySpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scenario: Option<String>,
}

/// Serializes an utterance as one JSON object (pre-tokenized form).
pub fn utterance_to_json(utt: &Utterance) -> serde_json::Value {
    let record = UtteranceRecord {
        id: Some(utt.id.clone()),
        tokens: Some(utt.tokens.clone()),
        text: None,
        entities: utt.entities.clone(),
        scenario: utt.scenario.clone(),
    };
    serde_json::to_value(record).expect("utterance serializes")
}

/// Loads utterances from a JSONL file. Records without an `id` get
/// `line-<n>` (1-based line number).
pub fn load_utterances(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let path = path.as_ref();
    let records: Vec<(usize, UtteranceRecord)> = read_jsonl(path)?;
    let mut utterances = Vec::with_capacity(records.len());
    for (line, record) in records {
        let id = record.id.unwrap_or_else(|| format!("line-{line}"));
        let tokens = match (record.tokens, record.text) {
            (Some(tokens), None) => tokens,
            (None, Some(text)) => normalize_tokens(&text),
            _ => {
                return Err(Error::parse(
                    path,
                    line,
                    "exactly one of `tokens` or `text` is required",
                ))
            }
        };
        utterances.push(Utterance::new(id, tokens, record.entities, record.scenario)?);
    }
    Ok(utterances)
}

pub fn write_utterances<W: Write>(mut out: W, utterances: &[Utterance]) -> std::io::Result<()> {
    for utt in utterances {
        serde_json::to_writer(&mut out, &utterance_to_json(utt))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Unicode NFC, whitespace split, and lowercasing of Latin-script tokens.
/// Tokens in any other script are left as they are.
pub fn normalize_tokens(raw_text: &str) -> Vec<String> {
    let nfc: String = raw_text.nfc().collect();
    nfc.split_whitespace()
        .map(|tok| {
            if is_latin_token(tok) {
                tok.to_lowercase().nfc().collect()
            } else {
                tok.to_string()
            }
        })
        .collect()
}

fn is_latin_token(token: &str) -> bool {
    let mut saw_letter = false;
    for c in token.chars().filter(|c| c.is_alphabetic()) {
        if !is_latin_letter(c) {
            return false;
        }
        saw_letter = true;
    }
    saw_letter
}

fn is_latin_letter(c: char) -> bool {
    matches!(c as u32,
        0x0041..=0x005A
        | 0x0061..=0x007A
        | 0x00AA | 0x00BA
        | 0x00C0..=0x00D6
        | 0x00D8..=0x00F6
        | 0x00F8..=0x024F
        | 0x0250..=0x02AF
        | 0x1D00..=0x1D7F
        | 0x1E00..=0x1EFF
        | 0x2C60..=0x2C7F
        | 0xA720..=0xA7FF
        | 0xAB30..=0xAB6F
        | 0xFB00..=0xFB06
        | 0xFF21..=0xFF3A
        | 0xFF41..=0xFF5A)
}

/// Weighted replacement surface forms for one entity type.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub entity_type: String,
    pub entries: Vec<CatalogEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry {
    pub surface: Vec<String>,
    pub weight: f64,
}

#[derive(Debug, Deserialize)]
struct CatalogRecord {
    #[serde(rename = "type")]
    entity_type: String,
    surface: Vec<String>,
    #[serde(default = "default_weight")]
    weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

/// Loads catalog entries and groups them by entity type. Entry order within
/// a type follows the file.
pub fn load_catalogs(path: impl AsRef<Path>) -> Result<BTreeMap<String, Catalog>> {
    let path = path.as_ref();
    let records: Vec<(usize, CatalogRecord)> = read_jsonl(path)?;
    let mut catalogs: BTreeMap<String, Catalog> = BTreeMap::new();
    for (line, rec) in records {
        if !(rec.weight > 0.0 && rec.weight.is_finite()) {
            return Err(Error::parse(path, line, format!("weight must be positive, got {}", rec.weight)));
        }
        if rec.surface.is_empty() || rec.surface.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::parse(path, line, "catalog surface must be non-empty tokens"));
        }
        catalogs
            .entry(rec.entity_type.clone())
            .or_insert_with(|| Catalog {
                entity_type: rec.entity_type.clone(),
                entries: Vec::new(),
            })
            .entries
            .push(CatalogEntry {
                surface: rec.surface,
                weight: rec.weight,
            });
    }
    Ok(catalogs)
}

/// Pretrained word vectors, word2vec text layout.
#[derive(Debug, Clone)]
pub struct WordVectorTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectorTable {
    pub fn new(dim: usize, vectors: HashMap<String, Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("word vector dimension must be positive".into()));
        }
        if vectors.is_empty() {
            return Err(Error::EmptyInput("word vector table".into()));
        }
        if let Some(v) = vectors.values().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        Ok(WordVectorTable { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Returns a copy with every vector multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> WordVectorTable {
        WordVectorTable {
            dim: self.dim,
            vectors: self
                .vectors
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|x| x * factor).collect()))
                .collect(),
        }
    }
}

/// Parses a "count dim" header followed by `count` rows of
/// `<key> v1 ... v_dim`. Shared by word vectors and external sentence
/// embeddings.
pub(crate) type VectorRows = Vec<(String, Vec<f64>)>;

pub(crate) fn parse_vector_rows<R: BufRead>(reader: R, path: &Path) -> Result<(usize, VectorRows)> {
    let mut lines = reader.lines().enumerate();
    let (count, dim) = loop {
        let Some((idx, line)) = lines.next() else {
            return Err(Error::parse(path, 1, "missing `count dim` header"));
        };
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parsed = match fields.as_slice() {
            [c, d] => c.parse::<usize>().ok().zip(d.parse::<usize>().ok()),
            _ => None,
        };
        match parsed {
            Some((c, d)) if d > 0 => break (c, d),
            _ => return Err(Error::parse(path, idx + 1, "expected header `count dim`")),
        }
    };
    let mut rows = Vec::with_capacity(count);
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let key = fields.next().expect("non-empty line").to_string();
        let values = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, idx + 1, format!("bad number: {e}")))?;
        if values.len() != dim {
            return Err(Error::parse(
                path,
                idx + 1,
                format!("expected {dim} values, found {}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, idx + 1, "non-finite vector entry"));
        }
        rows.push((key, values));
    }
    if rows.len() != count {
        return Err(Error::parse(
            path,
            0,
            format!("header declares {count} rows, found {}", rows.len()),
        ));
    }
    Ok((dim, rows))
}

pub fn load_word_vectors(path: impl AsRef<Path>) -> Result<WordVectorTable> {
    let path = path.as_ref();
    read_word_vectors(BufReader::new(open(path)?), path)
}

/// Reads word vectors from any buffered reader; `path` is only used in error
/// messages. Duplicate tokens keep the last row.
pub fn read_word_vectors<R: BufRead>(reader: R, path: &Path) -> Result<WordVectorTable> {
    let (dim, rows) = parse_vector_rows(reader, path)?;
    let mut vectors = HashMap::with_capacity(rows.len());
    for (token, values) in rows {
        if vectors.insert(token.clone(), values).is_some() {
            log::warn!("{}: duplicate word vector for `{token}`, keeping the later row", path.display());
        }
    }
    WordVectorTable::new(dim, vectors)
}

/// Token counts with additive smoothing.
#[derive(Debug, Clone)]
pub struct FrequencyTable {
    counts: HashMap<String, u64>,
    total: u64,
    vocab_size: usize,
    alpha: f64,
    max_count: u64,
}

impl FrequencyTable {
    /// `pseudo_vocab` extra vocabulary slots are reserved for unseen tokens
    /// when `alpha > 0`.
    pub fn from_counts(counts: HashMap<String, u64>, alpha: f64, pseudo_vocab: usize) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {alpha}")));
        }
        let counts: HashMap<String, u64> = counts.into_iter().filter(|(_, c)| *c > 0).collect();
        let total = counts.values().sum();
        let mut vocab_size = counts.len();
        if alpha > 0.0 {
            vocab_size += pseudo_vocab;
        }
        let max_count = counts.values().copied().max().unwrap_or(0);
        Ok(FrequencyTable {
            counts,
            total,
            vocab_size,
            alpha,
            max_count,
        })
    }

    pub fn count(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `(count(w) + alpha) / (N + alpha * V)`.
    pub fn relfreq(&self, token: &str) -> f64 {
        self.smoothed(self.count(token))
    }

    /// Largest smoothed relative frequency over the observed vocabulary.
    pub fn max_relfreq(&self) -> f64 {
        self.smoothed(self.max_count)
    }

    pub fn observed(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(k, v)| (k.as_str(), *v))
    }

    fn smoothed(&self, count: u64) -> f64 {
        let denom = self.total as f64 + self.alpha * self.vocab_size as f64;
        if denom == 0.0 {
            return 0.0;
        }
        (count as f64 + self.alpha) / denom
    }
}

pub const DEFAULT_FREQUENCY_ALPHA: f64 = 1.0;

pub fn build_frequency_table(corpus: &[Utterance], alpha: f64) -> Result<FrequencyTable> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("frequency corpus".into()));
    }
    frequency_table_from_tokens(corpus.iter().map(|u| u.tokens.as_slice()), alpha)
}

pub fn frequency_table_from_tokens<'a, I>(sentences: I, alpha: f64) -> Result<FrequencyTable>
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut counts: HashMap<String, u64> = HashMap::new();
    for sentence in sentences {
        for tok in sentence {
            *counts.entry(tok.clone()).or_insert(0) += 1;
        }
    }
    FrequencyTable::from_counts(counts, alpha, 0)
}
