//! Post-editing of machine translations.
//!
//! Alignments come from the decoder's attention: each target token is paired
//! with the source position it attended to most. On top of that alignment
//! three edits are available, applied in this order:
//!
//! 1. **NE copy-over** puts the source surface of every named entity back
//!    into the translation, replacing the target tokens aligned to it.
//! 2. **NE resampling** swaps entity surfaces for entries drawn from local
//!    catalogs.
//! 3. **Code-mix simulation** replaces non-entity target tokens with their
//!    aligned source token, with a probability proportional to the source
//!    token's frequency in transcribed data.
//!
//! Random edits draw from a per-utterance stream (see [`utterance_rng`]) so
//! results do not depend on how work is spread across threads.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{utterance_to_json, validate_spans, Catalog, EntitySpan, FrequencyTable, Utterance};
use crate::error::{Error, Result};
use crate::io::read_jsonl;

/// Row-stochastic attention weights, one row per target token and one
/// column per source token.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
}

/// Accepted range for a row sum. Decoders often emit rounded weights, so the
/// check is loose.
const ROW_SUM_RANGE: std::ops::RangeInclusive<f64> = 0.9..=1.1;

impl AttentionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 {
            return Err(Error::InvalidArgument("attention matrix must have at least one row and column".into()));
        }
        let mut weights = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::InvalidArgument(format!(
                    "attention row {i} has {} columns, expected {cols}",
                    row.len()
                )));
            }
            if let Some(x) = row.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(Error::InvalidArgument(format!("attention row {i} has weight {x} outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if !ROW_SUM_RANGE.contains(&sum) {
                return Err(Error::InvalidArgument(format!("attention row {i} sums to {sum}")));
            }
            weights.extend_from_slice(row);
        }
        Ok(AttentionMatrix {
            rows: rows.len(),
            cols,
            weights,
        })
    }

    /// Number of target tokens.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of source tokens.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationHypothesis {
    pub source_tokens: Vec<String>,
    pub target_tokens: Vec<String>,
    /// Natural-log probability of each target token.
    pub token_logprobs: Vec<f64>,
    pub attention: AttentionMatrix,
}

impl TranslationHypothesis {
    pub fn new(
        source_tokens: Vec<String>,
        target_tokens: Vec<String>,
        token_logprobs: Vec<f64>,
        attention: AttentionMatrix,
    ) -> Result<Self> {
        if source_tokens.is_empty() || target_tokens.is_empty() {
            return Err(Error::InvalidArgument("hypothesis needs source and target tokens".into()));
        }
        if attention.rows() != target_tokens.len() || attention.cols() != source_tokens.len() {
            return Err(Error::InvalidArgument(format!(
                "attention is {}x{} but hypothesis has {} target and {} source tokens",
                attention.rows(),
                attention.cols(),
                target_tokens.len(),
                source_tokens.len()
            )));
        }
        if token_logprobs.len() != target_tokens.len() {
            return Err(Error::InvalidArgument(format!(
                "{} log-probabilities for {} target tokens",
                token_logprobs.len(),
                target_tokens.len()
            )));
        }
        if let Some(lp) = token_logprobs.iter().find(|lp| !(**lp <= 0.0)) {
            return Err(Error::InvalidArgument(format!("token log-probability {lp} is not <= 0")));
        }
        Ok(TranslationHypothesis {
            source_tokens,
            target_tokens,
            token_logprobs,
            attention,
        })
    }

    /// Decoder log-probability of the whole target, `sum(token_logprobs)`.
    pub fn mt_score(&self) -> f64 {
        self.token_logprobs.iter().sum()
    }
}

/// Target position to source position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment(pub Vec<usize>);

impl Alignment {
    pub fn source_of(&self, target: usize) -> usize {
        self.0[target]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Aligns each target token with its highest-attention source position,
/// preferring the lowest index on ties.
pub fn extract_alignment(attention: &AttentionMatrix) -> Result<Alignment> {
    (0..attention.rows())
        .map(|i| {
            let row = attention.row(i);
            let sum: f64 = row.iter().sum();
            if !ROW_SUM_RANGE.contains(&sum) {
                return Err(Error::InvalidArgument(format!("attention row {i} sums to {sum}")));
            }
            let mut best = 0;
            for (j, w) in row.iter().enumerate().skip(1) {
                if *w > row[best] {
                    best = j;
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()
        .map(Alignment)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edit {
    NeCopy,
    NeResample,
    CodeMix,
}

/// A translation being edited. `origin[i]` is the source position token `i`
/// is aligned to, or `None` for tokens that came from a catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct EditedSentence {
    pub id: String,
    pub tokens: Vec<String>,
    pub entities: Vec<EntitySpan>,
    pub origin: Vec<Option<usize>>,
    pub edits: Vec<Edit>,
}

impl EditedSentence {
    /// The unedited target side of `hyp`.
    pub fn from_hypothesis(id: &str, hyp: &TranslationHypothesis, alignment: &Alignment) -> Self {
        EditedSentence {
            id: id.to_string(),
            tokens: hyp.target_tokens.clone(),
            entities: Vec::new(),
            origin: alignment.0.iter().map(|&j| Some(j)).collect(),
            edits: Vec::new(),
        }
    }

    pub fn in_entity(&self, index: usize) -> bool {
        self.entities.iter().any(|s| s.contains(index))
    }

    pub fn to_utterance(&self, scenario: Option<String>) -> Result<Utterance> {
        Utterance::new(self.id.clone(), self.tokens.clone(), self.entities.clone(), scenario)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CopyOver {
    pub sentence: EditedSentence,
    /// Source entities that no target token was aligned to; they are left
    /// out of the output.
    pub unaligned: Vec<EntitySpan>,
}

/// Replaces, for each source entity, the smallest contiguous target run that
/// covers every target token aligned into the entity with the entity's
/// source tokens.
pub fn ne_copy_over(
    id: &str,
    hyp: &TranslationHypothesis,
    entities: &[EntitySpan],
    alignment: &Alignment,
) -> Result<CopyOver> {
    validate_spans(hyp.source_tokens.len(), entities).map_err(|m| Error::validation(id, m))?;
    if alignment.len() != hyp.target_tokens.len() {
        return Err(Error::validation(id, "alignment length differs from target length"));
    }
    let mut base = EditedSentence::from_hypothesis(id, hyp, alignment);
    base.edits.push(Edit::NeCopy);

    let mut sorted: Vec<&EntitySpan> = entities.iter().collect();
    sorted.sort_by_key(|s| s.start);
    let mut runs: Vec<(usize, usize, &EntitySpan)> = Vec::new();
    let mut unaligned = Vec::new();
    for span in sorted {
        let hits: Vec<usize> = (0..alignment.len())
            .filter(|&i| span.contains(alignment.source_of(i)))
            .collect();
        match (hits.first(), hits.last()) {
            (Some(&lo), Some(&hi)) => runs.push((lo, hi + 1, span)),
            _ => unaligned.push(span.clone()),
        }
    }
    let mut by_target = runs.clone();
    by_target.sort_by_key(|r| r.0);
    for pair in by_target.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(Error::validation(
                id,
                format!(
                    "entities [{}, {}) and [{}, {}) map to overlapping target runs",
                    pair[0].2.start, pair[0].2.end, pair[1].2.start, pair[1].2.end
                ),
            ));
        }
    }

    let mut out = EditedSentence {
        tokens: Vec::with_capacity(base.tokens.len()),
        origin: Vec::with_capacity(base.tokens.len()),
        ..base.clone()
    };
    let mut cursor = 0;
    for (lo, hi, span) in by_target {
        out.tokens.extend_from_slice(&base.tokens[cursor..lo]);
        out.origin.extend_from_slice(&base.origin[cursor..lo]);
        let start = out.tokens.len();
        out.tokens.extend_from_slice(&hyp.source_tokens[span.start..span.end]);
        out.origin.extend((span.start..span.end).map(Some));
        out.entities
            .push(EntitySpan::new(start, out.tokens.len(), span.entity_type.clone()));
        cursor = hi;
    }
    out.tokens.extend_from_slice(&base.tokens[cursor..]);
    out.origin.extend_from_slice(&base.origin[cursor..]);
    Ok(CopyOver {
        sentence: out,
        unaligned,
    })
}

/// Replaces each entity's surface with a catalog entry of the same type,
/// drawn with probability proportional to its weight. Entities whose type has
/// no catalog are kept and logged.
pub fn ne_resample<R: Rng + ?Sized>(
    sentence: &EditedSentence,
    catalogs: &BTreeMap<String, Catalog>,
    rng: &mut R,
) -> Result<EditedSentence> {
    let mut spans: Vec<&EntitySpan> = sentence.entities.iter().collect();
    spans.sort_by_key(|s| s.start);
    let mut out = EditedSentence {
        tokens: Vec::with_capacity(sentence.tokens.len()),
        entities: Vec::with_capacity(spans.len()),
        origin: Vec::with_capacity(sentence.tokens.len()),
        ..sentence.clone()
    };
    let mut cursor = 0;
    for span in spans {
        out.tokens.extend_from_slice(&sentence.tokens[cursor..span.start]);
        out.origin.extend_from_slice(&sentence.origin[cursor..span.start]);
        let start = out.tokens.len();
        match catalogs.get(&span.entity_type).filter(|c| !c.entries.is_empty()) {
            Some(catalog) => {
                let dist = WeightedIndex::new(catalog.entries.iter().map(|e| e.weight))
                    .map_err(|e| Error::validation(&catalog.entity_type, e.to_string()))?;
                let entry = &catalog.entries[dist.sample(rng)];
                out.tokens.extend_from_slice(&entry.surface);
                out.origin.extend(std::iter::repeat_n(None, entry.surface.len()));
            }
            None => {
                log::warn!(
                    "{}: no catalog for entity type `{}`, keeping original surface",
                    sentence.id,
                    span.entity_type
                );
                out.tokens.extend_from_slice(&sentence.tokens[span.start..span.end]);
                out.origin.extend_from_slice(&sentence.origin[span.start..span.end]);
            }
        }
        out.entities
            .push(EntitySpan::new(start, out.tokens.len(), span.entity_type.clone()));
        cursor = span.end;
    }
    out.tokens.extend_from_slice(&sentence.tokens[cursor..]);
    out.origin.extend_from_slice(&sentence.origin[cursor..]);
    out.edits.push(Edit::NeResample);
    Ok(out)
}

/// Probability of copying source token `s` over its aligned target token:
/// `p_max * relfreq(s) / max relfreq`.
pub fn code_mix_probability(freq: &FrequencyTable, token: &str, p_max: f64) -> f64 {
    let max = freq.max_relfreq();
    if max <= 0.0 {
        return 0.0;
    }
    (p_max * freq.relfreq(token) / max).clamp(0.0, 1.0)
}

/// Replaces target tokens outside entity spans with their aligned source
/// token at random. Sentence length never changes.
pub fn simulate_code_mix<R: Rng + ?Sized>(
    sentence: &EditedSentence,
    source_tokens: &[String],
    freq: &FrequencyTable,
    p_max: f64,
    rng: &mut R,
) -> Result<EditedSentence> {
    if !(0.0..=1.0).contains(&p_max) {
        return Err(Error::InvalidArgument(format!("p_max must lie in [0, 1], got {p_max}")));
    }
    let mut out = sentence.clone();
    out.edits.push(Edit::CodeMix);
    if p_max == 0.0 {
        return Ok(out);
    }
    for i in 0..out.tokens.len() {
        if sentence.in_entity(i) {
            continue;
        }
        let Some(j) = sentence.origin[i] else { continue };
        let source = source_tokens
            .get(j)
            .ok_or_else(|| Error::validation(&sentence.id, format!("alignment points past source position {j}")))?;
        let p = code_mix_probability(freq, source, p_max);
        if rng.gen::<f64>() < p {
            out.tokens[i] = source.clone();
        }
    }
    Ok(out)
}

/// FNV-1a, used only to derive per-utterance seeds.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Random stream for one utterance and one editing stage.
pub fn utterance_rng(seed: u64, utterance_id: &str, stage: &str) -> ChaCha8Rng {
    let key = format!("{stage}\u{0}{utterance_id}");
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(key.as_bytes()))
}

/// An n-best list from the external translation system, with optional
/// source-side entity annotations and scenario tag.
#[derive(Debug, Clone, PartialEq)]
pub struct NBestList {
    pub id: String,
    pub source_tokens: Vec<String>,
    pub source_entities: Vec<EntitySpan>,
    pub scenario: Option<String>,
    pub hypotheses: Vec<TranslationHypothesis>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HypothesisRecord {
    target_tokens: Vec<String>,
    token_logprobs: Vec<f64>,
    attention: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TranslationRecord {
    id: String,
    source_tokens: Vec<String>,
    hypotheses: Vec<HypothesisRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    entities: Vec<EntitySpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scenario: Option<String>,
}

pub fn load_translations(path: impl AsRef<Path>) -> Result<Vec<NBestList>> {
    let path = path.as_ref();
    let records: Vec<(usize, TranslationRecord)> = read_jsonl(path)?;
    let mut seen = std::collections::HashSet::new();
    records
        .into_iter()
        .map(|(line, rec)| {
            let wrap = |e: Error| Error::parse(path, line, format!("{}: {e}", rec.id));
            if !seen.insert(rec.id.clone()) {
                return Err(Error::parse(path, line, format!("duplicate id `{}`", rec.id)));
            }
            if rec.hypotheses.is_empty() {
                return Err(Error::parse(path, line, format!("{}: no hypotheses", rec.id)));
            }
            validate_spans(rec.source_tokens.len(), &rec.entities)
                .map_err(|m| Error::parse(path, line, format!("{}: {m}", rec.id)))?;
            let hypotheses = rec
                .hypotheses
                .iter()
                .map(|h| {
                    TranslationHypothesis::new(
                        rec.source_tokens.clone(),
                        h.target_tokens.clone(),
                        h.token_logprobs.clone(),
                        AttentionMatrix::new(h.attention.clone())?,
                    )
                })
                .collect::<Result<Vec<_>>>()
                .map_err(wrap)?;
            Ok(NBestList {
                id: rec.id,
                source_tokens: rec.source_tokens,
                source_entities: rec.entities,
                scenario: rec.scenario,
                hypotheses,
            })
        })
        .collect()
}

pub fn write_translations<W: Write>(mut out: W, lists: &[NBestList]) -> std::io::Result<()> {
    for list in lists {
        let rec = TranslationRecord {
            id: list.id.clone(),
            source_tokens: list.source_tokens.clone(),
            hypotheses: list
                .hypotheses
                .iter()
                .map(|h| HypothesisRecord {
                    target_tokens: h.target_tokens.clone(),
                    token_logprobs: h.token_logprobs.clone(),
                    attention: h.attention.to_rows(),
                })
                .collect(),
            entities: list.source_entities.clone(),
            scenario: list.scenario.clone(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Edited output as utterance JSONL with an extra `provenance` object.
pub fn write_edited<W: Write>(mut out: W, edited: &[(EditedSentence, Option<String>)]) -> Result<()> {
    let io_err = |e| Error::io("<edited output>", e);
    for (sentence, scenario) in edited {
        let utt = sentence.to_utterance(scenario.clone())?;
        let mut value = utterance_to_json(&utt);
        value["provenance"] = serde_json::json!({ "edits": sentence.edits });
        serde_json::to_writer(&mut out, &value).map_err(|e| Error::io("<edited output>", e.into()))?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteditConfig {
    pub copy_over: bool,
    pub resample: bool,
    pub code_mix: bool,
    pub p_max: f64,
}

impl Default for PosteditConfig {
    fn default() -> Self {
        PosteditConfig {
            copy_over: true,
            resample: true,
            code_mix: true,
            p_max: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PosteditStats {
    pub sentences: usize,
    pub copied_entities: usize,
    pub unaligned_entities: usize,
    pub missing_catalog: usize,
    pub code_mixed_tokens: usize,
}

/// Edits one chosen hypothesis with the enabled stages.
pub fn postedit_one(
    list: &NBestList,
    hyp: &TranslationHypothesis,
    config: &PosteditConfig,
    catalogs: &BTreeMap<String, Catalog>,
    freq: &FrequencyTable,
    seed: u64,
) -> Result<(EditedSentence, PosteditStats)> {
    let alignment = extract_alignment(&hyp.attention)?;
    let mut stats = PosteditStats {
        sentences: 1,
        ..Default::default()
    };
    let mut sentence = if config.copy_over {
        let copied = ne_copy_over(&list.id, hyp, &list.source_entities, &alignment)?;
        stats.unaligned_entities = copied.unaligned.len();
        stats.copied_entities = copied.sentence.entities.len();
        copied.sentence
    } else {
        EditedSentence::from_hypothesis(&list.id, hyp, &alignment)
    };
    if config.resample {
        stats.missing_catalog = sentence
            .entities
            .iter()
            .filter(|s| catalogs.get(&s.entity_type).is_none_or(|c| c.entries.is_empty()))
            .count();
        let mut rng = utterance_rng(seed, &list.id, "ne_resample");
        sentence = ne_resample(&sentence, catalogs, &mut rng)?;
    }
    if config.code_mix {
        let mut rng = utterance_rng(seed, &list.id, "code_mix");
        let mixed = simulate_code_mix(&sentence, &hyp.source_tokens, freq, config.p_max, &mut rng)?;
        stats.code_mixed_tokens = mixed
            .tokens
            .iter()
            .zip(&sentence.tokens)
            .filter(|(a, b)| a != b)
            .count();
        sentence = mixed;
    }
    Ok((sentence, stats))
}

/// Edits every item's chosen hypothesis in parallel; output follows input
/// order and does not depend on the worker count.
pub fn postedit_batch(
    items: &[(&NBestList, &TranslationHypothesis)],
    config: &PosteditConfig,
    catalogs: &BTreeMap<String, Catalog>,
    freq: &FrequencyTable,
    seed: u64,
) -> Result<(Vec<EditedSentence>, PosteditStats)> {
    let results: Vec<(EditedSentence, PosteditStats)> = items
        .par_iter()
        .map(|(list, hyp)| {
            postedit_one(list, hyp, config, catalogs, freq, seed).map_err(|e| e.in_stage("postedit", list.id.clone()))
        })
        .collect::<Result<_>>()?;
    let mut total = PosteditStats::default();
    let mut sentences = Vec::with_capacity(results.len());
    for (s, st) in results {
        total.sentences += st.sentences;
        total.copied_entities += st.copied_entities;
        total.unaligned_entities += st.unaligned_entities;
        total.missing_catalog += st.missing_catalog;
        total.code_mixed_tokens += st.code_mixed_tokens;
        sentences.push(s);
    }
    Ok((sentences, total))
}
