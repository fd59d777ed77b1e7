use std::collections::HashMap;

use super::{LanguageModel, Vocab, BOS, BOS_ID, EOS_ID, LOG_ZERO, UNK_ID};
use crate::error::{Error, Result};

/// Smallest probability mass any context keeps for unseen continuations;
/// also the floor on the unigram probability of `<unk>`.
pub const MIN_BACKOFF_MASS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KatzConfig {
    pub order: usize,
    /// Counts up to and including this value are Good-Turing discounted.
    pub cutoff: usize,
}

impl Default for KatzConfig {
    fn default() -> Self {
        KatzConfig { order: 4, cutoff: 5 }
    }
}

impl KatzConfig {
    pub fn with_order(order: usize) -> Self {
        KatzConfig {
            order,
            ..KatzConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Entry {
    pub(crate) log_prob: f64,
    pub(crate) log_bow: Option<f64>,
}

/// A Katz back-off model.
#[derive(Debug, Clone)]
pub struct KatzModel {
    order: usize,
    vocab: Vocab,
    /// `grams[n - 1]` holds every stored n-gram. Entries with a back-off
    /// weight are contexts.
    grams: Vec<HashMap<Vec<u32>, Entry>>,
    discounts: Vec<Vec<f64>>,
}

/// Katz's corrected Good-Turing coefficients for counts `1..=cutoff`.
///
/// `count_of_counts[r]` is the number of distinct n-grams seen exactly `r`
/// times (index 0 is ignored; missing indices count as zero). The returned
/// vector is indexed by count; a coefficient of `1.0` means "not discounted",
/// which is also used whenever the statistics yield a value outside `(0, 1)`.
pub fn good_turing_discounts(count_of_counts: &[u64], cutoff: usize) -> Vec<f64> {
    let coc = |r: usize| count_of_counts.get(r).copied().unwrap_or(0) as f64;
    let mut discounts = vec![1.0; cutoff + 1];
    let n1 = coc(1);
    if n1 == 0.0 {
        return discounts;
    }
    let common = (cutoff + 1) as f64 * coc(cutoff + 1) / n1;
    if common >= 1.0 {
        return discounts;
    }
    for (r, slot) in discounts.iter_mut().enumerate().skip(1) {
        let nr = coc(r);
        if nr == 0.0 {
            continue;
        }
        let ratio = (r + 1) as f64 * coc(r + 1) / (r as f64 * nr);
        let d = (ratio - common) / (1.0 - common);
        if d.is_finite() && d > 0.0 && d < 1.0 {
            *slot = d;
        }
    }
    discounts
}

fn count_of_counts(counts: &HashMap<Vec<u32>, u64>, upto: usize) -> Vec<u64> {
    let mut coc = vec![0u64; upto + 1];
    for &c in counts.values() {
        if (c as usize) <= upto {
            coc[c as usize] += 1;
        }
    }
    coc
}

fn discounted(discounts: &[f64], count: u64) -> f64 {
    let d = discounts.get(count as usize).copied().unwrap_or(1.0);
    d * count as f64
}

/// Trains a Katz back-off model on tokenized sentences.
pub fn train_katz(corpus: &[Vec<String>], config: KatzConfig) -> Result<KatzModel> {
    let KatzConfig { order, cutoff } = config;
    if order == 0 {
        return Err(Error::InvalidArgument("n-gram order must be at least 1".into()));
    }
    if cutoff == 0 {
        return Err(Error::InvalidArgument("discount cutoff must be at least 1".into()));
    }
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyInput("language model training corpus has no tokens".into()));
    }

    let vocab = Vocab::from_words(corpus.iter().flatten().map(String::as_str));
    let mut counts: Vec<HashMap<Vec<u32>, u64>> = vec![HashMap::new(); order];
    let mut padded = Vec::new();
    for sentence in corpus {
        padded.clear();
        padded.extend(std::iter::repeat_n(BOS_ID, order - 1));
        padded.extend(sentence.iter().map(|t| vocab.id(t)));
        padded.push(EOS_ID);
        for i in (order - 1)..padded.len() {
            for n in 1..=order {
                *counts[n - 1].entry(padded[i + 1 - n..=i].to_vec()).or_insert(0) += 1;
            }
        }
    }

    let discounts: Vec<Vec<f64>> = counts
        .iter()
        .map(|c| good_turing_discounts(&count_of_counts(c, cutoff + 1), cutoff))
        .collect();

    let mut model = KatzModel {
        order,
        vocab,
        grams: vec![HashMap::new(); order],
        discounts,
    };
    model.estimate_unigrams(&counts[0]);
    for n in 2..=order {
        model.estimate_order(n, &counts[n - 1]);
    }
    Ok(model)
}

impl KatzModel {
    fn estimate_unigrams(&mut self, counts: &HashMap<Vec<u32>, u64>) {
        let total: u64 = counts.values().sum();
        let discounts = &self.discounts[0];
        let mut probs: Vec<f64> = vec![0.0; self.vocab.len()];
        let mut keys: Vec<(&Vec<u32>, &u64)> = counts.iter().collect();
        keys.sort_unstable();
        for (key, &c) in keys {
            probs[key[0] as usize] = discounted(discounts, c) / total as f64;
        }
        let explicit: f64 = probs.iter().sum();
        let leftover = (1.0 - explicit).max(0.0);
        probs[UNK_ID as usize] += leftover;
        if probs[UNK_ID as usize] < MIN_BACKOFF_MASS {
            let others: f64 = explicit - probs[UNK_ID as usize] + leftover;
            let scale = (1.0 - MIN_BACKOFF_MASS) / others;
            for (id, p) in probs.iter_mut().enumerate() {
                if id as u32 != UNK_ID {
                    *p *= scale;
                }
            }
            probs[UNK_ID as usize] = MIN_BACKOFF_MASS;
        }
        let unigrams = &mut self.grams[0];
        unigrams.insert(
            vec![BOS_ID],
            Entry {
                log_prob: LOG_ZERO,
                log_bow: None,
            },
        );
        for id in self.vocab.predictable_ids() {
            unigrams.insert(
                vec![id],
                Entry {
                    log_prob: probs[id as usize].log10(),
                    log_bow: None,
                },
            );
        }
    }

    fn estimate_order(&mut self, n: usize, counts: &HashMap<Vec<u32>, u64>) {
        let discounts = &self.discounts[n - 1];
        let predictable = self.vocab.len() - 1;
        let mut keys: Vec<(&Vec<u32>, u64)> = counts.iter().map(|(k, &c)| (k, c)).collect();
        keys.sort_unstable();

        let mut new_grams: Vec<(Vec<u32>, f64)> = Vec::with_capacity(keys.len());
        let mut new_bows: Vec<(Vec<u32>, f64)> = Vec::new();
        let mut start = 0;
        while start < keys.len() {
            let context = &keys[start].0[..n - 1];
            let mut end = start;
            while end < keys.len() && &keys[end].0[..n - 1] == context {
                end += 1;
            }
            let group = &keys[start..end];
            let context_total: u64 = group.iter().map(|(_, c)| c).sum();
            let mut probs: Vec<f64> = group
                .iter()
                .map(|&(_, c)| discounted(discounts, c) / context_total as f64)
                .collect();
            let explicit: f64 = probs.iter().sum();
            let has_unseen = group.len() < predictable;
            let mut left = 1.0 - explicit;
            if !has_unseen {
                probs.iter_mut().for_each(|p| *p /= explicit);
                left = 0.0;
            } else if left < MIN_BACKOFF_MASS {
                let scale = (1.0 - MIN_BACKOFF_MASS) / explicit;
                probs.iter_mut().for_each(|p| *p *= scale);
                left = MIN_BACKOFF_MASS;
            }

            let log_bow = if has_unseen {
                let lower = &context[1..];
                let seen_lower: f64 = group
                    .iter()
                    .map(|(key, _)| 10f64.powf(self.cond_log10_ids(lower, key[n - 1])))
                    .sum();
                let mut denom = 1.0 - seen_lower;
                if denom < 1e-6 {
                    // Direct summation avoids cancellation when the seen words
                    // hold almost all of the lower-order mass.
                    let mut seen: Vec<u32> = group.iter().map(|(key, _)| key[n - 1]).collect();
                    seen.sort_unstable();
                    denom = self
                        .vocab
                        .predictable_ids()
                        .filter(|w| seen.binary_search(w).is_err())
                        .map(|w| 10f64.powf(self.cond_log10_ids(lower, w)))
                        .sum();
                }
                (left / denom).log10()
            } else {
                0.0
            };
            new_bows.push((context.to_vec(), log_bow));
            for ((key, _), p) in group.iter().zip(probs) {
                new_grams.push(((*key).clone(), p.log10()));
            }
            start = end;
        }

        for (context, log_bow) in new_bows {
            self.grams[n - 2]
                .entry(context)
                .or_insert(Entry {
                    log_prob: LOG_ZERO,
                    log_bow: None,
                })
                .log_bow = Some(log_bow);
        }
        for (key, log_prob) in new_grams {
            self.grams[n - 1].insert(key, Entry { log_prob, log_bow: None });
        }
    }

    pub(crate) fn from_parts(order: usize, vocab: Vocab, grams: Vec<HashMap<Vec<u32>, Entry>>) -> Self {
        KatzModel {
            order,
            vocab,
            grams,
            discounts: Vec::new(),
        }
    }

    pub(crate) fn grams(&self) -> &[HashMap<Vec<u32>, Entry>] {
        &self.grams
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Good-Turing coefficients used per order (empty for models read from
    /// ARPA files).
    pub fn discounts(&self) -> &[Vec<f64>] {
        &self.discounts
    }

    /// Number of stored entries per order, as listed in the ARPA header.
    pub fn ngram_counts(&self) -> Vec<usize> {
        self.grams.iter().map(HashMap::len).collect()
    }

    fn history_id(&self, token: &str) -> u32 {
        if token == BOS {
            BOS_ID
        } else {
            self.vocab.id(token)
        }
    }

    pub(crate) fn cond_log10_ids(&self, history: &[u32], word: u32) -> f64 {
        let max_context = self.order - 1;
        let mut h = if history.len() > max_context {
            &history[history.len() - max_context..]
        } else {
            history
        };
        let mut key = Vec::with_capacity(h.len() + 1);
        let mut acc = 0.0;
        loop {
            key.clear();
            key.extend_from_slice(h);
            key.push(word);
            if let Some(entry) = self.grams[h.len()].get(key.as_slice()) {
                return acc + entry.log_prob;
            }
            if h.is_empty() {
                return acc + LOG_ZERO;
            }
            if let Some(entry) = self.grams[h.len() - 1].get(h) {
                acc += entry.log_bow.unwrap_or(0.0);
            }
            h = &h[1..];
        }
    }

    /// `log10 P(word | history)`. History tokens may include [`BOS`];
    /// out-of-vocabulary tokens are scored as `<unk>`.
    pub fn conditional_log10<S: AsRef<str>>(&self, history: &[S], word: &str) -> f64 {
        let ids: Vec<u32> = history.iter().map(|t| self.history_id(t.as_ref())).collect();
        self.cond_log10_ids(&ids, self.vocab.word_id(word))
    }

    /// Every context holding a back-off weight, plus the empty context.
    pub fn contexts(&self) -> Vec<Vec<String>> {
        let mut out = vec![Vec::new()];
        for table in &self.grams[..self.order.saturating_sub(1)] {
            let mut ctxs: Vec<Vec<String>> = table
                .iter()
                .filter(|(_, e)| e.log_bow.is_some())
                .map(|(k, _)| k.iter().map(|&id| self.vocab.word(id).to_string()).collect())
                .collect();
            ctxs.sort();
            out.extend(ctxs);
        }
        out
    }

    /// Sum of `P(w | context)` over every predictable token.
    pub fn context_mass<S: AsRef<str>>(&self, context: &[S]) -> f64 {
        let ids: Vec<u32> = context.iter().map(|t| self.history_id(t.as_ref())).collect();
        self.vocab
            .predictable_ids()
            .map(|w| 10f64.powf(self.cond_log10_ids(&ids, w)))
            .sum()
    }
}

impl LanguageModel for KatzModel {
    fn position_log10_probs(&self, tokens: &[String]) -> Vec<f64> {
        let ctx = self.order - 1;
        let mut padded = Vec::with_capacity(tokens.len() + self.order);
        padded.extend(std::iter::repeat_n(BOS_ID, ctx));
        padded.extend(tokens.iter().map(|t| self.vocab.id(t)));
        padded.push(EOS_ID);
        (ctx..padded.len())
            .map(|i| self.cond_log10_ids(&padded[i - ctx..i], padded[i]))
            .collect()
    }
}
