//! Back-off n-gram language models.
//!
//! [`KatzModel`] is a Good-Turing discounted Katz back-off model stored in
//! base-10 logs (the ARPA convention). [`InterpolatedModel`] mixes several of
//! them with a static weight vector tuned by EM on held-out text.
//!
//! Every sentence is padded with `order - 1` copies of [`BOS`] and a single
//! [`EOS`]; the begin marker is never predicted, so a sentence of `n` tokens
//! contributes `n + 1` predicted positions.

mod arpa;
mod interpolate;
mod katz;

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};

pub use arpa::{load_arpa, read_arpa, save_arpa, write_arpa};
pub use interpolate::{
    apply_floor, em_mixture_weights, tune_interpolation, Component, ComponentRole, EmOutcome,
    InterpolatedModel, EM_MAX_ITERATIONS, EM_TOLERANCE,
};
pub use katz::{good_turing_discounts, train_katz, KatzConfig, KatzModel, MIN_BACKOFF_MASS};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// Log10 value written for impossible events (begin-of-sentence entries).
pub const LOG_ZERO: f64 = -99.0;

pub(crate) const BOS_ID: u32 = 0;
pub(crate) const EOS_ID: u32 = 1;
pub(crate) const UNK_ID: u32 = 2;

/// Token inventory: the three reserved markers followed by ordinary words in
/// lexicographic order, so ids never depend on corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub(crate) fn from_words<'a, I: IntoIterator<Item = &'a str>>(words: I) -> Vocab {
        let mut ordinary: Vec<&str> = words
            .into_iter()
            .filter(|w| !is_reserved(w))
            .collect();
        ordinary.sort_unstable();
        ordinary.dedup();
        let mut all = vec![BOS.to_string(), EOS.to_string(), UNK.to_string()];
        all.extend(ordinary.into_iter().map(String::from));
        let index = all
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Vocab { words: all, index }
    }

    /// Id for a token; unknown words and stray sentence markers map to UNK.
    pub fn id(&self, token: &str) -> u32 {
        match self.index.get(token) {
            Some(&id) if id != BOS_ID && id != EOS_ID => id,
            Some(_) => UNK_ID,
            None => UNK_ID,
        }
    }

    /// Id for a predicted word as named by callers: like [`Vocab::id`] but
    /// [`EOS`] keeps its own id.
    pub fn word_id(&self, token: &str) -> u32 {
        if token == EOS {
            EOS_ID
        } else {
            self.id(token)
        }
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Every token a model can predict: the vocabulary without [`BOS`].
    pub fn predictable(&self) -> impl Iterator<Item = &str> {
        self.words[1..].iter().map(String::as_str)
    }

    pub(crate) fn predictable_ids(&self) -> std::ops::Range<u32> {
        1..self.words.len() as u32
    }
}

fn is_reserved(w: &str) -> bool {
    w == BOS || w == EOS || w == UNK
}

/// Anything that assigns base-10 log-probabilities to predicted positions.
pub trait LanguageModel: Sync {
    /// One entry per predicted position: every token, then the end marker.
    fn position_log10_probs(&self, tokens: &[String]) -> Vec<f64>;

    fn sentence_log10_prob(&self, tokens: &[String]) -> f64 {
        self.position_log10_probs(tokens).iter().sum()
    }
}

/// Corpus perplexity, `10^(-total_log10 / predicted_positions)`.
///
/// Sentences are scored in parallel but summed in corpus order, so the result
/// does not depend on the worker count.
pub fn perplexity<M: LanguageModel + ?Sized>(model: &M, corpus: &[Vec<String>]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("perplexity corpus".into()));
    }
    let per_sentence: Vec<f64> = corpus
        .par_iter()
        .map(|s| model.sentence_log10_prob(s))
        .collect();
    let total: f64 = per_sentence.iter().sum();
    let positions: usize = corpus.iter().map(|s| s.len() + 1).sum();
    Ok(10f64.powf(-total / positions as f64))
}
