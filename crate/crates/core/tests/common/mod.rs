#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;
use transboot::lm::LanguageModel;
use transboot::postedit::{AttentionMatrix, TranslationHypothesis};

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Attention with weight `0.7` on the aligned column and the rest spread
/// evenly, so the argmax is always the aligned column.
pub fn peaked_attention(alignment: &[usize], cols: usize) -> AttentionMatrix {
    let rows = alignment
        .iter()
        .map(|&j| {
            if cols == 1 {
                return vec![1.0];
            }
            let rest = 0.3 / (cols - 1) as f64;
            (0..cols).map(|c| if c == j { 0.7 } else { rest }).collect()
        })
        .collect();
    AttentionMatrix::new(rows).expect("valid attention")
}

pub fn hypothesis(source: &[String], target: &[String], alignment: &[usize], logprobs: Vec<f64>) -> TranslationHypothesis {
    TranslationHypothesis::new(
        source.to_vec(),
        target.to_vec(),
        logprobs,
        peaked_attention(alignment, source.len()),
    )
    .expect("valid hypothesis")
}

/// Scores whole sentences from a lookup table, spreading the total evenly
/// over predicted positions. Unknown sentences get `default`.
pub struct TableLm {
    pub scores: HashMap<Vec<String>, f64>,
    pub default: f64,
}

impl LanguageModel for TableLm {
    fn position_log10_probs(&self, tokens: &[String]) -> Vec<f64> {
        let total = self.scores.get(tokens).copied().unwrap_or(self.default);
        let n = tokens.len() + 1;
        vec![total / n as f64; n]
    }
}

/// Sentences of 1..=max_len tokens drawn uniformly from `w0..w{vocab-1}`.
pub fn random_corpus<R: Rng>(rng: &mut R, sentences: usize, vocab: usize, max_len: usize) -> Vec<Vec<String>> {
    (0..sentences)
        .map(|_| {
            let len = rng.gen_range(1..=max_len);
            (0..len).map(|_| format!("w{}", rng.gen_range(0..vocab))).collect()
        })
        .collect()
}

/// Sentences from a skewed bigram process, so counts of every order repeat
/// often enough to exercise discounting.
pub fn zipf_corpus<R: Rng>(rng: &mut R, sentences: usize, vocab: usize) -> Vec<Vec<String>> {
    let weights: Vec<f64> = (1..=vocab).map(|r| 1.0 / r as f64).collect();
    let dist = rand::distributions::WeightedIndex::new(&weights).expect("positive weights");
    (0..sentences)
        .map(|_| {
            let len = rng.gen_range(2..=9);
            let mut prev = rng.sample(&dist);
            let mut s = vec![format!("w{prev}")];
            for _ in 1..len {
                let next = if rng.gen_bool(0.5) { (prev + 1) % vocab } else { rng.sample(&dist) };
                s.push(format!("w{next}"));
                prev = next;
            }
            s
        })
        .collect()
}
