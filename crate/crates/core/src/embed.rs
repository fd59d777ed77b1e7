//! Unsupervised sentence embeddings.
//!
//! Three sources are supported: plain averages of word vectors, smooth
//! inverse frequency (SIF) weighted averages with the first principal
//! direction removed, and vectors computed elsewhere and imported from a
//! text file.

use std::io::BufReader;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{parse_vector_rows, FrequencyTable, Utterance, WordVectorTable};
use crate::error::{Error, Result};
use crate::io::open;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMethod {
    Average,
    Sif,
    External,
}

impl std::str::FromStr for EmbeddingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(EmbeddingMethod::Average),
            "sif" => Ok(EmbeddingMethod::Sif),
            "external" => Ok(EmbeddingMethod::External),
            other => Err(Error::InvalidArgument(format!("unknown embedding method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbedding {
    pub sentence_id: String,
    pub vector: Vec<f64>,
    pub method: EmbeddingMethod,
    /// Set when no token of the sentence had a word vector; the vector is
    /// then all zeros.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SifParams {
    pub a: f64,
    pub max_power_iterations: usize,
    pub tol: f64,
}

impl Default for SifParams {
    fn default() -> Self {
        SifParams {
            a: 1e-3,
            max_power_iterations: 100,
            tol: 1e-9,
        }
    }
}

fn weighted_mean<F>(tokens: &[String], table: &WordVectorTable, weight: F) -> (Vec<f64>, bool)
where
    F: Fn(&str) -> f64,
{
    let mut acc = vec![0.0; table.dim()];
    let mut n = 0usize;
    for tok in tokens {
        if let Some(v) = table.get(tok) {
            let w = weight(tok);
            acc.iter_mut().zip(v).for_each(|(a, x)| *a += w * x);
            n += 1;
        }
    }
    if n == 0 {
        return (acc, true);
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    (acc, false)
}

/// Mean of the word vectors of in-table tokens. Out-of-table tokens are
/// skipped; a sentence with none left yields a flagged zero vector.
pub fn embed_average(sentence_id: &str, tokens: &[String], table: &WordVectorTable) -> SentenceEmbedding {
    let (vector, degenerate) = weighted_mean(tokens, table, |_| 1.0);
    if degenerate {
        log::warn!("sentence `{sentence_id}` has no token with a word vector");
    }
    SentenceEmbedding {
        sentence_id: sentence_id.to_string(),
        vector,
        method: EmbeddingMethod::Average,
        degenerate,
    }
}

pub fn embed_average_all(sentences: &[Utterance], table: &WordVectorTable) -> Vec<SentenceEmbedding> {
    sentences
        .par_iter()
        .map(|u| embed_average(&u.id, &u.tokens, table))
        .collect()
}

/// SIF embeddings together with the removed direction.
#[derive(Debug, Clone)]
pub struct SifOutput {
    pub embeddings: Vec<SentenceEmbedding>,
    pub direction: Vec<f64>,
}

/// Frequency-weighted averages `mean_w [a / (a + relfreq(w))] * vec(w)` with
/// their projection on the first principal direction removed.
pub fn embed_sif(
    sentences: &[Utterance],
    table: &WordVectorTable,
    freq: &FrequencyTable,
    params: &SifParams,
) -> Result<SifOutput> {
    if !(params.a > 0.0) {
        return Err(Error::InvalidArgument(format!("SIF parameter a must be positive, got {}", params.a)));
    }
    if sentences.len() < 2 {
        return Err(Error::EmptyInput("SIF needs at least two sentences".into()));
    }
    let a = params.a;
    let raw: Vec<(Vec<f64>, bool)> = sentences
        .par_iter()
        .map(|u| weighted_mean(&u.tokens, table, |w| a / (a + freq.relfreq(w))))
        .collect();
    if raw.iter().all(|(_, degenerate)| *degenerate) {
        return Err(Error::EmptyInput("no sentence has a token with a word vector".into()));
    }
    let vectors: Vec<Vec<f64>> = raw.iter().map(|(v, _)| v.clone()).collect();
    let direction = first_principal_direction(&vectors, params)?;
    let embeddings = sentences
        .par_iter()
        .zip(raw)
        .map(|(u, (v, degenerate))| {
            if degenerate {
                log::warn!("sentence `{}` has no token with a word vector", u.id);
            }
            SentenceEmbedding {
                sentence_id: u.id.clone(),
                vector: remove_projection(&v, &direction),
                method: EmbeddingMethod::Sif,
                degenerate,
            }
        })
        .collect();
    Ok(SifOutput { embeddings, direction })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `v - (u.v) u` for unit `u`, applied twice to clean up rounding.
pub fn remove_projection(v: &[f64], unit: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    for _ in 0..2 {
        let p = dot(&out, unit);
        out.iter_mut().zip(unit).for_each(|(o, u)| *o -= p * u);
    }
    out
}

/// Dominant eigenvector of the uncentered second-moment matrix `sum v v^T`,
/// found by power iteration from the normalized sum of the inputs. The sign
/// is fixed so the first nonzero coordinate is positive.
pub fn first_principal_direction(vectors: &[Vec<f64>], params: &SifParams) -> Result<Vec<f64>> {
    let dim = vectors
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::EmptyInput("principal direction of no vectors".into()))?;
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: v.len(),
        });
    }
    let mut moment = vec![0.0; dim * dim];
    for v in vectors {
        for i in 0..dim {
            for j in 0..dim {
                moment[i * dim + j] += v[i] * v[j];
            }
        }
    }
    if moment.iter().all(|m| *m == 0.0) {
        return Err(Error::InvalidArgument("principal direction of all-zero vectors".into()));
    }

    let mut u = vec![0.0; dim];
    for v in vectors {
        u.iter_mut().zip(v).for_each(|(a, x)| *a += x);
    }
    let largest = vectors
        .iter()
        .map(|v| norm(v))
        .fold(0.0f64, f64::max);
    if norm(&u) <= 1e-12 * largest {
        // Inputs cancel out; start from the longest vector instead.
        u = vectors
            .iter()
            .max_by(|a, b| norm(a).total_cmp(&norm(b)))
            .cloned()
            .expect("non-empty");
    }
    let n = norm(&u);
    u.iter_mut().for_each(|x| *x /= n);

    for _ in 0..params.max_power_iterations {
        let mut next: Vec<f64> = (0..dim)
            .map(|i| dot(&moment[i * dim..(i + 1) * dim], &u))
            .collect();
        let len = norm(&next);
        if len == 0.0 {
            break;
        }
        next.iter_mut().for_each(|x| *x /= len);
        let change = norm(&next.iter().zip(&u).map(|(a, b)| a - b).collect::<Vec<_>>());
        u = next;
        if change < params.tol {
            break;
        }
    }

    if let Some(first) = u.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            u.iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok(u)
}

/// Reads sentence vectors produced by an external encoder: a "count dim"
/// header followed by `sentence_id v1 ... v_dim` rows, order preserved.
pub fn import_external_embeddings(path: impl AsRef<Path>) -> Result<Vec<SentenceEmbedding>> {
    let path = path.as_ref();
    let (_, rows) = parse_vector_rows(BufReader::new(open(path)?), path)?;
    Ok(rows
        .into_iter()
        .map(|(id, vector)| SentenceEmbedding {
            degenerate: vector.iter().all(|x| *x == 0.0),
            sentence_id: id,
            vector,
            method: EmbeddingMethod::External,
        })
        .collect())
}

/// Writes embeddings in the same "count dim" text layout that
/// [`import_external_embeddings`] reads.
pub fn format_embeddings(embeddings: &[SentenceEmbedding]) -> String {
    let dim = embeddings.first().map_or(0, |e| e.vector.len());
    let mut out = format!("{} {}\n", embeddings.len(), dim);
    for e in embeddings {
        out.push_str(&e.sentence_id);
        for x in &e.vector {
            out.push(' ');
            out.push_str(&format!("{x:.9}"));
        }
        out.push('\n');
    }
    out
}

/// Scales a vector to unit length (zero vectors are returned unchanged).
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}
