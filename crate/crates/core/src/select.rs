//! In-domain data selection by relative centroid distance.
//!
//! A candidate sentence `s` with embedding `v` scores
//! `delta = |v - c_in| - |v - c_out|`, where `c_in` and `c_out` are the mean
//! embeddings of the in-domain and out-of-domain sets. Lower scores look more
//! in-domain.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::embed::SentenceEmbedding;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidPair {
    pub c_in: Vec<f64>,
    pub c_out: Vec<f64>,
}

impl CentroidPair {
    pub fn dim(&self) -> usize {
        self.c_in.len()
    }

    /// The same pair with the in-domain and out-of-domain roles exchanged.
    pub fn swapped(&self) -> CentroidPair {
        CentroidPair {
            c_in: self.c_out.clone(),
            c_out: self.c_in.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionScore {
    pub sentence_id: String,
    pub delta: f64,
}

fn mean(vectors: &[Vec<f64>], what: &str, dim: Option<usize>) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::EmptyInput(format!("{what} set has no vectors")))?;
    let dim = dim.unwrap_or(first.len());
    let mut acc = vec![0.0; dim];
    for v in vectors {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
    }
    acc.iter_mut().for_each(|a| *a /= vectors.len() as f64);
    Ok(acc)
}

pub fn compute_centroids(in_vecs: &[Vec<f64>], out_vecs: &[Vec<f64>]) -> Result<CentroidPair> {
    let c_in = mean(in_vecs, "in-domain", None)?;
    let c_out = mean(out_vecs, "out-of-domain", Some(c_in.len()))?;
    Ok(CentroidPair { c_in, c_out })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn delta_score(v: &[f64], centroids: &CentroidPair) -> Result<f64> {
    if v.len() != centroids.dim() {
        return Err(Error::DimensionMismatch {
            expected: centroids.dim(),
            found: v.len(),
        });
    }
    Ok(distance(v, &centroids.c_in) - distance(v, &centroids.c_out))
}

/// Scores every candidate embedding in parallel, keeping input order.
pub fn score_candidates(candidates: &[SentenceEmbedding], centroids: &CentroidPair) -> Result<Vec<SelectionScore>> {
    candidates
        .par_iter()
        .map(|e| {
            Ok(SelectionScore {
                sentence_id: e.sentence_id.clone(),
                delta: delta_score(&e.vector, centroids)?,
            })
        })
        .collect()
}

/// Number of items kept by a nearest-rank cutoff, `ceil(fraction * n)`.
///
/// A tiny slack absorbs products such as `0.55 * 100` that land just above
/// an integer in floating point.
pub fn nearest_rank(fraction: f64, n: usize) -> usize {
    let k = (fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
    k.min(n)
}

/// Ids of the `ceil(fraction * n)` lowest-delta sentences, ascending by delta
/// with ties broken by id.
pub fn select_top_fraction(scores: &[SelectionScore], fraction: f64) -> Result<Vec<String>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("selection fraction must lie in (0, 1], got {fraction}")));
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput("no selection scores".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !s.delta.is_finite()) {
        return Err(Error::validation(&bad.sentence_id, "non-finite delta"));
    }
    let mut order: Vec<&SelectionScore> = scores.iter().collect();
    order.sort_by(|a, b| {
        a.delta
            .total_cmp(&b.delta)
            .then_with(|| a.sentence_id.cmp(&b.sentence_id))
    });
    let k = nearest_rank(fraction, scores.len());
    Ok(order[..k].iter().map(|s| s.sentence_id.clone()).collect())
}

/// Header plus `id<TAB>delta` lines in input order.
pub fn format_scores(scores: &[SelectionScore]) -> String {
    let mut out = String::from("id\tdelta\n");
    for s in scores {
        let _ = writeln!(out, "{}\t{:.9}", s.sentence_id, s.delta);
    }
    out
}
