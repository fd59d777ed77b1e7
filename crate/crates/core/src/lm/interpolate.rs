use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{KatzModel, LanguageModel};
use crate::error::{Error, Result};

pub const EM_MAX_ITERATIONS: usize = 100;
/// Stop once the tuning log-likelihood (natural log) gains less than this per
/// predicted position.
pub const EM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentRole {
    Transcribed,
    Translated,
}

#[derive(Debug, Clone)]
pub struct Component {
    pub role: ComponentRole,
    pub model: Arc<KatzModel>,
}

impl Component {
    pub fn new(role: ComponentRole, model: impl Into<Arc<KatzModel>>) -> Self {
        Component {
            role,
            model: model.into(),
        }
    }
}

/// Static linear mixture of back-off models: each predicted position gets
/// `sum_i weight_i * P_i(w | h)`.
#[derive(Debug, Clone)]
pub struct InterpolatedModel {
    components: Vec<Component>,
    weights: Vec<f64>,
    floor: f64,
}

impl InterpolatedModel {
    pub fn new(components: Vec<Component>, weights: Vec<f64>, floor: f64) -> Result<Self> {
        if components.is_empty() || components.len() != weights.len() {
            return Err(Error::InvalidArgument(format!(
                "{} components but {} weights",
                components.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument("mixture weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(InterpolatedModel {
            components,
            weights,
            floor,
        })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Total weight on components tagged [`ComponentRole::Translated`].
    pub fn translated_weight(&self) -> f64 {
        self.components
            .iter()
            .zip(&self.weights)
            .filter(|(c, _)| c.role == ComponentRole::Translated)
            .map(|(_, w)| w)
            .sum()
    }
}

impl LanguageModel for InterpolatedModel {
    fn position_log10_probs(&self, tokens: &[String]) -> Vec<f64> {
        let per_component: Vec<Vec<f64>> = self
            .components
            .iter()
            .map(|c| c.model.position_log10_probs(tokens))
            .collect();
        (0..tokens.len() + 1)
            .map(|j| {
                let mix: f64 = per_component
                    .iter()
                    .zip(&self.weights)
                    .map(|(lp, w)| w * 10f64.powf(lp[j]))
                    .sum();
                mix.log10()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmOutcome {
    /// Weights at the EM fixed point, before any floor is applied.
    pub weights: Vec<f64>,
    /// Natural-log tuning likelihood: entry 0 is the uniform start, entry
    /// `t` the value after iteration `t`.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn mixture_log_likelihood(position_probs: &[Vec<f64>], weights: &[f64]) -> f64 {
    let positions = position_probs[0].len();
    (0..positions)
        .map(|j| {
            position_probs
                .iter()
                .zip(weights)
                .map(|(p, w)| w * p[j])
                .sum::<f64>()
                .ln()
        })
        .sum()
}

/// Maximum-likelihood mixture weights by expectation maximization.
///
/// `position_probs[i][j]` is component `i`'s (linear) probability of
/// predicted position `j`. Starts from uniform weights, so identical
/// components stay uniform.
#[allow(clippy::needless_range_loop)]
pub fn em_mixture_weights(
    position_probs: &[Vec<f64>],
    max_iterations: usize,
    tolerance: f64,
) -> Result<EmOutcome> {
    let k = position_probs.len();
    if k == 0 {
        return Err(Error::EmptyInput("mixture components".into()));
    }
    let positions = position_probs[0].len();
    if positions == 0 {
        return Err(Error::EmptyInput("tuning positions".into()));
    }
    if position_probs.iter().any(|p| p.len() != positions) {
        return Err(Error::InvalidArgument("components scored different position counts".into()));
    }

    let mut weights = vec![1.0 / k as f64; k];
    let mut ll = mixture_log_likelihood(position_probs, &weights);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iterations {
        let mut responsibility = vec![0.0; k];
        for j in 0..positions {
            let mix: f64 = (0..k).map(|i| weights[i] * position_probs[i][j]).sum();
            if mix > 0.0 {
                for (i, r) in responsibility.iter_mut().enumerate() {
                    *r += weights[i] * position_probs[i][j] / mix;
                }
            }
        }
        let total: f64 = responsibility.iter().sum();
        let next: Vec<f64> = responsibility.iter().map(|r| r / total).collect();
        let next_ll = mixture_log_likelihood(position_probs, &next);
        iterations += 1;
        let gain = (next_ll - ll) / positions as f64;
        weights = next;
        ll = next_ll;
        trace.push(ll);
        if gain < tolerance {
            converged = true;
            break;
        }
    }
    Ok(EmOutcome {
        weights,
        log_likelihoods: trace,
        iterations,
        converged,
    })
}

/// Raises the translated share of `weights` to `floor` when it falls below,
/// rescaling the remaining components proportionally.
pub fn apply_floor(weights: &[f64], roles: &[ComponentRole], floor: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&floor) {
        return Err(Error::InvalidArgument(format!("floor must lie in [0, 1), got {floor}")));
    }
    let translated: Vec<usize> = (0..roles.len())
        .filter(|&i| roles[i] == ComponentRole::Translated)
        .collect();
    let share: f64 = translated.iter().map(|&i| weights[i]).sum();
    if translated.is_empty() || share >= floor {
        return Ok(weights.to_vec());
    }
    let rest = 1.0 - share;
    let mut out = weights.to_vec();
    for (i, w) in out.iter_mut().enumerate() {
        if roles[i] == ComponentRole::Translated {
            *w = if translated.len() == 1 {
                floor
            } else if share > 0.0 {
                floor * *w / share
            } else {
                floor / translated.len() as f64
            };
        } else {
            *w *= (1.0 - floor) / rest;
        }
    }
    // Fold the rounding residual into the largest remaining weight so the
    // non-translated share is exactly `1 - floor`.
    let others: Vec<usize> = (0..roles.len())
        .filter(|&i| roles[i] != ComponentRole::Translated)
        .collect();
    if let Some(&big) = others.iter().max_by(|&&a, &&b| out[a].total_cmp(&out[b])) {
        let rest_sum: f64 = others.iter().filter(|&&i| i != big).map(|&i| out[i]).sum();
        out[big] = (1.0 - floor) - rest_sum;
    }
    Ok(out)
}

/// Tunes mixture weights on held-out sentences by EM, then applies the
/// translated-component floor.
pub fn tune_interpolation(
    components: Vec<Component>,
    tuning_corpus: &[Vec<String>],
    floor: f64,
) -> Result<(InterpolatedModel, EmOutcome)> {
    if components.len() < 2 {
        return Err(Error::InvalidArgument("interpolation needs at least two components".into()));
    }
    if tuning_corpus.is_empty() {
        return Err(Error::EmptyInput("tuning corpus".into()));
    }
    if !(0.0..1.0).contains(&floor) {
        return Err(Error::InvalidArgument(format!("floor must lie in [0, 1), got {floor}")));
    }
    let position_probs: Vec<Vec<f64>> = components
        .iter()
        .map(|c| {
            let per_sentence: Vec<Vec<f64>> = tuning_corpus
                .par_iter()
                .map(|s| c.model.position_log10_probs(s))
                .collect();
            per_sentence.into_iter().flatten().map(|lp| 10f64.powf(lp)).collect()
        })
        .collect();
    let outcome = em_mixture_weights(&position_probs, EM_MAX_ITERATIONS, EM_TOLERANCE)?;
    let roles: Vec<ComponentRole> = components.iter().map(|c| c.role).collect();
    let weights = apply_floor(&outcome.weights, &roles, floor)?;
    let model = InterpolatedModel::new(components, weights, floor)?;
    Ok((model, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn em_moves_toward_better_component() {
        // Component 0: uniform over {a, b}; component 1: 0.9 on a. Data: all a.
        let probs = vec![vec![0.5; 50], vec![0.9; 50]];
        let out = em_mixture_weights(&probs, 100, 1e-6).unwrap();
        assert!(out.weights[1] > 0.99, "{:?}", out.weights);
        assert!(out.log_likelihoods.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn identical_components_stay_uniform() {
        let probs = vec![vec![0.3, 0.2, 0.1], vec![0.3, 0.2, 0.1]];
        let out = em_mixture_weights(&probs, 100, 1e-6).unwrap();
        assert_eq!(out.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn floor_clamps_exactly() {
        let roles = [ComponentRole::Transcribed, ComponentRole::Translated];
        let w = apply_floor(&[0.9, 0.1], &roles, 0.25).unwrap();
        assert_eq!(w, vec![0.75, 0.25]);
        for share in [0.01, 0.037, 0.0999] {
            for floor in [0.1, 0.15, 0.3, 0.7] {
                let w = apply_floor(&[1.0 - share, share], &roles, floor).unwrap();
                assert_eq!(w, vec![1.0 - floor, floor]);
            }
        }
        let w = apply_floor(&[0.6, 0.4], &roles, 0.25).unwrap();
        assert_eq!(w, vec![0.6, 0.4]);
        assert!(apply_floor(&[0.5, 0.5], &roles, 1.0).is_err());
    }

    #[test]
    fn floor_with_three_components() {
        let roles = [
            ComponentRole::Transcribed,
            ComponentRole::Transcribed,
            ComponentRole::Translated,
        ];
        let w = apply_floor(&[0.6, 0.3, 0.1], &roles, 0.4).unwrap();
        assert_eq!(w[2], 0.4);
        assert!((w[0] - 0.4).abs() < 1e-12);
        assert!((w[1] - 0.2).abs() < 1e-12);
    }
}
