//! Domain adaptation of translations: n-best rescoring with an in-domain LM,
//! percentile filtering, and export of synthetic parallel pairs for an
//! external finetuning job.
//!
//! Decoder scores arrive as natural logs and LM scores are base 10; both
//! are put on the natural-log scale before being combined.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::postedit::{NBestList, TranslationHypothesis};
use crate::select::nearest_rank;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescoreConfig {
    pub lm_weight: f64,
    pub length_normalize: bool,
}

impl Default for RescoreConfig {
    fn default() -> Self {
        RescoreConfig {
            lm_weight: 0.3,
            length_normalize: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMetric {
    MtScore,
    SlmScore,
}

impl FilterMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterMetric::MtScore => "mt_score",
            FilterMetric::SlmScore => "slm_score",
        }
    }
}

impl std::str::FromStr for FilterMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mt_score" | "mt" => Ok(FilterMetric::MtScore),
            "slm_score" | "slm" => Ok(FilterMetric::SlmScore),
            other => Err(Error::InvalidArgument(format!("unknown filter metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub metric: FilterMetric,
    pub keep_fraction: f64,
    pub length_normalize: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            metric: FilterMetric::SlmScore,
            keep_fraction: 0.75,
            length_normalize: true,
        }
    }
}

/// Decoder score of a hypothesis, natural log, optionally per target token.
pub fn mt_log_score(hyp: &TranslationHypothesis, length_normalize: bool) -> f64 {
    let total = hyp.mt_score();
    if length_normalize {
        total / hyp.target_tokens.len() as f64
    } else {
        total
    }
}

/// LM score of the target side in natural log, optionally per predicted
/// position (tokens plus the end marker).
pub fn lm_log_score<M: LanguageModel + ?Sized>(lm: &M, tokens: &[String], length_normalize: bool) -> f64 {
    let total = lm.sentence_log10_prob(tokens) * std::f64::consts::LN_10;
    if length_normalize {
        total / (tokens.len() + 1) as f64
    } else {
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypothesisScore {
    pub mt: f64,
    pub lm: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RescoreOutcome {
    /// Index of the winning hypothesis in the original n-best order.
    pub chosen: usize,
    pub scores: Vec<HypothesisScore>,
}

/// Picks the hypothesis maximizing `(1 - w) * mt + w * lm`; ties go to the
/// earlier hypothesis.
pub fn rescore<M: LanguageModel + ?Sized>(nbest: &NBestList, lm: &M, cfg: &RescoreConfig) -> Result<RescoreOutcome> {
    if !(0.0..=1.0).contains(&cfg.lm_weight) {
        return Err(Error::InvalidArgument(format!("LM weight must lie in [0, 1], got {}", cfg.lm_weight)));
    }
    if nbest.hypotheses.is_empty() {
        return Err(Error::EmptyInput(format!("n-best list `{}` is empty", nbest.id)));
    }
    let w = cfg.lm_weight;
    let scores: Vec<HypothesisScore> = nbest
        .hypotheses
        .iter()
        .map(|h| {
            let mt = mt_log_score(h, cfg.length_normalize);
            let lm = lm_log_score(lm, &h.target_tokens, cfg.length_normalize);
            HypothesisScore {
                mt,
                lm,
                combined: (1.0 - w) * mt + w * lm,
            }
        })
        .collect();
    let mut chosen = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if s.combined > scores[chosen].combined {
            chosen = i;
        }
    }
    Ok(RescoreOutcome { chosen, scores })
}

/// Rescores many lists in parallel, preserving input order.
pub fn rescore_all<M: LanguageModel + ?Sized>(
    lists: &[NBestList],
    lm: &M,
    cfg: &RescoreConfig,
) -> Result<Vec<RescoreOutcome>> {
    lists
        .par_iter()
        .map(|l| rescore(l, lm, cfg).map_err(|e| e.in_stage("rescore", l.id.clone())))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    /// `(id, score)` in input order.
    pub scores: Vec<(String, f64)>,
    /// Retained ids, best first.
    pub retained: Vec<String>,
}

/// Keeps the best `ceil(keep_fraction * n)` translations by decoder or
/// in-domain LM score, ranked descending with ties broken by id.
pub fn filter_translations<M: LanguageModel + ?Sized>(
    items: &[(String, &TranslationHypothesis)],
    cfg: &FilterConfig,
    lm: Option<&M>,
) -> Result<FilterOutcome> {
    if !(cfg.keep_fraction > 0.0 && cfg.keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep fraction must lie in (0, 1], got {}",
            cfg.keep_fraction
        )));
    }
    if items.is_empty() {
        return Err(Error::EmptyInput("no translations to filter".into()));
    }
    let lm = match (cfg.metric, lm) {
        (FilterMetric::SlmScore, None) => {
            return Err(Error::InvalidArgument("slm_score filtering needs a language model".into()))
        }
        (_, lm) => lm,
    };
    let scores: Vec<(String, f64)> = items
        .par_iter()
        .map(|(id, h)| {
            let s = match cfg.metric {
                FilterMetric::MtScore => mt_log_score(h, cfg.length_normalize),
                FilterMetric::SlmScore => {
                    lm_log_score(lm.expect("checked above"), &h.target_tokens, cfg.length_normalize)
                }
            };
            (id.clone(), s)
        })
        .collect();
    let retained = retain_top(&scores, cfg.keep_fraction)?;
    Ok(FilterOutcome { scores, retained })
}

/// Ids of the `ceil(keep_fraction * n)` highest scores, best first, ties
/// broken by id.
pub fn retain_top(scores: &[(String, f64)], keep_fraction: f64) -> Result<Vec<String>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("keep fraction must lie in (0, 1], got {keep_fraction}")));
    }
    if let Some((id, _)) = scores.iter().find(|(_, s)| s.is_nan()) {
        return Err(Error::validation(id, "score is NaN"));
    }
    let mut ranked: Vec<&(String, f64)> = scores.iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let k = nearest_rank(keep_fraction, ranked.len());
    Ok(ranked[..k].iter().map(|(id, _)| id.clone()).collect())
}

/// Header plus `id<TAB>metric<TAB>score` lines.
pub fn format_filter_scores(scores: &[(String, f64)], metric: FilterMetric) -> String {
    let mut out = String::from("id\tmetric\tscore\n");
    for (id, s) in scores {
        let _ = writeln!(out, "{id}\t{}\t{s:.9}", metric.as_str());
    }
    out
}

pub type ParallelPair = (Vec<String>, Vec<String>);

/// Pairs each source utterance with the edited translation of the same id,
/// in source order.
pub fn build_synthetic_parallel(sources: &[Utterance], translations: &[(String, Vec<String>)]) -> Result<Vec<ParallelPair>> {
    let by_id: HashMap<&str, &Vec<String>> = translations.iter().map(|(id, t)| (id.as_str(), t)).collect();
    let source_ids: HashSet<&str> = sources.iter().map(|u| u.id.as_str()).collect();
    let mut orphans: Vec<String> = sources
        .iter()
        .filter(|u| !by_id.contains_key(u.id.as_str()))
        .map(|u| format!("source `{}`", u.id))
        .collect();
    orphans.extend(
        translations
            .iter()
            .filter(|(id, _)| !source_ids.contains(id.as_str()))
            .map(|(id, _)| format!("translation `{id}`")),
    );
    if !orphans.is_empty() {
        return Err(Error::validation(
            "synthetic parallel corpus",
            format!("unmatched ids: {}", orphans.join(", ")),
        ));
    }
    Ok(sources
        .iter()
        .map(|u| (u.tokens.clone(), by_id[u.id.as_str()].clone()))
        .collect())
}

pub fn format_parallel_tsv(pairs: &[ParallelPair]) -> String {
    let mut out = String::new();
    for (s, t) in pairs {
        let _ = writeln!(out, "{}\t{}", s.join(" "), t.join(" "));
    }
    out
}

pub fn parse_parallel_tsv<R: BufRead>(reader: R, path: &Path) -> Result<Vec<ParallelPair>> {
    let mut pairs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let (s, t) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, idx + 1, "expected `source<TAB>target`"))?;
        let split = |x: &str| x.split(' ').filter(|t| !t.is_empty()).map(String::from).collect();
        pairs.push((split(s), split(t)));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postedit::AttentionMatrix;

    /// Scores every token log10(0.1) except the listed favourite words.
    struct ToyLm(Vec<&'static str>);

    impl LanguageModel for ToyLm {
        fn position_log10_probs(&self, tokens: &[String]) -> Vec<f64> {
            let mut v: Vec<f64> = tokens
                .iter()
                .map(|t| if self.0.contains(&t.as_str()) { 0.0 } else { -1.0 })
                .collect();
            v.push(0.0);
            v
        }
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn hyp(target: &str, lp: f64) -> TranslationHypothesis {
        let t = toks(target);
        let n = t.len();
        TranslationHypothesis::new(
            toks("src"),
            t,
            vec![lp; n],
            AttentionMatrix::new(vec![vec![1.0]; n]).unwrap(),
        )
        .unwrap()
    }

    fn nbest(hyps: Vec<TranslationHypothesis>) -> NBestList {
        NBestList {
            id: "n".into(),
            source_tokens: toks("src"),
            source_entities: vec![],
            scenario: None,
            hypotheses: hyps,
        }
    }

    #[test]
    fn combined_score_arithmetic() {
        // One token scored -1 by the decoder; LM gives ln(1e-2)/2 per position.
        let list = nbest(vec![hyp("x", -1.0)]);
        let out = rescore(&list, &ToyLm(vec![]), &RescoreConfig::default()).unwrap();
        let lm = -std::f64::consts::LN_10 / 2.0;
        assert!((out.scores[0].combined - (-0.7 + 0.3 * lm)).abs() < 1e-12);
    }

    #[test]
    fn weight_extremes() {
        let list = nbest(vec![hyp("a", -0.5), hyp("good", -2.0)]);
        let lm = ToyLm(vec!["good"]);
        let cfg = |w| RescoreConfig {
            lm_weight: w,
            length_normalize: true,
        };
        assert_eq!(rescore(&list, &lm, &cfg(0.0)).unwrap().chosen, 0);
        assert_eq!(rescore(&list, &lm, &cfg(1.0)).unwrap().chosen, 1);
        assert!(rescore(&list, &lm, &cfg(1.2)).is_err());
        assert!(rescore(&nbest(vec![]), &lm, &cfg(0.3)).is_err());
    }

    #[test]
    fn ties_keep_original_rank() {
        let list = nbest(vec![hyp("a", -1.0), hyp("b", -1.0)]);
        assert_eq!(rescore(&list, &ToyLm(vec![]), &RescoreConfig::default()).unwrap().chosen, 0);
    }

    #[test]
    fn filter_keeps_top_three_of_four() {
        let hs = [hyp("a", -1.0), hyp("b", -2.0), hyp("c", -3.0), hyp("d", -4.0)];
        let items: Vec<(String, &TranslationHypothesis)> =
            ["d", "c", "b", "a"].iter().zip(hs.iter().rev()).map(|(id, h)| (id.to_string(), h)).collect();
        let cfg = FilterConfig {
            metric: FilterMetric::MtScore,
            keep_fraction: 0.75,
            length_normalize: true,
        };
        let out = filter_translations::<ToyLm>(&items, &cfg, None).unwrap();
        assert_eq!(out.retained, ["a", "b", "c"]);
        let all = filter_translations::<ToyLm>(&items, &FilterConfig { keep_fraction: 1.0, ..cfg }, None).unwrap();
        assert_eq!(all.retained.len(), 4);
        let slm = FilterConfig {
            metric: FilterMetric::SlmScore,
            ..cfg
        };
        assert!(filter_translations::<ToyLm>(&items, &slm, None).is_err());
        assert_eq!(filter_translations(&items, &slm, Some(&ToyLm(vec![]))).unwrap().retained.len(), 3);
    }

    #[test]
    fn parallel_pairs_round_trip_and_orphans() {
        let sources = vec![
            Utterance::from_text("1", "play music").unwrap(),
            Utterance::from_text("2", "stop").unwrap(),
        ];
        let tr = vec![("2".to_string(), toks("band karo")), ("1".to_string(), toks("gaana bajao"))];
        let pairs = build_synthetic_parallel(&sources, &tr).unwrap();
        let tsv = format_parallel_tsv(&pairs);
        assert_eq!(tsv, "play music\tgaana bajao\nstop\tband karo\n");
        let back = parse_parallel_tsv(std::io::Cursor::new(tsv), Path::new("mem")).unwrap();
        assert_eq!(back, pairs);

        let tr = vec![("1".to_string(), toks("x")), ("9".to_string(), toks("y"))];
        let msg = build_synthetic_parallel(&sources, &tr).unwrap_err().to_string();
        assert!(msg.contains("source `2`") && msg.contains("translation `9`"), "{msg}");
    }

    #[test]
    fn score_dump_layout() {
        assert_eq!(
            format_filter_scores(&[("a".into(), -1.5)], FilterMetric::SlmScore),
            "id\tmetric\tscore\na\tslm_score\t-1.500000000\n"
        );
    }
}
