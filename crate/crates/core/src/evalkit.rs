//! Evaluation metrics: corpus BLEU, word error rate and its relative
//! reduction, Pearson correlation with a two-tailed p-value, and the
//! per-scenario breakdown report.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU in `[0, 100]` with one reference per hypothesis.
///
/// Clipped n-gram matches and candidate n-gram totals are pooled over the
/// corpus for `n = 1..=max_n`. An order for which the hypotheses contain no
/// n-grams at all is left out of the geometric mean. Without smoothing any
/// zero precision gives 0; `smooth` adds one to the numerator and
/// denominator of orders above 1.
pub fn corpus_bleu(hypotheses: &[Vec<String>], references: &[Vec<String>], max_n: usize, smooth: bool) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::InvalidArgument("BLEU order must be at least 1".into()));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            totals[n - 1] += h.len().saturating_sub(n - 1);
            matches[n - 1] += hc
                .iter()
                .map(|(g, c)| (*c).min(rc.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 0..max_n {
        if totals[n] == 0 {
            continue;
        }
        let (m, t) = if smooth && n > 0 {
            (matches[n] as f64 + 1.0, totals[n] as f64 + 1.0)
        } else {
            (matches[n] as f64, totals[n] as f64)
        };
        if m == 0.0 {
            return Ok(0.0);
        }
        log_sum += (m / t).ln();
        orders += 1;
    }
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok((100.0 * bp * (log_sum / orders as f64).exp()).min(100.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WerResult {
    pub rate: f64,
    pub edits: EditCounts,
    pub reference_len: usize,
}

/// Word error rate by unit-cost Levenshtein alignment.
///
/// Among minimum-cost alignments the one with the most substitutions is
/// reported, which makes the split symmetric: swapping reference and
/// hypothesis keeps `S` and exchanges `D` and `I`.
pub fn wer(reference: &[String], hypothesis: &[String]) -> Result<WerResult> {
    if reference.is_empty() {
        return Err(Error::InvalidArgument("WER needs a non-empty reference".into()));
    }
    let (n, m) = (reference.len(), hypothesis.len());
    // Cells hold (cost, -substitutions, deletions) so tuple order picks the
    // preferred alignment.
    type Cell = (usize, isize, usize);
    let mut dp: Vec<Cell> = vec![(0, 0, 0); (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    for i in 1..=n {
        dp[at(i, 0)] = (i, 0, i);
    }
    for j in 1..=m {
        dp[at(0, j)] = (j, 0, 0);
    }
    for i in 1..=n {
        for j in 1..=m {
            let (c, s, d) = dp[at(i - 1, j - 1)];
            let diag = if reference[i - 1] == hypothesis[j - 1] {
                (c, s, d)
            } else {
                (c + 1, s - 1, d)
            };
            let (c, s, d) = dp[at(i - 1, j)];
            let del = (c + 1, s, d + 1);
            let (c, s, d) = dp[at(i, j - 1)];
            let ins = (c + 1, s, d);
            dp[at(i, j)] = diag.min(del).min(ins);
        }
    }
    let (cost, neg_s, deletions) = dp[at(n, m)];
    let substitutions = (-neg_s) as usize;
    let insertions = cost - substitutions - deletions;
    Ok(WerResult {
        rate: cost as f64 / n as f64,
        edits: EditCounts {
            substitutions,
            deletions,
            insertions,
        },
        reference_len: n,
    })
}

/// Pooled WER over a corpus: total edits over total reference length.
pub fn corpus_wer(references: &[Vec<String>], hypotheses: &[Vec<String>]) -> Result<WerResult> {
    if references.len() != hypotheses.len() {
        return Err(Error::InvalidArgument(format!(
            "{} references but {} hypotheses",
            references.len(),
            hypotheses.len()
        )));
    }
    if references.is_empty() {
        return Err(Error::EmptyInput("WER corpus".into()));
    }
    let mut edits = EditCounts::default();
    let mut len = 0;
    for (r, h) in references.iter().zip(hypotheses) {
        let w = wer(r, h)?;
        edits.substitutions += w.edits.substitutions;
        edits.deletions += w.edits.deletions;
        edits.insertions += w.edits.insertions;
        len += w.reference_len;
    }
    Ok(WerResult {
        rate: edits.total() as f64 / len as f64,
        edits,
        reference_len: len,
    })
}

/// Relative WER reduction in percent; negative when `new_wer` is worse.
pub fn werr(baseline_wer: f64, new_wer: f64) -> Result<f64> {
    if !(baseline_wer > 0.0) {
        return Err(Error::InvalidArgument(format!("baseline WER must be positive, got {baseline_wer}")));
    }
    if !(new_wer >= 0.0) {
        return Err(Error::InvalidArgument(format!("WER must be non-negative, got {new_wer}")));
    }
    Ok(100.0 * (baseline_wer - new_wer) / baseline_wer)
}

/// Share of the combined WERR contributed by adaptation on top of
/// post-editing, in percent.
pub fn adaptation_contribution(postedit_werr: f64, combined_werr: f64) -> Result<f64> {
    if !(combined_werr > 0.0) {
        return Err(Error::InvalidArgument(format!("combined WERR must be positive, got {combined_werr}")));
    }
    Ok(100.0 * (combined_werr - postedit_werr) / combined_werr)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub r: f64,
    /// Two-tailed p-value of the t-test for zero correlation.
    pub p: f64,
}

/// Sample Pearson correlation and its two-tailed p-value from Student's t
/// with `n - 2` degrees of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!("{} x values but {} y values", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("correlation needs at least 3 pairs, got {n}")));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("y"));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t2 = r * r * df / (1.0 - r * r);
        statrs::function::beta::beta_reg(df / 2.0, 0.5, df / (df + t2))
    };
    Ok(Correlation { r, p })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coverage {
    Low,
    Moderate,
    High,
}

impl Coverage {
    pub fn as_str(self) -> &'static str {
        match self {
            Coverage::Low => "low",
            Coverage::Moderate => "moderate",
            Coverage::High => "high",
        }
    }
}

impl std::str::FromStr for Coverage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "low" => Ok(Coverage::Low),
            "moderate" => Ok(Coverage::Moderate),
            "high" => Ok(Coverage::High),
            other => Err(Error::InvalidArgument(format!("unknown coverage level `{other}`"))),
        }
    }
}

/// Measurements for one scenario, before the contribution is derived.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioInput {
    pub scenario: String,
    pub coverage: Coverage,
    pub postedit_werr: f64,
    pub combined_werr: f64,
    pub ne_percent: f64,
}

impl ScenarioInput {
    /// Builds the WERR columns from raw WERs and the NE share from counts.
    pub fn from_wers(
        scenario: impl Into<String>,
        coverage: Coverage,
        baseline_wer: f64,
        postedit_wer: f64,
        combined_wer: f64,
        ne_utterances: usize,
        utterances: usize,
    ) -> Result<Self> {
        if utterances == 0 || ne_utterances > utterances {
            return Err(Error::InvalidArgument(format!(
                "{ne_utterances} entity utterances out of {utterances}"
            )));
        }
        Ok(ScenarioInput {
            scenario: scenario.into(),
            coverage,
            postedit_werr: werr(baseline_wer, postedit_wer)?,
            combined_werr: werr(baseline_wer, combined_wer)?,
            ne_percent: 100.0 * ne_utterances as f64 / utterances as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRow {
    pub scenario: String,
    pub postedit_werr: f64,
    pub combined_werr: f64,
    pub adaptation_contribution: f64,
    pub ne_percent: f64,
    pub coverage: Coverage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub rows: Vec<ScenarioRow>,
    /// Combined WERR against NE share; `Err` holds the reason it is undefined.
    pub combined_correlation: std::result::Result<Correlation, String>,
    /// Post-editing WERR against NE share.
    pub postedit_correlation: std::result::Result<Correlation, String>,
}

fn correlation_note(result: Result<Correlation>) -> std::result::Result<Correlation, String> {
    result.map_err(|e| match e {
        Error::ZeroVariance(_) => "undefined (zero variance)".to_string(),
        other => format!("undefined ({other})"),
    })
}

pub fn scenario_report(inputs: &[ScenarioInput]) -> Result<ScenarioReport> {
    if inputs.len() < 2 {
        return Err(Error::InvalidArgument("a scenario report needs at least two scenarios".into()));
    }
    let rows = inputs
        .iter()
        .map(|s| {
            Ok(ScenarioRow {
                scenario: s.scenario.clone(),
                postedit_werr: s.postedit_werr,
                combined_werr: s.combined_werr,
                adaptation_contribution: adaptation_contribution(s.postedit_werr, s.combined_werr)
                    .map_err(|e| e.in_stage("scenario_report", s.scenario.clone()))?,
                ne_percent: s.ne_percent,
                coverage: s.coverage,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ne: Vec<f64> = rows.iter().map(|r| r.ne_percent).collect();
    let combined: Vec<f64> = rows.iter().map(|r| r.combined_werr).collect();
    let postedit: Vec<f64> = rows.iter().map(|r| r.postedit_werr).collect();
    Ok(ScenarioReport {
        combined_correlation: correlation_note(pearson(&combined, &ne)),
        postedit_correlation: correlation_note(pearson(&postedit, &ne)),
        rows,
    })
}

pub const REPORT_HEADER: &str = "scenario\tpostedit_werr\tcombined_werr\tadaptation_contribution\tne_percent\tcoverage";

fn correlation_line(prefix: &str, c: &std::result::Result<Correlation, String>) -> String {
    match c {
        Ok(c) => format!("{prefix}pearson_r={:.6} p={:.6}", c.r, c.p),
        Err(note) => format!("{prefix}pearson_r={note}"),
    }
}

/// The report as TSV followed by the correlation lines.
pub fn format_report(report: &ScenarioReport) -> String {
    let mut out = String::new();
    out.push_str(REPORT_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{}",
            r.scenario,
            r.postedit_werr,
            r.combined_werr,
            r.adaptation_contribution,
            r.ne_percent,
            r.coverage.as_str()
        );
    }
    out.push_str(&correlation_line("", &report.combined_correlation));
    out.push('\n');
    out.push_str(&correlation_line("postedit_", &report.postedit_correlation));
    out.push('\n');
    out
}

/// Reads scenario measurements from a TSV with the columns
/// `scenario, coverage, postedit_werr, combined_werr, ne_percent`
/// (header line required).
pub fn parse_scenario_inputs<R: BufRead>(reader: R, path: &Path) -> Result<Vec<ScenarioInput>> {
    let mut out = Vec::new();
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(path, 1, "missing header")),
    };
    let columns: Vec<&str> = header.split('\t').map(str::trim).collect();
    let expected = ["scenario", "coverage", "postedit_werr", "combined_werr", "ne_percent"];
    if columns != expected {
        return Err(Error::parse(path, 1, format!("expected header `{}`", expected.join("\\t"))));
    }
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        if f.len() != 5 {
            return Err(Error::parse(path, lineno, format!("expected 5 columns, found {}", f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::parse(path, lineno, format!("`{s}` is not a number")))
        };
        out.push(ScenarioInput {
            scenario: f[0].to_string(),
            coverage: f[1].parse().map_err(|e: Error| Error::parse(path, lineno, e.to_string()))?,
            postedit_werr: num(f[2])?,
            combined_werr: num(f[3])?,
            ne_percent: num(f[4])?,
        });
    }
    Ok(out)
}
