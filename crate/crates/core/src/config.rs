//! Pipeline configuration, read from TOML.
//!
//! ```toml
//! seed = 42
//!
//! [paths]
//! transcribed = "transcribed.jsonl"
//! translations = "translations.jsonl"
//! tuning = "tuning.jsonl"
//! test = "test.jsonl"
//! catalogs = "catalogs.jsonl"
//!
//! [stages]
//! select = false
//! rescore = true
//! postedit = true
//! filter = true
//!
//! [lm]
//! floor = 0.25
//! ```
//!
//! Relative paths are resolved against the directory holding the config
//! file. Every section and key is optional except the four core paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapt::{FilterConfig, FilterMetric, RescoreConfig};
use crate::embed::{EmbeddingMethod, SifParams};
use crate::error::{Error, Result};
use crate::lm::KatzConfig;
use crate::postedit::PosteditConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// In-domain transcribed utterances (utterance JSONL).
    pub transcribed: PathBuf,
    /// External n-best translations (translation JSONL).
    pub translations: PathBuf,
    /// Held-out utterances used to tune interpolation weights.
    pub tuning: PathBuf,
    /// Held-out utterances for the final perplexity.
    pub test: PathBuf,
    #[serde(default)]
    pub catalogs: Option<PathBuf>,
    #[serde(default)]
    pub word_vectors: Option<PathBuf>,
    /// Candidate sentences for data selection (utterance JSONL).
    #[serde(default)]
    pub mt_corpus: Option<PathBuf>,
    /// Precomputed embeddings of the transcribed corpus, for `method = "external"`.
    #[serde(default)]
    pub in_domain_embeddings: Option<PathBuf>,
    /// Precomputed embeddings of the candidate corpus, for `method = "external"`.
    #[serde(default)]
    pub candidate_embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stages {
    pub select: bool,
    pub rescore: bool,
    pub postedit: bool,
    pub filter: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Stages {
            select: false,
            rescore: true,
            postedit: true,
            filter: true,
        }
    }
}

impl Stages {
    pub fn none() -> Self {
        Stages {
            select: false,
            rescore: false,
            postedit: false,
            filter: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSection {
    pub order: usize,
    pub cutoff: usize,
    /// Lower bound on the translated component's interpolation weight.
    pub floor: f64,
}

impl Default for LmSection {
    fn default() -> Self {
        LmSection {
            order: 4,
            cutoff: 5,
            floor: 0.25,
        }
    }
}

impl LmSection {
    pub fn katz(&self) -> KatzConfig {
        KatzConfig {
            order: self.order,
            cutoff: self.cutoff,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    pub method: EmbeddingMethod,
    pub fraction: f64,
    pub sif_a: f64,
    /// Scale sentence vectors to unit length before computing centroids.
    pub normalize: bool,
    pub frequency_alpha: f64,
}

impl Default for SelectSection {
    fn default() -> Self {
        SelectSection {
            method: EmbeddingMethod::Sif,
            fraction: 0.25,
            sif_a: SifParams::default().a,
            normalize: false,
            frequency_alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RescoreSection {
    pub lm_weight: f64,
    pub length_normalize: bool,
}

impl Default for RescoreSection {
    fn default() -> Self {
        let d = RescoreConfig::default();
        RescoreSection {
            lm_weight: d.lm_weight,
            length_normalize: d.length_normalize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosteditSection {
    pub copy_over: bool,
    pub resample: bool,
    pub code_mix: bool,
    pub p_max: f64,
    /// Additive smoothing for the code-mix frequency table.
    pub frequency_alpha: f64,
}

impl Default for PosteditSection {
    fn default() -> Self {
        let d = PosteditConfig::default();
        PosteditSection {
            copy_over: d.copy_over,
            resample: d.resample,
            code_mix: d.code_mix,
            p_max: d.p_max,
            frequency_alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub metric: FilterMetric,
    pub keep_fraction: f64,
    pub length_normalize: bool,
}

impl Default for FilterSection {
    fn default() -> Self {
        let d = FilterConfig::default();
        FilterSection {
            metric: d.metric,
            keep_fraction: d.keep_fraction,
            length_normalize: d.length_normalize,
        }
    }
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub stages: Stages,
    #[serde(default)]
    pub lm: LmSection,
    #[serde(default)]
    pub select: SelectSection,
    #[serde(default)]
    pub rescore: RescoreSection,
    #[serde(default)]
    pub postedit: PosteditSection,
    #[serde(default)]
    pub filter: FilterSection,
}

impl PipelineConfig {
    /// A configuration with default parameters over the four core inputs.
    pub fn new(transcribed: PathBuf, translations: PathBuf, tuning: PathBuf, test: PathBuf) -> Self {
        PipelineConfig {
            seed: default_seed(),
            paths: Paths {
                transcribed,
                translations,
                tuning,
                test,
                catalogs: None,
                word_vectors: None,
                mt_corpus: None,
                in_domain_embeddings: None,
                candidate_embeddings: None,
            },
            stages: Stages::default(),
            lm: LmSection::default(),
            select: SelectSection::default(),
            rescore: RescoreSection::default(),
            postedit: PosteditSection::default(),
            filter: FilterSection::default(),
        }
    }

    /// Parses TOML text, resolving relative paths against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.resolve_paths(base_dir);
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        PipelineConfig::from_toml_str(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        for path in [&mut p.transcribed, &mut p.translations, &mut p.tuning, &mut p.test] {
            fix(path);
        }
        for path in [
            &mut p.catalogs,
            &mut p.word_vectors,
            &mut p.mt_corpus,
            &mut p.in_domain_embeddings,
            &mut p.candidate_embeddings,
        ]
        .into_iter()
        .flatten()
        {
            fix(path);
        }
    }

    /// Checks parameter ranges and that every file the enabled stages read
    /// exists.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let exists = |what: &str, p: &Path| -> Result<()> {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} file {} does not exist", p.display())))
            }
        };
        let required = |what: &str, p: &Option<PathBuf>, why: &str| -> Result<()> {
            match p {
                Some(p) => exists(what, p),
                None => Err(Error::Config(format!("paths.{what} is required when {why}"))),
            }
        };
        exists("transcribed", &self.paths.transcribed)?;
        exists("translations", &self.paths.translations)?;
        exists("tuning", &self.paths.tuning)?;
        exists("test", &self.paths.test)?;

        if self.lm.order == 0 || self.lm.cutoff == 0 {
            return bad("lm.order and lm.cutoff must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.lm.floor) {
            return bad(format!("lm.floor must lie in [0, 1), got {}", self.lm.floor));
        }
        if !(0.0..=1.0).contains(&self.rescore.lm_weight) {
            return bad(format!("rescore.lm_weight must lie in [0, 1], got {}", self.rescore.lm_weight));
        }
        if !(0.0..=1.0).contains(&self.postedit.p_max) {
            return bad(format!("postedit.p_max must lie in [0, 1], got {}", self.postedit.p_max));
        }
        if !(self.postedit.frequency_alpha >= 0.0) || !(self.select.frequency_alpha >= 0.0) {
            return bad("frequency_alpha must be non-negative".into());
        }
        if !(self.filter.keep_fraction > 0.0 && self.filter.keep_fraction <= 1.0) {
            return bad(format!("filter.keep_fraction must lie in (0, 1], got {}", self.filter.keep_fraction));
        }
        if !(self.select.fraction > 0.0 && self.select.fraction <= 1.0) {
            return bad(format!("select.fraction must lie in (0, 1], got {}", self.select.fraction));
        }
        if !(self.select.sif_a > 0.0) {
            return bad(format!("select.sif_a must be positive, got {}", self.select.sif_a));
        }
        if self.stages.postedit && self.postedit.resample {
            required("catalogs", &self.paths.catalogs, "entity resampling is enabled")?;
        }
        if self.stages.select {
            required("mt_corpus", &self.paths.mt_corpus, "selection is enabled")?;
            match self.select.method {
                EmbeddingMethod::External => {
                    required("in_domain_embeddings", &self.paths.in_domain_embeddings, "method = external")?;
                    required("candidate_embeddings", &self.paths.candidate_embeddings, "method = external")?;
                }
                _ => required("word_vectors", &self.paths.word_vectors, "selection embeds sentences")?,
            }
        }
        Ok(())
    }

    pub fn rescore_config(&self) -> RescoreConfig {
        RescoreConfig {
            lm_weight: self.rescore.lm_weight,
            length_normalize: self.rescore.length_normalize,
        }
    }

    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            metric: self.filter.metric,
            keep_fraction: self.filter.keep_fraction,
            length_normalize: self.filter.length_normalize,
        }
    }

    pub fn postedit_config(&self) -> PosteditConfig {
        PosteditConfig {
            copy_over: self.postedit.copy_over,
            resample: self.postedit.resample,
            code_mix: self.postedit.code_mix,
            p_max: self.postedit.p_max,
        }
    }

    pub fn sif_params(&self) -> SifParams {
        SifParams {
            a: self.select.sif_a,
            ..SifParams::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[paths]
transcribed = "t.jsonl"
translations = "mt.jsonl"
tuning = "tune.jsonl"
test = "test.jsonl"
"#;

    #[test]
    fn defaults_and_relative_paths() {
        let c = PipelineConfig::from_toml_str(MINIMAL, Path::new("/data")).unwrap();
        assert_eq!(c.seed, 42);
        assert_eq!(c.paths.transcribed, PathBuf::from("/data/t.jsonl"));
        assert_eq!(c.lm.floor, 0.25);
        assert_eq!(c.rescore.lm_weight, 0.3);
        assert_eq!(c.postedit.p_max, 0.5);
        assert_eq!(c.select.sif_a, 1e-3);
        assert_eq!(c.filter.metric, FilterMetric::SlmScore);
        assert!(c.stages.rescore && !c.stages.select);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[lm]\nflor = 0.3\n");
        assert!(matches!(
            PipelineConfig::from_toml_str(&text, Path::new(".")),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn validation_checks_files_and_ranges() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["t.jsonl", "mt.jsonl", "tune.jsonl", "test.jsonl"] {
            std::fs::write(dir.path().join(f), "").unwrap();
        }
        let mut c = PipelineConfig::from_toml_str(MINIMAL, dir.path()).unwrap();
        // Resampling is on by default and needs catalogs.
        assert!(c.validate().is_err());
        c.postedit.resample = false;
        c.validate().unwrap();
        c.lm.floor = 1.0;
        assert!(c.validate().unwrap_err().to_string().contains("lm.floor"));
        c.lm.floor = 0.25;
        c.stages.select = true;
        assert!(c.validate().unwrap_err().to_string().contains("mt_corpus"));
    }

    #[test]
    fn toml_round_trip() {
        let c = PipelineConfig::from_toml_str(MINIMAL, Path::new("/data")).unwrap();
        let text = c.to_toml_string().unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&text, Path::new("/elsewhere")).unwrap(), c);
    }
}
