//! End-to-end runs and the floor and volume sweeps.
//!
//! Stage order: select, rescore, post-edit, filter, LM build, interpolate,
//! evaluate. Disabled stages pass their input through. Every artifact is
//! first written to a staging directory inside the output directory and only
//! moved into place once the whole run has succeeded.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adapt::{
    build_synthetic_parallel, filter_translations, format_filter_scores, format_parallel_tsv, lm_log_score,
    rescore_all, retain_top, FilterMetric,
};
use crate::config::PipelineConfig;
use crate::corpus::{build_frequency_table, load_catalogs, load_utterances, load_word_vectors, Catalog, Utterance};
use crate::embed::{embed_average_all, embed_sif, import_external_embeddings, l2_normalize, EmbeddingMethod, SentenceEmbedding};
use crate::error::{Error, Result};
use crate::lm::{
    apply_floor, perplexity, train_katz, tune_interpolation, write_arpa, Component, ComponentRole,
    InterpolatedModel, KatzModel,
};
use crate::postedit::{load_translations, postedit_batch, write_edited, EditedSentence, NBestList, PosteditStats};
use crate::select::{compute_centroids, format_scores, score_candidates, select_top_fraction};

/// Output files as `(name, contents)`, in write order.
pub type Artifacts = Vec<(String, Vec<u8>)>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTiming {
    pub stage: &'static str,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionSummary {
    pub in_domain: usize,
    pub candidates: usize,
    pub degenerate: usize,
    pub selected: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perplexities {
    pub transcribed: f64,
    pub translated: f64,
    pub interpolated: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub translations: usize,
    pub selection: Option<SelectionSummary>,
    /// Lists whose rescored winner differs from the decoder's first choice.
    pub rescored_changed: Option<usize>,
    pub postedit: Option<PosteditStats>,
    pub edited: usize,
    pub retained: usize,
    pub transcribed_ngrams: Vec<usize>,
    pub translated_ngrams: Vec<usize>,
    pub em_iterations: usize,
    pub em_converged: bool,
    /// Weights at the likelihood optimum, `[transcribed, translated]`.
    pub em_weights: Vec<f64>,
    /// Weights after the floor.
    pub weights: Vec<f64>,
    pub floor: f64,
    pub tuning_ppl: Perplexities,
    pub test_ppl: Perplexities,
    /// Wall-clock time per stage; logged but never written to report files.
    pub timings: Vec<StageTiming>,
}

fn tokens_of(utts: &[Utterance]) -> Vec<Vec<String>> {
    utts.iter().map(|u| u.tokens.clone()).collect()
}

struct Timer {
    timings: Vec<StageTiming>,
    current: Option<(&'static str, Instant)>,
}

impl Timer {
    fn new() -> Self {
        Timer {
            timings: Vec::new(),
            current: None,
        }
    }

    fn start(&mut self, stage: &'static str) {
        self.finish();
        log::info!("stage {stage}");
        self.current = Some((stage, Instant::now()));
    }

    fn finish(&mut self) {
        if let Some((stage, t)) = self.current.take() {
            let seconds = t.elapsed().as_secs_f64();
            log::info!("stage {stage} took {seconds:.3}s");
            self.timings.push(StageTiming { stage, seconds });
        }
    }
}

/// Everything upstream of language-model interpolation.
struct Upstream {
    transcribed: Vec<Utterance>,
    tuning: Vec<Vec<String>>,
    test: Vec<Vec<String>>,
    transcribed_lm: Arc<KatzModel>,
    translated_corpus: Vec<Vec<String>>,
    selection: Option<SelectionSummary>,
    rescored_changed: Option<usize>,
    postedit: Option<PosteditStats>,
    translations: usize,
    edited: usize,
    artifacts: Artifacts,
}

fn load_corpus(path: &Path, stage: &'static str) -> Result<Vec<Utterance>> {
    let utts = load_utterances(path)?;
    if utts.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no utterances", path.display())).in_stage(stage, path.display().to_string()));
    }
    Ok(utts)
}

fn run_selection(config: &PipelineConfig, transcribed: &[Utterance]) -> Result<(SelectionSummary, Artifacts)> {
    let paths = &config.paths;
    let (in_domain, candidates): (Vec<SentenceEmbedding>, Vec<SentenceEmbedding>) = match config.select.method {
        EmbeddingMethod::External => (
            import_external_embeddings(paths.in_domain_embeddings.as_ref().expect("validated"))?,
            import_external_embeddings(paths.candidate_embeddings.as_ref().expect("validated"))?,
        ),
        method => {
            let pool = load_corpus(paths.mt_corpus.as_ref().expect("validated"), "select")?;
            let table = load_word_vectors(paths.word_vectors.as_ref().expect("validated"))?;
            if method == EmbeddingMethod::Average {
                (embed_average_all(transcribed, &table), embed_average_all(&pool, &table))
            } else {
                let mut all = transcribed.to_vec();
                all.extend(pool.iter().cloned());
                let freq = build_frequency_table(&all, config.select.frequency_alpha)?;
                let mut out = embed_sif(&all, &table, &freq, &config.sif_params())?.embeddings;
                let candidates = out.split_off(transcribed.len());
                (out, candidates)
            }
        }
    };
    let prepare = |e: &[SentenceEmbedding]| -> Vec<SentenceEmbedding> {
        e.iter()
            .map(|e| SentenceEmbedding {
                vector: if config.select.normalize {
                    l2_normalize(&e.vector)
                } else {
                    e.vector.clone()
                },
                ..e.clone()
            })
            .collect()
    };
    let (in_domain, candidates) = (prepare(&in_domain), prepare(&candidates));
    let usable = |e: &[SentenceEmbedding]| -> Vec<Vec<f64>> {
        e.iter().filter(|e| !e.degenerate).map(|e| e.vector.clone()).collect()
    };
    let degenerate = in_domain.iter().chain(&candidates).filter(|e| e.degenerate).count();
    if degenerate > 0 {
        log::warn!("{degenerate} sentences have no embedding and are left out of the centroids");
    }
    let centroids = compute_centroids(&usable(&in_domain), &usable(&candidates))
        .map_err(|e| e.in_stage("select", "centroids"))?;
    let scores = score_candidates(&candidates, &centroids).map_err(|e| e.in_stage("select", "candidates"))?;
    let selected = select_top_fraction(&scores, config.select.fraction)?;
    let summary = SelectionSummary {
        in_domain: in_domain.len(),
        candidates: candidates.len(),
        degenerate,
        selected: selected.len(),
    };
    let mut ids = selected.join("\n");
    ids.push('\n');
    Ok((
        summary,
        vec![
            ("selection_scores.tsv".into(), format_scores(&scores).into_bytes()),
            ("selected_ids.txt".into(), ids.into_bytes()),
        ],
    ))
}

fn upstream(config: &PipelineConfig, timer: &mut Timer) -> Result<Upstream> {
    config.validate()?;
    let paths = &config.paths;
    timer.start("load");
    let transcribed = load_corpus(&paths.transcribed, "load")?;
    let tuning = tokens_of(&load_corpus(&paths.tuning, "load")?);
    let test = tokens_of(&load_corpus(&paths.test, "load")?);
    let lists: Vec<NBestList> = load_translations(&paths.translations)?;
    if lists.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no translations", paths.translations.display())));
    }
    let catalogs: BTreeMap<String, Catalog> = match &paths.catalogs {
        Some(p) => load_catalogs(p)?,
        None => BTreeMap::new(),
    };
    let mut artifacts = Vec::new();

    timer.start("transcribed_lm");
    let transcribed_lm = Arc::new(
        train_katz(&tokens_of(&transcribed), config.lm.katz()).map_err(|e| e.in_stage("lm_build", "transcribed"))?,
    );

    let mut selection = None;
    if config.stages.select {
        timer.start("select");
        let (summary, files) = run_selection(config, &transcribed)?;
        selection = Some(summary);
        artifacts.extend(files);
    }

    timer.start("rescore");
    let mut rescored_changed = None;
    let chosen: Vec<usize> = if config.stages.rescore {
        let outcomes = rescore_all(&lists, transcribed_lm.as_ref(), &config.rescore_config())?;
        rescored_changed = Some(outcomes.iter().filter(|o| o.chosen != 0).count());
        outcomes.iter().map(|o| o.chosen).collect()
    } else {
        vec![0; lists.len()]
    };
    let picked: Vec<(&NBestList, &_)> = lists.iter().zip(&chosen).map(|(l, &i)| (l, &l.hypotheses[i])).collect();

    timer.start("postedit");
    let mut postedit = None;
    let edited: Vec<EditedSentence> = if config.stages.postedit {
        let freq = build_frequency_table(&transcribed, config.postedit.frequency_alpha)?;
        let (sentences, stats) = postedit_batch(&picked, &config.postedit_config(), &catalogs, &freq, config.seed)?;
        postedit = Some(stats);
        sentences
    } else {
        picked
            .iter()
            .map(|(l, h)| EditedSentence {
                id: l.id.clone(),
                tokens: h.target_tokens.clone(),
                entities: Vec::new(),
                origin: Vec::new(),
                edits: Vec::new(),
            })
            .collect()
    };

    timer.start("filter");
    let retained_ids: Option<HashSet<String>> = if config.stages.filter {
        let cfg = config.filter_config();
        let scores: Vec<(String, f64)> = match cfg.metric {
            FilterMetric::MtScore => {
                let items: Vec<(String, &_)> = picked.iter().map(|(l, h)| (l.id.clone(), *h)).collect();
                filter_translations::<KatzModel>(&items, &cfg, None)?.scores
            }
            // The in-domain LM judges the text that will actually be used.
            FilterMetric::SlmScore => edited
                .par_iter()
                .map(|s| (s.id.clone(), lm_log_score(transcribed_lm.as_ref(), &s.tokens, cfg.length_normalize)))
                .collect(),
        };
        let retained = retain_top(&scores, cfg.keep_fraction)?;
        let mut ids = retained.join("\n");
        ids.push('\n');
        artifacts.push(("filter_scores.tsv".into(), format_filter_scores(&scores, cfg.metric).into_bytes()));
        artifacts.push(("retained_ids.txt".into(), ids.into_bytes()));
        Some(retained.into_iter().collect())
    } else {
        None
    };
    let keep = |id: &str| retained_ids.as_ref().is_none_or(|r| r.contains(id));
    let kept: Vec<(EditedSentence, Option<String>)> = edited
        .iter()
        .zip(&lists)
        .filter(|(s, _)| keep(&s.id))
        .map(|(s, l)| (s.clone(), l.scenario.clone()))
        .collect();

    let mut jsonl = Vec::new();
    write_edited(&mut jsonl, &kept)?;
    artifacts.push(("edited.jsonl".into(), jsonl));
    let sources: Vec<Utterance> = lists
        .iter()
        .filter(|l| keep(&l.id))
        .map(|l| Utterance::new(l.id.clone(), l.source_tokens.clone(), l.source_entities.clone(), l.scenario.clone()))
        .collect::<Result<_>>()?;
    let targets: Vec<(String, Vec<String>)> = kept.iter().map(|(s, _)| (s.id.clone(), s.tokens.clone())).collect();
    let pairs = build_synthetic_parallel(&sources, &targets)?;
    artifacts.push(("synthetic_parallel.tsv".into(), format_parallel_tsv(&pairs).into_bytes()));

    Ok(Upstream {
        translated_corpus: kept.into_iter().map(|(s, _)| s.tokens).collect(),
        transcribed,
        tuning,
        test,
        transcribed_lm,
        selection,
        rescored_changed,
        postedit,
        translations: lists.len(),
        edited: edited.len(),
        artifacts,
    })
}

fn translated_lm(config: &PipelineConfig, up: &Upstream) -> Result<Arc<KatzModel>> {
    Ok(Arc::new(
        train_katz(&up.translated_corpus, config.lm.katz()).map_err(|e| e.in_stage("lm_build", "translated"))?,
    ))
}

fn components(transcribed: &Arc<KatzModel>, translated: &Arc<KatzModel>) -> Vec<Component> {
    vec![
        Component::new(ComponentRole::Transcribed, Arc::clone(transcribed)),
        Component::new(ComponentRole::Translated, Arc::clone(translated)),
    ]
}

/// Runs every enabled stage and returns the report together with the
/// artifacts, without touching the filesystem beyond reading inputs.
pub fn run_pipeline_in_memory(config: &PipelineConfig) -> Result<(RunReport, Artifacts)> {
    let mut timer = Timer::new();
    let mut up = upstream(config, &mut timer)?;
    timer.start("translated_lm");
    let translated = translated_lm(config, &up)?;

    timer.start("interpolate");
    let (mixture, em) = tune_interpolation(components(&up.transcribed_lm, &translated), &up.tuning, config.lm.floor)
        .map_err(|e| e.in_stage("interpolate", "tuning"))?;

    timer.start("evaluate");
    let ppl = |corpus: &[Vec<String>]| -> Result<Perplexities> {
        Ok(Perplexities {
            transcribed: perplexity(up.transcribed_lm.as_ref(), corpus)?,
            translated: perplexity(translated.as_ref(), corpus)?,
            interpolated: perplexity(&mixture, corpus)?,
        })
    };
    let tuning_ppl = ppl(&up.tuning)?;
    let test_ppl = ppl(&up.test)?;

    for (name, model) in [("transcribed.arpa", &up.transcribed_lm), ("translated.arpa", &translated)] {
        let mut buf = Vec::new();
        write_arpa(model, &mut buf)?;
        up.artifacts.push((name.into(), buf));
    }
    timer.finish();

    let report = RunReport {
        translations: up.translations,
        selection: up.selection,
        rescored_changed: up.rescored_changed,
        postedit: up.postedit,
        edited: up.edited,
        retained: up.translated_corpus.len(),
        transcribed_ngrams: up.transcribed_lm.ngram_counts(),
        translated_ngrams: translated.ngram_counts(),
        em_iterations: em.iterations,
        em_converged: em.converged,
        em_weights: em.weights.clone(),
        weights: mixture.weights().to_vec(),
        floor: config.lm.floor,
        tuning_ppl,
        test_ppl,
        timings: timer.timings,
    };
    up.artifacts.push(("report.tsv".into(), format_run_report(&report).into_bytes()));
    Ok((report, up.artifacts))
}

/// Runs the pipeline and writes its artifacts into `out_dir`. Nothing is
/// written if any stage fails.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path) -> Result<RunReport> {
    let (report, artifacts) = run_pipeline_in_memory(config)?;
    commit_artifacts(out_dir, &artifacts)?;
    Ok(report)
}

/// Writes all files to a staging directory next to their destination and
/// then renames them into place.
pub fn commit_artifacts(out_dir: &Path, artifacts: &[(String, Vec<u8>)]) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let staging = tempfile::Builder::new()
        .prefix(".staging-")
        .tempdir_in(out_dir)
        .map_err(|e| Error::io(out_dir, e))?;
    for (name, bytes) in artifacts {
        let p = staging.path().join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
    }
    for (name, _) in artifacts {
        let from = staging.path().join(name);
        let to = out_dir.join(name);
        std::fs::rename(&from, &to).map_err(|e| Error::io(&to, e))?;
    }
    Ok(())
}

fn fmt_counts(c: &[usize]) -> String {
    c.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// `key<TAB>value` rows. Timings are left out so reruns are byte-identical.
pub fn format_run_report(r: &RunReport) -> String {
    let mut rows: Vec<(String, String)> = vec![("translations".into(), r.translations.to_string())];
    if let Some(s) = r.selection {
        rows.push(("select_in_domain".into(), s.in_domain.to_string()));
        rows.push(("select_candidates".into(), s.candidates.to_string()));
        rows.push(("select_degenerate".into(), s.degenerate.to_string()));
        rows.push(("selected".into(), s.selected.to_string()));
    }
    if let Some(c) = r.rescored_changed {
        rows.push(("rescored_changed".into(), c.to_string()));
    }
    if let Some(p) = r.postedit {
        rows.push(("copied_entities".into(), p.copied_entities.to_string()));
        rows.push(("unaligned_entities".into(), p.unaligned_entities.to_string()));
        rows.push(("missing_catalog".into(), p.missing_catalog.to_string()));
        rows.push(("code_mixed_tokens".into(), p.code_mixed_tokens.to_string()));
    }
    rows.push(("edited".into(), r.edited.to_string()));
    rows.push(("retained".into(), r.retained.to_string()));
    rows.push(("transcribed_ngrams".into(), fmt_counts(&r.transcribed_ngrams)));
    rows.push(("translated_ngrams".into(), fmt_counts(&r.translated_ngrams)));
    rows.push(("em_iterations".into(), r.em_iterations.to_string()));
    rows.push(("em_converged".into(), r.em_converged.to_string()));
    rows.push(("em_weight_transcribed".into(), format!("{:.6}", r.em_weights[0])));
    rows.push(("em_weight_translated".into(), format!("{:.6}", r.em_weights[1])));
    rows.push(("floor".into(), format!("{:.6}", r.floor)));
    rows.push(("weight_transcribed".into(), format!("{:.6}", r.weights[0])));
    rows.push(("weight_translated".into(), format!("{:.6}", r.weights[1])));
    for (set, p) in [("tuning", &r.tuning_ppl), ("test", &r.test_ppl)] {
        rows.push((format!("{set}_ppl_transcribed"), format!("{:.6}", p.transcribed)));
        rows.push((format!("{set}_ppl_translated"), format!("{:.6}", p.translated)));
        rows.push((format!("{set}_ppl_interpolated"), format!("{:.6}", p.interpolated)));
    }
    let mut out = String::from("key\tvalue\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k}\t{v}");
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloorRow {
    pub floor: f64,
    pub weights: Vec<f64>,
    pub tuning_ppl: f64,
    pub test_ppl: f64,
}

/// Tunes once, then re-applies each floor to the likelihood-optimal weights.
pub fn sweep_floor(config: &PipelineConfig, floors: &[f64]) -> Result<Vec<FloorRow>> {
    if let Some(f) = floors.iter().find(|f| !(0.0..1.0).contains(*f)) {
        return Err(Error::InvalidArgument(format!("floor must lie in [0, 1), got {f}")));
    }
    let mut timer = Timer::new();
    let up = upstream(config, &mut timer)?;
    timer.start("translated_lm");
    let translated = translated_lm(config, &up)?;
    timer.start("interpolate");
    let comps = components(&up.transcribed_lm, &translated);
    let (_, em) = tune_interpolation(comps.clone(), &up.tuning, 0.0).map_err(|e| e.in_stage("interpolate", "tuning"))?;
    let roles: Vec<ComponentRole> = comps.iter().map(|c| c.role).collect();
    timer.start("sweep");
    let rows = floors
        .par_iter()
        .map(|&floor| {
            let weights = apply_floor(&em.weights, &roles, floor)?;
            let mixture = InterpolatedModel::new(comps.clone(), weights.clone(), floor)?;
            Ok(FloorRow {
                floor,
                weights,
                tuning_ppl: perplexity(&mixture, &up.tuning)?,
                test_ppl: perplexity(&mixture, &up.test)?,
            })
        })
        .collect();
    timer.finish();
    rows
}

pub fn format_floor_sweep(rows: &[FloorRow]) -> String {
    let mut out = String::from("floor\tweight_transcribed\tweight_translated\ttuning_ppl\ttest_ppl\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.floor, r.weights[0], r.weights[1], r.tuning_ppl, r.test_ppl
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeRow {
    pub volume: usize,
    pub baseline_ppl: f64,
    pub augmented_ppl: f64,
    /// `100 * (baseline - augmented) / baseline`; a perplexity proxy, not WERR.
    pub ppl_reduction_pct: f64,
}

/// Transcribed utterances in a seeded random order; every volume is a prefix
/// of it, so smaller volumes are subsets of larger ones.
pub fn volume_order(transcribed: &[Utterance], seed: u64) -> Vec<Utterance> {
    let mut shuffled = transcribed.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    shuffled
}

/// Trains transcribed-only and interpolated models on growing prefixes of
/// the transcribed corpus and compares their test perplexities. The
/// translation side is processed once with the full transcribed corpus.
pub fn sweep_volume(config: &PipelineConfig, volumes: &[usize]) -> Result<Vec<VolumeRow>> {
    let mut timer = Timer::new();
    let up = upstream(config, &mut timer)?;
    if let Some(v) = volumes.iter().find(|&&v| v == 0 || v > up.transcribed.len()) {
        return Err(Error::InvalidArgument(format!(
            "volume {v} outside 1..={} transcribed utterances",
            up.transcribed.len()
        )));
    }
    timer.start("translated_lm");
    let translated = translated_lm(config, &up)?;
    let order = volume_order(&up.transcribed, config.seed);
    timer.start("sweep");
    let rows = volumes
        .par_iter()
        .map(|&volume| {
            let prefix = tokens_of(&order[..volume]);
            let baseline = Arc::new(
                train_katz(&prefix, config.lm.katz()).map_err(|e| e.in_stage("sweep_volume", volume.to_string()))?,
            );
            let (mixture, _) = tune_interpolation(components(&baseline, &translated), &up.tuning, config.lm.floor)?;
            let baseline_ppl = perplexity(baseline.as_ref(), &up.test)?;
            let augmented_ppl = perplexity(&mixture, &up.test)?;
            Ok(VolumeRow {
                volume,
                baseline_ppl,
                augmented_ppl,
                ppl_reduction_pct: 100.0 * (baseline_ppl - augmented_ppl) / baseline_ppl,
            })
        })
        .collect();
    timer.finish();
    rows
}

pub fn format_volume_sweep(rows: &[VolumeRow]) -> String {
    let mut out = String::from("volume\tbaseline_ppl\taugmented_ppl\tppl_reduction_pct\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}",
            r.volume, r.baseline_ppl, r.augmented_ppl, r.ppl_reduction_pct
        );
    }
    out
}
