use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use transboot::adapt::{filter_translations, format_filter_scores, rescore_all, FilterConfig, FilterMetric, RescoreConfig};
use transboot::config::PipelineConfig;
use transboot::corpus::{build_frequency_table, frequency_table_from_tokens, load_catalogs, load_utterances, load_word_vectors};
use transboot::embed::{embed_average_all, embed_sif, format_embeddings, import_external_embeddings, l2_normalize, EmbeddingMethod, SifParams};
use transboot::evalkit::{corpus_bleu, corpus_wer, format_report, parse_scenario_inputs, scenario_report};
use transboot::lm::{load_arpa, perplexity, train_katz, tune_interpolation, write_arpa, Component, ComponentRole, KatzConfig};
use transboot::pipeline::{commit_artifacts, format_floor_sweep, format_run_report, format_volume_sweep, run_pipeline, sweep_floor, sweep_volume};
use transboot::postedit::{load_translations, postedit_batch, write_edited, write_translations, PosteditConfig};
use transboot::select::{compute_centroids, format_scores, score_candidates, select_top_fraction};
use transboot::{Error, ErrorKind};

const DEFAULT_SEED: u64 = 42;

/// Bootstraps code-mixed language models from machine-translated text.
#[derive(Debug, Parser)]
#[command(name = "transboot", version)]
struct Cli {
    /// Pipeline configuration (TOML). Flags override its keys.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Random seed [default: the config's seed, else 42].
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// Worker threads [default: one per core].
    #[arg(long, global = true, value_name = "INT")]
    jobs: Option<usize>,
    /// Output directory. Without it, single-output commands print to stdout.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every enabled stage and write all artifacts to --out.
    Pipeline(Overrides),
    /// Re-tune the interpolation under each floor weight.
    SweepFloor {
        /// Comma-separated floors, each in [0, 1).
        #[arg(long, value_delimiter = ',', required = true)]
        floors: Vec<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Compare transcribed-only and interpolated models on nested subsets of the transcribed corpus.
    SweepVolume {
        /// Comma-separated corpus sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        volumes: Vec<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train a Katz back-off model and write it as ARPA.
    TrainLm(TrainLmArgs),
    /// Tune interpolation weights of two ARPA models on a tuning set.
    Interpolate(InterpolateArgs),
    /// Embed the sentences of an utterance file.
    Embed(EmbedArgs),
    /// Rank candidate sentences by relative centroid distance and keep the top fraction.
    Select(SelectArgs),
    /// Rerank n-best lists by decoder and language-model score.
    Rescore(RescoreArgs),
    /// Copy over, resample and code-mix the first hypothesis of each n-best list.
    Postedit(PosteditArgs),
    /// Keep the best-scoring fraction of translations.
    Filter(FilterArgs),
    /// Score hypotheses against references, or build the scenario report.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stage {
    Select,
    Rescore,
    Postedit,
    Filter,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Lower bound on the translated component's weight.
    #[arg(long)]
    floor: Option<f64>,
    /// Language-model weight in n-best rescoring.
    #[arg(long)]
    lm_weight: Option<f64>,
    /// Maximum code-mix replacement probability.
    #[arg(long)]
    p_max: Option<f64>,
    /// Fraction of candidates kept by data selection.
    #[arg(long)]
    select_fraction: Option<f64>,
    /// Sentence embedding method for data selection (average, sif, external).
    #[arg(long)]
    embedding: Option<EmbeddingMethod>,
    /// Fraction of translations kept by the filter.
    #[arg(long)]
    keep_fraction: Option<f64>,
    /// Filter score (mt_score, slm_score).
    #[arg(long)]
    filter_metric: Option<FilterMetric>,
    /// Stages to switch on, comma-separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    enable: Vec<Stage>,
    /// Stages to switch off, comma-separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    disable: Vec<Stage>,
}

#[derive(Debug, Args)]
struct TrainLmArgs {
    /// Utterance JSONL [default: paths.transcribed].
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    order: Option<usize>,
    /// Highest count that is Good-Turing discounted.
    #[arg(long)]
    cutoff: Option<usize>,
}

#[derive(Debug, Args)]
struct InterpolateArgs {
    #[arg(long, value_name = "ARPA")]
    transcribed_lm: PathBuf,
    #[arg(long, value_name = "ARPA")]
    translated_lm: PathBuf,
    /// Utterance JSONL used to tune the weights [default: paths.tuning].
    #[arg(long)]
    tuning: Option<PathBuf>,
    /// Utterance JSONL for held-out perplexity [default: paths.test].
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    floor: Option<f64>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    /// Utterance JSONL to embed.
    #[arg(long)]
    input: PathBuf,
    /// Word vector file [default: paths.word_vectors].
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// average or sif.
    #[arg(long)]
    method: Option<EmbeddingMethod>,
    #[arg(long)]
    sif_a: Option<f64>,
    /// Additive smoothing for SIF word frequencies.
    #[arg(long)]
    frequency_alpha: Option<f64>,
    /// Scale every sentence vector to unit length.
    #[arg(long)]
    normalize: bool,
}

#[derive(Debug, Args)]
struct SelectArgs {
    /// Embeddings of the in-domain corpus.
    #[arg(long)]
    in_domain: PathBuf,
    /// Embeddings of the candidate corpus.
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    fraction: Option<f64>,
}

#[derive(Debug, Args)]
struct RescoreArgs {
    /// Translation JSONL [default: paths.translations].
    #[arg(long)]
    translations: Option<PathBuf>,
    /// In-domain ARPA model.
    #[arg(long)]
    lm: PathBuf,
    #[arg(long)]
    lm_weight: Option<f64>,
    /// Score whole sentences instead of per-token averages.
    #[arg(long)]
    no_length_normalize: bool,
}

#[derive(Debug, Args)]
struct PosteditArgs {
    /// Translation JSONL [default: paths.translations].
    #[arg(long)]
    translations: Option<PathBuf>,
    /// Entity catalogs [default: paths.catalogs].
    #[arg(long)]
    catalogs: Option<PathBuf>,
    /// Utterance JSONL whose word frequencies drive code-mixing [default: paths.transcribed].
    #[arg(long)]
    frequency_corpus: Option<PathBuf>,
    #[arg(long)]
    p_max: Option<f64>,
    #[arg(long)]
    no_copy_over: bool,
    #[arg(long)]
    no_resample: bool,
    #[arg(long)]
    no_code_mix: bool,
}

#[derive(Debug, Args)]
struct FilterArgs {
    /// Translation JSONL [default: paths.translations].
    #[arg(long)]
    translations: Option<PathBuf>,
    /// mt_score or slm_score.
    #[arg(long)]
    metric: Option<FilterMetric>,
    /// In-domain ARPA model, required for slm_score.
    #[arg(long)]
    lm: Option<PathBuf>,
    #[arg(long)]
    keep_fraction: Option<f64>,
    #[arg(long)]
    no_length_normalize: bool,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["scenarios", "reference"]))]
struct EvaluateArgs {
    /// Per-scenario WERR table (TSV).
    #[arg(long)]
    scenarios: Option<PathBuf>,
    /// Reference text, one tokenized sentence per line.
    #[arg(long, requires = "hypothesis")]
    reference: Option<PathBuf>,
    /// Hypothesis text aligned line by line with the reference.
    #[arg(long, requires = "reference")]
    hypothesis: Option<PathBuf>,
    /// Highest BLEU n-gram order.
    #[arg(long, default_value_t = 4)]
    max_n: usize,
    /// Add-one smoothing for BLEU orders above one.
    #[arg(long)]
    smooth: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let kind = err.chain().find_map(|c| c.downcast_ref::<Error>()).map(Error::kind);
    match kind {
        Some(ErrorKind::Config) => 2,
        Some(ErrorKind::Internal) => 4,
        Some(ErrorKind::Data) | None => 3,
    }
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidArgument(msg.into()).into()
}

struct Ctx {
    config: Option<PipelineConfig>,
    seed: u64,
    out: Option<PathBuf>,
}

impl Ctx {
    fn require_config(&self) -> Result<PipelineConfig> {
        let mut config = self.config.clone().ok_or_else(|| invalid("this command needs --config"))?;
        config.seed = self.seed;
        Ok(config)
    }

    /// An explicit path, or the one the config names.
    fn path(&self, flag: Option<PathBuf>, name: &str, from_config: impl Fn(&PipelineConfig) -> Option<PathBuf>) -> Result<PathBuf> {
        flag.or_else(|| self.config.as_ref().and_then(from_config))
            .ok_or_else(|| invalid(format!("--{name} is required without a config that sets it")))
    }

    /// Writes `files` into --out, or prints the first one to stdout.
    fn emit(&self, files: Vec<(String, Vec<u8>)>) -> Result<()> {
        match &self.out {
            Some(dir) => {
                commit_artifacts(dir, &files)?;
                for (name, _) in &files {
                    log::info!("wrote {}", dir.join(name).display());
                }
            }
            None => {
                let (_, primary) = files.first().expect("at least one output");
                std::io::stdout().write_all(primary).context("writing to stdout")?;
                if files.len() > 1 {
                    log::info!("pass --out to also keep {}", files[1..].iter().map(|f| f.0.as_str()).collect::<Vec<_>>().join(", "));
                }
            }
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(invalid("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().context("starting worker pool")?;
    }
    let config = cli.config.as_deref().map(PipelineConfig::load).transpose()?;
    let seed = cli.seed.or(config.as_ref().map(|c| c.seed)).unwrap_or(DEFAULT_SEED);
    let ctx = Ctx { config, seed, out: cli.out };
    match cli.command {
        Command::Pipeline(o) => cmd_pipeline(&ctx, &o),
        Command::SweepFloor { floors, overrides } => {
            let config = apply_overrides(ctx.require_config()?, &overrides);
            let rows = sweep_floor(&config, &floors)?;
            ctx.emit(vec![("floor_sweep.tsv".into(), format_floor_sweep(&rows).into_bytes())])
        }
        Command::SweepVolume { volumes, overrides } => {
            let config = apply_overrides(ctx.require_config()?, &overrides);
            let rows = sweep_volume(&config, &volumes)?;
            ctx.emit(vec![("volume_sweep.tsv".into(), format_volume_sweep(&rows).into_bytes())])
        }
        Command::TrainLm(a) => cmd_train_lm(&ctx, a),
        Command::Interpolate(a) => cmd_interpolate(&ctx, a),
        Command::Embed(a) => cmd_embed(&ctx, a),
        Command::Select(a) => cmd_select(&ctx, a),
        Command::Rescore(a) => cmd_rescore(&ctx, a),
        Command::Postedit(a) => cmd_postedit(&ctx, a),
        Command::Filter(a) => cmd_filter(&ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a),
    }
}

fn apply_overrides(mut config: PipelineConfig, o: &Overrides) -> PipelineConfig {
    if let Some(v) = o.floor {
        config.lm.floor = v;
    }
    if let Some(v) = o.lm_weight {
        config.rescore.lm_weight = v;
    }
    if let Some(v) = o.p_max {
        config.postedit.p_max = v;
    }
    if let Some(v) = o.select_fraction {
        config.select.fraction = v;
    }
    if let Some(v) = o.embedding {
        config.select.method = v;
    }
    if let Some(v) = o.keep_fraction {
        config.filter.keep_fraction = v;
    }
    if let Some(v) = o.filter_metric {
        config.filter.metric = v;
    }
    for (stages, on) in [(&o.enable, true), (&o.disable, false)] {
        for stage in stages {
            let flag = match stage {
                Stage::Select => &mut config.stages.select,
                Stage::Rescore => &mut config.stages.rescore,
                Stage::Postedit => &mut config.stages.postedit,
                Stage::Filter => &mut config.stages.filter,
            };
            *flag = on;
        }
    }
    config
}

fn cmd_pipeline(ctx: &Ctx, o: &Overrides) -> Result<()> {
    let config = apply_overrides(ctx.require_config()?, o);
    let out = ctx.out.as_deref().ok_or_else(|| invalid("pipeline needs --out"))?;
    let report = run_pipeline(&config, out)?;
    for t in &report.timings {
        log::debug!("{}\t{:.3}s", t.stage, t.seconds);
    }
    std::io::stdout().write_all(format_run_report(&report).as_bytes()).context("writing to stdout")?;
    Ok(())
}

fn token_corpus(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(load_utterances(path)?.into_iter().map(|u| u.tokens).collect())
}

fn cmd_train_lm(ctx: &Ctx, a: TrainLmArgs) -> Result<()> {
    let corpus = ctx.path(a.corpus, "corpus", |c| Some(c.paths.transcribed.clone()))?;
    let base = ctx.config.as_ref().map(|c| c.lm.katz()).unwrap_or_default();
    let katz = KatzConfig {
        order: a.order.unwrap_or(base.order),
        cutoff: a.cutoff.unwrap_or(base.cutoff),
    };
    let model = train_katz(&token_corpus(&corpus)?, katz)?;
    let mut buf = Vec::new();
    write_arpa(&model, &mut buf)?;
    ctx.emit(vec![("model.arpa".into(), buf)])
}

fn cmd_interpolate(ctx: &Ctx, a: InterpolateArgs) -> Result<()> {
    let tuning = ctx.path(a.tuning, "tuning", |c| Some(c.paths.tuning.clone()))?;
    let test = a.test.or_else(|| ctx.config.as_ref().map(|c| c.paths.test.clone()));
    let floor = a.floor.or(ctx.config.as_ref().map(|c| c.lm.floor)).unwrap_or(0.0);
    let transcribed = Arc::new(load_arpa(&a.transcribed_lm)?);
    let translated = Arc::new(load_arpa(&a.translated_lm)?);
    let components = vec![
        Component::new(ComponentRole::Transcribed, Arc::clone(&transcribed)),
        Component::new(ComponentRole::Translated, Arc::clone(&translated)),
    ];
    let tuning = token_corpus(&tuning)?;
    let (mixture, em) = tune_interpolation(components, &tuning, floor)?;

    let mut out = String::from("key\tvalue\n");
    let mut row = |k: &str, v: String| {
        let _ = writeln!(out, "{k}\t{v}");
    };
    row("em_iterations", em.iterations.to_string());
    row("em_converged", em.converged.to_string());
    row("em_weight_transcribed", format!("{:.6}", em.weights[0]));
    row("em_weight_translated", format!("{:.6}", em.weights[1]));
    row("floor", format!("{floor:.6}"));
    row("weight_transcribed", format!("{:.6}", mixture.weights()[0]));
    row("weight_translated", format!("{:.6}", mixture.weights()[1]));
    row("tuning_ppl_transcribed", format!("{:.6}", perplexity(transcribed.as_ref(), &tuning)?));
    row("tuning_ppl_interpolated", format!("{:.6}", perplexity(&mixture, &tuning)?));
    if let Some(test) = test {
        let test = token_corpus(&test)?;
        row("test_ppl_transcribed", format!("{:.6}", perplexity(transcribed.as_ref(), &test)?));
        row("test_ppl_interpolated", format!("{:.6}", perplexity(&mixture, &test)?));
    }
    ctx.emit(vec![("interpolation.tsv".into(), out.into_bytes())])
}

fn cmd_embed(ctx: &Ctx, a: EmbedArgs) -> Result<()> {
    let select = ctx.config.as_ref().map(|c| c.select).unwrap_or_default();
    let method = a.method.unwrap_or(select.method);
    let vectors = ctx.path(a.vectors, "vectors", |c| c.paths.word_vectors.clone())?;
    let utts = load_utterances(&a.input)?;
    let table = load_word_vectors(&vectors)?;
    let mut embeddings = match method {
        EmbeddingMethod::Average => embed_average_all(&utts, &table),
        EmbeddingMethod::Sif => {
            let freq = build_frequency_table(&utts, a.frequency_alpha.unwrap_or(select.frequency_alpha))?;
            let params = SifParams {
                a: a.sif_a.unwrap_or(select.sif_a),
                ..SifParams::default()
            };
            embed_sif(&utts, &table, &freq, &params)?.embeddings
        }
        EmbeddingMethod::External => return Err(invalid("embed computes average or sif embeddings; external ones are read by select")),
    };
    let degenerate = embeddings.iter().filter(|e| e.degenerate).count();
    if degenerate > 0 {
        log::warn!("{degenerate} sentences have no word vectors and embed to zero");
    }
    if a.normalize || select.normalize {
        for e in &mut embeddings {
            e.vector = l2_normalize(&e.vector);
        }
    }
    ctx.emit(vec![("embeddings.txt".into(), format_embeddings(&embeddings).into_bytes())])
}

fn cmd_select(ctx: &Ctx, a: SelectArgs) -> Result<()> {
    let fraction = a.fraction.or(ctx.config.as_ref().map(|c| c.select.fraction)).unwrap_or(0.25);
    let in_domain = import_external_embeddings(&a.in_domain)?;
    let candidates = import_external_embeddings(&a.candidates)?;
    let usable = |e: &[transboot::embed::SentenceEmbedding]| -> Vec<Vec<f64>> {
        e.iter().filter(|e| !e.degenerate).map(|e| e.vector.clone()).collect()
    };
    let centroids = compute_centroids(&usable(&in_domain), &usable(&candidates))?;
    let scores = score_candidates(&candidates, &centroids)?;
    let selected = select_top_fraction(&scores, fraction)?;
    log::info!("selected {} of {} candidates", selected.len(), candidates.len());
    let mut ids = selected.join("\n");
    ids.push('\n');
    ctx.emit(vec![
        ("selected_ids.txt".into(), ids.into_bytes()),
        ("selection_scores.tsv".into(), format_scores(&scores).into_bytes()),
    ])
}

fn cmd_rescore(ctx: &Ctx, a: RescoreArgs) -> Result<()> {
    let path = ctx.path(a.translations, "translations", |c| Some(c.paths.translations.clone()))?;
    let base = ctx.config.as_ref().map(|c| c.rescore_config()).unwrap_or_default();
    let cfg = RescoreConfig {
        lm_weight: a.lm_weight.unwrap_or(base.lm_weight),
        length_normalize: base.length_normalize && !a.no_length_normalize,
    };
    let lm = load_arpa(&a.lm)?;
    let mut lists = load_translations(&path)?;
    let outcomes = rescore_all(&lists, &lm, &cfg)?;
    let mut changed = 0;
    for (list, outcome) in lists.iter_mut().zip(&outcomes) {
        if outcome.chosen != 0 {
            changed += 1;
            let best = list.hypotheses.remove(outcome.chosen);
            list.hypotheses.insert(0, best);
        }
    }
    log::info!("rescoring changed the first choice of {changed} of {} lists", lists.len());
    let mut buf = Vec::new();
    write_translations(&mut buf, &lists).context("serializing translations")?;
    ctx.emit(vec![("rescored.jsonl".into(), buf)])
}

fn cmd_postedit(ctx: &Ctx, a: PosteditArgs) -> Result<()> {
    let path = ctx.path(a.translations, "translations", |c| Some(c.paths.translations.clone()))?;
    let base = ctx.config.as_ref().map(|c| c.postedit_config()).unwrap_or_default();
    let cfg = PosteditConfig {
        copy_over: base.copy_over && !a.no_copy_over,
        resample: base.resample && !a.no_resample,
        code_mix: base.code_mix && !a.no_code_mix,
        p_max: a.p_max.unwrap_or(base.p_max),
    };
    let alpha = ctx.config.as_ref().map_or(1.0, |c| c.postedit.frequency_alpha);
    let lists = load_translations(&path)?;
    let catalogs = match ctx.path(a.catalogs, "catalogs", |c| c.paths.catalogs.clone()) {
        Ok(p) => load_catalogs(p)?,
        Err(_) if !cfg.resample => Default::default(),
        Err(e) => return Err(e),
    };
    let freq = match ctx.path(a.frequency_corpus, "frequency-corpus", |c| Some(c.paths.transcribed.clone())) {
        Ok(p) => build_frequency_table(&load_utterances(p)?, alpha)?,
        Err(_) if !cfg.code_mix => frequency_table_from_tokens(lists.iter().map(|l| l.hypotheses[0].target_tokens.as_slice()), alpha)?,
        Err(e) => return Err(e),
    };
    let picked: Vec<_> = lists.iter().map(|l| (l, &l.hypotheses[0])).collect();
    let (sentences, stats) = postedit_batch(&picked, &cfg, &catalogs, &freq, ctx.seed)?;
    log::info!(
        "edited {} sentences: {} entities copied, {} unaligned, {} without catalog, {} tokens code-mixed",
        stats.sentences,
        stats.copied_entities,
        stats.unaligned_entities,
        stats.missing_catalog,
        stats.code_mixed_tokens
    );
    let edited: Vec<_> = sentences.into_iter().zip(&lists).map(|(s, l)| (s, l.scenario.clone())).collect();
    let mut buf = Vec::new();
    write_edited(&mut buf, &edited)?;
    ctx.emit(vec![("edited.jsonl".into(), buf)])
}

fn cmd_filter(ctx: &Ctx, a: FilterArgs) -> Result<()> {
    let path = ctx.path(a.translations, "translations", |c| Some(c.paths.translations.clone()))?;
    let base = ctx.config.as_ref().map(|c| c.filter_config()).unwrap_or_default();
    let cfg = FilterConfig {
        metric: a.metric.unwrap_or(base.metric),
        keep_fraction: a.keep_fraction.unwrap_or(base.keep_fraction),
        length_normalize: base.length_normalize && !a.no_length_normalize,
    };
    let lm = a.lm.as_deref().map(load_arpa).transpose()?;
    let lists = load_translations(&path)?;
    let items: Vec<_> = lists.iter().map(|l| (l.id.clone(), &l.hypotheses[0])).collect();
    let outcome = filter_translations(&items, &cfg, lm.as_ref())?;
    log::info!("kept {} of {} translations", outcome.retained.len(), items.len());
    let mut ids = outcome.retained.join("\n");
    ids.push('\n');
    ctx.emit(vec![
        ("retained_ids.txt".into(), ids.into_bytes()),
        ("filter_scores.tsv".into(), format_filter_scores(&outcome.scores, cfg.metric).into_bytes()),
    ])
}

fn read_token_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text.lines().map(|l| l.split_whitespace().map(str::to_string).collect()).collect())
}

fn cmd_evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<()> {
    if let Some(path) = &a.scenarios {
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        let inputs = parse_scenario_inputs(std::io::BufReader::new(file), path)?;
        let report = scenario_report(&inputs)?;
        return ctx.emit(vec![("scenario_report.tsv".into(), format_report(&report).into_bytes())]);
    }
    let (Some(r), Some(h)) = (&a.reference, &a.hypothesis) else {
        return Err(invalid("evaluate needs --scenarios or --reference with --hypothesis"));
    };
    let refs = read_token_lines(r)?;
    let hyps = read_token_lines(h)?;
    if refs.len() != hyps.len() {
        return Err(Error::Validation {
            id: h.display().to_string(),
            message: format!("{} hypothesis lines for {} reference lines", hyps.len(), refs.len()),
        }
        .into());
    }
    let w = corpus_wer(&refs, &hyps)?;
    let bleu = corpus_bleu(&hyps, &refs, a.max_n, a.smooth)?;
    let mut out = String::from("metric\tvalue\n");
    let _ = writeln!(out, "wer\t{:.6}", w.rate);
    let _ = writeln!(out, "substitutions\t{}", w.edits.substitutions);
    let _ = writeln!(out, "deletions\t{}", w.edits.deletions);
    let _ = writeln!(out, "insertions\t{}", w.edits.insertions);
    let _ = writeln!(out, "reference_words\t{}", w.reference_len);
    let _ = writeln!(out, "bleu\t{bleu:.6}");
    ctx.emit(vec![("metrics.tsv".into(), out.into_bytes())])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(exit_code(&Error::Config("x".into()).into()), 2);
        assert_eq!(exit_code(&Error::InvalidArgument("x".into()).into()), 2);
        assert_eq!(exit_code(&Error::EmptyInput("x".into()).into()), 3);
        assert_eq!(exit_code(&Error::Invariant("x".into()).into()), 4);
        let wrapped = anyhow::Error::from(Error::Invariant("x".into())).context("while running");
        assert_eq!(exit_code(&wrapped), 4);
        assert_eq!(exit_code(&anyhow::anyhow!("io")), 3);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
