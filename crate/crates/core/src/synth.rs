//! Synthetic Hindi-English fixtures.
//!
//! A small template grammar produces everything the pipeline reads:
//! code-mixed transcribed utterances, held-out tuning and test sets, English
//! source utterances with n-best "translations" (attention, token scores and
//! typical decoder mistakes included), local entity catalogs, a selection
//! pool and word vectors.
//!
//! The data is shaped so that the translations help without dominating:
//! transcribed utterances only use half of each local entity list, held-out
//! utterances occasionally use the other half, and translations are
//! noticeably less fluent (literal word choices, a formal register).

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{PipelineConfig, Stages};
use crate::corpus::{write_utterances, Catalog, CatalogEntry, EntitySpan, Utterance};
use crate::error::{Error, Result};
use crate::postedit::{write_translations, AttentionMatrix, NBestList, TranslationHypothesis};

struct Template {
    source: &'static str,
    /// Target words carry `@k`, the source template position they translate.
    /// Placeholders align to the matching source placeholder.
    target: &'static str,
}

struct Scenario {
    name: &'static str,
    transcribed_weight: f64,
    templates: &'static [Template],
}

const SCENARIOS: &[Scenario] = &[
    Scenario {
        name: "music",
        transcribed_weight: 0.42,
        templates: &[
            Template { source: "play {song}", target: "{song} bajao@0" },
            Template { source: "play {song} by {artist}", target: "{artist} ka@2 {song} bajao@0" },
            Template { source: "play songs by {artist}", target: "{artist} ke@2 gaane@1 bajao@0" },
            Template { source: "i want to listen to {artist}", target: "mujhe@0 {artist} sunna@3 hai@1" },
            Template { source: "play some music", target: "kuch@1 music@2 play@0 karo@0" },
        ],
    },
    Scenario {
        name: "notifications",
        transcribed_weight: 0.30,
        templates: &[
            Template { source: "show my notifications", target: "mere@1 notifications@2 dikhao@0" },
            Template { source: "do i have any new messages", target: "kya@0 koi@3 naya@4 message@5 hai@2" },
            Template { source: "read my messages", target: "mere@1 messages@2 padho@0" },
        ],
    },
    Scenario {
        name: "knowledge",
        transcribed_weight: 0.12,
        templates: &[
            Template { source: "who is {person}", target: "{person} kaun@0 hai@1" },
            Template { source: "what is the population of {city}", target: "{city} ki@4 aabadi@3 kitni@0 hai@1" },
            Template { source: "tell me about {person}", target: "mujhe@1 {person} ke@2 baare@2 mein@2 batao@0" },
        ],
    },
    Scenario {
        name: "weather",
        transcribed_weight: 0.09,
        templates: &[
            Template { source: "how is the weather in {city} today", target: "aaj@6 {city} mein@4 mausam@3 kaisa@0 hai@1" },
            Template { source: "will it rain in {city} tomorrow", target: "kya@0 kal@5 {city} mein@3 baarish@2 hogi@0" },
            Template { source: "what is the temperature", target: "temperature@3 kitna@0 hai@1" },
        ],
    },
    Scenario {
        name: "shopping",
        transcribed_weight: 0.07,
        templates: &[
            Template { source: "order {product}", target: "{product} order@0 karo@0" },
            Template { source: "add {product} to my cart", target: "mere@3 cart@4 mein@2 {product} daalo@0" },
            Template { source: "buy {product} for me", target: "mere@3 liye@2 {product} khareedo@0" },
        ],
    },
];

/// Local (catalog) entities by type. The first half of each list is what the
/// transcribed corpus knows about.
const LOCAL_ENTITIES: &[(&str, &[&str])] = &[
    ("song", &["tum hi ho", "kal ho na ho", "chaiyya chaiyya", "kesariya", "lag ja gale", "channa mereya", "tujhe dekha to", "apna time aayega"]),
    ("artist", &["arijit singh", "lata mangeshkar", "shreya ghoshal", "kishore kumar", "a r rahman", "badshah"]),
    ("city", &["delhi", "mumbai", "pune", "jaipur", "kolkata", "chennai", "lucknow", "indore"]),
    ("product", &["chai patti", "basmati chawal", "phone charger", "haldi", "atta", "sabun"]),
    ("person", &["sachin tendulkar", "amitabh bachchan", "mahatma gandhi", "virat kohli", "kalpana chawla", "sania mirza"]),
];

/// Entities that occur in the English source utterances.
const SOURCE_ENTITIES: &[(&str, &[&str])] = &[
    ("song", &["moonlight sonata", "shape of you", "hotel california", "bohemian rhapsody", "let it be"]),
    ("artist", &["beethoven", "taylor swift", "ed sheeran", "the beatles"]),
    ("city", &["seattle", "boston", "new york", "chicago"]),
    ("product", &["paper towels", "coffee beans", "aa batteries"]),
    ("person", &["barack obama", "michael jordan", "albert einstein"]),
];

/// Literal word choices a generic translation system tends to make.
const MT_CONFUSIONS: &[(&str, &str)] = &[
    ("bajao", "khelo"),
    ("dikhao", "pradarshit"),
    ("padho", "padhiye"),
    ("batao", "bataiye"),
    ("daalo", "jodo"),
    ("khareedo", "kharido"),
    ("kaisa", "kaise"),
    ("mausam", "mosam"),
    ("gaane", "geet"),
    ("karo", "kijiye"),
];

/// Polite register marker that translations add but speakers rarely use.
const FORMAL_MARKER: &str = "kripya";
const FORMAL_RATE: f64 = 0.8;
const NOVEL_ENTITY_RATE: f64 = 0.05;

const GENERIC_WORDS: &[&str] = &[
    "sarkar", "chunav", "bazaar", "sansad", "vigyan", "khel", "cricket", "match", "neeti", "arthvyavastha",
    "kisan", "shiksha", "vidyalay", "aspatal", "sadak", "rail", "samachar", "adalat", "faisla", "rajya",
    "mantri", "pradhan", "yojana", "vikas", "karya", "samiti", "baithak", "report", "aarthik", "vyapar",
    "niryat", "aayat", "sthiti", "sanstha", "adhyayan", "parinaam", "pariksha", "chhatra", "udyog", "nivesh",
    "ne", "ki", "ka", "ke", "mein", "se", "par", "hai", "tha", "kiya",
];

/// Sizes and seed of a generated fixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureSpec {
    pub seed: u64,
    pub transcribed: usize,
    pub translations: usize,
    pub tuning: usize,
    pub test: usize,
    pub pool_in_domain: usize,
    pub pool_generic: usize,
    pub nbest: usize,
    pub vector_dim: usize,
}

impl FixtureSpec {
    /// A few hundred utterances; fast enough for unit tests.
    pub fn small(seed: u64) -> Self {
        FixtureSpec {
            seed,
            transcribed: 400,
            translations: 300,
            tuning: 120,
            test: 120,
            pool_in_domain: 60,
            pool_generic: 140,
            nbest: 3,
            vector_dim: 12,
        }
    }

    /// The size used by the end-to-end checks.
    pub fn standard(seed: u64) -> Self {
        FixtureSpec {
            seed,
            transcribed: 3000,
            translations: 2000,
            tuning: 400,
            test: 400,
            pool_in_domain: 300,
            pool_generic: 700,
            nbest: 4,
            vector_dim: 16,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub transcribed: Vec<Utterance>,
    pub tuning: Vec<Utterance>,
    pub test: Vec<Utterance>,
    pub translations: Vec<NBestList>,
    pub catalogs: BTreeMap<String, Catalog>,
    pub selection_pool: Vec<Utterance>,
    /// Word vectors sorted by word.
    pub word_vectors: Vec<(String, Vec<f64>)>,
}

fn lookup<'a>(table: &'a [(&str, &'a [&str])], ty: &str) -> &'a [&'a str] {
    table.iter().find(|(t, _)| *t == ty).map(|(_, v)| *v).expect("entity type in table")
}

fn placeholder(tok: &str) -> Option<&str> {
    tok.strip_prefix('{').and_then(|t| t.strip_suffix('}'))
}

fn pick_scenario<R: Rng>(rng: &mut R, weighted: bool) -> &'static Scenario {
    if weighted {
        let r: f64 = rng.gen();
        let mut acc = 0.0;
        for s in SCENARIOS {
            acc += s.transcribed_weight;
            if r < acc {
                return s;
            }
        }
        SCENARIOS.last().expect("scenarios")
    } else {
        SCENARIOS.choose(rng).expect("scenarios")
    }
}

fn entity_choice<R: Rng>(rng: &mut R, ty: &str, known_only: bool) -> Vec<String> {
    let list = lookup(LOCAL_ENTITIES, ty);
    let n = if known_only { list.len().div_ceil(2) } else { list.len() };
    list[rng.gen_range(0..n)].split(' ').map(String::from).collect()
}

/// Expands a target template into a local-language utterance.
fn local_utterance<R: Rng>(rng: &mut R, id: String, scenario: &Scenario, known_only: bool) -> Utterance {
    let template = scenario.templates.choose(rng).expect("templates");
    let mut tokens = Vec::new();
    let mut entities = Vec::new();
    for tok in template.target.split(' ') {
        if let Some(ty) = placeholder(tok) {
            let start = tokens.len();
            tokens.extend(entity_choice(rng, ty, known_only));
            entities.push(EntitySpan::new(start, tokens.len(), ty));
        } else {
            tokens.push(tok.split('@').next().expect("word").to_string());
        }
    }
    Utterance::new(id, tokens, entities, Some(scenario.name.to_string())).expect("valid template")
}

fn mangle(token: &str) -> String {
    for (from, to) in [("ight", "ite"), ("th", "t"), ("ee", "i"), ("oo", "u"), ("ph", "f")] {
        if token.contains(from) {
            return token.replacen(from, to, 1);
        }
    }
    format!("{token}a")
}

fn attention_row<R: Rng>(rng: &mut R, cols: usize, peak_at: usize) -> Vec<f64> {
    if cols == 1 {
        return vec![1.0];
    }
    let peak = rng.gen_range(0.55..0.9);
    let noise: Vec<f64> = (0..cols).map(|_| rng.gen_range(0.05..1.0)).collect();
    let rest: f64 = noise.iter().enumerate().filter(|(j, _)| *j != peak_at).map(|(_, x)| x).sum();
    (0..cols)
        .map(|j| if j == peak_at { peak } else { (1.0 - peak) * noise[j] / rest })
        .collect()
}

struct Aligned {
    source: Vec<String>,
    source_entities: Vec<EntitySpan>,
    /// Target words with their source positions; entity tokens flagged.
    target: Vec<(String, usize, bool)>,
}

fn aligned_pair<R: Rng>(rng: &mut R, template: &Template) -> Aligned {
    let mut source = Vec::new();
    let mut source_entities = Vec::new();
    // Start of each source template position in the expanded source.
    let mut starts = Vec::new();
    let mut spans: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for tok in template.source.split(' ') {
        starts.push(source.len());
        if let Some(ty) = placeholder(tok) {
            let surface = lookup(SOURCE_ENTITIES, ty).choose(rng).expect("entities");
            let start = source.len();
            source.extend(surface.split(' ').map(String::from));
            spans.insert(ty, (start, source.len()));
            source_entities.push(EntitySpan::new(start, source.len(), ty));
        } else {
            source.push(tok.to_string());
        }
    }
    let mut target = Vec::new();
    for tok in template.target.split(' ') {
        if let Some(ty) = placeholder(tok) {
            let (start, end) = spans[ty];
            target.extend((start..end).map(|j| (source[j].clone(), j, true)));
        } else {
            let (word, pos) = tok.split_once('@').expect("aligned target word");
            let pos: usize = pos.parse().expect("position");
            target.push((word.to_string(), starts[pos], false));
        }
    }
    Aligned {
        source,
        source_entities,
        target,
    }
}

fn hypothesis<R: Rng>(rng: &mut R, pair: &Aligned, confusion_rate: f64) -> TranslationHypothesis {
    let mut tokens = Vec::new();
    let mut logprobs = Vec::new();
    let mut rows = Vec::new();
    if rng.gen_bool(FORMAL_RATE) {
        tokens.push(FORMAL_MARKER.to_string());
        logprobs.push(-rng.gen_range(0.02..0.2));
        rows.push(attention_row(rng, pair.source.len(), 0));
    }
    for (word, j, is_entity) in &pair.target {
        let (tok, lp) = if *is_entity {
            if rng.gen_bool(0.6) {
                (mangle(word), -rng.gen_range(0.3..1.2))
            } else {
                (word.clone(), -rng.gen_range(0.2..0.9))
            }
        } else {
            match MT_CONFUSIONS.iter().find(|(w, _)| w == word) {
                Some((_, literal)) if rng.gen_bool(confusion_rate) => (literal.to_string(), -rng.gen_range(0.02..0.3)),
                _ => (word.clone(), -rng.gen_range(0.05..0.6)),
            }
        };
        tokens.push(tok);
        logprobs.push(lp);
        rows.push(attention_row(rng, pair.source.len(), *j));
    }
    TranslationHypothesis::new(
        pair.source.clone(),
        tokens,
        logprobs,
        AttentionMatrix::new(rows).expect("stochastic rows"),
    )
    .expect("consistent hypothesis")
}

fn nbest_list<R: Rng>(rng: &mut R, id: String, spec: &FixtureSpec) -> NBestList {
    let scenario = pick_scenario(rng, false);
    let template = scenario.templates.choose(rng).expect("templates");
    let pair = aligned_pair(rng, template);
    let mut hyps: Vec<TranslationHypothesis> = (0..spec.nbest.max(1))
        .map(|k| {
            let rate = if k == 0 { 0.9 } else { 0.9 / (k as f64 + 1.0) };
            hypothesis(rng, &pair, rate)
        })
        .collect();
    // Beam output is ordered by decoder score.
    hyps.sort_by(|a, b| b.mt_score().total_cmp(&a.mt_score()));
    NBestList {
        id,
        source_tokens: pair.source,
        source_entities: pair.source_entities,
        scenario: Some(scenario.name.to_string()),
        hypotheses: hyps,
    }
}

fn generic_sentence<R: Rng>(rng: &mut R, id: String) -> Utterance {
    let len = rng.gen_range(5..=12);
    let tokens = (0..len)
        .map(|_| GENERIC_WORDS.choose(rng).expect("words").to_string())
        .collect();
    Utterance::new(id, tokens, Vec::new(), None).expect("non-empty")
}

pub fn generate_fixture(spec: &FixtureSpec) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let transcribed = (0..spec.transcribed)
        .map(|i| {
            let s = pick_scenario(&mut rng, true);
            local_utterance(&mut rng, format!("tr-{i:06}"), s, true)
        })
        .collect();
    // Held-out speech follows the transcribed scenario mix but mentions
    // entities the transcribed corpus has never seen now and then.
    let held_out = |rng: &mut ChaCha8Rng, prefix: &str, n: usize| -> Vec<Utterance> {
        (0..n)
            .map(|i| {
                let s = pick_scenario(rng, true);
                let known_only = !rng.gen_bool(NOVEL_ENTITY_RATE);
                local_utterance(rng, format!("{prefix}-{i:06}"), s, known_only)
            })
            .collect()
    };
    let tuning = held_out(&mut rng, "tune", spec.tuning);
    let test = held_out(&mut rng, "test", spec.test);
    let translations = (0..spec.translations)
        .map(|i| nbest_list(&mut rng, format!("en-{i:06}"), spec))
        .collect();

    let catalogs = LOCAL_ENTITIES
        .iter()
        .map(|(ty, list)| {
            let entries = list
                .iter()
                .enumerate()
                .map(|(k, s)| CatalogEntry {
                    surface: s.split(' ').map(String::from).collect(),
                    weight: if k % 3 == 0 { 2.0 } else { 1.0 },
                })
                .collect();
            (
                ty.to_string(),
                Catalog {
                    entity_type: ty.to_string(),
                    entries,
                },
            )
        })
        .collect();

    let mut selection_pool = held_out(&mut rng, "pool-in", spec.pool_in_domain);
    selection_pool.extend((0..spec.pool_generic).map(|i| generic_sentence(&mut rng, format!("pool-gen-{i:06}"))));
    selection_pool.shuffle(&mut rng);

    let mut in_domain_words = BTreeSet::new();
    for s in SCENARIOS {
        for t in s.templates {
            for tok in t.target.split(' ').filter(|t| placeholder(t).is_none()) {
                in_domain_words.insert(tok.split('@').next().expect("word").to_string());
            }
        }
    }
    for (_, list) in LOCAL_ENTITIES {
        for e in *list {
            in_domain_words.extend(e.split(' ').map(String::from));
        }
    }
    let generic: BTreeSet<String> = GENERIC_WORDS.iter().map(|w| w.to_string()).collect();
    let words: BTreeSet<String> = in_domain_words.union(&generic).cloned().collect();
    let word_vectors = words
        .into_iter()
        .map(|w| {
            let mut v: Vec<f64> = (0..spec.vector_dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
            if in_domain_words.contains(&w) {
                v[0] += 1.0;
            }
            if generic.contains(&w) {
                v[1] += 1.0;
            }
            (w, v)
        })
        .collect();

    Fixture {
        transcribed,
        tuning,
        test,
        translations,
        catalogs,
        selection_pool,
        word_vectors,
    }
}

pub const FIXTURE_FILES: [&str; 8] = [
    "transcribed.jsonl",
    "tuning.jsonl",
    "test.jsonl",
    "translations.jsonl",
    "catalogs.jsonl",
    "selection_pool.jsonl",
    "vectors.txt",
    "config.toml",
];

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Writes the fixture plus a `config.toml` with every stage enabled and
/// returns the config path.
pub fn write_fixture(fixture: &Fixture, dir: &Path, seed: u64) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("transcribed.jsonl"), |b| write_utterances(b, &fixture.transcribed))?;
    write_file(&dir.join("tuning.jsonl"), |b| write_utterances(b, &fixture.tuning))?;
    write_file(&dir.join("test.jsonl"), |b| write_utterances(b, &fixture.test))?;
    write_file(&dir.join("translations.jsonl"), |b| write_translations(b, &fixture.translations))?;
    write_file(&dir.join("selection_pool.jsonl"), |b| write_utterances(b, &fixture.selection_pool))?;
    write_file(&dir.join("catalogs.jsonl"), |b| {
        for catalog in fixture.catalogs.values() {
            for e in &catalog.entries {
                let rec = serde_json::json!({"type": catalog.entity_type, "surface": e.surface, "weight": e.weight});
                serde_json::to_writer(&mut *b, &rec)?;
                b.write_all(b"\n")?;
            }
        }
        Ok(())
    })?;
    write_file(&dir.join("vectors.txt"), |b| {
        let dim = fixture.word_vectors.first().map_or(0, |(_, v)| v.len());
        writeln!(b, "{} {}", fixture.word_vectors.len(), dim)?;
        for (w, v) in &fixture.word_vectors {
            write!(b, "{w}")?;
            for x in v {
                write!(b, " {x:.6}")?;
            }
            writeln!(b)?;
        }
        Ok(())
    })?;

    let mut config = PipelineConfig::new(
        "transcribed.jsonl".into(),
        "translations.jsonl".into(),
        "tuning.jsonl".into(),
        "test.jsonl".into(),
    );
    config.seed = seed;
    config.paths.catalogs = Some("catalogs.jsonl".into());
    config.paths.word_vectors = Some("vectors.txt".into());
    config.paths.mt_corpus = Some("selection_pool.jsonl".into());
    config.stages = Stages {
        select: true,
        ..Stages::default()
    };
    let path = dir.join("config.toml");
    std::fs::write(&path, config.to_toml_string()?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
