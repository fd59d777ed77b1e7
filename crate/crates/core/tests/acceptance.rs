//! Acceptance gate: one `[PASS]`/`[FAIL]` line per criterion.
//!
//! Criteria listed in `KNOWN_FAILING` are still run and reported as failures;
//! they only stop the binary from exiting non-zero. A known failure that
//! starts passing is treated as an error so the list cannot go stale.

mod common;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{hypothesis, random_corpus, toks, zipf_corpus, TableLm};
use transboot::adapt::{lm_log_score, mt_log_score, rescore, retain_top, RescoreConfig};
use transboot::config::PipelineConfig;
use transboot::corpus::{build_frequency_table, EntitySpan, FrequencyTable, Utterance, WordVectorTable};
use transboot::embed::{embed_sif, first_principal_direction, EmbeddingMethod, SentenceEmbedding, SifParams};
use transboot::evalkit::{adaptation_contribution, corpus_bleu, parse_scenario_inputs, pearson, wer};
use transboot::lm::{
    apply_floor, em_mixture_weights, read_arpa, train_katz, write_arpa, ComponentRole, KatzConfig, LanguageModel,
    EM_MAX_ITERATIONS, EM_TOLERANCE,
};
use transboot::pipeline::{run_pipeline, sweep_floor, sweep_volume};
use transboot::postedit::{
    extract_alignment, ne_copy_over, simulate_code_mix, utterance_rng, Alignment, AttentionMatrix, EditedSentence,
    NBestList,
};
use transboot::select::{compute_centroids, delta_score, score_candidates, select_top_fraction, SelectionScore};
use transboot::synth::{generate_fixture, write_fixture, FixtureSpec};

/// Home Automation: 100 * (7.94 - 5.68) / 7.94 = 28.46, but the reference
/// contribution is 22.63, so that row cannot be reproduced from its inputs.
const KNOWN_FAILING: &[u32] = &[2];

type Check = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Check);

static SUITE_START: OnceLock<Instant> = OnceLock::new();

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn scenario_inputs() -> Vec<transboot::evalkit::ScenarioInput> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/scenarios.tsv");
    let file = std::fs::File::open(&path).expect("scenario table");
    parse_scenario_inputs(std::io::BufReader::new(file), &path).expect("valid scenario table")
}

fn scenario_correlation() -> Check {
    let inputs = scenario_inputs();
    let t = Instant::now();
    let x: Vec<f64> = inputs.iter().map(|s| s.combined_werr).collect();
    let y: Vec<f64> = inputs.iter().map(|s| s.ne_percent).collect();
    let c = pearson(&x, &y).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let detail = format!("r={:.6} p={:.6} over {} scenarios", c.r, c.p, x.len());
    ensure(inputs.len() == 9, || format!("expected 9 scenarios, got {}", inputs.len()))?;
    ensure((c.r - 0.647).abs() <= 0.001 && (c.p - 0.059).abs() <= 0.001, || detail.clone())?;
    within_time(elapsed, Duration::from_secs(1))?;
    Ok(detail)
}

fn scenario_contribution() -> Check {
    const REFERENCE: [(&str, f64); 9] = [
        ("Books", 20.80),
        ("Communication", 36.12),
        ("Weather", 52.84),
        ("Shopping", 27.49),
        ("Knowledge", 33.34),
        ("Video", 24.41),
        ("Home Automation", 22.63),
        ("Notifications", 34.14),
        ("Music", 23.26),
    ];
    let inputs = scenario_inputs();
    let t = Instant::now();
    let mut misses = Vec::new();
    let mut worst = 0.0f64;
    for (s, (name, want)) in inputs.iter().zip(REFERENCE) {
        ensure(s.scenario == name, || format!("scenario order: {} vs {name}", s.scenario))?;
        let got = adaptation_contribution(s.postedit_werr, s.combined_werr).map_err(|e| e.to_string())?;
        worst = worst.max((got - want).abs());
        if (got - want).abs() > 0.01 {
            misses.push(format!("{name} {got:.4} vs {want:.2}"));
        }
    }
    within_time(t.elapsed(), Duration::from_secs(1))?;
    ensure(misses.is_empty(), || format!("{} of 9 outside 0.01: {}", misses.len(), misses.join(", ")))?;
    Ok(format!("all 9 within 0.01 (max diff {worst:.4})"))
}

fn katz_normalization() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let corpus = zipf_corpus(&mut rng, 1000, 80);
    let model = train_katz(&corpus, KatzConfig::with_order(4)).map_err(|e| e.to_string())?;
    let words: Vec<String> = model.vocab().predictable().map(str::to_string).collect();
    let contexts = model.contexts();
    let mut worst = 0.0f64;
    for ctx in &contexts {
        let mass: f64 = words.iter().map(|w| 10f64.powf(model.conditional_log10(ctx, w))).sum();
        worst = worst.max((mass - 1.0).abs());
    }
    let elapsed = t.elapsed();
    let detail = format!("{} contexts, max |mass - 1| = {worst:.2e}", contexts.len());
    ensure(worst <= 1e-6, || detail.clone())?;
    within_time(elapsed, Duration::from_secs(10))?;
    Ok(detail)
}

fn katz_oracle() -> Check {
    // Corpus "a b", "a c", "a b" with order 2, worked by hand.
    //
    // Unigram counts over predicted tokens: a 3, b 2, c 1, </s> 3 (N = 9).
    // With cutoff 5, every Good-Turing ratio at this size is either 0 or at
    // least 1, so unigrams stay undiscounted: P(a) = P(</s>) = 3/9,
    // P(b) = 2/9, P(c) = 1/9.
    //
    // Bigram counts: (<s> a) 3, (a b) 2, (a c) 1, (b </s>) 2, (c </s>) 1.
    // Count-of-counts n1 = 2, n2 = 2, n3 = 1, n4 = 0, n6 = 0.
    //   r = 1: 2 * n2 / n1 = 2, not below 1, so no discount.
    //   r = 2: 3 * n3 / (2 * n2) = 3/4.
    //   r = 3: 4 * n4 / (3 * n3) = 0, so no discount.
    //
    // Context a: P(b|a) = 3/4 * 2/3 = 1/2, P(c|a) = 1/3, left-over 1/6
    //   shared by a and </s> in proportion to their unigrams (1/3 each over
    //   2/3): P(a|a) = P(</s>|a) = 1/12.
    // Context b: P(</s>|b) = 3/4 * 2/2 = 3/4, left-over 1/4 spread over
    //   a, b, c by unigram over 1 - P(</s>) = 2/3: P(a|b) = 1/4 * (1/3)/(2/3).
    // Contexts c and <s>: undiscounted singletons would leave no mass, so the
    //   reserved back-off mass is taken off: 1 - 1e-7.
    let corpus: Vec<Vec<String>> = ["a b", "a c", "a b"].iter().map(|s| toks(s)).collect();
    let model = train_katz(&corpus, KatzConfig::with_order(2)).map_err(|e| e.to_string())?;
    let cases: [(&str, &str, f64); 8] = [
        ("a", "b", 0.75 * 2.0 / 3.0),
        ("a", "c", 1.0 / 3.0),
        ("a", "a", (1.0 / 6.0) * (1.0 / 3.0) / (2.0 / 3.0)),
        ("a", "</s>", (1.0 / 6.0) * (1.0 / 3.0) / (2.0 / 3.0)),
        ("b", "</s>", 0.75),
        ("b", "a", 0.25 * (1.0 / 3.0) / (2.0 / 3.0)),
        ("c", "</s>", 1.0 - 1e-7),
        ("<s>", "a", 1.0 - 1e-7),
    ];
    let mut worst = 0.0f64;
    for (ctx, w, want) in cases {
        let got = 10f64.powf(model.conditional_log10(&[ctx], w));
        ensure(format!("{got:.6}") == format!("{want:.6}"), || {
            format!("P({w}|{ctx}) = {got:.8}, hand value {want:.8}")
        })?;
        worst = worst.max((got - want).abs());
    }
    Ok(format!("{} bigram probabilities agree to 6 places (max diff {worst:.1e})", cases.len()))
}

fn em_properties() -> Check {
    let roles = [ComponentRole::Transcribed, ComponentRole::Translated];
    let floors = [0.0, 0.05, 0.1, 0.15, 0.25, 0.3, 0.4, 0.6, 0.9];
    let mut worst_gap = 0.0f64;
    let mut clamped = 0;
    for instance in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + instance);
        let positions = rng.gen_range(50..400);
        let (ea, eb) = (rng.gen_range(0.3..3.0), rng.gen_range(0.3..3.0));
        let a: Vec<f64> = (0..positions).map(|_| rng.gen_range(1e-4f64..1.0).powf(ea)).collect();
        let b: Vec<f64> = (0..positions).map(|_| rng.gen_range(1e-4f64..1.0).powf(eb)).collect();
        let em = em_mixture_weights(&[a.clone(), b.clone()], EM_MAX_ITERATIONS, EM_TOLERANCE)
            .map_err(|e| e.to_string())?;
        for (t, pair) in em.log_likelihoods.windows(2).enumerate() {
            ensure(pair[1] >= pair[0], || format!("instance {instance}: likelihood fell at iteration {}", t + 1))?;
        }
        let ll = |w: f64| -> f64 { a.iter().zip(&b).map(|(x, y)| ((1.0 - w) * x + w * y).ln()).sum() };
        let best = (0..=1000)
            .map(|i| i as f64 / 1000.0)
            .max_by(|x, y| ll(*x).total_cmp(&ll(*y)))
            .expect("non-empty grid");
        let gap = (em.weights[1] - best).abs();
        worst_gap = worst_gap.max(gap);
        ensure(gap <= 0.01, || {
            format!("instance {instance}: EM weight {:.4}, grid optimum {best:.3}", em.weights[1])
        })?;
        for floor in floors {
            let f = apply_floor(&em.weights, &roles, floor).map_err(|e| e.to_string())?;
            if em.weights[1] < floor {
                clamped += 1;
                ensure(f[1] == floor && f[0] == 1.0 - floor, || {
                    format!("instance {instance}: floor {floor} gave {f:?}")
                })?;
            } else {
                ensure(f == em.weights, || format!("instance {instance}: floor {floor} moved {:?}", em.weights))?;
            }
        }
    }
    Ok(format!("20 instances, max |w - grid| = {worst_gap:.4}, {clamped} clamps exact"))
}

fn arpa_round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let corpus = zipf_corpus(&mut rng, 600, 50);
    let model = train_katz(&corpus, KatzConfig::with_order(3)).map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    write_arpa(&model, &mut buf).map_err(|e| e.to_string())?;
    let back = read_arpa(std::io::Cursor::new(buf), Path::new("memory.arpa")).map_err(|e| e.to_string())?;
    // Half the probes come from the training distribution, half include
    // words the model never saw.
    let mut probes = zipf_corpus(&mut rng, 50, 50);
    probes.extend(random_corpus(&mut rng, 50, 70, 10));
    let mut worst = 0.0f64;
    for s in &probes {
        let d = (model.sentence_log10_prob(s) - back.sentence_log10_prob(s)).abs();
        worst = worst.max(d);
        ensure(d <= 1e-4, || format!("{s:?} differs by {d:.2e}"))?;
    }
    Ok(format!("{} probes, max |diff| = {worst:.2e} log10", probes.len()))
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn selection_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dim = 16;
    let gauss = |rng: &mut ChaCha8Rng, shift: f64| -> Vec<f64> {
        (0..dim).map(|_| rng.gen_range(-1.0..1.0) + shift).collect()
    };
    let in_vecs: Vec<Vec<f64>> = (0..200).map(|_| gauss(&mut rng, 0.5)).collect();
    let out_vecs: Vec<Vec<f64>> = (0..200).map(|_| gauss(&mut rng, -0.5)).collect();
    let centroids = compute_centroids(&in_vecs, &out_vecs).map_err(|e| e.to_string())?;
    let candidates: Vec<SentenceEmbedding> = (0..1000)
        .map(|i| {
            let shift = rng.gen_range(-1.0..1.0);
            SentenceEmbedding {
                sentence_id: format!("c{i:04}"),
                vector: gauss(&mut rng, shift),
                method: EmbeddingMethod::External,
                degenerate: false,
            }
        })
        .collect();
    let scores = score_candidates(&candidates, &centroids).map_err(|e| e.to_string())?;
    let swapped = centroids.swapped();
    let shift: Vec<f64> = (0..dim).map(|_| rng.gen_range(-50.0..50.0)).collect();
    let moved = |v: &[f64]| -> Vec<f64> { v.iter().zip(&shift).map(|(a, b)| a + b).collect() };
    let translated = transboot::select::CentroidPair {
        c_in: moved(&centroids.c_in),
        c_out: moved(&centroids.c_out),
    };
    let mut worst_shift = 0.0f64;
    let mut worst_scale = 0.0f64;
    for (c, s) in candidates.iter().zip(&scores) {
        let oracle = distance(&c.vector, &centroids.c_in) - distance(&c.vector, &centroids.c_out);
        ensure((s.delta - oracle).abs() <= 1e-12, || format!("{}: delta {} vs {oracle}", c.sentence_id, s.delta))?;
        let anti = delta_score(&c.vector, &swapped).map_err(|e| e.to_string())?;
        ensure(anti == -s.delta, || format!("{}: swapped delta {anti} vs {}", c.sentence_id, s.delta))?;
        let d = delta_score(&moved(&c.vector), &translated).map_err(|e| e.to_string())?;
        worst_shift = worst_shift.max((d - s.delta).abs());
        for k in [0.25, 4.0, 1000.0] {
            let scaled = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| k * x).collect() };
            let pair = transboot::select::CentroidPair {
                c_in: scaled(&centroids.c_in),
                c_out: scaled(&centroids.c_out),
            };
            let d = delta_score(&scaled(&c.vector), &pair).map_err(|e| e.to_string())?;
            worst_scale = worst_scale.max((d - k * s.delta).abs() / k);
        }
    }
    ensure(worst_shift <= 1e-9, || format!("translation changed delta by {worst_shift:.2e}"))?;
    ensure(worst_scale <= 1e-9, || format!("scaling broke equivariance by {worst_scale:.2e}"))?;

    let selected = select_top_fraction(&scores, 0.25).map_err(|e| e.to_string())?;
    let mut oracle: Vec<&SelectionScore> = scores.iter().collect();
    oracle.sort_by(|a, b| a.delta.partial_cmp(&b.delta).unwrap().then(a.sentence_id.cmp(&b.sentence_id)));
    let expected: Vec<String> = oracle[..250].iter().map(|s| s.sentence_id.clone()).collect();
    ensure(selected == expected, || format!("selected {} ids, full sort differs", selected.len()))?;
    Ok(format!(
        "1000 candidates, antisymmetry exact, shift err {worst_shift:.1e}, scale err {worst_scale:.1e}, top 250 match"
    ))
}

fn sif_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dim = 6;
    let table: HashMap<String, Vec<f64>> = (0..40)
        .map(|i| (format!("w{i}"), (0..dim).map(|_| rng.gen_range(-1.0..1.0) + 0.3).collect()))
        .collect();
    let table = WordVectorTable::new(dim, table).map_err(|e| e.to_string())?;
    let sentences: Vec<Utterance> = random_corpus(&mut rng, 300, 50, 12)
        .into_iter()
        .enumerate()
        .map(|(i, t)| Utterance::new(format!("s{i}"), t, vec![], None).expect("valid utterance"))
        .collect();
    let freq = build_frequency_table(&sentences, 1.0).map_err(|e| e.to_string())?;
    let out = embed_sif(&sentences, &table, &freq, &SifParams::default()).map_err(|e| e.to_string())?;
    let mut worst_ratio = 0.0f64;
    for e in &out.embeddings {
        let dot: f64 = e.vector.iter().zip(&out.direction).map(|(a, b)| a * b).sum();
        let norm = e.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        ensure(dot.abs() <= 1e-6 * norm, || format!("{}: |u.v| = {dot:.2e}, |v| = {norm:.2e}", e.sentence_id))?;
        if norm > 0.0 {
            worst_ratio = worst_ratio.max(dot.abs() / norm);
        }
    }

    let mut worst_angle = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let rows: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let u = first_principal_direction(&rows, &SifParams::default()).map_err(|e| e.to_string())?;
        let x = DMatrix::from_fn(10, 4, |i, j| rows[i][j]);
        let eig = SymmetricEigen::new(x.transpose() * &x);
        let top = eig.eigenvalues.imax();
        let e = eig.eigenvectors.column(top);
        let cos: f64 = (0..4).map(|i| u[i] * e[i]).sum::<f64>().abs().min(1.0);
        let angle = cos.acos();
        worst_angle = worst_angle.max(angle);
        ensure(angle <= 1e-4, || format!("input {seed}: angle {angle:.2e} to the exact eigenvector"))?;
    }
    Ok(format!(
        "{} outputs, max |u.v|/|v| = {worst_ratio:.1e}; 20 inputs of 10x4, max angle {worst_angle:.1e}",
        out.embeddings.len()
    ))
}

fn random_spans<R: Rng>(rng: &mut R, len: usize) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < len {
        if rng.gen_bool(0.3) {
            let end = (i + rng.gen_range(1..=3)).min(len);
            spans.push(EntitySpan::new(i, end, if rng.gen_bool(0.5) { "song" } else { "artist" }));
            i = end;
        } else {
            i += 1;
        }
    }
    spans
}

fn postedit_suite() -> Check {
    // Argmax with ties going to the lowest index.
    let fixed = AttentionMatrix::new(vec![
        vec![0.4, 0.4, 0.2],
        vec![0.2, 0.4, 0.4],
        vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        vec![0.1, 0.2, 0.7],
    ])
    .map_err(|e| e.to_string())?;
    let got = extract_alignment(&fixed).map_err(|e| e.to_string())?;
    ensure(got.0 == [0, 1, 0, 2], || format!("tie rule gave {:?}", got.0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..500 {
        let (rows, cols) = (rng.gen_range(1..8), rng.gen_range(1..6));
        let raw: Vec<Vec<f64>> = (0..rows)
            .map(|_| {
                let ints: Vec<u32> = (0..cols).map(|_| rng.gen_range(0..4)).collect();
                let sum: u32 = ints.iter().sum();
                if sum == 0 {
                    vec![1.0 / cols as f64; cols]
                } else {
                    ints.iter().map(|&v| v as f64 / sum as f64).collect()
                }
            })
            .collect();
        let oracle: Vec<usize> = raw
            .iter()
            .map(|r| {
                let max = r.iter().cloned().fold(f64::MIN, f64::max);
                r.iter().position(|&x| x == max).expect("non-empty row")
            })
            .collect();
        let got = extract_alignment(&AttentionMatrix::new(raw).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure(got.0 == oracle, || format!("argmax {:?} vs oracle {oracle:?}", got.0))?;
    }

    // Copy-over containment.
    let (mut copied, mut rejected) = (0, 0);
    for case in 0..500 {
        let src_len = rng.gen_range(1..9);
        let tgt_len = rng.gen_range(1..11);
        let source: Vec<String> = (0..src_len).map(|i| format!("S{i}")).collect();
        let target: Vec<String> = (0..tgt_len).map(|i| format!("t{i}")).collect();
        let entities = random_spans(&mut rng, src_len);
        let mut alignment: Vec<usize> = (0..tgt_len).map(|_| rng.gen_range(0..src_len)).collect();
        let monotone = case % 2 == 0;
        if monotone {
            alignment.sort_unstable();
        }
        let hyp = hypothesis(&source, &target, &alignment, vec![-0.1; tgt_len]);
        let runs: Vec<(usize, usize)> = entities
            .iter()
            .filter_map(|s| {
                let hits: Vec<usize> = (0..tgt_len).filter(|&i| s.contains(alignment[i])).collect();
                Some((*hits.first()?, *hits.last()? + 1))
            })
            .collect();
        let overlapping = runs
            .iter()
            .enumerate()
            .any(|(i, a)| runs[i + 1..].iter().any(|b| a.0 < b.1 && b.0 < a.1));
        match ne_copy_over("case", &hyp, &entities, &Alignment(alignment.clone())) {
            Ok(out) => {
                ensure(!overlapping, || format!("case {case}: overlapping runs were accepted"))?;
                let s = &out.sentence;
                for span in &entities {
                    let aligned = alignment.iter().any(|&j| span.contains(j));
                    let want = &source[span.start..span.end];
                    let found = s.entities.iter().any(|e| &s.tokens[e.start..e.end] == want);
                    ensure(found == aligned, || format!("case {case}: entity {span:?} containment {found}"))?;
                }
                copied += 1;
            }
            Err(e) => {
                ensure(overlapping && e.to_string().contains("overlapping target runs"), || {
                    format!("case {case}: unexpected error {e}")
                })?;
                ensure(!monotone, || format!("case {case}: monotone alignment rejected"))?;
                rejected += 1;
            }
        }
    }

    // Code-mix rates. Counts x 100, y 50, z 10 with no smoothing give
    // p = p_max * count / 100; the last position is inside an entity.
    let counts: HashMap<String, u64> = [("x", 100), ("y", 50), ("z", 10), ("e", 1)]
        .into_iter()
        .map(|(w, c)| (w.to_string(), c))
        .collect();
    let freq = FrequencyTable::from_counts(counts, 0.0, 0).map_err(|e| e.to_string())?;
    let source = toks("x y z e");
    let hyp = hypothesis(&source, &toks("t0 t1 t2 t3"), &[0, 1, 2, 3], vec![-0.1; 4]);
    let mut sentence = EditedSentence::from_hypothesis("cm", &hyp, &Alignment(vec![0, 1, 2, 3]));
    sentence.entities = vec![EntitySpan::new(3, 4, "song")];
    let p_max = 0.5;
    let expected = [0.5, 0.25, 0.05, 0.0];
    let trials = 10_000;
    let mut replaced = [0usize; 4];
    for trial in 0..trials {
        let mut rng = utterance_rng(11, &format!("u{trial}"), "code_mix");
        let mixed = simulate_code_mix(&sentence, &source, &freq, p_max, &mut rng).map_err(|e| e.to_string())?;
        for (i, count) in replaced.iter_mut().enumerate() {
            if mixed.tokens[i] != sentence.tokens[i] {
                *count += 1;
            }
        }
        let mut rng = utterance_rng(11, &format!("u{trial}"), "code_mix");
        let same = simulate_code_mix(&sentence, &source, &freq, 0.0, &mut rng).map_err(|e| e.to_string())?;
        ensure(same.tokens == sentence.tokens, || format!("trial {trial}: p_max 0 changed tokens"))?;
    }
    let mut rates = Vec::new();
    for (i, (&k, &p)) in replaced.iter().zip(&expected).enumerate() {
        let n = trials as f64;
        let sigma = (n * p * (1.0 - p)).sqrt();
        ensure((k as f64 - n * p).abs() <= 3.0 * sigma, || {
            format!("position {i}: {k} replacements, expected {:.0} +- {:.1}", n * p, 3.0 * sigma)
        })?;
        rates.push(format!("{:.4}", k as f64 / n));
    }
    Ok(format!(
        "tie rule ok; copy-over {copied} kept, {rejected} overlapping rejected; code-mix rates [{}]",
        rates.join(", ")
    ))
}

fn adapt_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let source = toks("a b c");
    let mut changed = 0;
    for list_no in 0..1000 {
        let n = rng.gen_range(2..8);
        let w = rng.gen_range(0.01..0.99);
        let hyps: Vec<_> = (0..n)
            .map(|k| {
                let len = rng.gen_range(1..6);
                let target: Vec<String> = (0..len).map(|i| format!("h{k}_{i}")).collect();
                let align: Vec<usize> = (0..len).map(|i| i % 3).collect();
                let lp: Vec<f64> = (0..len).map(|_| -rng.gen_range(0.01..3.0)).collect();
                hypothesis(&source, &target, &align, lp)
            })
            .collect();
        let lm = TableLm {
            scores: hyps.iter().map(|h| (h.target_tokens.clone(), -rng.gen_range(1.0..30.0))).collect(),
            default: -100.0,
        };
        let list = NBestList {
            id: format!("n{list_no}"),
            source_tokens: source.clone(),
            source_entities: vec![],
            scenario: None,
            hypotheses: hyps,
        };
        let out = rescore(&list, &lm, &RescoreConfig { lm_weight: w, length_normalize: true }).map_err(|e| e.to_string())?;
        let pairs: Vec<(f64, f64)> = list
            .hypotheses
            .iter()
            .map(|h| (mt_log_score(h, true), lm_log_score(&lm, &h.target_tokens, true)))
            .collect();
        let (cm, cl) = pairs[out.chosen];
        for (k, &(m, l)) in pairs.iter().enumerate() {
            let dominates = m >= cm && l >= cl && (m > cm || l > cl);
            ensure(!dominates, || format!("list {list_no}: hypothesis {k} dominates choice {}", out.chosen))?;
        }
        if out.chosen != 0 {
            changed += 1;
        }
    }

    let mut lists_checked = 0;
    for n in (1..=400).chain([1000, 2000]) {
        let items: Vec<(String, f64)> = (0..n).map(|i| (format!("u{i:05}"), rng.gen_range(-50.0..0.0))).collect();
        let mut previous: HashSet<String> = HashSet::new();
        for pct in [65usize, 75, 85] {
            let kept = retain_top(&items, pct as f64 / 100.0).map_err(|e| e.to_string())?;
            let exact = (pct * n).div_ceil(100);
            ensure(kept.len() == exact, || format!("n={n} f=0.{pct}: kept {}, expected {exact}", kept.len()))?;
            let set: HashSet<String> = kept.into_iter().collect();
            ensure(previous.is_subset(&set), || format!("n={n}: retained set at 0.{pct} drops ids"))?;
            previous = set;
        }
        lists_checked += 1;
    }
    Ok(format!(
        "1000 lists without a dominated pick ({changed} reranked); {lists_checked} score sets nested with exact counts"
    ))
}

fn edit_distance(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            if x == y {
                edit_distance(ra, rb)
            } else {
                1 + edit_distance(ra, rb).min(edit_distance(ra, b)).min(edit_distance(a, rb))
            }
        }
    }
}

fn all_sequences(max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        frontier = frontier
            .iter()
            .flat_map(|s: &Vec<u8>| {
                (0..3u8).map(move |c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
        out.extend(frontier.iter().cloned());
    }
    out
}

fn metric_oracles() -> Check {
    let seqs = all_sequences(6);
    let words: Vec<Vec<String>> = seqs
        .iter()
        .map(|s| s.iter().map(|c| ["a", "b", "c"][*c as usize].to_string()).collect())
        .collect();
    let mut pairs = 0usize;
    for (ra, r) in seqs.iter().zip(&words) {
        if r.is_empty() {
            continue;
        }
        for (hb, h) in seqs.iter().zip(&words) {
            let got = wer(r, h).map_err(|e| e.to_string())?;
            let want = edit_distance(ra, hb);
            ensure(got.edits.total() == want, || format!("{r:?} vs {h:?}: {} edits, oracle {want}", got.edits.total()))?;
            ensure(got.rate == want as f64 / r.len() as f64, || format!("{r:?} vs {h:?}: rate {}", got.rate))?;
            pairs += 1;
        }
    }

    // "the cat sat on the mat" against "the cat is on the mat":
    //   unigrams 5/6, bigrams 3/5, trigrams 1/4, 4-grams 0/3, equal lengths.
    //   max_n 2 unsmoothed: 100 * sqrt(5/6 * 3/5) = 100 * sqrt(1/2).
    //   max_n 4 smoothed: 100 * (5/6 * 4/6 * 2/5 * 1/4)^(1/4) = 100 * (1/18)^(1/4).
    //   max_n 4 unsmoothed: 0.
    // "the cat" against "the cat sat", max_n 2: precisions 1, BP = exp(1 - 3/2).
    let h = [toks("the cat sat on the mat")];
    let r = [toks("the cat is on the mat")];
    let examples = [
        (corpus_bleu(&h, &r, 2, false), 100.0 * 0.5f64.sqrt()),
        (corpus_bleu(&h, &r, 4, true), 100.0 * (1.0f64 / 18.0).powf(0.25)),
        (corpus_bleu(&h, &r, 4, false), 0.0),
        (corpus_bleu(&[toks("the cat")], &[toks("the cat sat")], 2, false), 100.0 * (-0.5f64).exp()),
    ];
    for (i, (got, want)) in examples.into_iter().enumerate() {
        let got = got.map_err(|e| e.to_string())?;
        ensure((got - want).abs() <= 1e-9, || format!("BLEU example {i}: {got} vs hand value {want}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let n = rng.gen_range(1..20);
        let corpus = random_corpus(&mut rng, n, 6, 12);
        for smooth in [false, true] {
            let b = corpus_bleu(&corpus, &corpus, 4, smooth).map_err(|e| e.to_string())?;
            ensure(b == 100.0, || format!("BLEU(h, h) = {b}"))?;
        }
    }
    Ok(format!("{pairs} WER pairs match brute force; 4 hand BLEU values; BLEU(h,h) = 100 on 50 corpora"))
}

fn is_non_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] >= w[0])
}

fn end_to_end() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixture = generate_fixture(&FixtureSpec::standard(7));
    let config_path = write_fixture(&fixture, &dir.path().join("data"), 7).map_err(|e| e.to_string())?;
    let config = PipelineConfig::load(&config_path).map_err(|e| e.to_string())?;

    let (a, b) = (dir.path().join("run-a"), dir.path().join("run-b"));
    let report = run_pipeline(&config, &a).map_err(|e| e.to_string())?;
    run_pipeline(&config, &b).map_err(|e| e.to_string())?;
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for entry in std::fs::read_dir(&a).map_err(|e| e.to_string())? {
        let name = entry.map_err(|e| e.to_string())?.file_name().to_string_lossy().into_owned();
        files.insert(name.clone(), std::fs::read(a.join(&name)).map_err(|e| e.to_string())?);
    }
    let other = std::fs::read_dir(&b).map_err(|e| e.to_string())?.count();
    ensure(other == files.len(), || format!("runs wrote {} and {other} files", files.len()))?;
    for (name, bytes) in &files {
        let again = std::fs::read(b.join(name)).map_err(|e| e.to_string())?;
        ensure(&again == bytes, || format!("{name} differs between runs"))?;
    }

    let floors = [0.0, 0.1, 0.15, 0.25, 0.3, 0.4];
    let rows = sweep_floor(&config, &floors).map_err(|e| e.to_string())?;
    let tuning_at_zero = rows[0].tuning_ppl;
    ensure(tuning_at_zero <= report.tuning_ppl.transcribed, || {
        format!("floor-0 tuning PPL {tuning_at_zero:.3} above transcribed-only {:.3}", report.tuning_ppl.transcribed)
    })?;
    let test_ppl: Vec<f64> = rows[1..].iter().map(|r| r.test_ppl).collect();
    let tuning_ppl: Vec<f64> = rows[1..].iter().map(|r| r.tuning_ppl).collect();
    ensure(is_non_decreasing(&test_ppl) && is_non_decreasing(&tuning_ppl), || {
        format!("floor sweep not monotone: test {test_ppl:.3?}, tuning {tuning_ppl:.3?}")
    })?;

    let volumes = [300, 1000, 3000];
    let vol = sweep_volume(&config, &volumes).map_err(|e| e.to_string())?;
    let reductions: Vec<f64> = vol.iter().map(|r| r.ppl_reduction_pct).collect();
    ensure(reductions.windows(2).all(|w| w[0] > w[1]), || {
        format!("reduction not larger at smaller volumes: {reductions:.2?}")
    })?;

    let total = SUITE_START.get().expect("suite start recorded").elapsed();
    within_time(total, Duration::from_secs(120))?;
    Ok(format!(
        "{} files identical; tuning PPL {tuning_at_zero:.2} <= {:.2}; test PPL over floors 0.1..0.4 {test_ppl:.2?}; \
         reduction at 300/1000/3000 {reductions:.2?}; suite {total:.1?}",
        files.len(),
        report.tuning_ppl.transcribed
    ))
}

fn main() {
    SUITE_START.get_or_init(Instant::now);
    let criteria: [Criterion; 12] = [
        (1, "scenario correlation", scenario_correlation),
        (2, "scenario contribution column", scenario_contribution),
        (3, "katz normalization", katz_normalization),
        (4, "katz hand oracle", katz_oracle),
        (5, "em properties", em_properties),
        (6, "arpa round trip", arpa_round_trip),
        (7, "relative distance selection", selection_suite),
        (8, "sif orthogonality", sif_suite),
        (9, "post-editing", postedit_suite),
        (10, "rescoring and filtering", adapt_suite),
        (11, "metric oracles", metric_oracles),
        (12, "end to end", end_to_end),
    ];
    let mut unexpected = Vec::new();
    let mut passed = 0;
    for (id, name, check) in criteria {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = t.elapsed();
        let known = KNOWN_FAILING.contains(&id);
        match outcome {
            Ok(detail) => {
                passed += 1;
                println!("[PASS] {id:>2} {name}: {detail} ({elapsed:.2?})");
                if known {
                    unexpected.push(format!("{id} passed but is listed as known failing"));
                }
            }
            Err(detail) => {
                let tag = if known { " (known)" } else { "" };
                println!("[FAIL] {id:>2} {name}{tag}: {detail} ({elapsed:.2?})");
                if !known {
                    unexpected.push(format!("{id} failed"));
                }
            }
        }
    }
    let total = SUITE_START.get().expect("suite start recorded").elapsed();
    println!("acceptance: {passed}/12 passed in {total:.1?}, known failing {KNOWN_FAILING:?}");
    if !unexpected.is_empty() {
        println!("unexpected: {}", unexpected.join("; "));
        std::process::exit(1);
    }
}
