//! Acceptance suite. Prints one PASS/FAIL line per headline criterion, with
//! the measured values underneath, and exits non-zero if any criterion fails.
//! Runs without the libtest harness so the report is never captured.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use common::workspace_file;
use crnt::checkpoint::{decode as decode_checkpoint, encode as encode_checkpoint};
use crnt::config::TrainConfig;
use crnt::decode::{decode_all, Decoding};
use crnt::manifest::{eval_samples, write_jsonl, DecodeResult, Manifest};
use crnt::synth::{generate_corpus, load_vocabulary, SyntheticSpec, TEST_MANIFEST, TRAIN_MANIFEST, VOCAB_FILE};
use crnt::train::{prepare_examples, train_to_dir, Trainer, LATEST_CHECKPOINT, LOSS_LOG};
use crnt_core::decoder::{AttentionTrace, WORD_START_MARK};
use crnt_core::eval::{align, evaluate, AlignOp, EvalReport, EvalSample};
use crnt_core::rnnt::ModelMode;
use crnt_core::tokenizer::{train_bpe, Vocabulary};
use crnt_testkit::{bias, decoder, gradients, lattice};

type Outcome = anyhow::Result<Verdict>;

struct Verdict {
    pass: bool,
    details: Vec<String>,
}

impl Verdict {
    fn new() -> Self {
        Self {
            pass: true,
            details: Vec::new(),
        }
    }

    /// Records one measured claim.
    fn check(&mut self, ok: bool, detail: impl Into<String>) {
        self.pass &= ok;
        let mark = if ok { "ok  " } else { "MISS" };
        self.details.push(format!("{mark} {}", detail.into()));
    }

    /// Records a measurement that does not decide the verdict.
    fn note(&mut self, detail: impl Into<String>) {
        self.details.push(format!("info {}", detail.into()));
    }
}

fn report(name: &str, outcome: Outcome, took: Duration) -> bool {
    match outcome {
        Ok(v) => {
            let status = if v.pass { "PASS" } else { "FAIL" };
            println!("{status}  {name}  [{:.1} s]", took.as_secs_f64());
            for d in &v.details {
                println!("        {d}");
            }
            v.pass
        }
        Err(e) => {
            println!("FAIL  {name}  [{:.1} s]", took.as_secs_f64());
            println!("        error: {e:#}");
            false
        }
    }
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let mut v = Verdict::new();
    let mut local = gradients::primitive_ops(101)?;
    local.extend(gradients::modules(102)?);
    let worst = local
        .iter()
        .max_by(|a, b| a.report.max_rel_err.total_cmp(&b.report.max_rel_err))
        .expect("checks exist");
    let checked: usize = local.iter().map(|c| c.report.checked).sum();
    v.check(
        worst.report.max_rel_err < 1e-4,
        format!(
            "{} operations and modules, {checked} partials: worst relative error {:.2e} ({}) < 1e-4",
            local.len(),
            worst.report.max_rel_err,
            worst.name
        ),
    );
    for seed in [103, 104] {
        let e2e = gradients::end_to_end(seed)?;
        v.check(
            e2e.report.max_rel_err < 1e-3,
            format!(
                "end-to-end att_bias model (seed {seed}, {} partials): worst relative error {:.2e} < 1e-3",
                e2e.report.checked, e2e.report.max_rel_err
            ),
        );
    }
    let took = start.elapsed();
    v.check(took < Duration::from_secs(120), format!("suite time {:.2} s < 120 s", took.as_secs_f64()));
    Ok(v)
}

fn lattice_oracle() -> Outcome {
    let mut v = Verdict::new();
    let rep = lattice::oracle_agreement(200, 201)?;
    v.check(rep.instances == 200, format!("{} random lattices", rep.instances));
    v.check(
        rep.max_nll_diff <= 1e-10,
        format!("largest |loss - enumerated loss| {:.2e} <= 1e-10", rep.max_nll_diff),
    );
    v.check(
        rep.max_occupancy_dev <= 1e-8,
        format!("largest occupancy row deviation from 1: {:.2e} <= 1e-8", rep.max_occupancy_dev),
    );
    v.check(
        rep.path_count_mismatches == 0,
        format!("{} enumerated path counts off the closed form", rep.path_count_mismatches),
    );
    Ok(v)
}

fn biasing_oracle() -> Outcome {
    let mut v = Verdict::new();
    let rep = bias::oracle_agreement(1000, 301);
    v.check(
        rep.instances == 1000 && rep.mismatches == 0 && rep.invalid == 0,
        format!(
            "{} random cases: {} mismatches, {} malformed vectors{}",
            rep.instances,
            rep.mismatches,
            rep.invalid,
            rep.first_mismatch.map(|m| format!(", first: {m}")).unwrap_or_default()
        ),
    );
    let active = bias::android_fixture_active()?;
    v.check(
        active == ["Android", "Antenna"],
        format!("active words after \"...Africa An\": {active:?}"),
    );
    Ok(v)
}

fn decoder_properties() -> Outcome {
    let mut v = Verdict::new();
    let rep = decoder::properties(50, 401)?;
    let note = rep.first_failure.clone().map(|f| format!(" ({f})")).unwrap_or_default();
    v.check(rep.models == 50, format!("{} random models across all four modes", rep.models));
    v.check(
        rep.beam_one_mismatches == 0,
        format!("width-1 beam differs from greedy on {} models{note}", rep.beam_one_mismatches),
    );
    v.check(
        rep.dominance_violations == 0,
        format!("top beam scored below greedy on {} models", rep.dominance_violations),
    );
    v.check(
        rep.replay_mismatches == 0,
        format!(
            "{} of {} hypothesis states differ from a replay",
            rep.replay_mismatches, rep.hypotheses_replayed
        ),
    );
    Ok(v)
}

/// One trained mode and its decoded test set.
struct ModeRun {
    report: EvalReport,
    decodings: Vec<Decoding>,
    final_nll: f64,
    took: Duration,
}

struct Experiment {
    samples: Vec<EvalSample>,
    runs: BTreeMap<&'static str, ModeRun>,
    took: Duration,
}

const AB_BEAM: usize = 10;

fn run_experiment(dir: &Path) -> anyhow::Result<Experiment> {
    let start = Instant::now();
    let spec = SyntheticSpec::load(&workspace_file("configs/synth-desk.toml"))?;
    let config = TrainConfig::load(&workspace_file("configs/train-desk.toml"))?;
    let corpus = dir.join("corpus");
    generate_corpus(&spec, &corpus)?;
    let vocab = load_vocabulary(&corpus.join(VOCAB_FILE))?;
    let train = prepare_examples(&Manifest::load(&corpus.join(TRAIN_MANIFEST))?, &vocab)?;
    let test_manifest = Manifest::load(&corpus.join(TEST_MANIFEST))?;
    let test = prepare_examples(&test_manifest, &vocab)?;
    let feature_dim = train[0].features.cols();

    let runs = ModelMode::ALL
        .par_iter()
        .map(|&mode| -> anyhow::Result<(&'static str, ModeRun)> {
            let t0 = Instant::now();
            let mut trainer = Trainer::new(config.clone(), mode, vocab.clone(), feature_dim)?;
            let logs = train_to_dir(&mut trainer, &train, &dir.join(mode.as_str()), |_| {})?;
            let decodings = decode_all(&trainer.state, &vocab, &test, AB_BEAM)?;
            let results: Vec<DecodeResult> = decodings.iter().map(|d| d.result.clone()).collect();
            let report = evaluate(&eval_samples(&test_manifest, &results));
            Ok((
                mode.as_str(),
                ModeRun {
                    report,
                    decodings,
                    final_nll: logs.last().map_or(f64::NAN, |l| l.mean_nll),
                    took: t0.elapsed(),
                },
            ))
        })
        .collect::<anyhow::Result<BTreeMap<_, _>>>()?;
    Ok(Experiment {
        samples: eval_samples(&test_manifest, &[]),
        runs,
        took: start.elapsed(),
    })
}

fn rate(x: Option<f64>) -> String {
    x.map_or("n/a".into(), |r| format!("{:.2}%", 100.0 * r))
}

fn relative_change(base: Option<f64>, other: Option<f64>) -> Option<f64> {
    match (base, other) {
        (Some(b), Some(o)) if b > 0.0 => Some((o - b) / b),
        (Some(b), Some(o)) if b == 0.0 && o == 0.0 => Some(0.0),
        _ => None,
    }
}

fn synthetic_ab(exp: &Experiment) -> Outcome {
    let mut v = Verdict::new();
    let base = &exp.runs["baseline"].report;
    for (name, run) in &exp.runs {
        let (nz, z) = (&run.report.common_non_zero, &run.report.common_zero);
        v.details.push(format!(
            "     {name:<9} train nll {:.4}  non-zero: WER {} WER-NE {} P {} R {}  zero: WER {}  [{:.0} s]",
            run.final_nll,
            rate(nz.wer),
            rate(nz.wer_ne),
            rate(nz.context_precision),
            rate(nz.context_recall),
            rate(z.wer),
            run.took.as_secs_f64()
        ));
    }
    for mode in ["att", "bias", "att_bias"] {
        let r = &exp.runs[mode].report;
        let gain = relative_change(base.common_non_zero.wer_ne, r.common_non_zero.wer_ne).map(|c| -c);
        v.check(
            gain.is_some_and(|g| g >= 0.10),
            format!("{mode}: relative WER-NE reduction on the non-zero split {} >= 10%", rate(gain)),
        );
    }
    let wer_ne = |m: &str| exp.runs[m].report.common_non_zero.wer_ne.unwrap_or(f64::INFINITY);
    v.check(
        wer_ne("att_bias") <= wer_ne("att").min(wer_ne("bias")),
        format!(
            "att_bias WER-NE {} no worse than att {} and bias {}",
            rate(Some(wer_ne("att_bias"))),
            rate(Some(wer_ne("att"))),
            rate(Some(wer_ne("bias")))
        ),
    );
    for mode in ["att", "bias", "att_bias"] {
        let change = relative_change(base.common_zero.wer, exp.runs[mode].report.common_zero.wer);
        v.check(
            change.is_some_and(|c| c.abs() <= 0.03),
            format!("{mode}: relative WER change on the zero split {} within 3%", rate(change)),
        );
    }
    for mode in ["att", "bias", "att_bias"] {
        let (b, m) = (base.common_non_zero.context_recall, exp.runs[mode].report.common_non_zero.context_recall);
        v.check(
            matches!((b, m), (Some(b), Some(m)) if m > b),
            format!("{mode}: context-word recall {} above baseline {}", rate(m), rate(b)),
        );
    }
    v.check(
        exp.took < Duration::from_secs(45 * 60),
        format!(
            "corpus, four trainings, decoding and scoring took {:.1} min < 45 min on {} threads",
            exp.took.as_secs_f64() / 60.0,
            rayon::current_num_threads()
        ),
    );
    Ok(v)
}

/// Trace rows grouped by the hypothesis word they belong to.
fn word_rows(trace: &AttentionTrace) -> Vec<Vec<usize>> {
    let mut words: Vec<Vec<usize>> = Vec::new();
    for (k, p) in trace.pieces.iter().enumerate() {
        if p.starts_with(WORD_START_MARK) || words.is_empty() {
            words.push(Vec::new());
        }
        words.last_mut().expect("just pushed").push(k);
    }
    words
}

/// Whether the attention rows of the hypothesis word aligned to reference
/// position `i` mostly peak at that word's own column.
/// Per-piece hits (row-max at the entity's column) for the hypothesis word
/// aligned with reference word `i`, or `None` when nothing is aligned to it.
fn entity_row_hits(sample: &EvalSample, i: usize, trace: &AttentionTrace) -> Option<Vec<bool>> {
    let col = trace.words.iter().position(|w| *w == sample.reference[i])?;
    let j = align(&sample.reference, &sample.hypothesis).into_iter().find_map(|op| match op {
        AlignOp::Match(a, b) | AlignOp::Sub(a, b) if a == i => Some(b),
        _ => None,
    })?;
    let rows = word_rows(trace).get(j).cloned()?;
    Some(rows.iter().map(|&r| trace.row_argmax(r) == Some(col)).collect())
}

fn attention_focus(exp: &Experiment) -> Outcome {
    let mut v = Verdict::new();
    let run = &exp.runs["att_bias"];
    let (mut cases, mut focused) = (0, 0);
    // Hits and totals by piece position within the entity word.
    let mut by_position: Vec<(usize, usize)> = Vec::new();
    for (s, d) in exp.samples.iter().zip(&run.decodings) {
        anyhow::ensure!(s.utterance_id == d.result.utterance_id, "decodings out of order");
        let sample = EvalSample {
            hypothesis: d.result.hypothesis.split_whitespace().map(String::from).collect(),
            ..s.clone()
        };
        for (i, w) in sample.reference.iter().enumerate() {
            if sample.entity_flags[i] && sample.metadata_words.contains(w) {
                cases += 1;
                let Some(hits) = entity_row_hits(&sample, i, &d.trace) else { continue };
                focused += usize::from(2 * hits.iter().filter(|&&h| h).count() > hits.len());
                for (p, &h) in hits.iter().enumerate() {
                    if by_position.len() <= p {
                        by_position.push((0, 0));
                    }
                    by_position[p].0 += usize::from(h);
                    by_position[p].1 += 1;
                }
            }
        }
    }
    let share = focused as f64 / cases.max(1) as f64;
    v.check(
        cases > 0 && share >= 0.70,
        format!(
            "attention peaks at the spoken entity on most of its pieces in {focused} of {cases} cases ({:.1}%) >= 70%",
            100.0 * share
        ),
    );
    let positions: Vec<String> = by_position
        .iter()
        .enumerate()
        .map(|(p, &(h, n))| format!("piece {}: {:.0}% of {n}", p + 1, 100.0 * h as f64 / n.max(1) as f64))
        .collect();
    v.note(format!("row-max at the entity by piece position: {}", positions.join(", ")));
    Ok(v)
}

/// Artifacts of one small pipeline run, for bitwise comparison.
#[derive(PartialEq)]
struct SmokeArtifacts {
    corpus_manifest: Vec<u8>,
    loss_log: Vec<u8>,
    checkpoint: Vec<u8>,
    hypotheses: Vec<u8>,
    report: String,
}

fn smoke_run(dir: &Path) -> anyhow::Result<SmokeArtifacts> {
    let spec = SyntheticSpec::load(&workspace_file("configs/synth-smoke.toml"))?;
    let config = TrainConfig::load(&workspace_file("configs/train-smoke.toml"))?;
    let corpus = dir.join("corpus");
    generate_corpus(&spec, &corpus)?;
    let vocab = load_vocabulary(&corpus.join(VOCAB_FILE))?;
    let train = prepare_examples(&Manifest::load(&corpus.join(TRAIN_MANIFEST))?, &vocab)?;
    let test_manifest = Manifest::load(&corpus.join(TEST_MANIFEST))?;
    let test = prepare_examples(&test_manifest, &vocab)?;
    let mut trainer = Trainer::new(config, ModelMode::AttBias, vocab.clone(), train[0].features.cols())?;
    let out = dir.join("run");
    train_to_dir(&mut trainer, &train, &out, |_| {})?;
    let results: Vec<DecodeResult> = decode_all(&trainer.state, &vocab, &test, AB_BEAM)?
        .into_iter()
        .map(|d| d.result)
        .collect();
    let hyps = dir.join("hyps.jsonl");
    write_jsonl(&hyps, &results)?;
    let report = serde_json::to_string(&evaluate(&eval_samples(&test_manifest, &results)))?;
    Ok(SmokeArtifacts {
        corpus_manifest: std::fs::read(corpus.join(TRAIN_MANIFEST))?,
        loss_log: std::fs::read(out.join(LOSS_LOG))?,
        checkpoint: std::fs::read(out.join(LATEST_CHECKPOINT))?,
        hypotheses: std::fs::read(hyps)?,
        report,
    })
}

fn random_word<R: Rng>(rng: &mut R, alphabet: &[char]) -> String {
    let n = rng.random_range(1..=7);
    (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
}

fn determinism_and_round_trips() -> Outcome {
    let mut v = Verdict::new();
    let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
    let (ra, rb) = (smoke_run(a.path())?, smoke_run(b.path())?);
    v.check(
        ra == rb,
        "two seeded pipeline runs give identical corpus, loss log, checkpoint, hypotheses and report",
    );

    let vocab = load_vocabulary(&a.path().join("corpus").join(VOCAB_FILE))?;
    let bytes = std::fs::read(a.path().join("run").join(LATEST_CHECKPOINT))?;
    let state = decode_checkpoint(&bytes, &vocab)?;
    v.check(
        encode_checkpoint(&state, &vocab) == bytes,
        "checkpoint load then save reproduces the file byte for byte",
    );
    let other = Vocabulary::from_pieces([("x", true), ("y", false)])?;
    v.check(
        decode_checkpoint(&bytes, &other).is_err(),
        "checkpoint refuses a different vocabulary",
    );

    let mut rng = ChaCha8Rng::seed_from_u64(501);
    let alphabet: Vec<char> = "abdegiklmnoprstuvAB".chars().collect();
    let corpus: Vec<String> = (0..200)
        .map(|_| (0..4).map(|_| random_word(&mut rng, &alphabet)).collect::<Vec<_>>().join(" "))
        .collect();
    let vocab = train_bpe(&corpus, 60)?;
    let mut failures = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=6);
        let text = (0..n).map(|_| random_word(&mut rng, &alphabet)).collect::<Vec<_>>().join(" ");
        let ok = vocab.encode(&text).and_then(|t| vocab.decode(&t)).is_ok_and(|back| back == text);
        failures += usize::from(!ok);
    }
    v.check(failures == 0, format!("tokenizer encode/decode round trip fails on {failures} of 1000 texts"));
    let reloaded = Vocabulary::from_text(&vocab.to_text())?;
    v.check(
        reloaded.pieces() == vocab.pieces(),
        "vocabulary file round trip preserves every piece",
    );
    Ok(v)
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn main() -> ExitCode {
    println!("acceptance criteria");
    let mut all = true;
    let (o, t) = timed(gradient_integrity);
    all &= report("gradient integrity", o, t);
    let (o, t) = timed(lattice_oracle);
    all &= report("lattice loss matches path enumeration", o, t);
    let (o, t) = timed(biasing_oracle);
    all &= report("bias vector matches prefix-scan oracle", o, t);
    let (o, t) = timed(decoder_properties);
    all &= report("decoder properties", o, t);
    let (o, t) = timed(determinism_and_round_trips);
    all &= report("determinism and round trips", o, t);

    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => {
            println!("FAIL  synthetic A/B  [0.0 s]\n        error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let (exp, t) = timed(|| run_experiment(dir.path()));
    match exp {
        Ok(exp) => {
            all &= report("synthetic A/B on the desk corpus", synthetic_ab(&exp), t);
            let (o, t) = timed(|| attention_focus(&exp));
            all &= report("attention trace focuses on the spoken entity", o, t);
        }
        Err(e) => {
            let msg = format!("{e:#}");
            all &= report("synthetic A/B on the desk corpus", Err(anyhow::anyhow!(msg.clone())), t);
            all &= report("attention trace focuses on the spoken entity", Err(anyhow::anyhow!(msg)), t);
        }
    }
    if all {
        println!("all acceptance criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("some acceptance criteria failed");
        ExitCode::FAILURE
    }
}
