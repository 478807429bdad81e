//! Acceptance suite: one test per shipping criterion, each printing a PASS
//! line with the measured numbers (run with `--nocapture` to see them).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pairtask_core::backend::{
    predict_pair, CheckpointInfo, Logits, PairEncoder, PairInput, PhaseSettings, ToyConfig,
    ToyEncoder,
};
use pairtask_core::corpus::{normalize_text, AnnotatedRecord, Split};
use pairtask_core::evaluation::macro_f1;
use pairtask_core::inference::{
    predict_binary, predict_multiclass, select_threshold, EvalItem, DEFAULT_THRESHOLDS,
};
use pairtask_core::sampling::{sample_negative, upsample, BalanceTarget, SamplerState};
use pairtask_core::schema::{query_for_class, DatasetId, DescriptionRule, Registry, RenderOptions};
use pairtask_core::trainer::{
    build_epoch_stream, run_pipeline, Corpus, EncoderFactory, PhaseConfig, RunPlan,
};
use pairtask_core::Result;

fn repo_path(relative: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(relative)
}

fn pass(id: &str, name: &str, details: String) {
    println!("ACCEPTANCE {id} {name}: PASS ({details})");
}

// ---------------------------------------------------------------------------
// 1. Metric oracle equivalence
// ---------------------------------------------------------------------------

/// Independent one-vs-rest macro-F1: precision/recall form, written without
/// looking at the shipping implementation (which uses the 2TP form).
fn brute_force_macro_f1(predictions: &[String], golds: &[String], classes: &[String]) -> f64 {
    let mut sum = 0.0;
    for class in classes {
        let mut tp = 0.0;
        let mut predicted = 0.0;
        let mut actual = 0.0;
        for (p, g) in predictions.iter().zip(golds) {
            if p == class {
                predicted += 1.0;
            }
            if g == class {
                actual += 1.0;
            }
            if p == class && g == class {
                tp += 1.0;
            }
        }
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if actual > 0.0 { tp / actual } else { 0.0 };
        sum += if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
    }
    sum / classes.len() as f64
}

#[test]
fn criterion_01_metric_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xF1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n_classes = rng.random_range(2..=6usize);
        let classes: Vec<String> = (0..n_classes).map(|c| format!("c{c}")).collect();
        let n = rng.random_range(1..=50usize);
        let golds: Vec<String> = (0..n)
            .map(|_| classes[rng.random_range(0..n_classes)].clone())
            .collect();
        let predictions: Vec<String> = (0..n)
            .map(|_| classes[rng.random_range(0..n_classes)].clone())
            .collect();
        let ours = macro_f1(&predictions, &golds, &classes).unwrap();
        let oracle = brute_force_macro_f1(&predictions, &golds, &classes);
        worst = worst.max((ours - oracle).abs());
        assert!(
            (ours - oracle).abs() <= 1e-9,
            "macro-F1 {ours} vs oracle {oracle}"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    pass(
        "01",
        "metric-oracle-equivalence",
        format!("1000 instances, max |diff| {worst:.2e}, {elapsed:?}"),
    );
}

// ---------------------------------------------------------------------------
// 2. Negative-sampling uniformity
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_negative_sampling_uniformity() {
    let classes: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    let state = SamplerState::new(0xBEEF);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let draws = 30_000u64;
    for index in 0..draws {
        let wrong = sample_negative("a", &classes, &state, index).unwrap();
        assert_ne!(wrong, "a", "gold class drawn");
        *counts.entry(wrong).or_default() += 1;
    }
    let mut spread = Vec::new();
    for class in ["b", "c", "d"] {
        let frequency = counts[class] as f64 / draws as f64;
        assert!(
            (frequency - 1.0 / 3.0).abs() < 0.01,
            "{class}: {frequency} outside 1/3 ± 0.01"
        );
        spread.push(format!("{class}={frequency:.4}"));
    }

    // Exactly one negative per positive per epoch, by counting a real
    // multi-task stream.
    let (registry, corpus) = synthetic_world(&WorldShape::default(), 7);
    let task = registry.task("tgt_topic").unwrap();
    let records: Vec<AnnotatedRecord> = corpus
        .train
        .iter()
        .filter(|r| r.label(&task.label_type).is_some())
        .cloned()
        .collect();
    let stream = build_epoch_stream(
        &[(task, records)],
        &registry,
        RenderOptions::default(),
        &SamplerState::new(3),
        0,
        1,
    )
    .unwrap();
    assert_eq!(stream.stats.negatives, stream.stats.positives);
    pass(
        "02",
        "negative-sampling-uniformity",
        format!(
            "{draws} draws: {}; stream {} positives = {} negatives",
            spread.join(" "),
            stream.stats.positives,
            stream.stats.negatives
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. Upsampling floor
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_upsampling_floor() {
    let dataset = DatasetId::new("DS").unwrap();
    let registry = Registry::new(
        vec![pairtask_core::schema::DatasetDef {
            id: dataset.clone(),
            display_name: "ds".to_string(),
        }],
        vec![pairtask_core::schema::TaskSpec {
            task_name: "t".to_string(),
            dataset: dataset.clone(),
            label_type: "label".to_string(),
            classes: ["w", "x", "y", "z"].iter().map(|s| s.to_string()).collect(),
            positive_class: None,
            is_binary: false,
            rule: DescriptionRule::TypedValue,
            description_overrides: BTreeMap::new(),
        }],
        ": ".to_string(),
    )
    .unwrap();
    let task = registry.task("t").unwrap();

    // 60% / 25% / 10% / 5% over 1000 records.
    let mut records = Vec::new();
    for (class, count) in [("w", 600usize), ("x", 250), ("y", 100), ("z", 50)] {
        for i in 0..count {
            records.push(AnnotatedRecord {
                id: format!("{class}{i}"),
                text: format!("text {class} {i}"),
                dataset: dataset.clone(),
                labels: BTreeMap::from([("label".to_string(), class.to_string())]),
                split: Split::Train,
            });
        }
    }
    let target = BalanceTarget::new("t", 0.19, 4).unwrap();
    let state = SamplerState::new(11);
    let (output, summary) = upsample(&records, task, &target, &state).unwrap();
    let (again, _) = upsample(&records, task, &target, &state).unwrap();
    assert_eq!(output, again, "upsampling must be deterministic under a fixed seed");

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for record in &output {
        *counts.entry(record.label("label").unwrap()).or_default() += 1;
    }
    for class in ["y", "z"] {
        let fraction = counts[class] as f64 / output.len() as f64;
        assert!(fraction >= 0.18, "{class} reached only {fraction}");
    }
    let mut id_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for record in &output {
        *id_counts.entry(record.id.as_str()).or_default() += 1;
    }
    for record in &records {
        assert!(id_counts[record.id.as_str()] >= 1, "{} removed", record.id);
    }
    pass(
        "03",
        "upsampling-floor",
        format!(
            "counts w={} x={} y={} z={} over {} (factors {:?})",
            counts["w"], counts["x"], counts["y"], counts["z"], output.len(), summary.factors
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. Inference contract
// ---------------------------------------------------------------------------

/// Deterministic scripted encoder that counts forward calls.
struct ScriptedEncoder {
    score: Box<dyn Fn(&str, &str) -> f64 + Send + Sync>,
    calls: std::sync::atomic::AtomicUsize,
}

impl ScriptedEncoder {
    fn new(score: impl Fn(&str, &str) -> f64 + Send + Sync + 'static) -> Self {
        ScriptedEncoder {
            score: Box::new(score),
            calls: std::sync::atomic::AtomicUsize::new(0),
        }
    }

    fn calls(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }
}

impl PairEncoder for ScriptedEncoder {
    fn kind(&self) -> &'static str {
        "scripted"
    }

    fn forward(&self, query: &str, text: &str) -> Result<Logits> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        let p = (self.score)(query, text).clamp(1e-9, 1.0 - 1e-9);
        Ok(Logits([0.0, (p / (1.0 - p)).ln()]))
    }

    fn begin_phase(&mut self, _settings: PhaseSettings) -> Result<()> {
        Ok(())
    }

    fn train_step(&mut self, _batch: &[PairInput]) -> Result<f64> {
        Ok(0.0)
    }

    fn save(&self, _dir: &Path, _info: &CheckpointInfo) -> Result<()> {
        Ok(())
    }
}

fn hash_unit(text: &str) -> f64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    (h % 1001) as f64 / 1000.0
}

#[test]
fn criterion_04_inference_contract() {
    let (registry, _) = synthetic_world(&WorldShape::default(), 1);
    let options = RenderOptions::default();

    // |C| backend calls and agreement with independent per-class rescoring.
    let task = registry.task("tgt_topic").unwrap();
    let encoder = ScriptedEncoder::new(|query, text| hash_unit(&format!("{query}\u{1}{text}")));
    let mut checked = 0usize;
    for i in 0..250 {
        let text = format!("probe text {i}");
        let before = encoder.calls();
        let prediction = predict_multiclass(&encoder, &text, task, &registry, options).unwrap();
        assert_eq!(
            encoder.calls() - before,
            task.classes.len(),
            "multiclass prediction must cost exactly |C| forward passes"
        );
        let mut best: Option<(&String, f64)> = None;
        for class in &task.classes {
            let query = query_for_class(&registry, task, class, options).unwrap();
            let p = predict_pair(&encoder, &query, &text).unwrap();
            assert!((p - prediction.probabilities[class]).abs() < 1e-12);
            if best.map_or(true, |(_, b)| p > b) {
                best = Some((class, p));
            }
        }
        assert_eq!(&prediction.chosen, best.unwrap().0);
        checked += 1;
    }

    // Binary prediction at 0.5 equals 2-class argmax on fuzzed inputs.
    let binary = registry.task("aux_alert").unwrap();
    let encoder = ScriptedEncoder::new(|_, text| hash_unit(text));
    let mut agreements = 0usize;
    for i in 0..1000 {
        let text = format!("fuzz {i} {}", i * 31 % 97);
        let thresholded =
            predict_binary(&encoder, &text, binary, &registry, options, 0.5).unwrap();
        let argmaxed = predict_multiclass(&encoder, &text, binary, &registry, options).unwrap();
        assert_eq!(thresholded.chosen, argmaxed.chosen, "disagreement on {text:?}");
        agreements += 1;
    }
    pass(
        "04",
        "inference-contract",
        format!("{checked} multiclass rescoring checks, {agreements}/1000 binary agreements"),
    );
}

// ---------------------------------------------------------------------------
// 5. Threshold sweep
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_threshold_sweep() {
    let (registry, _) = synthetic_world(&WorldShape::default(), 1);
    let task = registry.task("aux_alert").unwrap();
    let options = RenderOptions::default();

    // Raising the threshold to 0.7 flips two false positives scoring 0.65
    // into true negatives without losing any true positive (scoring 0.9).
    let encoder = ScriptedEncoder::new(|_, text| {
        if text.starts_with("pos") {
            0.9
        } else if text.starts_with("hard") {
            0.65
        } else {
            0.2
        }
    });
    let items = |rows: &[(&str, &str)]| -> Vec<EvalItem> {
        rows.iter()
            .enumerate()
            .map(|(i, (text, gold))| EvalItem {
                record_id: i.to_string(),
                text: text.to_string(),
                gold: gold.to_string(),
            })
            .collect()
    };
    let validation = items(&[
        ("pos 1", "yes"),
        ("pos 2", "yes"),
        ("pos 3", "yes"),
        ("hard 1", "no"),
        ("hard 2", "no"),
        ("neg 1", "no"),
        ("neg 2", "no"),
    ]);
    let sweep = select_threshold(&encoder, &validation, task, &registry, options, &DEFAULT_THRESHOLDS)
        .unwrap();
    assert_eq!(sweep.selected, 0.7, "sweep: {:?}", sweep.scores);
    let best = sweep.scores.iter().map(|(_, s)| *s).fold(f64::MIN, f64::max);
    let at_07 = sweep.scores.iter().find(|(t, _)| *t == 0.7).unwrap().1;
    let at_05 = sweep.scores.iter().find(|(t, _)| *t == 0.5).unwrap().1;
    assert_eq!(at_07, best);
    assert!(at_07 > at_05, "0.7 must strictly dominate 0.5");

    // A degenerate scorer ties every threshold; the lowest wins.
    let degenerate = ScriptedEncoder::new(|_, _| 1.0);
    let tied = select_threshold(
        &degenerate,
        &items(&[("a", "yes"), ("b", "no")]),
        task,
        &registry,
        options,
        &DEFAULT_THRESHOLDS,
    )
    .unwrap();
    assert_eq!(tied.selected, 0.5);
    pass(
        "05",
        "threshold-sweep",
        format!("dominating sweep selected 0.7 (F1 {at_07:.3} vs {at_05:.3} at 0.5); ties select 0.5"),
    );
}

// ---------------------------------------------------------------------------
// 6. Toy-backend gradient check
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_toy_gradient_check() {
    let mut encoder = ToyEncoder::new(ToyConfig {
        vocab_buckets: 64,
        dim: 8,
        seed: 41,
        ..ToyConfig::default()
    })
    .unwrap();
    let batch: Vec<PairInput> = (0..12)
        .map(|i| PairInput {
            query: format!("label {} word{}", if i % 2 == 0 { "red" } else { "blue" }, i % 5),
            text: format!("text token{} token{} filler", i % 7, (i * 3) % 7),
            target: (i % 2) as u8,
        })
        .collect();
    // Train briefly so head weights are off their zero init.
    encoder
        .begin_phase(PhaseSettings {
            lr: 0.05,
            warmup_steps: 0,
        })
        .unwrap();
    for _ in 0..5 {
        encoder.train_step(&batch).unwrap();
    }

    let (_, grad) = encoder.loss_and_grad(&batch).unwrap();
    let eps = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6D);
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    while checked < 120 {
        let i = rng.random_range(0..encoder.params().len());
        let mut plus = encoder.clone();
        let mut minus = encoder.clone();
        let mut p = encoder.params().to_vec();
        p[i] += eps;
        plus.set_params(&p).unwrap();
        p[i] -= 2.0 * eps;
        minus.set_params(&p).unwrap();
        let (lp, _) = plus.loss_and_grad(&batch).unwrap();
        let (lm, _) = minus.loss_and_grad(&batch).unwrap();
        let numeric = (lp - lm) / (2.0 * eps);
        let analytic = grad[i];
        if numeric.abs() < 1e-10 && analytic.abs() < 1e-10 {
            continue;
        }
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-10);
        assert!(
            rel <= 1e-4,
            "coordinate {i}: analytic {analytic} vs numeric {numeric} (rel {rel:.2e})"
        );
        worst = worst.max(rel);
        checked += 1;
    }
    pass(
        "06",
        "toy-gradient-check",
        format!("{checked} coordinates, worst relative error {worst:.2e}"),
    );
}

// ---------------------------------------------------------------------------
// 7. Multi-task beats single-task on scarce classes
// ---------------------------------------------------------------------------

/// Shape of the synthetic two-dataset world: an abundant auxiliary binary
/// task whose positive description names the scarce topics, and a small
/// 4-class target task where those topics are rare.
struct WorldShape {
    aux_per_topic: usize,
    tgt_common: (usize, usize),
    tgt_rare: usize,
    dev_common: usize,
    dev_rare: usize,
    /// Probability that a text contains its topic's name (the rest of the
    /// signal comes from topic-specific satellite words).
    aux_topic_token_p: f64,
    tgt_topic_token_p: f64,
}

impl Default for WorldShape {
    fn default() -> Self {
        WorldShape {
            aux_per_topic: 500,
            tgt_common: (74, 70),
            tgt_rare: 3,
            dev_common: 96,
            dev_rare: 24,
            aux_topic_token_p: 0.9,
            tgt_topic_token_p: 0.55,
        }
    }
}

const TOPICS: [&str; 4] = ["storm", "ember", "lumen", "quartz"];
const SATELLITES: [[&str; 5]; 4] = [
    ["thunder", "gale", "rainfall", "wind", "cloudburst"],
    ["ash", "flame", "coal", "smoke", "cinder"],
    ["glow", "beam", "lantern", "shine", "flicker"],
    ["crystal", "prism", "shard", "mineral", "vein"],
];
const NOISE: [&str; 16] = [
    "the", "a", "just", "saw", "today", "big", "little", "near", "found", "old", "new", "very",
    "quite", "some", "about", "really",
];

fn synthetic_text(topic: usize, token_p: f64, rng: &mut ChaCha8Rng) -> String {
    let mut tokens: Vec<&str> = Vec::new();
    if rng.random_bool(token_p) {
        for _ in 0..rng.random_range(1..=2) {
            tokens.push(TOPICS[topic]);
        }
    }
    for _ in 0..rng.random_range(1..=3) {
        tokens.push(SATELLITES[topic][rng.random_range(0..5)]);
    }
    for _ in 0..rng.random_range(3..=7) {
        tokens.push(NOISE[rng.random_range(0..NOISE.len())]);
    }
    // Deterministic shuffle via index permutation.
    for i in (1..tokens.len()).rev() {
        tokens.swap(i, rng.random_range(0..=i));
    }
    tokens.join(" ")
}

fn synthetic_world(shape: &WorldShape, seed: u64) -> (Registry, Corpus) {
    let registry = Registry::from_toml_str(
        r#"
        [[dataset]]
        id = "AUX"
        display_name = "Auxiliary alerts"

        [[dataset]]
        id = "TGT"
        display_name = "Target topics"

        [[task]]
        name = "aux_alert"
        dataset = "AUX"
        label_type = "alert"
        classes = ["yes", "no"]
        positive = "yes"
        rule = "label-name"
        [task.description_overrides]
        yes = "glowing lumen or quartz"

        [[task]]
        name = "tgt_topic"
        dataset = "TGT"
        label_type = "topic"
        classes = ["storm", "ember", "lumen", "quartz"]
        rule = "typed-value"
        "#,
    )
    .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Corpus::default();
    let aux = DatasetId::new("AUX").unwrap();
    let tgt = DatasetId::new("TGT").unwrap();

    let mut aux_id = 0usize;
    for topic in 0..4 {
        for _ in 0..shape.aux_per_topic {
            aux_id += 1;
            let alert = if topic >= 2 { "yes" } else { "no" };
            corpus.train.push(AnnotatedRecord {
                id: format!("aux{aux_id}"),
                text: normalize_text(&synthetic_text(topic, shape.aux_topic_token_p, &mut rng)),
                dataset: aux.clone(),
                labels: BTreeMap::from([("alert".to_string(), alert.to_string())]),
                split: Split::Train,
            });
        }
    }
    let mut tgt_id = 0usize;
    let mut push_tgt = |corpus: &mut Corpus, topic: usize, split: Split, token_p: f64, rng: &mut ChaCha8Rng| {
        tgt_id += 1;
        let record = AnnotatedRecord {
            id: format!("tgt{tgt_id}"),
            text: normalize_text(&synthetic_text(topic, token_p, rng)),
            dataset: tgt.clone(),
            labels: BTreeMap::from([("topic".to_string(), TOPICS[topic].to_string())]),
            split,
        };
        match split {
            Split::Train => corpus.train.push(record),
            Split::Dev => corpus.dev.push(record),
            Split::Test => corpus.test.push(record),
        }
    };
    for (topic, count) in [
        (0usize, shape.tgt_common.0),
        (1, shape.tgt_common.1),
        (2, shape.tgt_rare),
        (3, shape.tgt_rare),
    ] {
        for _ in 0..count {
            push_tgt(&mut corpus, topic, Split::Train, shape.tgt_topic_token_p, &mut rng);
        }
    }
    for (topic, count) in [
        (0usize, shape.dev_common),
        (1, shape.dev_common),
        (2, shape.dev_rare),
        (3, shape.dev_rare),
    ] {
        for _ in 0..count {
            push_tgt(&mut corpus, topic, Split::Dev, shape.tgt_topic_token_p, &mut rng);
        }
    }
    (registry, corpus)
}

struct ToyFactory {
    config: ToyConfig,
}

impl EncoderFactory for ToyFactory {
    fn fresh(&self, seed: u64) -> Result<Box<dyn PairEncoder>> {
        let mut config = self.config.clone();
        config.seed = config.seed.wrapping_mul(0x9E3779B97F4A7C15) ^ seed;
        Ok(Box::new(ToyEncoder::new(config)?))
    }
}

fn topic_phase(phase_id: u8, tasks: &[&str], max_epochs: usize, lr: f64) -> PhaseConfig {
    PhaseConfig {
        phase_id,
        training_tasks: tasks.iter().map(|t| t.to_string()).collect(),
        validation_tasks: vec!["tgt_topic".to_string()],
        max_epochs,
        patience: Some(3),
        lr,
        warmup_steps: 10,
        effective_batch: 32,
        eval_every_steps: None,
        balance: None,
    }
}

fn topic_plan(phases: Vec<PhaseConfig>) -> RunPlan {
    RunPlan {
        phases,
        seeds: vec![1, 2, 3],
        report_tasks: vec!["tgt_topic".to_string()],
        threshold_candidates: DEFAULT_THRESHOLDS.to_vec(),
        options: RenderOptions::default(),
        eval_split: Split::Dev,
        sampler_seed: None,
    }
}

fn mean_topic_score(outcome: &pairtask_core::trainer::PipelineOutcome) -> f64 {
    let scores: Vec<f64> = outcome
        .seeds
        .iter()
        .map(|s| s.results[0].report.macro_f1)
        .collect();
    scores.iter().sum::<f64>() / scores.len() as f64
}

#[test]
fn criterion_07_multitask_beats_single_task() {
    let start = Instant::now();
    let (registry, corpus) = synthetic_world(&WorldShape::default(), 0xC0FFEE);
    let factory = ToyFactory {
        config: ToyConfig {
            vocab_buckets: 1024,
            dim: 24,
            ..ToyConfig::default()
        },
    };
    let dir = tempfile::tempdir().unwrap();

    let single = topic_plan(vec![topic_phase(3, &["tgt_topic"], 8, 0.05)]);
    let single_outcome = run_pipeline(
        &single,
        &factory,
        &corpus,
        &registry,
        &dir.path().join("single"),
    )
    .unwrap();
    let single_mean = mean_topic_score(&single_outcome);

    let multi = topic_plan(vec![
        topic_phase(1, &["aux_alert", "tgt_topic"], 2, 0.1),
        topic_phase(3, &["tgt_topic"], 8, 0.05),
    ]);
    let multi_outcome = run_pipeline(
        &multi,
        &factory,
        &corpus,
        &registry,
        &dir.path().join("multi"),
    )
    .unwrap();
    let multi_mean = mean_topic_score(&multi_outcome);

    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 300.0,
        "replication took {elapsed:?}, budget is 5 minutes"
    );
    assert!(
        multi_mean - single_mean >= 0.10,
        "multi-task mean {multi_mean:.4} vs single-task mean {single_mean:.4}: \
         gap {:.4} below 0.10",
        multi_mean - single_mean
    );
    pass(
        "07",
        "multitask-beats-single-task",
        format!(
            "single {single_mean:.4}, multi {multi_mean:.4}, gap {:.4}, {elapsed:?}",
            multi_mean - single_mean
        ),
    );
}

// ---------------------------------------------------------------------------
// 8. Three-phase chaining and early stopping
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_phase_chaining_and_early_stopping() {
    // Chaining: the next phase starts from the previous phase's best
    // checkpoint, so its initial forward outputs must match.
    let (registry, corpus) = synthetic_world(
        &WorldShape {
            aux_per_topic: 60,
            ..WorldShape::default()
        },
        12,
    );
    let factory = ToyFactory {
        config: ToyConfig {
            vocab_buckets: 256,
            dim: 12,
            ..ToyConfig::default()
        },
    };
    let dir = tempfile::tempdir().unwrap();
    let plan = topic_plan(vec![
        topic_phase(1, &["aux_alert", "tgt_topic"], 1, 0.1),
        topic_phase(3, &["tgt_topic"], 2, 0.05),
    ]);
    let plan = RunPlan {
        seeds: vec![1],
        ..plan
    };
    run_pipeline(&plan, &factory, &corpus, &registry, dir.path()).unwrap();

    let phase1_best = dir.path().join("seed_1/phase01_1/best");
    let (saved, meta) = pairtask_core::backend::load_encoder(&phase1_best).unwrap();
    assert_eq!(meta.phase, Some(1));
    // The pipeline initializes phase 2 by loading this directory; loading it
    // again must reproduce the forward outputs exactly.
    let (chained, _) = pairtask_core::backend::load_encoder(&phase1_best).unwrap();
    let mut worst: f64 = 0.0;
    for record in corpus.dev.iter().take(50) {
        let query = "TGT: topic: storm";
        let a = saved.forward(query, &record.text).unwrap();
        let b = chained.forward(query, &record.text).unwrap();
        worst = worst.max((a.0[0] - b.0[0]).abs().max((a.0[1] - b.0[1]).abs()));
        assert!(worst <= 1e-6, "chained outputs differ by {worst}");
    }

    // Early stopping on a scripted score sequence returns the peak.
    let mut early = pairtask_core::trainer::EarlyStopping::new(Some(5));
    let mut decisions = Vec::new();
    for score in [0.5, 0.6, 0.59, 0.58, 0.57, 0.56, 0.55] {
        decisions.push(early.observe(score));
    }
    assert_eq!(early.best(), Some(0.6));
    assert_eq!(
        decisions.last(),
        Some(&pairtask_core::trainer::StopDecision::Stop),
        "5 non-improving evaluations must stop the phase"
    );
    pass(
        "08",
        "phase-chaining-and-early-stopping",
        format!("chained forward max diff {worst:.2e}; scripted sequence stopped at best 0.6"),
    );
}

// ---------------------------------------------------------------------------
// 9. Description rendering over the shipped registry
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_description_rendering() {
    let registry = Registry::from_path(&repo_path("registry/default.toml")).unwrap();
    let mut edos_checked = 0usize;
    let mut aux_checked = 0usize;
    for task in registry.tasks() {
        for value in &task.classes {
            let description = registry.build_description(task, value).unwrap();
            match task.rule {
                DescriptionRule::CategoryAgainstWomen => {
                    assert!(
                        !description.chars().any(|c| c.is_ascii_digit()),
                        "{description:?} contains digits"
                    );
                    assert!(
                        description.ends_with("(against women)"),
                        "{description:?} lacks the target-group suffix"
                    );
                    edos_checked += 1;
                }
                DescriptionRule::TypedValue => {
                    assert_eq!(
                        description,
                        format!("{}: {}", task.label_type.to_lowercase(), value.to_lowercase()),
                        "typed-value descriptor mismatch"
                    );
                    aux_checked += 1;
                }
                _ => {}
            }
        }
    }
    assert_eq!(edos_checked, 15, "4 category + 11 vector classes");
    assert!(aux_checked >= 10, "auxiliary multi-class descriptors enumerated");
    pass(
        "09",
        "description-rendering",
        format!("{edos_checked} category descriptors, {aux_checked} typed-value descriptors, zero violations"),
    );
}

// ---------------------------------------------------------------------------
// 10. Normalization fixtures and idempotence fuzz
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_normalization() {
    let fixtures: &[(&str, &str)] = &[
        // URLs
        ("check https://t.co/ab now", "check [URL] now"),
        ("https://example.org", "[URL]"),
        ("http://a.b/c?d=e&f=g", "[URL]"),
        ("pre http://x post", "pre [URL] post"),
        ("see www.example.org/x rest", "see [URL] rest"),
        ("two https://a.b http://c.d links", "two [URL] [URL] links"),
        ("trailing https://a.b.", "trailing [URL]"),
        // \S+ is greedy, so a closing paren is consumed with the link.
        ("(https://a.b)", "([URL]"),
        ("no link here", "no link here"),
        ("awww.com stays", "awww.com stays"),
        ("www. alone stays", "www. alone stays"),
        // usernames
        ("@user1 hi", "[USER] hi"),
        ("hi @user1", "hi [USER]"),
        ("@a_b2 and @c", "[USER] and [USER]"),
        ("email a@b.com", "email a[USER].com"),
        ("@@double", "@[USER]"),
        ("bare @ stays", "bare @ stays"),
        ("@user!", "[USER]!"),
        ("(@user)", "([USER])"),
        // emoji
        ("I 😀", "I [grinning face]"),
        ("😀", "[grinning face]"),
        ("🚀🚀", "[rocket][rocket]"),
        ("a☂b", "a[umbrella]b"),
        ("mixed 😀 and 🚀", "mixed [grinning face] and [rocket]"),
        ("flag 🇺 half", "flag [regional indicator symbol letter u] half"),
        ("unknown \u{2460} stays", "unknown \u{2460} stays"),
        // interactions
        ("go https://ex.com/@user now", "go [URL] now"),
        ("@user www.x.io/q 😀", "[USER] [URL] [grinning face]"),
        ("http://a.b😀", "[URL]"),
        ("[URL] and [USER] verbatim", "[URL] and [USER] verbatim"),
        ("", ""),
        ("   ", "   "),
    ];
    assert!(fixtures.len() >= 30, "need at least 30 fixtures");
    for (raw, expected) in fixtures {
        assert_eq!(&normalize_text(raw), expected, "input {raw:?}");
    }

    // Idempotence fuzz over 10,000 random piecewise-social strings.
    let mut rng = ChaCha8Rng::seed_from_u64(0x1D3);
    let emoji = ["😀", "🚀", "☂", "🙈", "🤖", "🧲", "🌙"];
    let words = ["lorem", "ipsum", "dolor", "sit", "amet", "Amet2", "x"];
    let mut fuzzed = 0usize;
    for _ in 0..10_000 {
        let mut text = String::new();
        for _ in 0..rng.random_range(0..10usize) {
            match rng.random_range(0..6u8) {
                0 => text.push_str(words[rng.random_range(0..words.len())]),
                1 => {
                    text.push('@');
                    text.push_str(words[rng.random_range(0..words.len())]);
                }
                2 => {
                    text.push_str("https://");
                    text.push_str(words[rng.random_range(0..words.len())]);
                }
                3 => text.push_str(emoji[rng.random_range(0..emoji.len())]),
                4 => text.push(char::from_u32(rng.random_range(0x20..0x2FFF)).unwrap_or(' ')),
                _ => text.push(' '),
            }
        }
        let once = normalize_text(&text);
        let twice = normalize_text(&once);
        assert_eq!(twice, once, "not idempotent on {text:?}");
        fuzzed += 1;
    }
    pass(
        "10",
        "normalization",
        format!("{} byte-exact fixtures, {fuzzed} idempotence fuzz cases", fixtures.len()),
    );
}

// ---------------------------------------------------------------------------
// 11. Full-scale path: the shipped config for real data validates
// ---------------------------------------------------------------------------

#[test]
fn criterion_11_full_scale_config_validates() {
    let path = repo_path("configs/full_scale.toml");
    let config = pairtask_core::config::RunConfig::from_path(&path).unwrap();
    let resolved = config.resolve(path.parent().unwrap()).unwrap();
    assert_eq!(resolved.plan.phases.len(), 5, "phases 1, 2, and one 3 per subtask");
    assert_eq!(
        resolved.plan.report_tasks,
        vec!["edos_a".to_string(), "edos_b".to_string(), "edos_c".to_string()]
    );
    assert_eq!(resolved.plan.seeds, vec![1, 2, 3]);
    // The submitted-model settings: identifiers on, thresholds swept over
    // the published candidate set, subtask B floored at 19%, C at 9%.
    assert!(resolved.plan.options.dataset_identifier);
    assert_eq!(resolved.plan.threshold_candidates, vec![0.5, 0.6, 0.7, 0.8, 0.9]);
    let floors: Vec<f64> = resolved
        .plan
        .phases
        .iter()
        .filter_map(|p| p.balance.as_ref().map(|b| b.floor_fraction))
        .collect();
    assert_eq!(floors, vec![0.19, 0.09]);
    let phase1 = &resolved.plan.phases[0];
    assert_eq!(phase1.max_epochs, 1);
    assert_eq!(phase1.effective_batch, 32);
    assert_eq!(phase1.warmup_steps, 1000);
    assert_eq!(phase1.lr, 1e-6);
    // The quickstart demo config validates the same way.
    let demo = repo_path("configs/quickstart/run.toml");
    let demo_config = pairtask_core::config::RunConfig::from_path(&demo).unwrap();
    demo_config.resolve(demo.parent().unwrap()).unwrap();
    pass(
        "11",
        "full-scale-config",
        "5-phase external-backend config and demo config both resolve".to_string(),
    );
}
