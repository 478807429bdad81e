//! Per-epoch training streams and per-task validation bundles.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backend::PairEncoder;
use crate::corpus::AnnotatedRecord;
use crate::error::{Error, Result};
use crate::evaluation::macro_f1;
use crate::inference::{predict_binary, predict_multiclass, EvalItem};
use crate::sampling::{sample_negative, SamplerState};
use crate::schema::{
    negative_example, positive_examples, PairwiseExample, Registry, RenderOptions, TaskSpec,
};
use crate::util::mix_seed;

/// Labelled evaluation items of one task.
#[derive(Debug, Clone)]
pub struct TaskEvalSet {
    pub task: String,
    pub items: Vec<EvalItem>,
}

/// The per-task evaluation sets a phase validates on.
#[derive(Debug, Clone)]
pub struct ValidationBundle {
    pub sets: Vec<TaskEvalSet>,
}

/// Build the validation bundle for the given tasks from dev-split records.
/// Each task evaluates exactly the records that carry its gold label (for
/// category tasks that is the labeled subset, not the whole dev set).
pub fn build_validation_bundle(
    tasks: &[String],
    records: &[AnnotatedRecord],
    registry: &Registry,
) -> Result<ValidationBundle> {
    if records.is_empty() {
        return Err(Error::train("validation split is empty".to_string()));
    }
    let mut sets = Vec::new();
    for name in tasks {
        let task = registry.task(name)?;
        let items: Vec<EvalItem> = records
            .iter()
            .filter(|r| r.dataset == task.dataset)
            .filter_map(|r| {
                r.label(&task.label_type).map(|gold| EvalItem {
                    record_id: r.id.clone(),
                    text: r.text.clone(),
                    gold: gold.to_string(),
                })
            })
            .collect();
        if items.is_empty() {
            return Err(Error::train(format!(
                "validation task {name:?} has no labelled items"
            )));
        }
        sets.push(TaskEvalSet {
            task: name.clone(),
            items,
        });
    }
    Ok(ValidationBundle { sets })
}

/// Macro-F1 per task of the bundle. Binary tasks are scored at the neutral
/// threshold 0.5 during training; threshold selection happens after a run.
pub fn evaluate_bundle(
    encoder: &dyn PairEncoder,
    bundle: &ValidationBundle,
    registry: &Registry,
    options: RenderOptions,
) -> Result<BTreeMap<String, f64>> {
    let mut scores = BTreeMap::new();
    for set in &bundle.sets {
        let task = registry.task(&set.task)?;
        let mut predictions = Vec::with_capacity(set.items.len());
        for item in &set.items {
            let prediction = if task.is_binary {
                predict_binary(encoder, &item.text, task, registry, options, 0.5)?
            } else {
                predict_multiclass(encoder, &item.text, task, registry, options)?
            };
            predictions.push(prediction.chosen);
        }
        let golds: Vec<String> = set.items.iter().map(|i| i.gold.clone()).collect();
        scores.insert(set.task.clone(), macro_f1(&predictions, &golds, &task.classes)?);
    }
    Ok(scores)
}

/// Counters for one epoch stream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamStats {
    pub positives: usize,
    pub negatives: usize,
    /// Records without a gold label for their task, skipped and counted.
    pub skipped: usize,
    /// task → class → number of positive examples, for balance checks.
    pub class_counts: BTreeMap<String, BTreeMap<String, usize>>,
}

/// One epoch of training data: shuffled positives plus freshly drawn
/// negatives.
#[derive(Debug, Clone)]
pub struct EpochStream {
    pub examples: Vec<PairwiseExample>,
    pub stats: StreamStats,
}

/// Build the single shuffled multi-task stream for one epoch.
///
/// Positives are bit-identical across epochs; for multi-class tasks each
/// positive is paired with exactly one negative drawn uniformly from the
/// wrong classes, keyed by (sampler seed, epoch, task, record index) so the
/// draw is independent of worker layout and changes at every epoch boundary.
pub fn build_epoch_stream(
    per_task: &[(&TaskSpec, Vec<AnnotatedRecord>)],
    registry: &Registry,
    options: RenderOptions,
    sampler: &SamplerState,
    epoch: u64,
    shuffle_key: u64,
) -> Result<EpochStream> {
    let mut examples = Vec::new();
    let mut stats = StreamStats::default();
    for (task, records) in per_task {
        let lane = sampler.with_epoch(epoch).with_lane(&task.task_name);
        for (index, record) in records.iter().enumerate() {
            let produced = positive_examples(record, task, registry, options)?;
            if produced.is_empty() {
                stats.skipped += 1;
                continue;
            }
            for example in produced {
                stats.positives += 1;
                *stats
                    .class_counts
                    .entry(task.task_name.clone())
                    .or_default()
                    .entry(example.provenance.label_value.clone())
                    .or_default() += 1;
                if !task.is_binary {
                    let gold = record
                        .label(&task.label_type)
                        .expect("positive example implies a gold label");
                    let wrong = sample_negative(gold, &task.classes, &lane, index as u64)?;
                    examples.push(negative_example(record, task, registry, &wrong, options)?);
                    stats.negatives += 1;
                }
                examples.push(example);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[shuffle_key, epoch]));
    examples.shuffle(&mut rng);
    Ok(EpochStream { examples, stats })
}
