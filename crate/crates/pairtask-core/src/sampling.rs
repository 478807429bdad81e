//! Per-epoch negative sampling for multi-class tasks and minority-class
//! upsampling.
//!
//! Every draw is keyed by (seed, epoch, lane, record index), so a record's
//! negative is independent of worker count and batch layout, positives stay
//! bit-identical across epochs, and negatives are re-drawn at every epoch
//! boundary.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::corpus::AnnotatedRecord;
use crate::error::{Error, Result};
use crate::schema::TaskSpec;
use crate::util::{fnv1a_64, mix_seed};

/// Deterministic sampling state: identical (seed, epoch, lane, record order)
/// produce identical draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerState {
    seed: u64,
    epoch: u64,
    lane: u64,
}

impl SamplerState {
    pub fn new(seed: u64) -> Self {
        SamplerState {
            seed,
            epoch: 0,
            lane: 0,
        }
    }

    /// The state for a given epoch; negatives change across epochs.
    pub fn with_epoch(self, epoch: u64) -> Self {
        SamplerState { epoch, ..self }
    }

    /// An independent stream, e.g. one per task, so draws for record i of
    /// one task do not correlate with record i of another.
    pub fn with_lane(self, lane: &str) -> Self {
        SamplerState {
            lane: fnv1a_64(lane.as_bytes()),
            ..self
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn rng(&self, index: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix_seed(&[self.seed, self.epoch, self.lane, index]))
    }
}

/// Draw one wrong class, uniformly over the |C|−1 classes other than `gold`.
pub fn sample_negative(
    gold: &str,
    classes: &[String],
    state: &SamplerState,
    record_index: u64,
) -> Result<String> {
    if classes.len() < 2 {
        return Err(Error::data(format!(
            "cannot sample a negative from {} classes",
            classes.len()
        )));
    }
    let gold_position = classes
        .iter()
        .position(|c| c == gold)
        .ok_or_else(|| Error::data(format!("gold class {gold:?} not in class list")))?;
    let mut rng = state.rng(record_index);
    let offset = rng.random_range(0..classes.len() - 1);
    // Skip over the gold slot so the draw stays uniform over wrong classes.
    let pick = if offset >= gold_position { offset + 1 } else { offset };
    Ok(classes[pick].clone())
}

/// How many distinct negatives one positive could yield (|C|−1); the
/// training sampler uses exactly one of them per epoch.
pub fn negatives_per_positive(classes: &[String]) -> Result<usize> {
    if classes.len() < 2 {
        return Err(Error::data(format!(
            "a task needs at least 2 classes, got {}",
            classes.len()
        )));
    }
    Ok(classes.len() - 1)
}

/// Per-task class-balancing floor: classes below `floor_fraction` are
/// duplicated until they reach it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceTarget {
    pub task_name: String,
    pub floor_fraction: f64,
}

impl BalanceTarget {
    /// Validated against the task's class count at config time: a floor
    /// that all classes cannot satisfy simultaneously is unreachable.
    pub fn new(task_name: impl Into<String>, floor_fraction: f64, class_count: usize) -> Result<Self> {
        let target = BalanceTarget {
            task_name: task_name.into(),
            floor_fraction,
        };
        target.validate(class_count)?;
        Ok(target)
    }

    pub fn validate(&self, class_count: usize) -> Result<()> {
        if !(self.floor_fraction > 0.0) {
            return Err(Error::config(format!(
                "balance floor for task {:?} must be positive",
                self.task_name
            )));
        }
        if self.floor_fraction * class_count as f64 > 1.0 + 1e-9 {
            return Err(Error::config(format!(
                "balance floor {} for task {:?} is unreachable with {class_count} classes",
                self.floor_fraction, self.task_name
            )));
        }
        Ok(())
    }
}

/// What an upsampling run did: which classes were below the floor and the
/// whole-record duplication factor applied to each.
#[derive(Debug, Clone, Serialize)]
pub struct UpsampleSummary {
    pub applies_to: Vec<String>,
    pub factors: BTreeMap<String, usize>,
    pub input_len: usize,
    pub output_len: usize,
}

/// Duplicate whole records of classes below the balance floor until each of
/// them reaches `floor_fraction` of the returned multiset. Classes at or
/// above the floor are copied exactly once. The output order is a seeded
/// shuffle of the grown multiset, so a fixed state reproduces it exactly.
pub fn upsample(
    records: &[AnnotatedRecord],
    task: &TaskSpec,
    target: &BalanceTarget,
    state: &SamplerState,
) -> Result<(Vec<AnnotatedRecord>, UpsampleSummary)> {
    target.validate(task.class_count())?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for record in records {
        let gold = record.label(&task.label_type).ok_or_else(|| {
            Error::data(format!(
                "record {:?} has no gold label for task {:?}",
                record.id, task.task_name
            ))
        })?;
        if !task.classes.iter().any(|c| c == gold) {
            return Err(Error::data(format!(
                "record {:?} carries unregistered value {gold:?}",
                record.id
            )));
        }
        *counts.entry(gold).or_default() += 1;
    }
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(Error::data(format!(
            "no records to upsample for task {:?}",
            task.task_name
        )));
    }

    let floor = target.floor_fraction;
    let below: Vec<&String> = task
        .classes
        .iter()
        .filter(|class| {
            let n = counts.get(class.as_str()).copied().unwrap_or(0);
            (n as f64) < floor * total as f64
        })
        .collect();
    for class in &below {
        if counts.get(class.as_str()).copied().unwrap_or(0) == 0 {
            return Err(Error::data(format!(
                "class {class:?} of task {:?} has no records; the balance floor is unreachable",
                task.task_name
            )));
        }
    }

    // Joint integer search: repeatedly bump the duplication factor of the
    // minority class with the largest remaining deficit until every
    // originally-below class sits at or above the floor of the grown total.
    let mut factors: BTreeMap<&String, usize> = below.iter().map(|c| (*c, 1usize)).collect();
    let mut grown_total = total;
    let mut guard = 0usize;
    loop {
        let mut worst: Option<(&String, f64)> = None;
        for class in &below {
            let n = counts[class.as_str()] * factors[*class];
            let deficit = floor - n as f64 / grown_total as f64;
            if deficit > 0.0 && worst.map_or(true, |(_, d)| deficit > d) {
                worst = Some((class, deficit));
            }
        }
        let Some((class, _)) = worst else { break };
        *factors.get_mut(class).unwrap() += 1;
        grown_total += counts[class.as_str()];
        guard += 1;
        if guard > 1_000_000 {
            return Err(Error::data(format!(
                "balance floor {floor} for task {:?} did not converge",
                task.task_name
            )));
        }
    }

    let mut output: Vec<AnnotatedRecord> = records.to_vec();
    for class in &below {
        let extra = factors[*class] - 1;
        for _ in 0..extra {
            output.extend(
                records
                    .iter()
                    .filter(|r| r.label(&task.label_type) == Some(class.as_str()))
                    .cloned(),
            );
        }
    }
    let mut rng = state.rng(fnv1a_64(b"upsample"));
    output.shuffle(&mut rng);

    let summary = UpsampleSummary {
        applies_to: below.iter().map(|c| (*c).clone()).collect(),
        factors: below
            .iter()
            .map(|c| ((*c).clone(), factors[*c]))
            .collect(),
        input_len: records.len(),
        output_len: output.len(),
    };
    Ok((output, summary))
}
