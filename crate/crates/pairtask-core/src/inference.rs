//! Task-level prediction on top of the pairwise model.
//!
//! Multi-class tasks run one forward pass per candidate class and pick the
//! highest probability. Binary tasks need a single forward pass: the model
//! already outputs the probability that the positive label applies, and its
//! softmax complement scores the negative class. A decision threshold (swept
//! on validation data) applies to binary tasks only.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{predict_pair, PairEncoder};
use crate::error::{Error, Result};
use crate::evaluation::macro_f1;
use crate::schema::{query_for_class, Registry, RenderOptions, TaskSpec};

/// Candidate thresholds swept on validation data for binary tasks.
pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

/// A task-level decision with the per-class scores behind it. Scores come
/// from independent pairwise passes, so they need not sum to 1 across
/// classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub task_name: String,
    pub chosen: String,
    pub probabilities: BTreeMap<String, f64>,
    pub threshold_used: Option<f64>,
}

/// First class with the maximal score, in class-list order.
fn argmax<'a>(classes: &'a [String], scores: &BTreeMap<String, f64>) -> &'a String {
    let mut best = &classes[0];
    for class in &classes[1..] {
        if scores[class] > scores[best] {
            best = class;
        }
    }
    best
}

/// Score every candidate class of the task and choose the best one.
///
/// Tasks with more than two classes cost exactly |C| forward passes, one per
/// class descriptor. Binary tasks, when pushed through this path explicitly,
/// cost a single pass: the negative class is scored as the softmax
/// complement of the positive one. Ties break deterministically towards the
/// earlier class in the registry's class order.
pub fn predict_multiclass(
    encoder: &dyn PairEncoder,
    text: &str,
    task: &TaskSpec,
    registry: &Registry,
    options: RenderOptions,
) -> Result<Prediction> {
    let mut probabilities = BTreeMap::new();
    if task.is_binary {
        let positive = task.positive_class()?;
        let query = query_for_class(registry, task, positive, options)?;
        let p = predict_pair(encoder, &query, text)?;
        for class in &task.classes {
            let score = if class == positive { p } else { 1.0 - p };
            probabilities.insert(class.clone(), score);
        }
    } else {
        for class in &task.classes {
            let query = query_for_class(registry, task, class, options)?;
            probabilities.insert(class.clone(), predict_pair(encoder, &query, text)?);
        }
    }
    let chosen = argmax(&task.classes, &probabilities).clone();
    Ok(Prediction {
        task_name: task.task_name.clone(),
        chosen,
        probabilities,
        threshold_used: None,
    })
}

/// One forward pass on the positive descriptor; positive iff p ≥ threshold.
pub fn predict_binary(
    encoder: &dyn PairEncoder,
    text: &str,
    task: &TaskSpec,
    registry: &Registry,
    options: RenderOptions,
    threshold: f64,
) -> Result<Prediction> {
    if !task.is_binary {
        return Err(Error::config(format!(
            "task {:?} is not binary; thresholded prediction does not apply",
            task.task_name
        )));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::config(format!("threshold {threshold} outside [0, 1]")));
    }
    let positive = task.positive_class()?;
    let negative = task
        .classes
        .iter()
        .find(|c| c.as_str() != positive)
        .expect("binary task has two classes");
    let query = query_for_class(registry, task, positive, options)?;
    let p = predict_pair(encoder, &query, text)?;
    let chosen = if p >= threshold { positive } else { negative };
    Ok(Prediction {
        task_name: task.task_name.clone(),
        chosen: chosen.to_string(),
        probabilities: BTreeMap::from([
            (positive.to_string(), p),
            (negative.clone(), 1.0 - p),
        ]),
        threshold_used: Some(threshold),
    })
}

/// A labelled evaluation item: a text with its gold class for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub record_id: String,
    pub text: String,
    pub gold: String,
}

/// The outcome of a threshold sweep: macro-F1 per candidate and the
/// selected threshold (highest score; ties go to the lowest threshold).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub candidates: Vec<f64>,
    /// (threshold, macro-F1) in ascending threshold order.
    pub scores: Vec<(f64, f64)>,
    pub selected: f64,
}

/// Evaluate every candidate threshold on the validation items and keep the
/// best-scoring one for the test set.
pub fn select_threshold(
    encoder: &dyn PairEncoder,
    validation: &[EvalItem],
    task: &TaskSpec,
    registry: &Registry,
    options: RenderOptions,
    candidates: &[f64],
) -> Result<ThresholdSweep> {
    if validation.is_empty() {
        return Err(Error::data(format!(
            "cannot select a threshold for task {:?} on an empty validation set",
            task.task_name
        )));
    }
    if candidates.is_empty() {
        return Err(Error::config("no threshold candidates given".to_string()));
    }
    let mut ordered: Vec<f64> = candidates.to_vec();
    ordered.sort_by(|a, b| a.partial_cmp(b).expect("finite thresholds"));
    ordered.dedup();

    let golds: Vec<String> = validation.iter().map(|item| item.gold.clone()).collect();
    let mut scores = Vec::with_capacity(ordered.len());
    let mut selected = ordered[0];
    let mut best = f64::NEG_INFINITY;
    for &threshold in &ordered {
        let mut predictions = Vec::with_capacity(validation.len());
        for item in validation {
            let prediction =
                predict_binary(encoder, &item.text, task, registry, options, threshold)?;
            predictions.push(prediction.chosen);
        }
        let score = macro_f1(&predictions, &golds, &task.classes)?;
        scores.push((threshold, score));
        if score > best {
            best = score;
            selected = threshold;
        }
    }
    Ok(ThresholdSweep {
        candidates: ordered,
        scores,
        selected,
    })
}
