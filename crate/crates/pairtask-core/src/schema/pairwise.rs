//! Conversion of annotated records into binary pairwise examples.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::AnnotatedRecord;
use crate::error::{Error, Result};
use crate::schema::{Registry, TaskSpec};

/// Where a pairwise example came from: the record, the task, and the class
/// value the query asks about.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub record_id: String,
    pub task: String,
    pub label_value: String,
}

/// The unit fed to the model: a rendered query, a text, and a binary target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseExample {
    pub query: String,
    pub text: String,
    pub target: u8,
    pub provenance: Provenance,
}

/// Toggles for the query rendering, used by the ablation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Prepend the short dataset identifier to the description.
    pub dataset_identifier: bool,
    /// Use the rendered label description; when off, the query degenerates
    /// to the constant task name, so the model sees no label semantics.
    pub label_descriptions: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            dataset_identifier: true,
            label_descriptions: true,
        }
    }
}

/// The query asking whether `label_value` of `task` applies to a text.
pub fn query_for_class(
    registry: &Registry,
    task: &TaskSpec,
    label_value: &str,
    options: RenderOptions,
) -> Result<String> {
    let description = if options.label_descriptions {
        registry.build_description(task, label_value)?
    } else {
        task.task_name.to_lowercase()
    };
    Ok(registry.render_query(&task.dataset, &description, options.dataset_identifier))
}

fn example(
    registry: &Registry,
    task: &TaskSpec,
    record: &AnnotatedRecord,
    label_value: &str,
    target: u8,
    options: RenderOptions,
) -> Result<PairwiseExample> {
    Ok(PairwiseExample {
        query: query_for_class(registry, task, label_value, options)?,
        text: record.text.clone(),
        target,
        provenance: Provenance {
            record_id: record.id.clone(),
            task: task.task_name.clone(),
            label_value: label_value.to_string(),
        },
    })
}

/// The positive-side pairwise examples of one record for one task.
///
/// Binary tasks yield exactly one example asking about the positive class,
/// with target 1 iff the gold label equals it. Multi-class tasks yield
/// exactly one example asking about the gold class with target 1 (wrong-class
/// negatives are drawn separately per epoch). A record without a gold label
/// for the task yields nothing; callers count those skips.
pub fn positive_examples(
    record: &AnnotatedRecord,
    task: &TaskSpec,
    registry: &Registry,
    options: RenderOptions,
) -> Result<Vec<PairwiseExample>> {
    let gold = match record.label(&task.label_type) {
        Some(gold) => gold,
        None => return Ok(Vec::new()),
    };
    if !task.classes.iter().any(|c| c == gold) {
        return Err(Error::data(format!(
            "record {:?} carries unregistered value {gold:?} for task {:?}",
            record.id, task.task_name
        )));
    }
    if task.is_binary {
        let positive = task.positive_class()?;
        let target = u8::from(gold == positive);
        Ok(vec![example(
            registry, task, record, positive, target, options,
        )?])
    } else {
        Ok(vec![example(registry, task, record, gold, 1, options)?])
    }
}

/// A negative pairwise example pairing the record's text with a wrong class.
pub fn negative_example(
    record: &AnnotatedRecord,
    task: &TaskSpec,
    registry: &Registry,
    wrong_value: &str,
    options: RenderOptions,
) -> Result<PairwiseExample> {
    example(registry, task, record, wrong_value, 0, options)
}

/// Positive examples for a whole record sequence, plus the number of records
/// skipped because they carry no gold label for the task.
pub fn pairwise_examples_for_records(
    records: &[AnnotatedRecord],
    task: &TaskSpec,
    registry: &Registry,
    options: RenderOptions,
) -> Result<(Vec<PairwiseExample>, usize)> {
    let mut examples = Vec::new();
    let mut skipped = 0usize;
    for record in records {
        let mut produced = positive_examples(record, task, registry, options)?;
        if produced.is_empty() {
            skipped += 1;
        } else {
            examples.append(&mut produced);
        }
    }
    Ok((examples, skipped))
}

/// Write pairwise examples as JSONL with fields query/text/target/provenance.
pub fn write_pairwise_examples(path: &Path, examples: &[PairwiseExample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for example in examples {
        let line = serde_json::to_string(example)
            .map_err(|e| Error::data(format!("cannot serialize example: {e}")))?;
        writeln!(writer, "{line}").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::corpus::Split;
    use crate::schema::test_fixtures::edos_like_registry;
    use crate::schema::DatasetId;

    fn record(id: &str, labels: &[(&str, &str)]) -> AnnotatedRecord {
        AnnotatedRecord {
            id: id.to_string(),
            text: format!("text of {id}"),
            dataset: DatasetId::new("EDOS").unwrap(),
            labels: labels
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            split: Split::Train,
        }
    }

    #[test]
    fn binary_task_yields_one_example_with_target_from_gold() {
        let registry = edos_like_registry();
        let task = registry.task("edos_a").unwrap();
        let options = RenderOptions::default();

        let sexist = record("r1", &[("task_a", "sexist")]);
        let examples = positive_examples(&sexist, task, &registry, options).unwrap();
        assert_eq!(examples.len(), 1);
        assert_eq!(examples[0].query, "EDOS: sexist");
        assert_eq!(examples[0].target, 1);
        assert_eq!(examples[0].provenance.label_value, "sexist");

        let benign = record("r2", &[("task_a", "not sexist")]);
        let examples = positive_examples(&benign, task, &registry, options).unwrap();
        assert_eq!(examples.len(), 1);
        assert_eq!(examples[0].query, "EDOS: sexist");
        assert_eq!(examples[0].target, 0);
    }

    #[test]
    fn multiclass_task_yields_gold_positive() {
        let registry = edos_like_registry();
        let task = registry.task("edos_b").unwrap();
        let rec = record("r3", &[("task_a", "sexist"), ("task_b", "2. derogation")]);
        let examples =
            positive_examples(&rec, task, &registry, RenderOptions::default()).unwrap();
        assert_eq!(examples.len(), 1);
        assert_eq!(examples[0].query, "EDOS: derogation (against women)");
        assert_eq!(examples[0].target, 1);
    }

    #[test]
    fn records_without_the_label_are_skipped_and_counted() {
        let registry = edos_like_registry();
        let task = registry.task("edos_b").unwrap();
        let records = vec![
            record("r1", &[("task_a", "sexist"), ("task_b", "3. animosity")]),
            record("r2", &[("task_a", "not sexist")]),
        ];
        let (examples, skipped) =
            pairwise_examples_for_records(&records, task, &registry, RenderOptions::default())
                .unwrap();
        assert_eq!(examples.len(), 1);
        assert_eq!(skipped, 1);
    }

    #[test]
    fn render_toggles_change_the_query() {
        let registry = edos_like_registry();
        let task = registry.task("edos_a").unwrap();
        let rec = record("r1", &[("task_a", "sexist")]);

        let no_id = RenderOptions {
            dataset_identifier: false,
            label_descriptions: true,
        };
        let examples = positive_examples(&rec, task, &registry, no_id).unwrap();
        assert_eq!(examples[0].query, "sexist");

        let no_desc = RenderOptions {
            dataset_identifier: true,
            label_descriptions: false,
        };
        let examples = positive_examples(&rec, task, &registry, no_desc).unwrap();
        assert_eq!(examples[0].query, "EDOS: edos_a");
    }

    #[test]
    fn negative_example_renders_the_wrong_class() {
        let registry = edos_like_registry();
        let task = registry.task("edos_b").unwrap();
        let rec = record("r1", &[("task_b", "2. derogation")]);
        let negative = negative_example(
            &rec,
            task,
            &registry,
            "3. animosity",
            RenderOptions::default(),
        )
        .unwrap();
        assert_eq!(negative.query, "EDOS: animosity (against women)");
        assert_eq!(negative.target, 0);
        assert_eq!(negative.provenance.label_value, "3. animosity");
    }

    #[test]
    fn unregistered_gold_value_is_an_error() {
        let registry = edos_like_registry();
        let task = registry.task("edos_a").unwrap();
        let rec = record("r1", &[("task_a", "very sexist")]);
        assert!(positive_examples(&rec, task, &registry, RenderOptions::default()).is_err());
    }
}
