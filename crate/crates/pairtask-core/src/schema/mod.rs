//! Task taxonomy: datasets, label types, class sets, and the rendering of
//! label descriptions and dataset-identifier queries.
//!
//! The registry is loaded once from a config file and is immutable
//! afterwards; every operation here is a pure function of it.

mod pairwise;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use pairwise::{
    negative_example, pairwise_examples_for_records, positive_examples, query_for_class,
    write_pairwise_examples, PairwiseExample, Provenance, RenderOptions,
};

/// Short dataset abbreviation fed to the model as part of the query
/// (a few characters, unique across the registry, no `:`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DatasetId(String);

impl DatasetId {
    pub const MAX_LEN: usize = 8;

    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::registry("dataset id must be non-empty".to_string()));
        }
        if id.chars().count() > Self::MAX_LEN {
            return Err(Error::registry(format!(
                "dataset id {id:?} longer than {} characters",
                Self::MAX_LEN
            )));
        }
        if id.contains(':') || id.chars().any(char::is_whitespace) {
            return Err(Error::registry(format!(
                "dataset id {id:?} must not contain ':' or whitespace"
            )));
        }
        Ok(DatasetId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for DatasetId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        DatasetId::new(value)
    }
}

impl From<DatasetId> for String {
    fn from(value: DatasetId) -> Self {
        value.0
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A dataset known to the registry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetDef {
    pub id: DatasetId,
    pub display_name: String,
}

/// How a class value is turned into a label description.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DescriptionRule {
    /// The label-type name itself, for binary labels whose values are bare
    /// yes/no markers ("hate speech").
    LabelName,
    /// The class value itself ("sexist").
    Value,
    /// `<label type>: <label value>`, for multi-class labels ("sentiment:
    /// positive").
    TypedValue,
    /// Strip the leading numbering from the value and append
    /// " (against women)" ("2. derogation" → "derogation (against women)").
    CategoryAgainstWomen,
}

/// One labeling task: a label type of one dataset together with its class
/// set and description rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_name: String,
    pub dataset: DatasetId,
    pub label_type: String,
    /// Ordered class values; the order is the deterministic tie-break at
    /// inference time.
    pub classes: Vec<String>,
    /// For binary tasks, the class whose description is asked about.
    pub positive_class: Option<String>,
    pub is_binary: bool,
    pub rule: DescriptionRule,
    /// class value → verbatim description, taking precedence over `rule`.
    pub description_overrides: BTreeMap<String, String>,
}

impl TaskSpec {
    pub fn positive_class(&self) -> Result<&str> {
        self.positive_class.as_deref().ok_or_else(|| {
            Error::registry(format!("task {:?} has no positive class", self.task_name))
        })
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }
}

/// A (dataset, label type, label value) triple with its rendered
/// description string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelDescriptor {
    pub dataset: DatasetId,
    pub label_type: String,
    pub label_value: String,
    pub description: String,
}

static LEADING_NUMBERING_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^\s*\d+(\.\d+)*\.?\s*").unwrap());

/// Remove a leading "N." / "N.N" style numbering from a class name.
fn strip_numbering(value: &str) -> std::borrow::Cow<'_, str> {
    LEADING_NUMBERING_RE.replace(value, "")
}

const DEFAULT_SEPARATOR: &str = ": ";

/// The immutable task taxonomy.
#[derive(Debug, Clone, Serialize)]
pub struct Registry {
    datasets: Vec<DatasetDef>,
    tasks: Vec<TaskSpec>,
    separator: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    #[serde(default)]
    separator: Option<String>,
    #[serde(rename = "dataset")]
    datasets: Vec<DatasetDefFile>,
    #[serde(rename = "task")]
    tasks: Vec<TaskSpecFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetDefFile {
    id: DatasetId,
    display_name: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskSpecFile {
    name: String,
    dataset: DatasetId,
    label_type: String,
    classes: Vec<String>,
    #[serde(default)]
    positive: Option<String>,
    #[serde(default)]
    is_binary: Option<bool>,
    rule: DescriptionRule,
    #[serde(default)]
    description_overrides: BTreeMap<String, String>,
}

impl Registry {
    pub fn from_path(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&raw).map_err(|e| match e {
            Error::Registry(msg) => Error::registry(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml_str(raw: &str) -> Result<Self> {
        let file: RegistryFile =
            toml::from_str(raw).map_err(|e| Error::registry(e.to_string()))?;
        let tasks = file
            .tasks
            .into_iter()
            .map(|t| {
                let is_binary = t.is_binary.unwrap_or(t.classes.len() == 2);
                TaskSpec {
                    task_name: t.name,
                    dataset: t.dataset,
                    label_type: t.label_type,
                    classes: t.classes,
                    positive_class: t.positive,
                    is_binary,
                    rule: t.rule,
                    description_overrides: t.description_overrides,
                }
            })
            .collect();
        Self::new(
            file.datasets
                .into_iter()
                .map(|d| DatasetDef {
                    id: d.id,
                    display_name: d.display_name,
                })
                .collect(),
            tasks,
            file.separator.unwrap_or_else(|| DEFAULT_SEPARATOR.to_string()),
        )
    }

    pub fn new(datasets: Vec<DatasetDef>, tasks: Vec<TaskSpec>, separator: String) -> Result<Self> {
        let registry = Registry {
            datasets,
            tasks,
            separator,
        };
        registry.validate()?;
        Ok(registry)
    }

    fn validate(&self) -> Result<()> {
        let mut dataset_ids = BTreeSet::new();
        for dataset in &self.datasets {
            if !dataset_ids.insert(dataset.id.clone()) {
                return Err(Error::registry(format!(
                    "duplicate dataset id {:?}",
                    dataset.id.as_str()
                )));
            }
        }
        let mut task_names = BTreeSet::new();
        let mut label_types = BTreeSet::new();
        for task in &self.tasks {
            if !task_names.insert(task.task_name.clone()) {
                return Err(Error::registry(format!(
                    "duplicate task name {:?}",
                    task.task_name
                )));
            }
            if !label_types.insert((task.dataset.clone(), task.label_type.clone())) {
                return Err(Error::registry(format!(
                    "label type {:?} registered twice for dataset {:?}",
                    task.label_type,
                    task.dataset.as_str()
                )));
            }
            if !dataset_ids.contains(&task.dataset) {
                return Err(Error::registry(format!(
                    "task {:?} references unknown dataset {:?}",
                    task.task_name,
                    task.dataset.as_str()
                )));
            }
            if task.classes.len() < 2 {
                return Err(Error::registry(format!(
                    "task {:?} needs at least 2 classes",
                    task.task_name
                )));
            }
            let distinct: BTreeSet<&String> = task.classes.iter().collect();
            if distinct.len() != task.classes.len() {
                return Err(Error::registry(format!(
                    "task {:?} has duplicate class values",
                    task.task_name
                )));
            }
            if let Some(positive) = &task.positive_class {
                if !task.classes.contains(positive) {
                    return Err(Error::registry(format!(
                        "task {:?}: positive class {positive:?} not in class list",
                        task.task_name
                    )));
                }
            }
            if task.is_binary {
                if task.classes.len() != 2 {
                    return Err(Error::registry(format!(
                        "task {:?} is marked binary but has {} classes",
                        task.task_name,
                        task.classes.len()
                    )));
                }
                if task.positive_class.is_none() {
                    return Err(Error::registry(format!(
                        "binary task {:?} must designate a positive class",
                        task.task_name
                    )));
                }
            }
            for value in task.description_overrides.keys() {
                if !task.classes.contains(value) {
                    return Err(Error::registry(format!(
                        "task {:?}: description override for unknown value {value:?}",
                        task.task_name
                    )));
                }
            }
        }
        // With identifiers enabled, queries must never collide across the
        // registry even when two datasets share a description.
        let mut seen: BTreeMap<String, (DatasetId, String)> = BTreeMap::new();
        for descriptor in self.descriptors()? {
            let query = self.render_query(&descriptor.dataset, &descriptor.description, true);
            let key = (descriptor.dataset.clone(), descriptor.description.clone());
            if let Some(previous) = seen.get(&query) {
                if previous != &key {
                    return Err(Error::registry(format!(
                        "query {query:?} is ambiguous between {previous:?} and {key:?}"
                    )));
                }
            } else {
                seen.insert(query, key);
            }
        }
        Ok(())
    }

    pub fn datasets(&self) -> &[DatasetDef] {
        &self.datasets
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn separator(&self) -> &str {
        &self.separator
    }

    pub fn dataset(&self, id: &DatasetId) -> Option<&DatasetDef> {
        self.datasets.iter().find(|d| &d.id == id)
    }

    pub fn task(&self, name: &str) -> Result<&TaskSpec> {
        self.tasks
            .iter()
            .find(|t| t.task_name == name)
            .ok_or_else(|| Error::registry(format!("unknown task {name:?}")))
    }

    pub fn task_by_label_type(&self, dataset: &DatasetId, label_type: &str) -> Option<&TaskSpec> {
        self.tasks
            .iter()
            .find(|t| &t.dataset == dataset && t.label_type == label_type)
    }

    /// Render the label description for one registered class value.
    pub fn build_description(&self, task: &TaskSpec, label_value: &str) -> Result<String> {
        if !task.classes.iter().any(|c| c == label_value) {
            return Err(Error::registry(format!(
                "value {label_value:?} is not registered for task {:?}",
                task.task_name
            )));
        }
        if let Some(text) = task.description_overrides.get(label_value) {
            return Ok(text.clone());
        }
        let description = match task.rule {
            DescriptionRule::LabelName => task.label_type.to_lowercase(),
            DescriptionRule::Value => label_value.to_lowercase(),
            DescriptionRule::TypedValue => format!(
                "{}: {}",
                task.label_type.to_lowercase(),
                label_value.to_lowercase()
            ),
            DescriptionRule::CategoryAgainstWomen => {
                format!("{} (against women)", strip_numbering(label_value).to_lowercase())
            }
        };
        if description.is_empty() {
            return Err(Error::registry(format!(
                "task {:?}: empty description for value {label_value:?}",
                task.task_name
            )));
        }
        Ok(description)
    }

    /// The label descriptor for one registered class value.
    pub fn descriptor(&self, task: &TaskSpec, label_value: &str) -> Result<LabelDescriptor> {
        Ok(LabelDescriptor {
            dataset: task.dataset.clone(),
            label_type: task.label_type.clone(),
            label_value: label_value.to_string(),
            description: self.build_description(task, label_value)?,
        })
    }

    /// Every registered class of every task, each with exactly one
    /// descriptor, in registry order.
    pub fn descriptors(&self) -> Result<Vec<LabelDescriptor>> {
        let mut all = Vec::new();
        for task in &self.tasks {
            for value in &task.classes {
                all.push(self.descriptor(task, value)?);
            }
        }
        Ok(all)
    }

    /// The first sequence fed to the model: the dataset identifier
    /// concatenated with the description, or the bare description.
    pub fn render_query(
        &self,
        dataset: &DatasetId,
        description: &str,
        use_dataset_identifier: bool,
    ) -> String {
        if use_dataset_identifier {
            format!("{}{}{}", dataset.as_str(), self.separator, description)
        } else {
            description.to_string()
        }
    }

    /// Stable content hash of the taxonomy, recorded in checkpoints so a
    /// model is never silently used with a different registry.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("registry serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}
