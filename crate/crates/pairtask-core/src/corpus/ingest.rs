//! Loading source datasets into the unified record schema.
//!
//! Each source file comes with a mapping config that names its format and
//! the columns holding the id, text, split, and labels. Rows that cannot be
//! mapped (unregistered label value, empty text, bad split) are rejected and
//! counted rather than aborting the whole file; structural problems (missing
//! file, unknown column, unregistered label type) are hard errors.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_text, AnnotatedRecord, Split};
use crate::error::{Error, Result};
use crate::schema::{DatasetId, Registry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Csv,
    Tsv,
    Jsonl,
}

/// Column mapping for one source file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingConfig {
    pub format: SourceFormat,
    /// Column holding a stable record id; row numbers are used when absent.
    #[serde(default)]
    pub id_column: Option<String>,
    pub text_column: String,
    /// Fixed split for every row of the file. Exactly one of `split` /
    /// `split_column` must be given.
    #[serde(default)]
    pub split: Option<String>,
    #[serde(default)]
    pub split_column: Option<String>,
    /// label-type name → source column.
    pub labels: BTreeMap<String, String>,
    /// Raw values that mean "this label type does not apply" (e.g. "none").
    /// Empty cells are always treated as absent.
    #[serde(default)]
    pub absent_values: Vec<String>,
    /// Per label type: raw source value → registered class value.
    #[serde(default)]
    pub value_map: BTreeMap<String, BTreeMap<String, String>>,
}

impl MappingConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mapping: MappingConfig = toml::from_str(&raw)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        mapping.validate()?;
        Ok(mapping)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.split, &self.split_column) {
            (Some(_), Some(_)) => Err(Error::config(
                "mapping sets both `split` and `split_column`",
            )),
            (None, None) => Err(Error::config(
                "mapping must set `split` or `split_column`",
            )),
            (Some(s), None) => Split::parse(s)
                .map(|_| ())
                .map_err(|_| Error::config(format!("invalid fixed split {s:?}"))),
            (None, Some(_)) => Ok(()),
        }?;
        if self.labels.is_empty() {
            return Err(Error::config("mapping declares no label columns"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RejectedRow {
    /// 1-based data row number (header rows excluded).
    pub row: usize,
    pub reason: String,
}

/// Outcome of one ingestion run; `accepted + rejected.len() == total_rows`.
#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub dataset: DatasetId,
    pub source: String,
    pub total_rows: usize,
    pub accepted: usize,
    pub rejected: Vec<RejectedRow>,
}

/// One source row, already projected onto named fields.
struct Row {
    values: BTreeMap<String, String>,
}

impl Row {
    fn get(&self, column: &str) -> Option<&str> {
        self.values.get(column).map(String::as_str)
    }
}

fn read_rows(path: &Path, mapping: &MappingConfig) -> Result<Vec<Row>> {
    match mapping.format {
        SourceFormat::Csv | SourceFormat::Tsv => {
            let delimiter = if mapping.format == SourceFormat::Csv {
                b','
            } else {
                b'\t'
            };
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let mut reader = csv::ReaderBuilder::new()
                .delimiter(delimiter)
                .flexible(false)
                .from_reader(BufReader::new(file));
            let headers: Vec<String> = reader
                .headers()
                .map_err(|e| Error::data(format!("{}: {e}", path.display())))?
                .iter()
                .map(str::to_string)
                .collect();
            for column in referenced_columns(mapping) {
                if !headers.iter().any(|h| h == column) {
                    return Err(Error::data(format!(
                        "{}: unknown column {column:?} (header: {headers:?})",
                        path.display()
                    )));
                }
            }
            let mut rows = Vec::new();
            for record in reader.records() {
                let record = record.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
                let values = headers
                    .iter()
                    .cloned()
                    .zip(record.iter().map(str::to_string))
                    .collect();
                rows.push(Row { values });
            }
            Ok(rows)
        }
        SourceFormat::Jsonl => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let mut rows = Vec::new();
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| {
                    Error::data(format!("{}:{}: invalid json: {e}", path.display(), i + 1))
                })?;
                let object = value.as_object().ok_or_else(|| {
                    Error::data(format!("{}:{}: row is not an object", path.display(), i + 1))
                })?;
                let mut values = BTreeMap::new();
                for (k, v) in object {
                    let text = match v {
                        serde_json::Value::String(s) => s.clone(),
                        serde_json::Value::Null => String::new(),
                        other => other.to_string(),
                    };
                    values.insert(k.clone(), text);
                }
                rows.push(Row { values });
            }
            if let Some(first) = rows.first() {
                if first.get(&mapping.text_column).is_none() {
                    return Err(Error::data(format!(
                        "{}: unknown column {:?} in first row",
                        path.display(),
                        mapping.text_column
                    )));
                }
            }
            Ok(rows)
        }
    }
}

fn referenced_columns(mapping: &MappingConfig) -> Vec<&str> {
    let mut columns = vec![mapping.text_column.as_str()];
    if let Some(c) = &mapping.id_column {
        columns.push(c);
    }
    if let Some(c) = &mapping.split_column {
        columns.push(c);
    }
    columns.extend(mapping.labels.values().map(String::as_str));
    columns
}

/// Ingest one source file: one [`AnnotatedRecord`] per accepted row, text
/// already normalized, labels mapped onto registered class values.
pub fn load_dataset(
    source_path: &Path,
    dataset: &DatasetId,
    mapping: &MappingConfig,
    registry: &Registry,
) -> Result<(Vec<AnnotatedRecord>, IngestReport)> {
    mapping.validate()?;
    registry
        .dataset(dataset)
        .ok_or_else(|| Error::registry(format!("unknown dataset {:?}", dataset.as_str())))?;
    // Every mapped label type must belong to a task registered for this
    // dataset; anything else is a config mistake, not a data problem.
    for label_type in mapping.labels.keys() {
        if registry.task_by_label_type(dataset, label_type).is_none() {
            return Err(Error::registry(format!(
                "label type {label_type:?} is not registered for dataset {:?}",
                dataset.as_str()
            )));
        }
    }

    let fixed_split = mapping.split.as_deref().map(Split::parse).transpose()?;
    let rows = read_rows(source_path, mapping)?;

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    let total_rows = rows.len();

    'rows: for (i, row) in rows.iter().enumerate() {
        let row_no = i + 1;
        let reject = |reason: String, rejected: &mut Vec<RejectedRow>| {
            rejected.push(RejectedRow {
                row: row_no,
                reason,
            });
        };

        let raw_text = row.get(&mapping.text_column).unwrap_or("");
        let text = normalize_text(raw_text);
        if text.trim().is_empty() {
            reject("empty text after normalization".to_string(), &mut rejected);
            continue;
        }

        let split = match (&fixed_split, &mapping.split_column) {
            (Some(s), _) => *s,
            (None, Some(column)) => {
                let raw = row.get(column).unwrap_or("");
                match Split::parse(raw) {
                    Ok(s) => s,
                    Err(_) => {
                        reject(format!("unknown split value {raw:?}"), &mut rejected);
                        continue;
                    }
                }
            }
            (None, None) => unreachable!("validated above"),
        };

        let id = match &mapping.id_column {
            Some(column) => {
                let raw = row.get(column).unwrap_or("").trim();
                if raw.is_empty() {
                    reject("empty id".to_string(), &mut rejected);
                    continue;
                }
                raw.to_string()
            }
            None => row_no.to_string(),
        };

        let mut labels = BTreeMap::new();
        for (label_type, column) in &mapping.labels {
            let raw = row.get(column).unwrap_or("").trim();
            if raw.is_empty() || mapping.absent_values.iter().any(|v| v == raw) {
                continue;
            }
            let value = mapping
                .value_map
                .get(label_type)
                .and_then(|m| m.get(raw))
                .cloned()
                .unwrap_or_else(|| raw.to_string());
            let task = registry
                .task_by_label_type(dataset, label_type)
                .expect("checked above");
            if !task.classes.iter().any(|c| *c == value) {
                reject(
                    format!("unregistered value {value:?} for label type {label_type:?}"),
                    &mut rejected,
                );
                continue 'rows;
            }
            labels.insert(label_type.clone(), value);
        }
        if labels.is_empty() {
            reject("no labels present".to_string(), &mut rejected);
            continue;
        }

        records.push(AnnotatedRecord {
            id,
            text,
            dataset: dataset.clone(),
            labels,
            split,
        });
    }

    let report = IngestReport {
        dataset: dataset.clone(),
        source: source_path.display().to_string(),
        total_rows,
        accepted: records.len(),
        rejected,
    };
    Ok((records, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::test_fixtures::edos_like_registry;

    fn edos_mapping() -> MappingConfig {
        toml::from_str(
            r#"
            format = "csv"
            id_column = "rewire_id"
            text_column = "text"
            split_column = "split"
            absent_values = ["none"]

            [labels]
            task_a = "label_sexist"
            task_b = "label_category"
            "#,
        )
        .unwrap()
    }

    #[test]
    fn maps_rows_onto_records() {
        let registry = edos_like_registry();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edos.csv");
        std::fs::write(
            &path,
            "rewire_id,text,split,label_sexist,label_category\n\
             a1,\"women are @x inferior\",train,sexist,2. derogation\n\
             a2,nice weather today,train,not sexist,none\n",
        )
        .unwrap();

        let dataset = DatasetId::new("EDOS").unwrap();
        let (records, report) = load_dataset(&path, &dataset, &edos_mapping(), &registry).unwrap();
        assert_eq!(report.total_rows, 2);
        assert_eq!(report.accepted, 2);
        assert!(report.rejected.is_empty());

        assert_eq!(records[0].id, "a1");
        assert_eq!(records[0].text, "women are [USER] inferior");
        assert_eq!(records[0].label("task_a"), Some("sexist"));
        assert_eq!(records[0].label("task_b"), Some("2. derogation"));
        assert_eq!(records[1].label("task_a"), Some("not sexist"));
        assert_eq!(records[1].label("task_b"), None);
    }

    #[test]
    fn rejects_rows_with_unregistered_values() {
        let registry = edos_like_registry();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edos.csv");
        std::fs::write(
            &path,
            "rewire_id,text,split,label_sexist,label_category\n\
             a1,some text,train,sexist,2. derogation\n\
             a2,other text,train,sort of sexist,none\n\
             a3,,train,sexist,none\n",
        )
        .unwrap();

        let dataset = DatasetId::new("EDOS").unwrap();
        let (records, report) = load_dataset(&path, &dataset, &edos_mapping(), &registry).unwrap();
        assert_eq!(report.total_rows, 3);
        assert_eq!(report.accepted, 1);
        assert_eq!(report.rejected.len(), 2);
        assert_eq!(report.rejected[0].row, 2);
        assert!(report.rejected[0].reason.contains("sort of sexist"));
        assert_eq!(report.rejected[1].row, 3);
        assert_eq!(records.len(), 1);
        assert_eq!(report.accepted + report.rejected.len(), report.total_rows);
    }

    #[test]
    fn empty_file_yields_empty_sequence() {
        let registry = edos_like_registry();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "rewire_id,text,split,label_sexist,label_category\n").unwrap();

        let dataset = DatasetId::new("EDOS").unwrap();
        let (records, report) = load_dataset(&path, &dataset, &edos_mapping(), &registry).unwrap();
        assert!(records.is_empty());
        assert_eq!(report.total_rows, 0);
        assert!(report.rejected.is_empty());
    }

    #[test]
    fn unknown_column_is_a_hard_error() {
        let registry = edos_like_registry();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edos.csv");
        std::fs::write(&path, "id,body\n1,x\n").unwrap();

        let dataset = DatasetId::new("EDOS").unwrap();
        let err = load_dataset(&path, &dataset, &edos_mapping(), &registry).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let registry = edos_like_registry();
        let dataset = DatasetId::new("EDOS").unwrap();
        let err = load_dataset(
            Path::new("/nonexistent/file.csv"),
            &dataset,
            &edos_mapping(),
            &registry,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn jsonl_rows_with_sparse_labels() {
        let registry = edos_like_registry();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edos.jsonl");
        std::fs::write(
            &path,
            r#"{"rewire_id":"j1","text":"text one","split":"dev","label_sexist":"sexist","label_category":"3. animosity"}
{"rewire_id":"j2","text":"text two","split":"dev","label_sexist":"not sexist"}
"#,
        )
        .unwrap();

        let mut mapping = edos_mapping();
        mapping.format = SourceFormat::Jsonl;
        let dataset = DatasetId::new("EDOS").unwrap();
        let (records, report) = load_dataset(&path, &dataset, &mapping, &registry).unwrap();
        assert_eq!(report.accepted, 2);
        assert_eq!(records[0].label("task_b"), Some("3. animosity"));
        assert_eq!(records[1].label("task_b"), None);
        assert_eq!(records[1].split, Split::Dev);
    }
}
