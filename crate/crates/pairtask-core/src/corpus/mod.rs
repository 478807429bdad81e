//! Unified record schema, text normalization, and ingestion of
//! heterogeneous source datasets.

mod ingest;
mod normalize;
mod validate;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::DatasetId;

pub use ingest::{load_dataset, IngestReport, MappingConfig, RejectedRow, SourceFormat};
pub use normalize::normalize_text;
pub use validate::{
    validate_distribution, DatasetStats, DistributionCheck, DistributionReport, StatsFile,
};

/// Which partition of a dataset a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" | "val" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::data(format!("unknown split value {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Dev => write!(f, "dev"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One text with its per-task gold labels and source-dataset provenance.
///
/// `labels` maps a registered label-type name to the gold label value; a
/// label type that does not apply to the record (e.g. category labels on a
/// record outside the labeled subset) is simply absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedRecord {
    pub id: String,
    pub text: String,
    pub dataset: DatasetId,
    pub labels: BTreeMap<String, String>,
    pub split: Split,
}

impl AnnotatedRecord {
    pub fn label(&self, label_type: &str) -> Option<&str> {
        self.labels.get(label_type).map(String::as_str)
    }
}

/// Read canonical records from a JSONL file (one record per line).
pub fn read_records(path: &Path) -> Result<Vec<AnnotatedRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotatedRecord = serde_json::from_str(&line).map_err(|e| {
            Error::data(format!("{}:{}: invalid record: {e}", path.display(), i + 1))
        })?;
        if record.text.is_empty() {
            return Err(Error::data(format!(
                "{}:{}: record {} has empty text",
                path.display(),
                i + 1,
                record.id
            )));
        }
        records.push(record);
    }
    Ok(records)
}

/// Write canonical records as JSONL.
pub fn write_records(path: &Path, records: &[AnnotatedRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::data(format!("cannot serialize record {}: {e}", record.id)))?;
        writeln!(writer, "{line}").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::DatasetId;

    fn record(id: &str) -> AnnotatedRecord {
        AnnotatedRecord {
            id: id.to_string(),
            text: "some text".to_string(),
            dataset: DatasetId::new("EDOS").unwrap(),
            labels: BTreeMap::from([("task_a".to_string(), "sexist".to_string())]),
            split: Split::Train,
        }
    }

    #[test]
    fn split_parses_aliases_and_rejects_unknown() {
        assert_eq!(Split::parse("train").unwrap(), Split::Train);
        assert_eq!(Split::parse("VAL").unwrap(), Split::Dev);
        assert_eq!(Split::parse(" test ").unwrap(), Split::Test);
        assert!(Split::parse("holdout").is_err());
    }

    #[test]
    fn records_round_trip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let records = vec![record("a"), record("b")];
        write_records(&path, &records).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn reading_rejects_empty_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let mut bad = record("a");
        bad.text = String::new();
        std::fs::write(&path, serde_json::to_string(&bad).unwrap() + "\n").unwrap();
        assert!(read_records(&path).is_err());
    }
}
