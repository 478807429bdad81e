//! Validation of ingested label distributions against published statistics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::AnnotatedRecord;
use crate::error::{Error, Result};
use crate::schema::DatasetId;

/// Published distribution of one label type in one dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetStats {
    pub dataset: DatasetId,
    pub label_type: String,
    /// class value → fraction of the dataset, each in [0, 1].
    pub value_frequencies: BTreeMap<String, f64>,
    pub size: u64,
    /// Allowed deviation of the fraction sum from 1.0. Published tables are
    /// often rounded too coarsely to sum exactly; the default is strict.
    #[serde(default = "default_sum_tolerance")]
    pub sum_tolerance: f64,
}

fn default_sum_tolerance() -> f64 {
    1e-6
}

impl DatasetStats {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::data(format!(
                "stats for {}/{} declare size 0",
                self.dataset.as_str(),
                self.label_type
            )));
        }
        let mut sum = 0.0;
        for (value, fraction) in &self.value_frequencies {
            if !(0.0..=1.0).contains(fraction) {
                return Err(Error::data(format!(
                    "stats for {}/{}: fraction {fraction} of {value:?} outside [0, 1]",
                    self.dataset.as_str(),
                    self.label_type
                )));
            }
            sum += fraction;
        }
        if (sum - 1.0).abs() > self.sum_tolerance {
            return Err(Error::data(format!(
                "stats for {}/{}: fractions sum to {sum}, not 1.0 ± {}",
                self.dataset.as_str(),
                self.label_type,
                self.sum_tolerance
            )));
        }
        Ok(())
    }
}

/// File holding a list of [`DatasetStats`] entries.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsFile {
    pub stats: Vec<DatasetStats>,
}

impl StatsFile {
    pub fn from_path(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: StatsFile = toml::from_str(&raw)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        for stats in &file.stats {
            stats.validate()?;
        }
        Ok(file)
    }

    pub fn lookup(&self, dataset: &DatasetId, label_type: &str) -> Option<&DatasetStats> {
        self.stats
            .iter()
            .find(|s| &s.dataset == dataset && s.label_type == label_type)
    }
}

/// Observed-vs-expected comparison for one class value.
#[derive(Debug, Clone, Serialize)]
pub struct DistributionCheck {
    pub value: String,
    pub expected: f64,
    pub observed: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DistributionReport {
    pub dataset: DatasetId,
    pub label_type: String,
    pub observed_size: usize,
    pub tolerance: f64,
    pub checks: Vec<DistributionCheck>,
    pub pass: bool,
}

/// Compare the observed distribution of `expected.label_type` over `records`
/// against the published one. A value passes when the absolute difference of
/// fractions is within `tolerance`; the report always lists both numbers.
/// An empty record set fails with observed size 0.
pub fn validate_distribution(
    records: &[AnnotatedRecord],
    expected: &DatasetStats,
    tolerance: f64,
) -> DistributionReport {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut observed_size = 0usize;
    for record in records {
        if record.dataset != expected.dataset {
            continue;
        }
        if let Some(value) = record.label(&expected.label_type) {
            *counts.entry(value).or_default() += 1;
            observed_size += 1;
        }
    }

    let mut checks = Vec::new();
    let mut all_values: Vec<&str> = expected.value_frequencies.keys().map(String::as_str).collect();
    for observed in counts.keys() {
        if !all_values.contains(observed) {
            all_values.push(observed);
        }
    }
    for value in all_values {
        let expected_fraction = expected.value_frequencies.get(value).copied().unwrap_or(0.0);
        let observed_fraction = if observed_size == 0 {
            0.0
        } else {
            counts.get(value).copied().unwrap_or(0) as f64 / observed_size as f64
        };
        let pass = observed_size > 0 && (observed_fraction - expected_fraction).abs() <= tolerance;
        checks.push(DistributionCheck {
            value: value.to_string(),
            expected: expected_fraction,
            observed: observed_fraction,
            pass,
        });
    }

    let pass = observed_size > 0 && checks.iter().all(|c| c.pass);
    DistributionReport {
        dataset: expected.dataset.clone(),
        label_type: expected.label_type.clone(),
        observed_size,
        tolerance,
        checks,
        pass,
    }
}
