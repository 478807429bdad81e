//! Macro-F1, per-class F1, normalized confusion matrices, multi-seed
//! aggregation, and report emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_aligned(predictions: &[String], golds: &[String], classes: &[String]) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::data("cannot evaluate an empty prediction set".to_string()));
    }
    if predictions.len() != golds.len() {
        return Err(Error::data(format!(
            "{} predictions vs {} golds",
            predictions.len(),
            golds.len()
        )));
    }
    for label in predictions.iter().chain(golds) {
        if !classes.iter().any(|c| c == label) {
            return Err(Error::data(format!("label {label:?} not in class set")));
        }
    }
    Ok(())
}

/// Per-class one-vs-rest F1. A class with no true positives, false
/// positives, or false negatives (never predicted, never gold) scores 0,
/// which penalizes models that ignore scarce classes.
pub fn per_class_f1(
    predictions: &[String],
    golds: &[String],
    classes: &[String],
) -> Result<BTreeMap<String, f64>> {
    check_aligned(predictions, golds, classes)?;
    let mut scores = BTreeMap::new();
    for class in classes {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (pred, gold) in predictions.iter().zip(golds) {
            match (pred == class, gold == class) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let denominator = 2 * tp + fp + fn_;
        let f1 = if denominator == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denominator as f64
        };
        scores.insert(class.clone(), f1);
    }
    Ok(scores)
}

/// Unweighted mean of per-class F1 over all classes in `classes`, present
/// in the data or not.
pub fn macro_f1(predictions: &[String], golds: &[String], classes: &[String]) -> Result<f64> {
    let scores = per_class_f1(predictions, golds, classes)?;
    Ok(scores.values().sum::<f64>() / classes.len() as f64)
}

/// Raw confusion counts; cell (i, j) counts gold class i predicted as j.
pub fn confusion_counts(
    predictions: &[String],
    golds: &[String],
    classes: &[String],
) -> Result<Vec<Vec<u64>>> {
    check_aligned(predictions, golds, classes)?;
    let index: BTreeMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut matrix = vec![vec![0u64; classes.len()]; classes.len()];
    for (pred, gold) in predictions.iter().zip(golds) {
        matrix[index[gold.as_str()]][index[pred.as_str()]] += 1;
    }
    Ok(matrix)
}

/// Confusion matrix; with `normalize` each row is divided by its support,
/// and zero-support rows stay all-zero.
pub fn confusion_matrix(
    predictions: &[String],
    golds: &[String],
    classes: &[String],
    normalize: bool,
) -> Result<Vec<Vec<f64>>> {
    let counts = confusion_counts(predictions, golds, classes)?;
    Ok(counts
        .into_iter()
        .map(|row| {
            let support: u64 = row.iter().sum();
            row.into_iter()
                .map(|cell| {
                    if normalize && support > 0 {
                        cell as f64 / support as f64
                    } else {
                        cell as f64
                    }
                })
                .collect()
        })
        .collect())
}

/// Everything the evaluation of one task on one run produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub task_name: String,
    pub macro_f1: f64,
    pub per_class_f1: BTreeMap<String, f64>,
    /// Row-normalized confusion matrix in class order.
    pub confusion: Vec<Vec<f64>>,
    pub support: BTreeMap<String, u64>,
    pub seed: u64,
    /// Decision threshold used for binary tasks, if any.
    pub threshold: Option<f64>,
}

/// Evaluate one task: macro-F1, per-class F1, row-normalized confusion, and
/// per-class support.
pub fn evaluate_task(
    task_name: &str,
    predictions: &[String],
    golds: &[String],
    classes: &[String],
    seed: u64,
) -> Result<EvalReport> {
    let per_class = per_class_f1(predictions, golds, classes)?;
    let macro_score = per_class.values().sum::<f64>() / classes.len() as f64;
    let confusion = confusion_matrix(predictions, golds, classes, true)?;
    let mut support = BTreeMap::new();
    for class in classes {
        let count = golds.iter().filter(|g| *g == class).count() as u64;
        support.insert(class.clone(), count);
    }
    Ok(EvalReport {
        task_name: task_name.to_string(),
        macro_f1: macro_score,
        per_class_f1: per_class,
        confusion,
        support,
        seed,
        threshold: None,
    })
}

/// One row of the ablation table: per-task means over seeds plus their
/// unweighted average.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    pub task_means: BTreeMap<String, f64>,
    pub average: f64,
    pub seeds: Vec<u64>,
}

/// Aggregate per-seed reports of one setting: arithmetic mean of macro-F1
/// per task; the average column is the unweighted mean over tasks.
pub fn aggregate_runs(setting: &str, reports: &[EvalReport]) -> Result<AblationRow> {
    if reports.is_empty() {
        return Err(Error::data(format!("no reports to aggregate for {setting:?}")));
    }
    let mut by_task: BTreeMap<&str, Vec<&EvalReport>> = BTreeMap::new();
    for report in reports {
        by_task.entry(&report.task_name).or_default().push(report);
    }
    let mut task_means = BTreeMap::new();
    for (task, group) in &by_task {
        let classes: Vec<&String> = group[0].per_class_f1.keys().collect();
        for report in group {
            let these: Vec<&String> = report.per_class_f1.keys().collect();
            if these != classes {
                return Err(Error::data(format!(
                    "inconsistent class sets for task {task:?} across seeds"
                )));
            }
        }
        let mean = group.iter().map(|r| r.macro_f1).sum::<f64>() / group.len() as f64;
        task_means.insert((*task).to_string(), mean);
    }
    let average = task_means.values().sum::<f64>() / task_means.len() as f64;
    let mut seeds: Vec<u64> = reports.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    Ok(AblationRow {
        setting: setting.to_string(),
        task_means,
        average,
        seeds,
    })
}

/// Element-wise mean of same-shape confusion matrices.
pub fn mean_confusion(matrices: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::data("no confusion matrices to average".to_string()))?;
    let rows = first.len();
    let mut mean = vec![vec![0.0; rows]; rows];
    for matrix in matrices {
        if matrix.len() != rows || matrix.iter().any(|r| r.len() != rows) {
            return Err(Error::data("confusion matrix shapes differ".to_string()));
        }
        for (target, row) in mean.iter_mut().zip(matrix) {
            for (slot, cell) in target.iter_mut().zip(row) {
                *slot += cell;
            }
        }
    }
    let n = matrices.len() as f64;
    for row in &mut mean {
        for cell in row {
            *cell /= n;
        }
    }
    Ok(mean)
}

/// The aggregated results a run or ablation suite hands to report emission.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ResultsLedger {
    pub rows: Vec<AblationRow>,
    /// task name → (class order, seed-averaged row-normalized confusion).
    pub confusions: BTreeMap<String, (Vec<String>, Vec<Vec<f64>>)>,
}

fn render_ablation_csv(rows: &[AblationRow], tasks: &[String]) -> String {
    let mut out = String::from("setting");
    for task in tasks {
        let _ = write!(out, ",{task}");
    }
    out.push_str(",average\n");
    for row in rows {
        out.push_str(&row.setting);
        for task in tasks {
            match row.task_means.get(task) {
                Some(score) => {
                    let _ = write!(out, ",{score:.6}");
                }
                None => out.push(','),
            }
        }
        let _ = writeln!(out, ",{:.6}", row.average);
    }
    out
}

fn render_ablation_markdown(rows: &[AblationRow], tasks: &[String]) -> String {
    let mut out = String::from("| setting |");
    for task in tasks {
        let _ = write!(out, " {task} |");
    }
    out.push_str(" average |\n|---|");
    for _ in tasks {
        out.push_str("---|");
    }
    out.push_str("---|\n");
    for row in rows {
        let _ = write!(out, "| {} |", row.setting);
        for task in tasks {
            match row.task_means.get(task) {
                Some(score) => {
                    let _ = write!(out, " {score:.3} |");
                }
                None => out.push_str(" - |"),
            }
        }
        let _ = writeln!(out, " {:.3} |", row.average);
    }
    out
}

/// CSV rendering of a confusion matrix (gold rows, predicted columns).
pub fn confusion_csv(classes: &[String], matrix: &[Vec<f64>]) -> String {
    let mut out = String::from("gold\\pred");
    for class in classes {
        let _ = write!(out, ",{}", class.replace(',', ";"));
    }
    out.push('\n');
    for (class, row) in classes.iter().zip(matrix) {
        out.push_str(&class.replace(',', ";"));
        for cell in row {
            let _ = write!(out, ",{cell:.6}");
        }
        out.push('\n');
    }
    out
}

/// Grayscale-to-heat rendering of a row-normalized confusion matrix.
fn render_heatmap(matrix: &[Vec<f64>], path: &Path) -> Result<()> {
    const CELL: u32 = 32;
    let n = matrix.len() as u32;
    if n == 0 {
        return Ok(());
    }
    let mut img = image::RgbImage::new(n * CELL, n * CELL);
    for (i, row) in matrix.iter().enumerate() {
        for (j, &value) in row.iter().enumerate() {
            let v = value.clamp(0.0, 1.0);
            let r = (255.0 * v) as u8;
            let b = (255.0 * (1.0 - v)) as u8;
            let pixel = image::Rgb([r, 64, b]);
            for dy in 0..CELL {
                for dx in 0..CELL {
                    img.put_pixel(j as u32 * CELL + dx, i as u32 * CELL + dy, pixel);
                }
            }
        }
    }
    img.save(path)
        .map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))
}

/// Write the ablation table (CSV + markdown) and one confusion CSV (plus a
/// small heatmap PNG) per task. The file set and bytes are deterministic
/// given the ledger; heatmaps are best-effort, CSVs are canonical.
pub fn emit_reports(ledger: &ResultsLedger, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if ledger.rows.is_empty() {
        return Err(Error::data("cannot emit reports from an empty ledger".to_string()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut tasks: Vec<String> = Vec::new();
    for row in &ledger.rows {
        for task in row.task_means.keys() {
            if !tasks.contains(task) {
                tasks.push(task.clone());
            }
        }
    }

    let mut written = Vec::new();
    let csv_path = out_dir.join("ablation.csv");
    std::fs::write(&csv_path, render_ablation_csv(&ledger.rows, &tasks))
        .map_err(|e| Error::io(&csv_path, e))?;
    written.push(csv_path);

    let md_path = out_dir.join("ablation.md");
    std::fs::write(&md_path, render_ablation_markdown(&ledger.rows, &tasks))
        .map_err(|e| Error::io(&md_path, e))?;
    written.push(md_path);

    for (task, (classes, matrix)) in &ledger.confusions {
        let safe = task.replace(['/', ' '], "_");
        let path = out_dir.join(format!("confusion_{safe}.csv"));
        std::fs::write(&path, confusion_csv(classes, matrix))
            .map_err(|e| Error::io(&path, e))?;
        written.push(path);

        let png = out_dir.join(format!("confusion_{safe}.png"));
        match render_heatmap(matrix, &png) {
            Ok(()) => written.push(png),
            Err(e) => log::warn!("skipping heatmap for {task}: {e}"),
        }
    }
    Ok(written)
}
