//! `pairtask`: command-line entry point wiring ingestion, training,
//! prediction, evaluation, and the ablation runner.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 training/backend
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pairtask_core::corpus::{
    load_dataset, normalize_text, validate_distribution, MappingConfig, StatsFile,
};
use pairtask_core::schema::{DatasetId, Registry};
use pairtask_core::{Error, Result};

mod run;

#[derive(Parser)]
#[command(
    name = "pairtask",
    version,
    about = "Multi-task text classification as binary pairwise classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a source dataset into canonical JSONL records.
    Ingest(IngestArgs),
    /// Run the multi-phase training pipeline from a run config.
    Train(TrainArgs),
    /// Predict task labels for a JSONL file of texts.
    Predict(PredictArgs),
    /// Score predictions against gold records.
    Evaluate(EvaluateArgs),
    /// Run an ablation suite: one pipeline per setting and seed.
    Ablate(AblateArgs),
    /// Check a run config without running anything.
    ValidateConfig(ValidateConfigArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Dataset id registered in the registry (e.g. EDOS).
    #[arg(long)]
    dataset: String,
    /// Source file (CSV/TSV/JSONL per the mapping config).
    #[arg(long = "in")]
    input: PathBuf,
    /// Output path for canonical JSONL records.
    #[arg(long = "out")]
    output: PathBuf,
    /// Column-mapping config for the source file.
    #[arg(long)]
    mapping: PathBuf,
    #[arg(long, default_value = "registry/default.toml")]
    registry: PathBuf,
    /// Also validate observed label distributions against published stats.
    #[arg(long)]
    expected_stats: Option<PathBuf>,
    /// Allowed |observed - expected| fraction difference.
    #[arg(long, default_value_t = 0.01)]
    tolerance: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed instead of every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    /// Checkpoint directory (parameters + metadata).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Task to predict, by registry name.
    #[arg(long)]
    task: String,
    /// Input JSONL; each row needs "id" and "text" fields.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output JSONL of predictions.
    #[arg(long = "out")]
    output: PathBuf,
    /// Decision threshold for binary tasks (default 0.5).
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value = "registry/default.toml")]
    registry: PathBuf,
    /// Render queries without the dataset identifier prefix.
    #[arg(long)]
    no_dataset_identifier: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predictions JSONL as written by `pairtask predict`.
    #[arg(long)]
    pred: PathBuf,
    /// Gold records JSONL (canonical format).
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    task: String,
    /// Directory for report.json and the confusion CSV.
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long, default_value = "registry/default.toml")]
    registry: PathBuf,
    /// Only score gold records from this split (train/dev/test).
    #[arg(long)]
    split: Option<String>,
}

#[derive(Args)]
struct AblateArgs {
    /// Ablation suite config.
    #[arg(long)]
    suite: PathBuf,
    /// Run the per-setting pipelines in parallel.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct ValidateConfigArgs {
    #[arg(long)]
    config: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Ingest(args) => ingest(args),
        Command::Train(args) => run::train(args.config, args.seed),
        Command::Predict(args) => predict(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Ablate(args) => run::ablate(args.suite, args.parallel),
        Command::ValidateConfig(args) => validate_config(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(error.exit_code() as u8)
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::data(format!("cannot serialize report: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ingest(args: IngestArgs) -> Result<()> {
    let registry = Registry::from_path(&args.registry)?;
    let dataset = DatasetId::new(args.dataset)?;
    let mapping = MappingConfig::from_path(&args.mapping)?;
    let (records, report) = load_dataset(&args.input, &dataset, &mapping, &registry)?;
    pairtask_core::corpus::write_records(&args.output, &records)?;
    log::info!(
        "{}: {} rows, {} accepted, {} rejected -> {}",
        args.input.display(),
        report.total_rows,
        report.accepted,
        report.rejected.len(),
        args.output.display()
    );

    #[derive(serde::Serialize)]
    struct FullReport {
        ingest: pairtask_core::corpus::IngestReport,
        distribution: Vec<pairtask_core::corpus::DistributionReport>,
    }
    let mut distribution = Vec::new();
    if let Some(stats_path) = &args.expected_stats {
        let stats = StatsFile::from_path(stats_path)?;
        for entry in stats.stats.iter().filter(|s| s.dataset == dataset) {
            let report = validate_distribution(&records, entry, args.tolerance);
            log::info!(
                "distribution {}/{}: {}",
                entry.dataset.as_str(),
                entry.label_type,
                if report.pass { "pass" } else { "FAIL" }
            );
            distribution.push(report);
        }
    }
    let report_path = args.output.with_extension("report.json");
    write_json(
        &report_path,
        &FullReport {
            ingest: report,
            distribution,
        },
    )
}

fn predict(args: PredictArgs) -> Result<()> {
    use std::io::{BufRead, Write};

    let registry = Registry::from_path(&args.registry)?;
    let task = registry.task(&args.task)?.clone();
    let (encoder, meta) = pairtask_core::backend::load_encoder(&args.checkpoint)?;
    if meta.registry_fingerprint != registry.fingerprint() {
        return Err(Error::config(format!(
            "checkpoint {} was trained with a different registry",
            args.checkpoint.display()
        )));
    }
    let options = pairtask_core::schema::RenderOptions {
        dataset_identifier: !args.no_dataset_identifier,
        label_descriptions: true,
    };
    if args.threshold.is_some() && !task.is_binary {
        log::warn!("task {:?} is not binary; --threshold is ignored", task.task_name);
    }

    let input = std::fs::File::open(&args.input).map_err(|e| Error::io(&args.input, e))?;
    let output = std::fs::File::create(&args.output).map_err(|e| Error::io(&args.output, e))?;
    let mut writer = std::io::BufWriter::new(output);

    #[derive(serde::Serialize)]
    struct Row<'a> {
        id: &'a str,
        task: &'a str,
        chosen: &'a str,
        probabilities: &'a std::collections::BTreeMap<String, f64>,
        threshold: Option<f64>,
    }

    let mut count = 0usize;
    for (i, line) in std::io::BufReader::new(input).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&args.input, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: serde_json::Value = serde_json::from_str(&line).map_err(|e| {
            Error::data(format!("{}:{}: invalid json: {e}", args.input.display(), i + 1))
        })?;
        let id = row
            .get("id")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .unwrap_or_else(|| (i + 1).to_string());
        let text = row.get("text").and_then(|v| v.as_str()).ok_or_else(|| {
            Error::data(format!("{}:{}: row has no text", args.input.display(), i + 1))
        })?;
        // Normalization is idempotent, so canonical records pass through
        // unchanged and raw text gets cleaned up.
        let text = normalize_text(text);
        let prediction = if task.is_binary {
            pairtask_core::inference::predict_binary(
                encoder.as_ref(),
                &text,
                &task,
                &registry,
                options,
                args.threshold.unwrap_or(0.5),
            )?
        } else {
            pairtask_core::inference::predict_multiclass(
                encoder.as_ref(),
                &text,
                &task,
                &registry,
                options,
            )?
        };
        let line = serde_json::to_string(&Row {
            id: &id,
            task: &task.task_name,
            chosen: &prediction.chosen,
            probabilities: &prediction.probabilities,
            threshold: prediction.threshold_used,
        })
        .map_err(|e| Error::data(format!("cannot serialize prediction: {e}")))?;
        writeln!(writer, "{line}").map_err(|e| Error::io(&args.output, e))?;
        count += 1;
    }
    writer.flush().map_err(|e| Error::io(&args.output, e))?;
    log::info!("wrote {count} predictions to {}", args.output.display());
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    use std::io::BufRead;

    let registry = Registry::from_path(&args.registry)?;
    let task = registry.task(&args.task)?.clone();
    let split = args
        .split
        .as_deref()
        .map(pairtask_core::corpus::Split::parse)
        .transpose()?;
    let mut gold_records = pairtask_core::corpus::read_records(&args.gold)?;
    if let Some(split) = split {
        gold_records.retain(|r| r.split == split);
    }

    let mut predictions_by_id = std::collections::BTreeMap::new();
    let file = std::fs::File::open(&args.pred).map_err(|e| Error::io(&args.pred, e))?;
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&args.pred, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: serde_json::Value = serde_json::from_str(&line).map_err(|e| {
            Error::data(format!("{}:{}: invalid json: {e}", args.pred.display(), i + 1))
        })?;
        let id = row
            .get("id")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::data(format!("{}:{}: row has no id", args.pred.display(), i + 1)))?;
        let chosen = row.get("chosen").and_then(|v| v.as_str()).ok_or_else(|| {
            Error::data(format!("{}:{}: row has no chosen class", args.pred.display(), i + 1))
        })?;
        predictions_by_id.insert(id.to_string(), chosen.to_string());
    }

    let mut predictions = Vec::new();
    let mut golds = Vec::new();
    for record in gold_records.iter().filter(|r| r.dataset == task.dataset) {
        let Some(gold) = record.label(&task.label_type) else {
            continue;
        };
        let predicted = predictions_by_id
            .get(&record.id)
            .ok_or_else(|| Error::data(format!("no prediction for gold record {:?}", record.id)))?;
        predictions.push(predicted.clone());
        golds.push(gold.to_string());
    }
    let report = pairtask_core::evaluation::evaluate_task(
        &task.task_name,
        &predictions,
        &golds,
        &task.classes,
        0,
    )?;
    log::info!(
        "task {}: macro-F1 {:.4} over {} items",
        task.task_name,
        report.macro_f1,
        golds.len()
    );

    std::fs::create_dir_all(&args.output).map_err(|e| Error::io(&args.output, e))?;
    write_json(&args.output.join("report.json"), &report)?;
    let confusion_path = args
        .output
        .join(format!("confusion_{}.csv", task.task_name.replace(['/', ' '], "_")));
    std::fs::write(
        &confusion_path,
        pairtask_core::evaluation::confusion_csv(&task.classes, &report.confusion),
    )
    .map_err(|e| Error::io(&confusion_path, e))?;
    Ok(())
}

fn validate_config(args: ValidateConfigArgs) -> Result<()> {
    let base = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let config = pairtask_core::config::RunConfig::from_path(&args.config)?;
    let resolved = config.resolve(&base)?;
    log::info!(
        "config OK: {} phases, {} seeds, {} report tasks, backend {:?}",
        resolved.plan.phases.len(),
        resolved.plan.seeds.len(),
        resolved.plan.report_tasks.len(),
        resolved.backend.kind
    );
    println!("config OK");
    Ok(())
}
