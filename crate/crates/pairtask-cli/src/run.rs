//! The train and ablate subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use pairtask_core::config::{apply_setting, RunConfig, SuiteConfig};
use pairtask_core::evaluation::{
    aggregate_runs, emit_reports, mean_confusion, EvalReport, ResultsLedger,
};
use pairtask_core::trainer::{run_pipeline, run_pipeline_for_seed, write_ledger, SeedOutcome};
use pairtask_core::{Error, Result};

fn config_base(path: &Path) -> PathBuf {
    path.parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

pub fn train(config_path: PathBuf, seed: Option<u64>) -> Result<()> {
    let config = RunConfig::from_path(&config_path)?;
    let mut resolved = config.resolve(&config_base(&config_path))?;
    if let Some(seed) = seed {
        resolved.plan.seeds = vec![seed];
        resolved.provenance.seeds = vec![seed];
    }
    let corpus = resolved.load_corpus()?;
    let factory = resolved.factory();
    std::fs::create_dir_all(&resolved.output_dir).map_err(|e| Error::io(&resolved.output_dir, e))?;
    resolved.write_provenance(&resolved.output_dir)?;

    let outcome = run_pipeline(
        &resolved.plan,
        &factory,
        &corpus,
        &resolved.registry,
        &resolved.output_dir,
    )?;

    // One aggregate row over the run's seeds, plus seed-averaged confusion
    // matrices per task.
    let ledger = results_ledger("run", &outcome.seeds, &resolved.registry)?;
    let report_dir = resolved.output_dir.join("reports");
    emit_reports(&ledger, &report_dir)?;
    for row in &ledger.rows {
        for (task, score) in &row.task_means {
            log::info!("final {task}: mean macro-F1 {score:.4} over seeds {:?}", row.seeds);
        }
    }
    println!(
        "run complete: {} seeds, outputs in {}",
        outcome.seeds.len(),
        resolved.output_dir.display()
    );
    Ok(())
}

fn results_ledger(
    setting: &str,
    seeds: &[SeedOutcome],
    registry: &pairtask_core::schema::Registry,
) -> Result<ResultsLedger> {
    let reports: Vec<EvalReport> = seeds
        .iter()
        .flat_map(|s| s.results.iter().map(|r| r.report.clone()))
        .collect();
    let row = aggregate_runs(setting, &reports)?;
    let mut confusions = BTreeMap::new();
    let mut by_task: BTreeMap<&str, Vec<&EvalReport>> = BTreeMap::new();
    for report in &reports {
        by_task.entry(&report.task_name).or_default().push(report);
    }
    for (task, group) in by_task {
        let matrices: Vec<Vec<Vec<f64>>> = group.iter().map(|r| r.confusion.clone()).collect();
        let classes = registry.task(task)?.classes.clone();
        confusions.insert(task.to_string(), (classes, mean_confusion(&matrices)?));
    }
    Ok(ResultsLedger {
        rows: vec![row],
        confusions,
    })
}

pub fn ablate(suite_path: PathBuf, parallel: bool) -> Result<()> {
    let suite = SuiteConfig::from_path(&suite_path)?;
    let base_dir = config_base(&suite_path);
    let base_config_path = if suite.config.is_absolute() {
        suite.config.clone()
    } else {
        base_dir.join(&suite.config)
    };
    let base_config = RunConfig::from_path(&base_config_path)?;
    let out_dir = if suite.output_dir.is_absolute() {
        suite.output_dir.clone()
    } else {
        base_dir.join(&suite.output_dir)
    };
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    // Every setting resolves before anything runs, so a typo in the last
    // setting does not waste the first seven pipelines.
    let config_base_dir = config_base(&base_config_path);
    let mut jobs = Vec::new();
    for setting in &suite.settings {
        let resolved = apply_setting(&base_config, &config_base_dir, setting)?;
        let setting_dir = out_dir.join(sanitize(&setting.name));
        resolved.write_provenance(&setting_dir)?;
        for &seed in &resolved.plan.seeds.clone() {
            jobs.push((setting.name.clone(), seed, setting_dir.clone()));
        }
    }

    let run_job = |(name, seed, dir): &(String, u64, PathBuf)| -> Result<(String, u64, SeedOutcome, Vec<pairtask_core::trainer::LedgerRow>)> {
        let setting = suite
            .settings
            .iter()
            .find(|s| &s.name == name)
            .expect("job names come from the suite");
        let resolved = apply_setting(&base_config, &config_base_dir, setting)?;
        let corpus = resolved.load_corpus()?;
        let factory = resolved.factory();
        let (outcome, rows) = run_pipeline_for_seed(
            &resolved.plan,
            *seed,
            &factory,
            &corpus,
            &resolved.registry,
            dir,
        )?;
        log::info!("setting {name:?} seed {seed}: done");
        Ok((name.clone(), *seed, outcome, rows))
    };

    let outcomes: Vec<_> = if parallel {
        jobs.par_iter().map(run_job).collect::<Result<_>>()?
    } else {
        jobs.iter().map(run_job).collect::<Result<_>>()?
    };

    // Aggregate per setting, in suite order; the confusion matrices come
    // from the last setting (the fullest configuration).
    let mut rows = Vec::new();
    let mut confusions = BTreeMap::new();
    let mut all_ledger_rows = Vec::new();
    let registry = base_config.resolve(&config_base_dir)?.registry;
    for setting in &suite.settings {
        let seeds: Vec<&SeedOutcome> = outcomes
            .iter()
            .filter(|(name, ..)| name == &setting.name)
            .map(|(_, _, outcome, _)| outcome)
            .collect();
        let reports: Vec<EvalReport> = seeds
            .iter()
            .flat_map(|s| s.results.iter().map(|r| r.report.clone()))
            .collect();
        rows.push(aggregate_runs(&setting.name, &reports)?);
        if setting.name == suite.settings.last().expect("non-empty").name {
            let mut by_task: BTreeMap<&str, Vec<&EvalReport>> = BTreeMap::new();
            for report in &reports {
                by_task.entry(&report.task_name).or_default().push(report);
            }
            for (task, group) in by_task {
                let matrices: Vec<Vec<Vec<f64>>> =
                    group.iter().map(|r| r.confusion.clone()).collect();
                let classes = registry.task(task)?.classes.clone();
                confusions.insert(task.to_string(), (classes, mean_confusion(&matrices)?));
            }
        }
    }
    for (_, _, _, mut ledger_rows) in outcomes {
        all_ledger_rows.append(&mut ledger_rows);
    }
    write_ledger(&out_dir.join("ledger.jsonl"), &all_ledger_rows)?;

    let ledger = ResultsLedger { rows, confusions };
    let written = emit_reports(&ledger, &out_dir)?;
    for path in &written {
        log::info!("wrote {}", path.display());
    }
    println!(
        "ablation complete: {} settings, table in {}",
        suite.settings.len(),
        out_dir.join("ablation.csv").display()
    );
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
