//! The full run: per seed, chain the phases, then evaluate the final
//! checkpoints on the reporting split (with a dev-side threshold sweep for
//! binary tasks).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::backend::{load_encoder, PairEncoder};
use crate::corpus::{read_records, AnnotatedRecord, Split};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_task, EvalReport};
use crate::inference::{
    predict_binary, predict_multiclass, select_threshold, EvalItem, ThresholdSweep,
};
use crate::schema::Registry;
use crate::trainer::phase::run_phase;
use crate::trainer::{write_ledger, LedgerRow, PhaseOutcome, RunPlan};
use crate::util::{fnv1a_64, mix_seed};

/// The ingested corpus, partitioned by split.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub train: Vec<AnnotatedRecord>,
    pub dev: Vec<AnnotatedRecord>,
    pub test: Vec<AnnotatedRecord>,
}

impl Corpus {
    /// Read canonical JSONL files, keeping from each file the records whose
    /// split field matches its role. The three paths may all point at one
    /// combined corpus file.
    pub fn from_files(train: &Path, dev: &Path, test: Option<&Path>) -> Result<Self> {
        let keep = |path: &Path, split: Split| -> Result<Vec<AnnotatedRecord>> {
            let records = read_records(path)?;
            let total = records.len();
            let kept: Vec<AnnotatedRecord> =
                records.into_iter().filter(|r| r.split == split).collect();
            if kept.len() != total {
                log::debug!(
                    "{}: kept {} of {total} records for the {split} split",
                    path.display(),
                    kept.len()
                );
            }
            Ok(kept)
        };
        Ok(Corpus {
            train: keep(train, Split::Train)?,
            dev: keep(dev, Split::Dev)?,
            test: test.map(|p| keep(p, Split::Test)).transpose()?.unwrap_or_default(),
        })
    }

    pub fn split(&self, split: Split) -> &[AnnotatedRecord] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

/// Creates the fresh encoder a pipeline run starts from.
pub trait EncoderFactory: Sync {
    fn fresh(&self, seed: u64) -> Result<Box<dyn PairEncoder>>;
}

/// Final evaluation of one task on the reporting split.
#[derive(Debug, Clone, Serialize)]
pub struct TaskResult {
    pub task: String,
    pub report: EvalReport,
    pub sweep: Option<ThresholdSweep>,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub phase_scores: Vec<(u8, f64)>,
    pub results: Vec<TaskResult>,
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub seeds: Vec<SeedOutcome>,
    pub ledger: Vec<LedgerRow>,
}

fn eval_items_for(records: &[AnnotatedRecord], task: &crate::schema::TaskSpec) -> Vec<EvalItem> {
    records
        .iter()
        .filter(|r| r.dataset == task.dataset)
        .filter_map(|r| {
            r.label(&task.label_type).map(|gold| EvalItem {
                record_id: r.id.clone(),
                text: r.text.clone(),
                gold: gold.to_string(),
            })
        })
        .collect()
}

/// Run every phase of the plan for one seed, then evaluate the report tasks.
///
/// Each phase starts from the best checkpoint of the most recent phase with
/// a smaller id (single-task baselines are just plans whose first phase id
/// is 3). Binary report tasks get a dev-side threshold sweep whose winner is
/// applied on the reporting split.
pub fn run_pipeline_for_seed(
    plan: &RunPlan,
    seed: u64,
    factory: &dyn EncoderFactory,
    corpus: &Corpus,
    registry: &Registry,
    out_dir: &Path,
) -> Result<(SeedOutcome, Vec<LedgerRow>)> {
    plan.validate(registry)?;
    let seed_dir = out_dir.join(format!("seed_{seed}"));
    std::fs::create_dir_all(&seed_dir).map_err(|e| Error::io(&seed_dir, e))?;
    let sampler_seed = plan
        .sampler_seed
        .unwrap_or_else(|| mix_seed(&[seed, fnv1a_64(b"sampler")]));

    let mut ledger = Vec::new();
    let mut outcomes: Vec<PhaseOutcome> = Vec::new();
    let mut best_by_id: BTreeMap<u8, PathBuf> = BTreeMap::new();
    let fingerprint = registry.fingerprint();

    for (index, phase) in plan.phases.iter().enumerate() {
        let parent = best_by_id
            .range(..phase.phase_id)
            .next_back()
            .map(|(_, dir)| dir.clone());
        let mut encoder: Box<dyn PairEncoder> = match &parent {
            Some(dir) => {
                let (encoder, meta) = load_encoder(dir)?;
                if meta.registry_fingerprint != fingerprint {
                    return Err(Error::config(format!(
                        "checkpoint {} was trained with a different registry",
                        dir.display()
                    )));
                }
                encoder
            }
            None => factory.fresh(seed)?,
        };
        let phase_dir = seed_dir.join(format!("phase{:02}_{}", index + 1, phase.phase_id));
        let outcome = run_phase(
            encoder.as_mut(),
            phase,
            index,
            &corpus.train,
            &corpus.dev,
            registry,
            plan.options,
            seed,
            sampler_seed,
            &phase_dir,
            &mut ledger,
        )?;
        log::info!(
            "seed {seed} phase {} ({}): best {:.4} after {} evals",
            phase.phase_id,
            index + 1,
            outcome.best_score,
            outcome.evaluations
        );
        best_by_id.insert(phase.phase_id, outcome.best_dir.clone());
        outcomes.push(outcome);
    }

    // Reporting: for each task, the last phase entry that trained it (the
    // final checkpoint of its chain), else the overall last phase.
    let eval_records = corpus.split(plan.eval_split);
    let mut results = Vec::new();
    for name in &plan.report_tasks {
        let task = registry.task(name)?;
        let chosen_outcome = outcomes
            .iter()
            .rev()
            .find(|o| plan.phases[o.phase_index].training_tasks.contains(name))
            .or_else(|| outcomes.last())
            .expect("plan has at least one phase");
        let checkpoint = chosen_outcome.best_dir.clone();
        let (encoder, meta) = load_encoder(&checkpoint)?;
        if meta.registry_fingerprint != fingerprint {
            return Err(Error::config(format!(
                "checkpoint {} was trained with a different registry",
                checkpoint.display()
            )));
        }

        let items = eval_items_for(eval_records, task);
        if items.is_empty() {
            return Err(Error::data(format!(
                "no {} items carry a label for task {name:?}",
                plan.eval_split
            )));
        }
        let golds: Vec<String> = items.iter().map(|i| i.gold.clone()).collect();
        let mut sweep = None;
        let mut predictions = Vec::with_capacity(items.len());
        if task.is_binary {
            let dev_items = eval_items_for(&corpus.dev, task);
            let selected = select_threshold(
                encoder.as_ref(),
                &dev_items,
                task,
                registry,
                plan.options,
                &plan.threshold_candidates,
            )?;
            for item in &items {
                predictions.push(
                    predict_binary(
                        encoder.as_ref(),
                        &item.text,
                        task,
                        registry,
                        plan.options,
                        selected.selected,
                    )?
                    .chosen,
                );
            }
            sweep = Some(selected);
        } else {
            for item in &items {
                predictions.push(
                    predict_multiclass(encoder.as_ref(), &item.text, task, registry, plan.options)?
                        .chosen,
                );
            }
        }
        let mut report = evaluate_task(name, &predictions, &golds, &task.classes, seed)?;
        report.threshold = sweep.as_ref().map(|s| s.selected);
        results.push(TaskResult {
            task: name.clone(),
            report,
            sweep,
            checkpoint,
        });
    }

    let outcome = SeedOutcome {
        seed,
        phase_scores: outcomes.iter().map(|o| (o.phase_id, o.best_score)).collect(),
        results,
    };
    let summary_path = seed_dir.join("results.json");
    let summary = serde_json::to_string_pretty(&outcome)
        .map_err(|e| Error::train(format!("cannot serialize results: {e}")))?;
    std::fs::write(&summary_path, summary).map_err(|e| Error::io(&summary_path, e))?;
    Ok((outcome, ledger))
}

/// Run the plan for every seed and write the combined metrics ledger.
pub fn run_pipeline(
    plan: &RunPlan,
    factory: &dyn EncoderFactory,
    corpus: &Corpus,
    registry: &Registry,
    out_dir: &Path,
) -> Result<PipelineOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut seeds = Vec::new();
    let mut ledger = Vec::new();
    for &seed in &plan.seeds {
        let (outcome, mut rows) = run_pipeline_for_seed(plan, seed, factory, corpus, registry, out_dir)?;
        seeds.push(outcome);
        ledger.append(&mut rows);
    }
    write_ledger(&out_dir.join("ledger.jsonl"), &ledger)?;
    Ok(PipelineOutcome { seeds, ledger })
}
