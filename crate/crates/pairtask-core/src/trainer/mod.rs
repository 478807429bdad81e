//! Three-phase training orchestration.
//!
//! Phase 1 trains on everything (auxiliary + target tasks), phase 2 on all
//! target-dataset tasks, phase 3 on a single target task; each phase starts
//! from the best checkpoint of the most recent phase with a smaller id and
//! keeps the checkpoint with the highest validation macro-F1. Ablation
//! variants are expressed by dropping phases or toggling query rendering.

mod phase;
mod pipeline;
mod stream;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Split;
use crate::error::{Error, Result};
use crate::sampling::BalanceTarget;
use crate::schema::{Registry, RenderOptions};

pub use phase::{run_phase, EarlyStopping, PhaseOutcome, StopDecision};
pub use pipeline::{
    run_pipeline, run_pipeline_for_seed, Corpus, EncoderFactory, PipelineOutcome, SeedOutcome,
    TaskResult,
};
pub use stream::{
    build_epoch_stream, build_validation_bundle, evaluate_bundle, EpochStream, StreamStats,
    TaskEvalSet, ValidationBundle,
};

/// Optimizer, schedule, and early-stopping parameters for one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub phase_id: u8,
    pub training_tasks: Vec<String>,
    pub validation_tasks: Vec<String>,
    pub max_epochs: usize,
    /// Consecutive non-improving evaluations tolerated before stopping;
    /// `None` disables early stopping (phase 1 default).
    pub patience: Option<usize>,
    pub lr: f64,
    pub warmup_steps: u64,
    pub effective_batch: usize,
    /// Also evaluate every N optimizer steps within an epoch (phase 1
    /// default: 2000); epoch boundaries always evaluate.
    pub eval_every_steps: Option<usize>,
    pub balance: Option<BalanceTarget>,
}

/// (max_epochs, patience, eval_every_steps) defaults per phase id.
pub fn phase_defaults(phase_id: u8) -> (usize, Option<usize>, Option<usize>) {
    if phase_id == 1 {
        (1, None, Some(2000))
    } else {
        (20, Some(5), None)
    }
}

pub const DEFAULT_LR: f64 = 1e-6;
pub const DEFAULT_WARMUP_STEPS: u64 = 1000;
pub const DEFAULT_EFFECTIVE_BATCH: usize = 32;

impl PhaseConfig {
    /// A phase with the stock hyperparameters for its id.
    pub fn with_defaults(phase_id: u8, training_tasks: Vec<String>, validation_tasks: Vec<String>) -> Self {
        let (max_epochs, patience, eval_every_steps) = phase_defaults(phase_id);
        PhaseConfig {
            phase_id,
            training_tasks,
            validation_tasks,
            max_epochs,
            patience,
            lr: DEFAULT_LR,
            warmup_steps: DEFAULT_WARMUP_STEPS,
            effective_batch: DEFAULT_EFFECTIVE_BATCH,
            eval_every_steps,
            balance: None,
        }
    }

    pub fn validate(&self, registry: &Registry) -> Result<()> {
        if !(1..=3).contains(&self.phase_id) {
            return Err(Error::config(format!("phase id {} outside 1..=3", self.phase_id)));
        }
        if self.training_tasks.is_empty() {
            return Err(Error::config(format!(
                "phase {} has no training tasks",
                self.phase_id
            )));
        }
        if self.validation_tasks.is_empty() {
            return Err(Error::config(format!(
                "phase {} has no validation tasks",
                self.phase_id
            )));
        }
        for name in self.training_tasks.iter().chain(&self.validation_tasks) {
            registry.task(name)?;
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be at least 1".to_string()));
        }
        if self.effective_batch == 0 {
            return Err(Error::config("effective_batch must be at least 1".to_string()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config(format!("invalid learning rate {}", self.lr)));
        }
        if let Some(balance) = &self.balance {
            if !self.training_tasks.contains(&balance.task_name) {
                return Err(Error::config(format!(
                    "balance target {:?} is not trained in phase {}",
                    balance.task_name, self.phase_id
                )));
            }
            let task = registry.task(&balance.task_name)?;
            balance.validate(task.class_count())?;
        }
        Ok(())
    }
}

/// The full run: ordered phases, seeds, and reporting settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunPlan {
    pub phases: Vec<PhaseConfig>,
    pub seeds: Vec<u64>,
    /// Tasks evaluated and reported at the end of the run.
    pub report_tasks: Vec<String>,
    pub threshold_candidates: Vec<f64>,
    pub options: RenderOptions,
    /// Split the final reports are computed on (threshold selection always
    /// happens on dev).
    pub eval_split: Split,
    /// Negative-sampling seed; derived from the run seed when absent.
    pub sampler_seed: Option<u64>,
}

impl RunPlan {
    pub fn validate(&self, registry: &Registry) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::config("plan has no phases".to_string()));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("plan has no seeds".to_string()));
        }
        let mut previous = 0u8;
        for phase in &self.phases {
            phase.validate(registry)?;
            if phase.phase_id < previous {
                return Err(Error::config(format!(
                    "phase {} follows phase {previous}; phases must be ordered 1→2→3",
                    phase.phase_id
                )));
            }
            previous = phase.phase_id;
        }
        if self.report_tasks.is_empty() {
            return Err(Error::config("plan reports no tasks".to_string()));
        }
        for task in &self.report_tasks {
            registry.task(task)?;
        }
        if self.threshold_candidates.is_empty() {
            return Err(Error::config("no threshold candidates".to_string()));
        }
        for threshold in &self.threshold_candidates {
            if !(0.0..=1.0).contains(threshold) {
                return Err(Error::config(format!("threshold {threshold} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// One evaluation point in the metrics ledger. Rows carry no wall-clock
/// data, so identical config and seed reproduce the ledger byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub seed: u64,
    pub phase: u8,
    /// Position of the phase in the plan (several entries may share an id).
    pub phase_index: usize,
    pub epoch: usize,
    pub step: usize,
    pub task_scores: BTreeMap<String, f64>,
    pub mean_score: f64,
    pub is_best: bool,
}

/// Write ledger rows as JSONL, one row per evaluation.
pub fn write_ledger(path: &Path, rows: &[LedgerRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(row)
            .map_err(|e| Error::train(format!("cannot serialize ledger row: {e}")))?;
        writeln!(writer, "{line}").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::test_fixtures::edos_like_registry;

    fn plan(phases: Vec<PhaseConfig>) -> RunPlan {
        RunPlan {
            phases,
            seeds: vec![1],
            report_tasks: vec!["edos_a".to_string()],
            threshold_candidates: vec![0.5],
            options: RenderOptions::default(),
            eval_split: Split::Dev,
            sampler_seed: None,
        }
    }

    #[test]
    fn defaults_match_the_training_schedule() {
        assert_eq!(phase_defaults(1), (1, None, Some(2000)));
        assert_eq!(phase_defaults(2), (20, Some(5), None));
        assert_eq!(phase_defaults(3), (20, Some(5), None));
        let phase = PhaseConfig::with_defaults(2, vec!["edos_a".to_string()], vec!["edos_a".to_string()]);
        assert_eq!(phase.lr, 1e-6);
        assert_eq!(phase.warmup_steps, 1000);
        assert_eq!(phase.effective_batch, 32);
    }

    #[test]
    fn plan_rejects_out_of_order_phases() {
        let registry = edos_like_registry();
        let p2 = PhaseConfig::with_defaults(2, vec!["edos_a".to_string()], vec!["edos_a".to_string()]);
        let p1 = PhaseConfig::with_defaults(1, vec!["edos_a".to_string()], vec!["edos_a".to_string()]);
        let bad = plan(vec![p2.clone(), p1]);
        assert!(bad.validate(&registry).is_err());
        let good = plan(vec![p2.clone(), p2.clone(), p2]);
        assert!(good.validate(&registry).is_ok(), "repeated ids are allowed");
    }

    #[test]
    fn plan_rejects_unknown_tasks_and_bad_thresholds() {
        let registry = edos_like_registry();
        let phase = PhaseConfig::with_defaults(2, vec!["nope".to_string()], vec!["edos_a".to_string()]);
        assert!(plan(vec![phase]).validate(&registry).is_err());

        let phase = PhaseConfig::with_defaults(2, vec!["edos_a".to_string()], vec!["edos_a".to_string()]);
        let mut bad = plan(vec![phase]);
        bad.threshold_candidates = vec![1.5];
        assert!(bad.validate(&registry).is_err());
    }

    #[test]
    fn ledger_round_trips_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![LedgerRow {
            seed: 1,
            phase: 2,
            phase_index: 0,
            epoch: 3,
            step: 12,
            task_scores: BTreeMap::from([("edos_a".to_string(), 0.9)]),
            mean_score: 0.9,
            is_best: true,
        }];
        let path = dir.path().join("ledger.jsonl");
        write_ledger(&path, &rows).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        write_ledger(&path, &rows).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
        let parsed: LedgerRow =
            serde_json::from_str(String::from_utf8(bytes).unwrap().lines().next().unwrap())
                .unwrap();
        assert_eq!(parsed, rows[0]);
    }
}
