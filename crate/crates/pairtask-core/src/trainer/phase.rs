//! One training phase: stream epochs through the encoder, evaluate at fixed
//! points, keep the best checkpoint, stop early when patience runs out.

use std::path::{Path, PathBuf};

use crate::backend::{CheckpointInfo, PairEncoder, PairInput, PhaseSettings};
use crate::corpus::AnnotatedRecord;
use crate::error::{Error, Result};
use crate::sampling::{upsample, SamplerState};
use crate::schema::{Registry, RenderOptions, TaskSpec};
use crate::trainer::stream::{build_epoch_stream, build_validation_bundle, evaluate_bundle};
use crate::trainer::{LedgerRow, PhaseConfig};
use crate::util::{fnv1a_64, mix_seed};

/// What an evaluation did to the early-stopping state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    /// New best score; the caller checkpoints.
    Improved,
    Continue,
    /// Patience exhausted; the phase ends.
    Stop,
}

/// Tracks the best validation score and the number of consecutive
/// non-improving evaluations. Improvement is strictly greater-than, so the
/// earliest best wins ties and the returned checkpoint never scores below
/// any earlier one.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: Option<usize>,
    best: Option<f64>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: Option<usize>) -> Self {
        EarlyStopping {
            patience,
            best: None,
            since_best: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn observe(&mut self, score: f64) -> StopDecision {
        match self.best {
            Some(best) if score <= best => {
                self.since_best += 1;
                match self.patience {
                    Some(patience) if self.since_best >= patience => StopDecision::Stop,
                    _ => StopDecision::Continue,
                }
            }
            _ => {
                self.best = Some(score);
                self.since_best = 0;
                StopDecision::Improved
            }
        }
    }
}

/// Result of one phase.
#[derive(Debug, Clone)]
pub struct PhaseOutcome {
    pub phase_id: u8,
    pub phase_index: usize,
    pub best_score: f64,
    pub best_dir: PathBuf,
    pub evaluations: usize,
    pub optimizer_steps: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Train one phase and return its best checkpoint.
///
/// The encoder is left at its last training state; callers load
/// `best_dir` to continue the chain. Evaluation happens at epoch ends and,
/// when `eval_every_steps` is set, every N optimizer steps.
#[allow(clippy::too_many_arguments)]
pub fn run_phase(
    encoder: &mut dyn PairEncoder,
    phase: &PhaseConfig,
    phase_index: usize,
    train: &[AnnotatedRecord],
    dev: &[AnnotatedRecord],
    registry: &Registry,
    options: RenderOptions,
    seed: u64,
    sampler_seed: u64,
    phase_dir: &Path,
    ledger: &mut Vec<LedgerRow>,
) -> Result<PhaseOutcome> {
    phase.validate(registry)?;
    let bundle = build_validation_bundle(&phase.validation_tasks, dev, registry)?;

    // Per-task training data, upsampled once per phase where a balance
    // target applies.
    let sampler = SamplerState::new(sampler_seed);
    let mut per_task: Vec<(&TaskSpec, Vec<AnnotatedRecord>)> = Vec::new();
    for name in &phase.training_tasks {
        let task = registry.task(name)?;
        let mut records: Vec<AnnotatedRecord> = train
            .iter()
            .filter(|r| r.dataset == task.dataset && r.label(&task.label_type).is_some())
            .cloned()
            .collect();
        if let Some(balance) = &phase.balance {
            if &balance.task_name == name {
                let (balanced, summary) =
                    upsample(&records, task, balance, &sampler.with_lane(name))?;
                log::info!(
                    "phase {}: upsampled {:?} from {} to {} records (floor {})",
                    phase.phase_id,
                    name,
                    summary.input_len,
                    summary.output_len,
                    balance.floor_fraction
                );
                records = balanced;
            }
        }
        per_task.push((task, records));
    }
    if per_task.iter().all(|(_, records)| records.is_empty()) {
        return Err(Error::train(format!(
            "phase {} has an empty training stream",
            phase.phase_id
        )));
    }

    encoder.begin_phase(PhaseSettings {
        lr: phase.lr,
        warmup_steps: phase.warmup_steps,
    })?;

    let best_dir = phase_dir.join("best");
    let shuffle_key = mix_seed(&[seed, phase_index as u64, fnv1a_64(b"shuffle")]);
    let mut early = EarlyStopping::new(phase.patience);
    let mut steps = 0usize;
    let mut evaluations = 0usize;
    let mut epochs_run = 0usize;
    let mut stopped_early = false;
    let mut last_eval_step = usize::MAX;

    let evaluate = |encoder: &dyn PairEncoder,
                        early: &mut EarlyStopping,
                        epoch: usize,
                        step: usize,
                        evaluations: &mut usize,
                        ledger: &mut Vec<LedgerRow>|
     -> Result<StopDecision> {
        let task_scores = evaluate_bundle(encoder, &bundle, registry, options)?;
        let mean_score = task_scores.values().sum::<f64>() / task_scores.len() as f64;
        if !mean_score.is_finite() {
            return Err(Error::train(format!(
                "non-finite validation score at step {step}"
            )));
        }
        let decision = early.observe(mean_score);
        *evaluations += 1;
        if decision == StopDecision::Improved {
            encoder.save(
                &best_dir,
                &CheckpointInfo {
                    registry_fingerprint: registry.fingerprint(),
                    phase: Some(phase.phase_id),
                    score: Some(mean_score),
                },
            )?;
        }
        ledger.push(LedgerRow {
            seed,
            phase: phase.phase_id,
            phase_index,
            epoch,
            step,
            task_scores,
            mean_score,
            is_best: decision == StopDecision::Improved,
        });
        Ok(decision)
    };

    'training: for epoch in 0..phase.max_epochs {
        epochs_run = epoch + 1;
        let stream = build_epoch_stream(
            &per_task,
            registry,
            options,
            &sampler,
            epoch as u64,
            shuffle_key,
        )?;
        if stream.examples.is_empty() {
            return Err(Error::train(format!(
                "phase {} produced no pairwise examples",
                phase.phase_id
            )));
        }
        for batch in stream.examples.chunks(phase.effective_batch) {
            let inputs: Vec<PairInput> = batch.iter().map(PairInput::from).collect();
            encoder.train_step(&inputs)?;
            steps += 1;
            if phase
                .eval_every_steps
                .is_some_and(|every| every > 0 && steps % every == 0)
            {
                last_eval_step = steps;
                match evaluate(encoder, &mut early, epoch, steps, &mut evaluations, ledger)? {
                    StopDecision::Stop => {
                        stopped_early = true;
                        break 'training;
                    }
                    _ => {}
                }
            }
        }
        if last_eval_step != steps {
            last_eval_step = steps;
            match evaluate(encoder, &mut early, epoch, steps, &mut evaluations, ledger)? {
                StopDecision::Stop => {
                    stopped_early = true;
                    break 'training;
                }
                _ => {}
            }
        }
    }

    let best_score = early.best().ok_or_else(|| {
        Error::train(format!("phase {} never evaluated", phase.phase_id))
    })?;
    Ok(PhaseOutcome {
        phase_id: phase.phase_id,
        phase_index,
        best_score,
        best_dir,
        evaluations,
        optimizer_steps: steps,
        epochs_run,
        stopped_early,
    })
}
