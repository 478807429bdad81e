//! The model contract: a pair encoder maps (query, text) to two logits whose
//! softmax is the probability that the queried label applies.
//!
//! Two implementations ship with the crate: [`ToyEncoder`], a deterministic
//! trainable bag-of-words model used by tests and toy-scale runs, and
//! [`ExternalEncoder`], a line-delimited JSON subprocess adapter that wraps a
//! user-supplied pretrained pair encoder.

mod external;
mod toy;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use external::{ExternalConfig, ExternalEncoder};
pub use toy::{ToyConfig, ToyEncoder};

/// Index of the "label applies" output.
pub const POSITIVE_INDEX: usize = 1;

/// Raw 2-way scores before the softmax.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Logits(pub [f64; 2]);

impl Logits {
    /// Numerically stable softmax; the two outputs sum to 1.
    pub fn softmax(self) -> [f64; 2] {
        let [a, b] = self.0;
        let m = a.max(b);
        let ea = (a - m).exp();
        let eb = (b - m).exp();
        let z = ea + eb;
        [ea / z, eb / z]
    }

    /// Probability that the label applies.
    pub fn positive_probability(self) -> f64 {
        self.softmax()[POSITIVE_INDEX]
    }
}

/// One training example as the backend sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairInput {
    pub query: String,
    pub text: String,
    pub target: u8,
}

impl From<&crate::schema::PairwiseExample> for PairInput {
    fn from(example: &crate::schema::PairwiseExample) -> Self {
        PairInput {
            query: example.query.clone(),
            text: example.text.clone(),
            target: example.target,
        }
    }
}

/// Per-phase optimizer settings handed to the encoder when a phase starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSettings {
    pub lr: f64,
    pub warmup_steps: u64,
}

/// Provenance recorded next to the parameters of a checkpoint.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub registry_fingerprint: String,
    pub phase: Option<u8>,
    pub score: Option<f64>,
}

/// The metadata file written into every checkpoint directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub encoder: String,
    pub registry_fingerprint: String,
    pub phase: Option<u8>,
    pub score: Option<f64>,
    pub config: serde_json::Value,
}

pub const CHECKPOINT_META_FILE: &str = "checkpoint.json";

impl CheckpointMeta {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CHECKPOINT_META_FILE);
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::backend(format!("cannot serialize checkpoint meta: {e}")))?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(CHECKPOINT_META_FILE);
        let raw = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&raw)
            .map_err(|e| Error::backend(format!("{}: invalid checkpoint meta: {e}", path.display())))
    }
}

/// The behavioral contract of a pair encoder.
///
/// `forward` must be deterministic in evaluation mode, produce exactly two
/// logits, and its softmax sums to 1 up to numeric noise. `train_step`
/// performs one optimizer update over an effective batch and returns the
/// mean cross-entropy loss; a non-finite loss is an error so the phase can
/// abort with diagnostics.
pub trait PairEncoder: Send {
    fn kind(&self) -> &'static str;

    fn forward(&self, query: &str, text: &str) -> Result<Logits>;

    /// Reset the optimizer for a new training phase.
    fn begin_phase(&mut self, settings: PhaseSettings) -> Result<()>;

    fn train_step(&mut self, batch: &[PairInput]) -> Result<f64>;

    /// Persist parameters and metadata into `dir` (created if needed).
    fn save(&self, dir: &Path, info: &CheckpointInfo) -> Result<()>;
}

/// Probability that the queried label applies to the text.
pub fn predict_pair(encoder: &dyn PairEncoder, query: &str, text: &str) -> Result<f64> {
    Ok(encoder.forward(query, text)?.positive_probability())
}

/// Mean cross-entropy of `probability of target class` over a batch;
/// shared by the toy gradient path and the loss reporting.
pub fn cross_entropy(logits: Logits, target: u8) -> f64 {
    let [a, b] = logits.0;
    let m = a.max(b);
    let log_z = m + ((a - m).exp() + (b - m).exp()).ln();
    let picked = if target == 0 { a } else { b };
    log_z - picked
}

/// Reconstruct an encoder from a checkpoint directory, dispatching on the
/// encoder kind recorded in its metadata.
pub fn load_encoder(dir: &Path) -> Result<(Box<dyn PairEncoder>, CheckpointMeta)> {
    let meta = CheckpointMeta::read(dir)?;
    let encoder: Box<dyn PairEncoder> = match meta.encoder.as_str() {
        "toy" => Box::new(ToyEncoder::load(dir, &meta)?),
        "external" => Box::new(ExternalEncoder::load(dir, &meta)?),
        other => {
            return Err(Error::backend(format!(
                "unknown encoder kind {other:?} in {}",
                dir.display()
            )))
        }
    };
    Ok((encoder, meta))
}
