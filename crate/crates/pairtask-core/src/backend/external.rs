//! Adapter for user-supplied pretrained pair encoders.
//!
//! The adapter spawns a long-lived worker process (typically a thin Python
//! wrapper around a transformer pair classifier) and speaks newline-delimited
//! JSON over its stdin/stdout. The worker owns tokenization, parameters, and
//! the optimizer; this side owns the training schedule and checkpoints
//! directory layout.
//!
//! Requests, one JSON object per line:
//!
//! ```text
//! {"op":"init","config":{...}}                      -> {"ok":true}
//! {"op":"begin_phase","lr":1e-6,"warmup_steps":1000} -> {"ok":true}
//! {"op":"forward","query":"...","text":"..."}       -> {"logits":[l0,l1]}
//! {"op":"train_step","examples":[{"query":..,"text":..,"target":0|1},..]}
//!                                                   -> {"loss":0.69}
//! {"op":"save","dir":"..."}                         -> {"ok":true}
//! {"op":"load","dir":"..."}                         -> {"ok":true}
//! {"op":"shutdown"}                                 -> (exit)
//! ```
//!
//! Any response may instead be `{"error":"message"}`.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::backend::{
    CheckpointInfo, CheckpointMeta, Logits, PairEncoder, PairInput, PhaseSettings,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    /// Worker command line, e.g. `["python3", "adapters/hf_pair_encoder.py"]`.
    pub command: Vec<String>,
    /// Opaque payload forwarded verbatim with the init request (model name,
    /// base checkpoint, dropout, max sequence length, ...). An object, so
    /// the resolved config stays serializable as TOML.
    #[serde(default = "empty_object")]
    pub init: serde_json::Value,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(serde_json::Map::new())
}

#[derive(Debug)]
struct Pipes {
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

/// A pair encoder living in a subprocess.
#[derive(Debug)]
pub struct ExternalEncoder {
    config: ExternalConfig,
    child: Child,
    pipes: Mutex<Pipes>,
}

impl ExternalEncoder {
    /// Spawn the worker and run the init handshake.
    pub fn spawn(config: ExternalConfig) -> Result<Self> {
        let (program, args) = config
            .command
            .split_first()
            .ok_or_else(|| Error::config("external backend command is empty".to_string()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::backend(format!("cannot spawn {program:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let encoder = ExternalEncoder {
            pipes: Mutex::new(Pipes {
                stdin: BufWriter::new(stdin),
                stdout: BufReader::new(stdout),
            }),
            child,
            config,
        };
        encoder.request(&json!({"op": "init", "config": encoder.config.init}))?;
        Ok(encoder)
    }

    /// Respawn a worker and ask it to restore the blob it saved in `dir`.
    pub fn load(dir: &Path, meta: &CheckpointMeta) -> Result<Self> {
        let config: ExternalConfig = serde_json::from_value(meta.config.clone())
            .map_err(|e| Error::backend(format!("invalid external config in checkpoint: {e}")))?;
        let encoder = Self::spawn(config)?;
        encoder.request(&json!({"op": "load", "dir": dir}))?;
        Ok(encoder)
    }

    fn request(&self, payload: &serde_json::Value) -> Result<serde_json::Value> {
        let mut pipes = self
            .pipes
            .lock()
            .map_err(|_| Error::backend("external worker pipe poisoned".to_string()))?;
        let line = serde_json::to_string(payload)
            .map_err(|e| Error::backend(format!("cannot encode request: {e}")))?;
        writeln!(pipes.stdin, "{line}")
            .and_then(|()| pipes.stdin.flush())
            .map_err(|e| Error::backend(format!("external worker went away: {e}")))?;
        let mut response = String::new();
        let read = pipes
            .stdout
            .read_line(&mut response)
            .map_err(|e| Error::backend(format!("cannot read from external worker: {e}")))?;
        if read == 0 {
            return Err(Error::backend(
                "external worker closed its stdout".to_string(),
            ));
        }
        let value: serde_json::Value = serde_json::from_str(&response)
            .map_err(|e| Error::backend(format!("invalid response {response:?}: {e}")))?;
        if let Some(message) = value.get("error").and_then(|m| m.as_str()) {
            return Err(Error::backend(format!("external worker: {message}")));
        }
        Ok(value)
    }
}

impl PairEncoder for ExternalEncoder {
    fn kind(&self) -> &'static str {
        "external"
    }

    fn forward(&self, query: &str, text: &str) -> Result<Logits> {
        let response = self.request(&json!({"op": "forward", "query": query, "text": text}))?;
        let logits = response
            .get("logits")
            .and_then(|l| l.as_array())
            .ok_or_else(|| Error::backend("forward response lacks logits".to_string()))?;
        if logits.len() != 2 {
            return Err(Error::backend(format!(
                "expected 2 logits, got {}",
                logits.len()
            )));
        }
        let mut out = [0.0; 2];
        for (slot, value) in out.iter_mut().zip(logits) {
            *slot = value
                .as_f64()
                .ok_or_else(|| Error::backend("non-numeric logit".to_string()))?;
        }
        Ok(Logits(out))
    }

    fn begin_phase(&mut self, settings: PhaseSettings) -> Result<()> {
        self.request(&json!({
            "op": "begin_phase",
            "lr": settings.lr,
            "warmup_steps": settings.warmup_steps,
        }))?;
        Ok(())
    }

    fn train_step(&mut self, batch: &[PairInput]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::train("train_step on an empty batch".to_string()));
        }
        let response = self.request(&json!({"op": "train_step", "examples": batch}))?;
        let loss = response
            .get("loss")
            .and_then(|l| l.as_f64())
            .ok_or_else(|| Error::backend("train_step response lacks loss".to_string()))?;
        if !loss.is_finite() {
            return Err(Error::backend(format!("non-finite loss {loss}")));
        }
        Ok(loss)
    }

    fn save(&self, dir: &Path, info: &CheckpointInfo) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.request(&json!({"op": "save", "dir": dir}))?;
        CheckpointMeta {
            encoder: self.kind().to_string(),
            registry_fingerprint: info.registry_fingerprint.clone(),
            phase: info.phase,
            score: info.score,
            config: serde_json::to_value(&self.config)
                .map_err(|e| Error::backend(format!("cannot serialize external config: {e}")))?,
        }
        .write(dir)
    }
}

impl Drop for ExternalEncoder {
    fn drop(&mut self) {
        if let Ok(mut pipes) = self.pipes.lock() {
            let _ = writeln!(pipes.stdin, "{}", json!({"op": "shutdown"}));
            let _ = pipes.stdin.flush();
        }
        let _ = self.child.wait();
    }
}
