//! A tiny deterministic trainable pair encoder.
//!
//! Bag-of-words embeddings (hashed vocabulary, shared between query and
//! text), an elementwise bilinear interaction, and a 2-way linear head.
//! Trains in milliseconds, has exact analytic gradients, and exercises every
//! contract the production adapter must honor, which is the whole point:
//! the pipeline around it can be tested end to end.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{
    cross_entropy, CheckpointInfo, CheckpointMeta, Logits, PairEncoder, PairInput, PhaseSettings,
};
use crate::error::{Error, Result};
use crate::util::{fnv1a_64, mix_seed};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub vocab_buckets: usize,
    pub dim: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    /// Accepted for config parity with production encoders; the toy forward
    /// pass has no stochastic units, so this has no effect here.
    pub dropout: f64,
    pub max_seq_tokens: usize,
    /// Split effective batches into micro-batches of this size and
    /// accumulate gradients; `None` processes the batch in one piece.
    pub physical_batch: Option<usize>,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            vocab_buckets: 256,
            dim: 16,
            seed: 0,
            weight_decay: 0.0,
            grad_clip: 1.0,
            dropout: 0.1,
            max_seq_tokens: 256,
            physical_batch: None,
        }
    }
}

/// Bag-of-words bilinear pair encoder with an internal Adam optimizer.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    config: ToyConfig,
    params: Vec<f64>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    step: u64,
    lr: f64,
    warmup_steps: u64,
}

impl ToyEncoder {
    pub fn new(config: ToyConfig) -> Result<Self> {
        if config.vocab_buckets == 0 || config.dim == 0 {
            return Err(Error::config(
                "toy encoder needs vocab_buckets > 0 and dim > 0".to_string(),
            ));
        }
        let n = Self::param_count(&config);
        let mut params = vec![0.0; n];
        // Random embeddings, zero-initialized head: a fresh encoder outputs
        // logits (0, 0), i.e. probability 0.5, on every input.
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, fnv1a_64(b"toy-init")]));
        for value in params.iter_mut().take(config.vocab_buckets * config.dim) {
            *value = rng.random_range(-0.1..0.1);
        }
        Ok(ToyEncoder {
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step: 0,
            lr: 0.0,
            warmup_steps: 0,
            params,
            config,
        })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    fn param_count(config: &ToyConfig) -> usize {
        config.vocab_buckets * config.dim + 6 * config.dim + 2
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let d = self.config.dim;
        let embed_end = self.config.vocab_buckets * d;
        (embed_end, embed_end + 2 * d, embed_end + 4 * d, embed_end + 6 * d)
    }

    fn tokenize(&self, text: &str) -> Vec<usize> {
        text.to_lowercase()
            .split_whitespace()
            .take(self.config.max_seq_tokens)
            .map(|token| (fnv1a_64(token.as_bytes()) % self.config.vocab_buckets as u64) as usize)
            .collect()
    }

    /// Mean embedding of a token bag; the zero vector for empty input.
    fn mean_embedding(&self, tokens: &[usize]) -> Vec<f64> {
        let d = self.config.dim;
        let mut out = vec![0.0; d];
        if tokens.is_empty() {
            return out;
        }
        for &token in tokens {
            let row = &self.params[token * d..(token + 1) * d];
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let n = tokens.len() as f64;
        for o in &mut out {
            *o /= n;
        }
        out
    }

    fn logits_from_features(&self, qbar: &[f64], tbar: &[f64]) -> [f64; 2] {
        let d = self.config.dim;
        let (off_a, off_b, off_c, off_bias) = self.offsets();
        let mut logits = [0.0; 2];
        for (k, logit) in logits.iter_mut().enumerate() {
            let a = &self.params[off_a + k * d..off_a + (k + 1) * d];
            let b = &self.params[off_b + k * d..off_b + (k + 1) * d];
            let c = &self.params[off_c + k * d..off_c + (k + 1) * d];
            let mut sum = self.params[off_bias + k];
            for j in 0..d {
                sum += a[j] * qbar[j] * tbar[j] + b[j] * qbar[j] + c[j] * tbar[j];
            }
            *logit = sum;
        }
        logits
    }

    /// Flat parameter view, for checkpoints and gradient checks.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::backend(format!(
                "parameter blob has {} values, expected {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Summed cross-entropy over the batch plus the gradient of that sum
    /// with respect to the flat parameter vector.
    pub fn loss_and_grad(&self, batch: &[PairInput]) -> Result<(f64, Vec<f64>)> {
        let d = self.config.dim;
        let (off_a, off_b, off_c, off_bias) = self.offsets();
        let mut grad = vec![0.0; self.params.len()];
        let mut loss_sum = 0.0;

        for example in batch {
            if example.target > 1 {
                return Err(Error::backend(format!(
                    "target {} outside {{0, 1}}",
                    example.target
                )));
            }
            let q_tokens = self.tokenize(&example.query);
            let t_tokens = self.tokenize(&example.text);
            let qbar = self.mean_embedding(&q_tokens);
            let tbar = self.mean_embedding(&t_tokens);
            let logits = self.logits_from_features(&qbar, &tbar);
            loss_sum += cross_entropy(Logits(logits), example.target);

            let probs = Logits(logits).softmax();
            let mut dq = vec![0.0; d];
            let mut dt = vec![0.0; d];
            for k in 0..2 {
                let y = if usize::from(example.target) == k { 1.0 } else { 0.0 };
                let dl = probs[k] - y;
                let a = off_a + k * d;
                let b = off_b + k * d;
                let c = off_c + k * d;
                grad[off_bias + k] += dl;
                for j in 0..d {
                    grad[a + j] += dl * qbar[j] * tbar[j];
                    grad[b + j] += dl * qbar[j];
                    grad[c + j] += dl * tbar[j];
                    dq[j] += dl * (self.params[a + j] * tbar[j] + self.params[b + j]);
                    dt[j] += dl * (self.params[a + j] * qbar[j] + self.params[c + j]);
                }
            }
            if !q_tokens.is_empty() {
                let scale = 1.0 / q_tokens.len() as f64;
                for &token in &q_tokens {
                    for j in 0..d {
                        grad[token * d + j] += dq[j] * scale;
                    }
                }
            }
            if !t_tokens.is_empty() {
                let scale = 1.0 / t_tokens.len() as f64;
                for &token in &t_tokens {
                    for j in 0..d {
                        grad[token * d + j] += dt[j] * scale;
                    }
                }
            }
        }
        Ok((loss_sum, grad))
    }

    /// Learning rate at 1-based optimizer step `step`, scaled linearly over
    /// the warmup window.
    pub fn warmup_lr(base: f64, warmup_steps: u64, step: u64) -> f64 {
        if warmup_steps == 0 || step >= warmup_steps {
            base
        } else {
            base * step as f64 / warmup_steps as f64
        }
    }

    fn apply_update(&mut self, grad_mean: &mut [f64]) {
        self.step += 1;
        let lr = Self::warmup_lr(self.lr, self.warmup_steps, self.step);

        if self.config.grad_clip > 0.0 {
            let norm = grad_mean.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > self.config.grad_clip {
                let scale = self.config.grad_clip / norm;
                for g in grad_mean.iter_mut() {
                    *g *= scale;
                }
            }
        }

        let bias1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bias2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for i in 0..self.params.len() {
            let g = grad_mean[i];
            self.adam_m[i] = ADAM_BETA1 * self.adam_m[i] + (1.0 - ADAM_BETA1) * g;
            self.adam_v[i] = ADAM_BETA2 * self.adam_v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.adam_m[i] / bias1;
            let v_hat = self.adam_v[i] / bias2;
            self.params[i] -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS)
                + self.config.weight_decay * self.params[i]);
        }
    }

    pub fn load(dir: &Path, meta: &CheckpointMeta) -> Result<Self> {
        let config: ToyConfig = serde_json::from_value(meta.config.clone())
            .map_err(|e| Error::backend(format!("invalid toy config in checkpoint: {e}")))?;
        let mut encoder = ToyEncoder::new(config)?;
        let path = dir.join(PARAMS_FILE);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() != encoder.params.len() * 8 {
            return Err(Error::backend(format!(
                "{}: parameter blob has {} bytes, expected {}",
                path.display(),
                bytes.len(),
                encoder.params.len() * 8
            )));
        }
        for (i, chunk) in bytes.chunks_exact(8).enumerate() {
            encoder.params[i] = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
        }
        Ok(encoder)
    }
}

impl PairEncoder for ToyEncoder {
    fn kind(&self) -> &'static str {
        "toy"
    }

    fn forward(&self, query: &str, text: &str) -> Result<Logits> {
        let qbar = self.mean_embedding(&self.tokenize(query));
        let tbar = self.mean_embedding(&self.tokenize(text));
        Ok(Logits(self.logits_from_features(&qbar, &tbar)))
    }

    fn begin_phase(&mut self, settings: PhaseSettings) -> Result<()> {
        if !(settings.lr.is_finite() && settings.lr > 0.0) {
            return Err(Error::config(format!("invalid learning rate {}", settings.lr)));
        }
        self.lr = settings.lr;
        self.warmup_steps = settings.warmup_steps;
        self.adam_m.iter_mut().for_each(|m| *m = 0.0);
        self.adam_v.iter_mut().for_each(|v| *v = 0.0);
        self.step = 0;
        Ok(())
    }

    fn train_step(&mut self, batch: &[PairInput]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::train("train_step on an empty batch".to_string()));
        }
        if self.lr == 0.0 {
            return Err(Error::train(
                "begin_phase must run before train_step".to_string(),
            ));
        }
        let chunk = self.config.physical_batch.unwrap_or(batch.len()).max(1);
        let mut loss_sum = 0.0;
        let mut grad_sum = vec![0.0; self.params.len()];
        for micro in batch.chunks(chunk) {
            let (loss, grad) = self.loss_and_grad(micro)?;
            loss_sum += loss;
            for (g, v) in grad_sum.iter_mut().zip(grad) {
                *g += v;
            }
        }
        let n = batch.len() as f64;
        let mean_loss = loss_sum / n;
        if !mean_loss.is_finite() {
            return Err(Error::backend(format!(
                "non-finite loss {mean_loss} at optimizer step {}",
                self.step + 1
            )));
        }
        for g in grad_sum.iter_mut() {
            *g /= n;
        }
        self.apply_update(&mut grad_sum);
        Ok(mean_loss)
    }

    fn save(&self, dir: &Path, info: &CheckpointInfo) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut bytes = Vec::with_capacity(self.params.len() * 8);
        for value in &self.params {
            bytes.extend_from_slice(&value.to_le_bytes());
        }
        let path = dir.join(PARAMS_FILE);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        CheckpointMeta {
            encoder: self.kind().to_string(),
            registry_fingerprint: info.registry_fingerprint.clone(),
            phase: info.phase,
            score: info.score,
            config: serde_json::to_value(&self.config)
                .map_err(|e| Error::backend(format!("cannot serialize toy config: {e}")))?,
        }
        .write(dir)
    }
}
