//! Run and ablation-suite configuration files (TOML, unknown keys rejected).
//!
//! A run config names the registry, the data files, the backend, and the
//! phase plan; `resolve` turns it into validated runtime objects with all
//! paths anchored at the config file's directory. The resolved config is
//! serialized into the output directory so every run records exactly what
//! produced it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{
    load_encoder, ExternalConfig, ExternalEncoder, PairEncoder, ToyConfig, ToyEncoder,
};
use crate::corpus::Split;
use crate::error::{Error, Result};
use crate::sampling::BalanceTarget;
use crate::schema::{Registry, RenderOptions};
use crate::trainer::{phase_defaults, Corpus, EncoderFactory, PhaseConfig, RunPlan};
use crate::trainer::{DEFAULT_EFFECTIVE_BATCH, DEFAULT_LR, DEFAULT_WARMUP_STEPS};
use crate::util::mix_seed;

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

fn default_true() -> bool {
    true
}

fn default_eval_split() -> Split {
    Split::Dev
}

fn default_thresholds() -> Vec<f64> {
    crate::inference::DEFAULT_THRESHOLDS.to_vec()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    pub dev: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Toy,
    External,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Start training from this checkpoint instead of a fresh encoder
    /// (e.g. an encoder already fine-tuned on a related pair task).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<ExternalConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceFileConfig {
    /// Task the floor applies to; defaults to the phase's only task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    pub floor: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseFileConfig {
    pub id: u8,
    pub tasks: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_tasks: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effective_batch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_every_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balance: Option<BalanceFileConfig>,
}

/// The full run configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub registry: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Negative-sampling seed; derived from each run seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler_seed: Option<u64>,
    #[serde(default = "default_true")]
    pub use_dataset_identifier: bool,
    #[serde(default = "default_true")]
    pub use_label_descriptions: bool,
    /// Tasks evaluated and reported at the end; defaults to the tasks
    /// trained by the highest-numbered phase entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_tasks: Option<Vec<String>>,
    #[serde(default = "default_eval_split")]
    pub eval_split: Split,
    #[serde(default = "default_thresholds")]
    pub threshold_candidates: Vec<f64>,
    pub data: DataConfig,
    pub backend: BackendConfig,
    #[serde(rename = "phase")]
    pub phases: Vec<PhaseFileConfig>,
}

/// A run config turned into validated runtime objects.
#[derive(Debug)]
pub struct ResolvedRun {
    pub registry: Registry,
    pub plan: RunPlan,
    pub backend: BackendConfig,
    pub data: DataConfig,
    pub output_dir: PathBuf,
    /// The config with every path absolutized, for provenance.
    pub provenance: RunConfig,
}

fn anchored(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&raw).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Validate everything and anchor relative paths at `base` (the config
    /// file's directory). Data file existence is checked at run time, not
    /// here, so configs describing external setups still validate.
    pub fn resolve(&self, base: &Path) -> Result<ResolvedRun> {
        let registry_path = anchored(base, &self.registry);
        let registry = Registry::from_path(&registry_path)?;

        if self.phases.is_empty() {
            return Err(Error::config("config declares no phases".to_string()));
        }
        let report_tasks: Vec<String> = match &self.report_tasks {
            Some(tasks) => tasks.clone(),
            None => {
                let last_id = self.phases.iter().map(|p| p.id).max().expect("non-empty");
                let mut tasks = Vec::new();
                for phase in self.phases.iter().filter(|p| p.id == last_id) {
                    for task in &phase.tasks {
                        if !tasks.contains(task) {
                            tasks.push(task.clone());
                        }
                    }
                }
                tasks
            }
        };

        let mut phases = Vec::new();
        for file in &self.phases {
            let (default_epochs, default_patience, default_eval_every) = phase_defaults(file.id);
            let validation_tasks = match &file.validation_tasks {
                Some(tasks) => tasks.clone(),
                None if file.id == 3 => file.tasks.clone(),
                None => report_tasks.clone(),
            };
            if file.patience == Some(0) {
                return Err(Error::config(
                    "patience 0 is ambiguous; omit it to use the phase default".to_string(),
                ));
            }
            let balance = match &file.balance {
                Some(balance) => {
                    let task_name = match &balance.task {
                        Some(task) => task.clone(),
                        None if file.tasks.len() == 1 => file.tasks[0].clone(),
                        None => {
                            return Err(Error::config(format!(
                                "phase {} trains several tasks; balance needs an explicit task",
                                file.id
                            )))
                        }
                    };
                    let spec = registry.task(&task_name)?;
                    Some(BalanceTarget::new(
                        task_name,
                        balance.floor,
                        spec.class_count(),
                    )?)
                }
                None => None,
            };
            phases.push(PhaseConfig {
                phase_id: file.id,
                training_tasks: file.tasks.clone(),
                validation_tasks,
                max_epochs: file.max_epochs.unwrap_or(default_epochs),
                patience: file.patience.or(default_patience),
                lr: file.lr.unwrap_or(DEFAULT_LR),
                warmup_steps: file.warmup_steps.unwrap_or(DEFAULT_WARMUP_STEPS),
                effective_batch: file.effective_batch.unwrap_or(DEFAULT_EFFECTIVE_BATCH),
                eval_every_steps: file.eval_every_steps.or(default_eval_every),
                balance,
            });
        }

        let plan = RunPlan {
            phases,
            seeds: self.seeds.clone(),
            report_tasks,
            threshold_candidates: self.threshold_candidates.clone(),
            options: RenderOptions {
                dataset_identifier: self.use_dataset_identifier,
                label_descriptions: self.use_label_descriptions,
            },
            eval_split: self.eval_split,
            sampler_seed: self.sampler_seed,
        };
        plan.validate(&registry)?;

        let backend = BackendConfig {
            kind: self.backend.kind,
            base_checkpoint: self
                .backend
                .base_checkpoint
                .as_ref()
                .map(|p| anchored(base, p)),
            toy: self.backend.toy.clone(),
            external: self.backend.external.clone(),
        };
        match backend.kind {
            BackendKind::Toy => {}
            BackendKind::External => {
                let external = backend.external.as_ref().ok_or_else(|| {
                    Error::config("backend.kind is external but [backend.external] is missing".to_string())
                })?;
                if external.command.is_empty() {
                    return Err(Error::config("external backend command is empty".to_string()));
                }
            }
        }

        let data = DataConfig {
            train: anchored(base, &self.data.train),
            dev: anchored(base, &self.data.dev),
            test: self.data.test.as_ref().map(|p| anchored(base, p)),
        };
        let output_dir = anchored(base, &self.output_dir);

        let mut provenance = self.clone();
        provenance.registry = registry_path;
        provenance.output_dir = output_dir.clone();
        provenance.data = data.clone();
        provenance.backend = backend.clone();
        provenance.report_tasks = Some(plan.report_tasks.clone());

        Ok(ResolvedRun {
            registry,
            plan,
            backend,
            data,
            output_dir,
            provenance,
        })
    }
}

impl ResolvedRun {
    pub fn factory(&self) -> ConfiguredFactory {
        ConfiguredFactory {
            backend: self.backend.clone(),
        }
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        Corpus::from_files(&self.data.train, &self.data.dev, self.data.test.as_deref())
    }

    /// Serialize the resolved config into the run directory.
    pub fn write_provenance(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let text = toml::to_string_pretty(&self.provenance)
            .map_err(|e| Error::config(format!("cannot serialize resolved config: {e}")))?;
        let path = dir.join("resolved_config.toml");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// Builds encoders from the backend section of a run config.
pub struct ConfiguredFactory {
    backend: BackendConfig,
}

impl EncoderFactory for ConfiguredFactory {
    fn fresh(&self, seed: u64) -> Result<Box<dyn PairEncoder>> {
        if let Some(base) = &self.backend.base_checkpoint {
            let (encoder, _) = load_encoder(base)?;
            return Ok(encoder);
        }
        match self.backend.kind {
            BackendKind::Toy => {
                let mut config = self.backend.toy.clone().unwrap_or_default();
                config.seed = mix_seed(&[config.seed, seed]);
                Ok(Box::new(ToyEncoder::new(config)?))
            }
            BackendKind::External => {
                let mut config = self.backend.external.clone().ok_or_else(|| {
                    Error::config("external backend is not configured".to_string())
                })?;
                if let serde_json::Value::Object(init) = &mut config.init {
                    init.insert("seed".to_string(), serde_json::json!(seed));
                }
                Ok(Box::new(ExternalEncoder::spawn(config)?))
            }
        }
    }
}

/// One ablation setting: the base run with phases dropped and toggles
/// flipped.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingConfig {
    pub name: String,
    /// Keep only the phase entries with these ids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub use_dataset_identifier: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub use_label_descriptions: Option<bool>,
    /// `false` strips balance targets from every kept phase.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balance: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_tasks: Option<Vec<String>>,
}

/// An ablation suite: a base run config plus the settings ladder.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub config: PathBuf,
    pub output_dir: PathBuf,
    #[serde(rename = "setting")]
    pub settings: Vec<SettingConfig>,
}

impl SuiteConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let suite: SuiteConfig =
            toml::from_str(&raw).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        if suite.settings.is_empty() {
            return Err(Error::config("suite declares no settings".to_string()));
        }
        let mut names = std::collections::BTreeSet::new();
        for setting in &suite.settings {
            if setting.name.trim().is_empty() {
                return Err(Error::config("setting with an empty name".to_string()));
            }
            if !names.insert(&setting.name) {
                return Err(Error::config(format!("duplicate setting {:?}", setting.name)));
            }
        }
        Ok(suite)
    }
}

/// Apply one setting to the base config and re-resolve it.
pub fn apply_setting(base_config: &RunConfig, base_dir: &Path, setting: &SettingConfig) -> Result<ResolvedRun> {
    let mut config = base_config.clone();
    if let Some(keep) = &setting.phases {
        config.phases.retain(|p| keep.contains(&p.id));
        if config.phases.is_empty() {
            return Err(Error::config(format!(
                "setting {:?} keeps no phases",
                setting.name
            )));
        }
    }
    if let Some(value) = setting.use_dataset_identifier {
        config.use_dataset_identifier = value;
    }
    if let Some(value) = setting.use_label_descriptions {
        config.use_label_descriptions = value;
    }
    if setting.balance == Some(false) {
        for phase in &mut config.phases {
            phase.balance = None;
        }
    }
    if let Some(base) = &setting.base_checkpoint {
        config.backend.base_checkpoint = Some(base.clone());
    }
    if let Some(seeds) = &setting.seeds {
        config.seeds = seeds.clone();
    }
    if let Some(tasks) = &setting.report_tasks {
        config.report_tasks = Some(tasks.clone());
    }
    config.resolve(base_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    const REGISTRY: &str = r#"
        [[dataset]]
        id = "AUX"
        display_name = "Auxiliary"

        [[dataset]]
        id = "TGT"
        display_name = "Target"

        [[task]]
        name = "aux_bin"
        dataset = "AUX"
        label_type = "marker"
        classes = ["yes", "no"]
        positive = "yes"
        rule = "label-name"

        [[task]]
        name = "tgt_multi"
        dataset = "TGT"
        label_type = "color"
        classes = ["red", "blue", "green", "yellow"]
        rule = "typed-value"
    "#;

    fn write_fixture(dir: &Path) -> PathBuf {
        std::fs::write(dir.join("registry.toml"), REGISTRY).unwrap();
        let config = r#"
            registry = "registry.toml"
            output_dir = "out"
            seeds = [1, 2]

            [data]
            train = "train.jsonl"
            dev = "dev.jsonl"

            [backend]
            kind = "toy"

            [[phase]]
            id = 1
            tasks = ["aux_bin", "tgt_multi"]

            [[phase]]
            id = 3
            tasks = ["tgt_multi"]
            [phase.balance]
            floor = 0.19
        "#;
        let path = dir.join("run.toml");
        std::fs::write(&path, config).unwrap();
        path
    }

    #[test]
    fn resolves_defaults_and_anchors_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_fixture(dir.path());
        let config = RunConfig::from_path(&path).unwrap();
        let resolved = config.resolve(dir.path()).unwrap();

        assert_eq!(resolved.plan.phases.len(), 2);
        let phase1 = &resolved.plan.phases[0];
        assert_eq!(phase1.max_epochs, 1);
        assert_eq!(phase1.patience, None);
        assert_eq!(phase1.eval_every_steps, Some(2000));
        assert_eq!(phase1.lr, 1e-6);
        assert_eq!(phase1.effective_batch, 32);
        // Phases 1-2 validate on the report tasks, phase 3 on its own task.
        assert_eq!(phase1.validation_tasks, vec!["tgt_multi".to_string()]);
        let phase3 = &resolved.plan.phases[1];
        assert_eq!(phase3.max_epochs, 20);
        assert_eq!(phase3.patience, Some(5));
        assert_eq!(phase3.validation_tasks, vec!["tgt_multi".to_string()]);
        assert_eq!(
            phase3.balance.as_ref().unwrap().task_name,
            "tgt_multi".to_string()
        );
        assert_eq!(resolved.plan.report_tasks, vec!["tgt_multi".to_string()]);
        assert!(resolved.data.train.is_absolute() || resolved.data.train.starts_with(dir.path()));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("registry.toml"), REGISTRY).unwrap();
        let config = r#"
            registry = "registry.toml"
            output_dir = "out"
            totally_unknown_key = 1

            [data]
            train = "a"
            dev = "b"

            [backend]
            kind = "toy"

            [[phase]]
            id = 1
            tasks = ["aux_bin"]
        "#;
        let path = dir.path().join("run.toml");
        std::fs::write(&path, config).unwrap();
        let err = RunConfig::from_path(&path).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(err.to_string().contains("totally_unknown_key"));
    }

    #[test]
    fn unreachable_balance_floor_fails_resolution() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("registry.toml"), REGISTRY).unwrap();
        let config = r#"
            registry = "registry.toml"
            output_dir = "out"

            [data]
            train = "a"
            dev = "b"

            [backend]
            kind = "toy"

            [[phase]]
            id = 3
            tasks = ["tgt_multi"]
            [phase.balance]
            floor = 0.3
        "#;
        let path = dir.path().join("run.toml");
        std::fs::write(&path, config).unwrap();
        let config = RunConfig::from_path(&path).unwrap();
        let err = config.resolve(dir.path()).unwrap_err();
        assert!(err.to_string().contains("unreachable"), "{err}");
    }

    #[test]
    fn settings_filter_phases_and_flip_toggles() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_fixture(dir.path());
        let base = RunConfig::from_path(&path).unwrap();

        let setting = SettingConfig {
            name: "single task".to_string(),
            phases: Some(vec![3]),
            use_dataset_identifier: Some(false),
            use_label_descriptions: None,
            balance: Some(false),
            base_checkpoint: None,
            seeds: Some(vec![5]),
            report_tasks: None,
        };
        let resolved = apply_setting(&base, dir.path(), &setting).unwrap();
        assert_eq!(resolved.plan.phases.len(), 1);
        assert_eq!(resolved.plan.phases[0].phase_id, 3);
        assert!(resolved.plan.phases[0].balance.is_none());
        assert!(!resolved.plan.options.dataset_identifier);
        assert_eq!(resolved.plan.seeds, vec![5]);

        let empty = SettingConfig {
            phases: Some(vec![2]),
            ..setting
        };
        assert!(apply_setting(&base, dir.path(), &empty).is_err());
    }

    #[test]
    fn provenance_round_trips_through_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_fixture(dir.path());
        let config = RunConfig::from_path(&path).unwrap();
        let resolved = config.resolve(dir.path()).unwrap();
        let out = dir.path().join("run_out");
        resolved.write_provenance(&out).unwrap();
        let text = std::fs::read_to_string(out.join("resolved_config.toml")).unwrap();
        let parsed: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(parsed.seeds, vec![1, 2]);
        assert!(parsed.registry.is_absolute() || parsed.registry.starts_with(dir.path()));
    }
}
