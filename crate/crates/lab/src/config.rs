//! Run configuration: a TOML file with `[run]`, `[data]`, `[model]` and
//! `[train]` sections layered over per-dataset profile defaults.
//!
//! Resolution order, lowest to highest priority: the profile selected by
//! `data.kind`, the file, then `--set section.key=value` overrides. Unknown
//! keys are rejected. When `data.seed` is not given it follows `train.seed`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};
use ugan_core::losses::LossWeights;
use ugan_core::models::ModelConfig;
use ugan_core::optim::AdamConfig;
use ugan_core::train::{TrainMode, TrainSchedule};

use crate::error::{LabError, Result};

pub const DATA_DIR_ENV: &str = "UGAN_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Moons,
    Mnist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub name: String,
    /// Epoch cadence of `ckpt/last.ckpt`; 0 writes it only at the end.
    pub checkpoint_every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub kind: DataKind,
    /// Directory of the four IDX files; empty means `$UGAN_DATA_DIR`.
    pub dir: String,
    pub seed: u64,
    pub n_labeled: usize,
    /// Moons: points generated. Digits: cap on the unlabeled pool, 0 for all.
    pub n_unlabeled: usize,
    /// Moons: points generated. Digits: trailing training images held out.
    pub n_valid: usize,
    /// Moons: points generated. Digits: leading test images used, 0 for all.
    pub n_test: usize,
    /// Gaussian noise of the moons generator.
    pub noise: f64,
    /// Non-empty selects a manual split with these labeled indices.
    pub manual_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub latent_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub input_noise: f64,
    pub hidden_noise: f64,
    pub slope: f64,
    /// Classifier hidden layer used for feature matching; absent means the last.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_layer: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Ugan,
    Supervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub mode: ModeName,
    pub epochs: u64,
    pub gate_epoch: u64,
    pub batch_bg: usize,
    pub batch_gg: usize,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub pseudo_pair_fraction: f64,
    pub pseudo_warmup_epochs: u64,
    pub pseudo_ramp_epochs: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub pull_away_weight: f64,
    pub seed: u64,
    /// Non-empty runs one sub-run per seed under `seed-<s>/`.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
}

impl Config {
    /// Built-in defaults for a dataset kind.
    pub fn profile(kind: DataKind) -> Config {
        let (name, model, schedule) = match kind {
            DataKind::Moons => ("moons", ModelConfig::synthetic(2), TrainSchedule::synthetic()),
            DataKind::Mnist => ("mnist", ModelConfig::mnist(10, 100), TrainSchedule::mnist()),
        };
        let data = match kind {
            DataKind::Moons => DataSection {
                kind,
                dir: String::new(),
                seed: 0,
                n_labeled: 8,
                n_unlabeled: 1000,
                n_valid: 500,
                n_test: 1000,
                noise: 0.1,
                manual_indices: Vec::new(),
            },
            DataKind::Mnist => DataSection {
                kind,
                dir: String::new(),
                seed: 0,
                n_labeled: 100,
                n_unlabeled: 0,
                n_valid: 10_000,
                n_test: 0,
                noise: 0.0,
                manual_indices: Vec::new(),
            },
        };
        Config {
            run: RunSection {
                name: name.into(),
                checkpoint_every: 10,
            },
            data,
            model: ModelSection {
                latent_dim: model.latent_dim,
                generator_hidden: model.generator_hidden,
                classifier_hidden: model.classifier_hidden,
                discriminator_hidden: model.discriminator_hidden,
                input_noise: model.input_noise,
                hidden_noise: model.hidden_noise,
                slope: model.slope,
                feature_layer: model.feature_layer,
            },
            train: TrainSection {
                mode: ModeName::Ugan,
                epochs: schedule.total_epochs,
                gate_epoch: schedule.gate_epoch,
                batch_bg: schedule.batch_bg,
                batch_gg: schedule.batch_gg,
                batch_labeled: schedule.batch_labeled,
                batch_unlabeled: schedule.batch_unlabeled,
                pseudo_pair_fraction: schedule.pseudo_pair_fraction,
                pseudo_warmup_epochs: schedule.pseudo_warmup_epochs,
                pseudo_ramp_epochs: schedule.pseudo_ramp_epochs,
                learning_rate: schedule.optimizer.learning_rate,
                beta1: schedule.optimizer.beta1,
                beta2: schedule.optimizer.beta2,
                epsilon: schedule.optimizer.epsilon,
                lambda0: schedule.weights.lambda0,
                lambda1: schedule.weights.lambda1,
                lambda2: schedule.weights.lambda2,
                pull_away_weight: schedule.pull_away_weight,
                seed: 0,
                seeds: Vec::new(),
            },
        }
    }

    /// Layers `user` and then `overrides` over the profile named by `data.kind`.
    pub fn resolve(user: Table, overrides: &[String]) -> Result<Config> {
        let mut table = user;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let kind = match table.get("data").and_then(|d| d.get("kind")) {
            None => DataKind::Moons,
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|_| LabError::Config(format!("data.kind must be \"moons\" or \"mnist\", got {v}")))?,
        };
        let data_seed_given = table.get("data").and_then(|d| d.get("seed")).is_some();
        let mut merged = Value::try_from(Config::profile(kind))
            .map_err(|e| LabError::Config(e.to_string()))?;
        merge(&mut merged, Value::Table(table));
        let mut cfg: Config = merged.try_into().map_err(|e| LabError::Config(e.to_string()))?;
        if !data_seed_given {
            cfg.data.seed = cfg.train.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_str(text: &str, overrides: &[String]) -> Result<Config> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| LabError::Config(e.to_string()))?;
        Config::resolve(table, overrides)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Config> {
        let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Config::from_str(&text, overrides).map_err(|e| match e {
            LabError::Config(m) => LabError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.name.is_empty() || self.run.name.contains(['/', '\\']) || self.run.name.starts_with('.') {
            return Err(LabError::Config(format!("run.name {:?} is not a plain directory name", self.run.name)));
        }
        self.model_config(2, 2).validate()?;
        self.schedule().validate()?;
        Ok(())
    }

    /// The effective configuration as TOML, written to `config.echo`.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// SHA-256 of [`Config::echo`].
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.echo().as_bytes()).into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn model_config(&self, data_dim: usize, num_classes: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            data_dim,
            num_classes,
            latent_dim: m.latent_dim,
            generator_hidden: m.generator_hidden.clone(),
            classifier_hidden: m.classifier_hidden.clone(),
            discriminator_hidden: m.discriminator_hidden.clone(),
            input_noise: m.input_noise,
            hidden_noise: m.hidden_noise,
            slope: m.slope,
            feature_layer: m.feature_layer,
        }
    }

    pub fn schedule(&self) -> TrainSchedule {
        let t = &self.train;
        TrainSchedule {
            total_epochs: t.epochs,
            gate_epoch: t.gate_epoch,
            batch_bg: t.batch_bg,
            batch_gg: t.batch_gg,
            batch_labeled: t.batch_labeled,
            batch_unlabeled: t.batch_unlabeled,
            pseudo_pair_fraction: t.pseudo_pair_fraction,
            pseudo_warmup_epochs: t.pseudo_warmup_epochs,
            pseudo_ramp_epochs: t.pseudo_ramp_epochs,
            optimizer: AdamConfig {
                learning_rate: t.learning_rate,
                beta1: t.beta1,
                beta2: t.beta2,
                epsilon: t.epsilon,
            },
            weights: LossWeights {
                lambda0: t.lambda0,
                lambda1: t.lambda1,
                lambda2: t.lambda2,
            },
            pull_away_weight: t.pull_away_weight,
            seed: t.seed,
            mode: match t.mode {
                ModeName::Ugan => TrainMode::Ugan,
                ModeName::Supervised => TrainMode::Supervised,
            },
        }
    }

    /// One configuration per entry of `train.seeds`, or just this one.
    pub fn per_seed(&self) -> Vec<Config> {
        if self.train.seeds.is_empty() {
            return vec![self.clone()];
        }
        self.train
            .seeds
            .iter()
            .map(|&s| {
                let mut c = self.clone();
                if c.data.seed == c.train.seed {
                    c.data.seed = s;
                }
                c.train.seed = s;
                c.train.seeds.clear();
                c
            })
            .collect()
    }

    /// Directory holding the IDX files.
    pub fn data_dir(&self) -> Result<PathBuf> {
        if !self.data.dir.is_empty() {
            return Ok(PathBuf::from(&self.data.dir));
        }
        std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| LabError::Config(format!("data.dir is empty and {DATA_DIR_ENV} is not set")))
    }
}

fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Table(b), Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `section.key=value`; the value is read as TOML and falls back to a string.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let bad = || LabError::Usage(format!("--set expects section.key=value, got {assignment:?}"));
    let (path, raw) = assignment.split_once('=').ok_or_else(bad)?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
        return Err(bad());
    }
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.trim().to_string()),
    };
    let mut cursor = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cursor
            .entry(k.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| LabError::Config(format!("{k} is not a section")))?;
    }
    cursor.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}
