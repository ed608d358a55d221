//! Flat key=value experiment configuration.
//!
//! An absent file or key falls back to the published defaults; overrides
//! win over file values; unknown keys, type errors and range violations
//! are rejected by name. The fully resolved configuration is snapshotted
//! into every run directory so a run can be reproduced from its artifacts.

use crate::cohort::SynthParams;
use crate::harness::TrainConfig;
use crate::losses::LossMethod;
use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: expected key=value, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key}: cannot parse {value:?} as {expected}")]
    BadValue {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("config: {0}")]
    Range(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Input data locations and the central-slice selection fraction.
#[derive(Debug, Clone)]
pub struct DataConfig {
    pub radio_manifest: Option<PathBuf>,
    pub histo_manifest: Option<PathBuf>,
    pub central_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            radio_manifest: None,
            histo_manifest: None,
            central_fraction: 0.7,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub synth: SynthParams,
    pub data: DataConfig,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_patients: 24,
            positive_fraction: 0.4,
            slices_per_patient: 8,
            image_size: 64,
            weak_noise_rate: 0.2,
            texture_strength: 1.0,
            seed: 0,
        }
    }
}

/// A parsed configuration plus the set of keys that were explicitly set
/// (file or override), for config-hygiene warnings.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub config: ExperimentConfig,
    pub explicit: HashSet<String>,
}

impl ResolvedConfig {
    /// Config-hygiene warnings for a given run method: settings that are
    /// explicitly present but ignored by the selected objective.
    pub fn warnings_for_method(&self, method: LossMethod) -> Vec<String> {
        let mut out = Vec::new();
        if method != LossMethod::WeakSimclr && self.explicit.contains("loss.beta") {
            out.push(format!(
                "loss.beta is ignored for method={}, only weak_simclr mixes the objectives",
                method.as_str()
            ));
        }
        out
    }
}

fn parse_kv_text(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Malformed {
            line: i + 1,
            text: raw.to_string(),
        })?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

fn parse_as<T: std::str::FromStr>(
    key: &str,
    value: &str,
    expected: &'static str,
) -> Result<T, ConfigError> {
    value.parse::<T>().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        expected,
    })
}

fn apply_key(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    match key {
        "data.radio_manifest" => cfg.data.radio_manifest = Some(PathBuf::from(value)),
        "data.histo_manifest" => cfg.data.histo_manifest = Some(PathBuf::from(value)),
        "data.central_fraction" => {
            cfg.data.central_fraction = parse_as::<f64>(key, value, "real")?
        }
        "train.batch_size" => cfg.train.batch_size = parse_as::<usize>(key, value, "positive integer")?,
        "train.n_epochs" => cfg.train.n_epochs = parse_as::<usize>(key, value, "positive integer")?,
        "train.lr_pretrain" => cfg.train.lr_pretrain = parse_as::<f64>(key, value, "real")?,
        "train.wd_pretrain" => cfg.train.wd_pretrain = parse_as::<f64>(key, value, "real")?,
        "train.lr_finetune" => cfg.train.lr_finetune = parse_as::<f64>(key, value, "real")?,
        "train.wd_finetune" => cfg.train.wd_finetune = parse_as::<f64>(key, value, "real")?,
        "train.seed" => cfg.train.seed = parse_as::<u64>(key, value, "unsigned integer")?,
        "train.train_fraction" => cfg.train.train_fraction = parse_as::<f64>(key, value, "real")?,
        "train.k_folds" => cfg.train.k_folds = parse_as::<usize>(key, value, "integer >= 2")?,
        "train.weighted_sampling" => {
            cfg.train.weighted_sampling = parse_as::<bool>(key, value, "bool")?
        }
        "loss.method" => {
            cfg.train.loss.method =
                LossMethod::from_str_opt(value).ok_or_else(|| ConfigError::BadValue {
                    key: key.to_string(),
                    value: value.to_string(),
                    expected: "weak|simclr|supcon|weak_simclr",
                })?
        }
        "loss.tau" => cfg.train.loss.tau = parse_as::<f64>(key, value, "real")?,
        "loss.beta" => cfg.train.loss.beta = parse_as::<f64>(key, value, "real")?,
        "aug.crop_low" => cfg.train.aug.crop_scale_low = parse_as::<f64>(key, value, "real")?,
        "aug.crop_high" => cfg.train.aug.crop_scale_high = parse_as::<f64>(key, value, "real")?,
        "aug.rot_deg" => cfg.train.aug.rotation_degrees = parse_as::<f64>(key, value, "real")?,
        "aug.flip_p" => cfg.train.aug.flip_prob = parse_as::<f64>(key, value, "real")?,
        "aug.cutout" => cfg.train.aug.cutout_enabled = parse_as::<bool>(key, value, "bool")?,
        "aug.cutout_frac" => {
            cfg.train.aug.cutout_size_fraction = parse_as::<f64>(key, value, "real")?
        }
        "synth.n_patients" => {
            cfg.synth.n_patients = parse_as::<usize>(key, value, "positive integer")?
        }
        "synth.positive_fraction" => {
            cfg.synth.positive_fraction = parse_as::<f64>(key, value, "real")?
        }
        "synth.slices_per_patient" => {
            cfg.synth.slices_per_patient = parse_as::<usize>(key, value, "positive integer")?
        }
        "synth.image_size" => {
            cfg.synth.image_size = parse_as::<usize>(key, value, "positive integer")?
        }
        "synth.weak_noise_rate" => {
            cfg.synth.weak_noise_rate = parse_as::<f64>(key, value, "real")?
        }
        "synth.texture_strength" => {
            cfg.synth.texture_strength = parse_as::<f64>(key, value, "real")?
        }
        "synth.seed" => cfg.synth.seed = parse_as::<u64>(key, value, "unsigned integer")?,
        other => return Err(ConfigError::UnknownKey(other.to_string())),
    }
    Ok(())
}

/// Parse an optional config file, apply `key=value` overrides, validate.
pub fn parse_config(
    path: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<ResolvedConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    let mut explicit = HashSet::new();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)?;
        for (k, v) in parse_kv_text(&text)? {
            apply_key(&mut cfg, &k, &v)?;
            explicit.insert(k);
        }
    }
    for (k, v) in overrides {
        apply_key(&mut cfg, k, v)?;
        explicit.insert(k.clone());
    }
    cfg.train.validate().map_err(ConfigError::Range)?;
    cfg.synth.validate().map_err(ConfigError::Range)?;
    if !(cfg.data.central_fraction > 0.0 && cfg.data.central_fraction <= 1.0) {
        return Err(ConfigError::Range(format!(
            "data.central_fraction must be in (0,1], got {}",
            cfg.data.central_fraction
        )));
    }
    Ok(ResolvedConfig { config: cfg, explicit })
}

/// All keys with their resolved values, in canonical order.
pub fn to_key_values(cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    if let Some(p) = &cfg.data.radio_manifest {
        m.insert("data.radio_manifest".into(), p.display().to_string());
    }
    if let Some(p) = &cfg.data.histo_manifest {
        m.insert("data.histo_manifest".into(), p.display().to_string());
    }
    m.insert(
        "data.central_fraction".into(),
        cfg.data.central_fraction.to_string(),
    );
    m.insert("train.batch_size".into(), cfg.train.batch_size.to_string());
    m.insert("train.n_epochs".into(), cfg.train.n_epochs.to_string());
    m.insert("train.lr_pretrain".into(), cfg.train.lr_pretrain.to_string());
    m.insert("train.wd_pretrain".into(), cfg.train.wd_pretrain.to_string());
    m.insert("train.lr_finetune".into(), cfg.train.lr_finetune.to_string());
    m.insert("train.wd_finetune".into(), cfg.train.wd_finetune.to_string());
    m.insert("train.seed".into(), cfg.train.seed.to_string());
    m.insert(
        "train.train_fraction".into(),
        cfg.train.train_fraction.to_string(),
    );
    m.insert("train.k_folds".into(), cfg.train.k_folds.to_string());
    m.insert(
        "train.weighted_sampling".into(),
        cfg.train.weighted_sampling.to_string(),
    );
    m.insert("loss.method".into(), cfg.train.loss.method.as_str().to_string());
    m.insert("loss.tau".into(), cfg.train.loss.tau.to_string());
    m.insert("loss.beta".into(), cfg.train.loss.beta.to_string());
    m.insert("aug.crop_low".into(), cfg.train.aug.crop_scale_low.to_string());
    m.insert("aug.crop_high".into(), cfg.train.aug.crop_scale_high.to_string());
    m.insert("aug.rot_deg".into(), cfg.train.aug.rotation_degrees.to_string());
    m.insert("aug.flip_p".into(), cfg.train.aug.flip_prob.to_string());
    m.insert("aug.cutout".into(), cfg.train.aug.cutout_enabled.to_string());
    m.insert(
        "aug.cutout_frac".into(),
        cfg.train.aug.cutout_size_fraction.to_string(),
    );
    m.insert("synth.n_patients".into(), cfg.synth.n_patients.to_string());
    m.insert(
        "synth.positive_fraction".into(),
        cfg.synth.positive_fraction.to_string(),
    );
    m.insert(
        "synth.slices_per_patient".into(),
        cfg.synth.slices_per_patient.to_string(),
    );
    m.insert("synth.image_size".into(), cfg.synth.image_size.to_string());
    m.insert(
        "synth.weak_noise_rate".into(),
        cfg.synth.weak_noise_rate.to_string(),
    );
    m.insert(
        "synth.texture_strength".into(),
        cfg.synth.texture_strength.to_string(),
    );
    m.insert("synth.seed".into(), cfg.synth.seed.to_string());
    m
}

/// Snapshot the fully resolved configuration into a run directory.
pub fn write_snapshot(cfg: &ExperimentConfig, path: &Path) -> Result<(), ConfigError> {
    let mut text = String::new();
    for (k, v) in to_key_values(cfg) {
        text.push_str(&format!("{k}={v}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}
