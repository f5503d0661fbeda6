//! Hierarchical run configuration in TOML with dotted-path overrides.
//!
//! Every section has defaults, so an empty file is a valid config. Unknown
//! keys are rejected at every level. The resolved config (after defaults
//! and overrides) is what gets hashed and stored next to checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aux_prior::AuxPriorConfig;
use crate::data_synth::{make_polymnist_like, make_shapes_attributes, MultimodalDataset, ProbeConfig};
use crate::error::{Error, Result};
use crate::generation::SamplerConfig;
use crate::multimodal_model::{DecoderKind, LrSchedule, ModalitySpec, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataPreset {
    /// `make_polymnist_like`: `modalities` glyph images.
    Polymnist,
    /// `make_shapes_attributes`: image, mask and attribute bits.
    Shapes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub preset: DataPreset,
    /// Total records; the first `train` go to training, the rest to
    /// evaluation.
    pub n: usize,
    pub train: usize,
    /// Modality count for the polymnist preset.
    pub modalities: usize,
    pub seed: u64,
    /// Decoder kind for modalities not listed in `decoders`.
    pub decoder: DecoderKind,
    /// Per-modality decoder overrides keyed by modality name.
    pub decoders: BTreeMap<String, DecoderKind>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            preset: DataPreset::Polymnist,
            n: 20_000,
            train: 18_000,
            modalities: 2,
            seed: 0,
            decoder: DecoderKind::Diffusion,
            decoders: BTreeMap::new(),
        }
    }
}

impl DataConfig {
    pub fn build(&self) -> Result<MultimodalDataset> {
        match self.preset {
            DataPreset::Polymnist => make_polymnist_like(self.n, self.modalities, self.seed),
            DataPreset::Shapes => make_shapes_attributes(self.n, self.seed),
        }
    }

    pub fn specs(&self, dataset: &MultimodalDataset) -> Vec<ModalitySpec> {
        dataset.specs(|name| self.decoders.get(name).copied().unwrap_or(self.decoder))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Cosine decay over `steps` when true, constant rate otherwise.
    pub cosine_decay: bool,
    /// Metric lines are written every `log_every` steps (and at the end).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-3, steps: 3000, batch_size: 128, cosine_decay: true, log_every: 100 }
    }
}

impl TrainConfig {
    pub fn lr_schedule(&self) -> LrSchedule {
        if self.cosine_decay {
            LrSchedule::Cosine { total_steps: self.steps as u64 }
        } else {
            LrSchedule::Constant
        }
    }
}

/// Probe classifiers trained by `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub probe_hidden: Vec<usize>,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub probe_input_noise: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let p = ProbeConfig::default();
        Self { probe_hidden: p.hidden, probe_epochs: p.epochs, probe_lr: p.lr, probe_input_noise: p.input_noise }
    }
}

impl EvalConfig {
    pub fn probe_config(&self, seed: u64) -> ProbeConfig {
        ProbeConfig {
            hidden: self.probe_hidden.clone(),
            epochs: self.probe_epochs,
            lr: self.probe_lr,
            input_noise: self.probe_input_noise,
            seed,
            ..ProbeConfig::default()
        }
    }
}

/// Everything a run needs, fully resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub aux: AuxPriorConfig,
    pub sampler: SamplerConfig,
    pub eval: EvalConfig,
}


impl RunConfig {
    /// Parses TOML text, applies `key=value` overrides in order and
    /// validates the result.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value = text.parse::<toml::Table>().map(toml::Value::Table).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults when `None`).
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.aux.validate()?;
        let d = &self.data;
        if d.n == 0 || d.train == 0 || d.train > d.n {
            return Err(Error::Config(format!("data.train must be in 1..=data.n, got {} of {}", d.train, d.n)));
        }
        if self.train.batch_size == 0 || !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
            return Err(Error::Config("train.batch_size and train.lr must be positive".into()));
        }
        if self.train.log_every == 0 {
            return Err(Error::Config("train.log_every must be positive".into()));
        }
        if self.sampler.steps == 0 {
            return Err(Error::Config("sampler.steps must be positive".into()));
        }
        Ok(())
    }

    /// Canonical TOML of the resolved config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    /// SHA-256 hex digest of [`RunConfig::to_toml`].
    pub fn hash(&self) -> String {
        config_hash(&self.to_toml())
    }
}

pub fn config_hash(resolved_toml: &str) -> String {
    hex::encode(Sha256::digest(resolved_toml.as_bytes()))
}

/// Applies one `a.b.c=value` override. The value is parsed as a TOML value
/// when possible (numbers, booleans, arrays, inline tables) and taken as a
/// bare string otherwise.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override key '{path}' has an empty component")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = keys.split_last().expect("at least one key");
    let mut node = root;
    for k in parents {
        let table = node.as_table_mut().ok_or_else(|| Error::Config(format!("'{path}' descends into a non-table value")))?;
        node = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| Error::Config(format!("'{path}' descends into a non-table value")))?
        .insert(last.to_string(), value);
    Ok(())
}
