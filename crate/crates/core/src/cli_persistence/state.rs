//! Conversions between live training state and checkpoints.
//!
//! A model checkpoint stores the resolved run config (as TOML), the modality
//! specs, every parameter, the Adam moments and the trainer's random stream,
//! so training state can be rebuilt exactly up to `f32` rounding of the
//! arrays. An aux-prior checkpoint stores the prior's parameters, its
//! standardization and its config, keyed to the parent model's config hash.

use diffmvae_nn::Adam;
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, NamedArray, RngState};
use super::config::{config_hash, RunConfig};
use crate::aux_prior::{AuxPrior, AuxPriorConfig};
use crate::error::{Error, Result};
use crate::multimodal_model::{DiffMvae, ModalitySpec, Trainer};

pub const MODEL_KIND: &str = "model";
pub const AUX_KIND: &str = "aux";
const AUX_SHIFT: &str = "aux_standardization.shift";
const AUX_SCALE: &str = "aux_standardization.scale";

fn metadata_str<'a>(ckpt: &'a Checkpoint, key: &str) -> Result<&'a str> {
    ckpt.metadata
        .get(key)
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::Integrity(format!("checkpoint metadata lacks '{key}'")))
}

fn expect_kind(ckpt: &Checkpoint, kind: &str) -> Result<()> {
    let found = metadata_str(ckpt, "kind")?;
    if found != kind {
        return Err(Error::Integrity(format!("expected a {kind} checkpoint, found a {found} checkpoint")));
    }
    Ok(())
}

/// Snapshot of a trainer, its model and the run config that produced it.
pub fn model_checkpoint(trainer: &Trainer, cfg: &RunConfig) -> Result<Checkpoint> {
    let toml = cfg.to_toml();
    let model = trainer.model();
    let mut c = Checkpoint::new(config_hash(&toml));
    c.step = trainer.steps_taken();
    c.schedule = Some(model.schedule().params());
    c.rng = Some(RngState::capture(trainer.rng()));
    c.metadata.insert("kind".into(), MODEL_KIND.into());
    c.metadata.insert("config".into(), toml.into());
    let specs = serde_json::to_value(model.specs()).map_err(|e| Error::InvalidInput(e.to_string()))?;
    c.metadata.insert("specs".into(), specs);
    c.push_params("", model.params());
    c.push_optimizer(trainer.optimizer(), model.params());
    Ok(c)
}

/// The run config and model stored in a model checkpoint.
pub fn load_model(ckpt: &Checkpoint) -> Result<(RunConfig, DiffMvae)> {
    expect_kind(ckpt, MODEL_KIND)?;
    let toml = metadata_str(ckpt, "config")?;
    if config_hash(toml) != ckpt.config_hash {
        return Err(Error::Integrity("stored config does not match the stored config hash".into()));
    }
    let cfg = RunConfig::from_toml_with_overrides(toml, &[])?;
    let specs: Vec<ModalitySpec> = serde_json::from_value(
        ckpt.metadata.get("specs").cloned().ok_or_else(|| Error::Integrity("checkpoint metadata lacks 'specs'".into()))?,
    )
    .map_err(|e| Error::Integrity(format!("specs: {e}")))?;
    // Initial values are overwritten, so the initializer's stream is irrelevant.
    let mut model = DiffMvae::new(cfg.model.clone(), specs, &mut ChaCha8Rng::seed_from_u64(0))?;
    ckpt.load_params("", model.params_mut())?;
    if ckpt.schedule.is_some_and(|s| s != model.schedule().params()) {
        return Err(Error::Integrity("stored schedule disagrees with the stored config".into()));
    }
    Ok((cfg, model))
}

/// Rebuilds the full trainer (model, Adam moments, random stream and
/// learning-rate schedule) from a model checkpoint.
pub fn restore_trainer(ckpt: &Checkpoint) -> Result<(RunConfig, Trainer)> {
    let (cfg, model) = load_model(ckpt)?;
    let optimizer: Adam = ckpt.load_optimizer(model.params())?;
    let rng = ckpt.rng.as_ref().ok_or_else(|| Error::Integrity("checkpoint has no rng state".into()))?.restore()?;
    let trainer = Trainer::from_state(model, optimizer, rng)
        .with_lr_schedule(cfg.train.lr_schedule())
        .with_base_lr(cfg.train.lr);
    Ok((cfg, trainer))
}

/// Snapshot of a trained aux prior belonging to the model whose config hash
/// is `parent_hash`.
pub fn aux_checkpoint(prior: &AuxPrior, parent_hash: &str) -> Result<Checkpoint> {
    let mut c = Checkpoint::new(parent_hash);
    c.schedule = Some(prior.schedule().params());
    c.metadata.insert("kind".into(), AUX_KIND.into());
    let aux_cfg = serde_json::to_value(prior.config()).map_err(|e| Error::InvalidInput(e.to_string()))?;
    c.metadata.insert("aux_config".into(), aux_cfg);
    c.metadata.insert("latent_dim".into(), prior.latent_dim().into());
    c.push_params("", prior.params());
    let (shift, scale) = prior.standardization();
    let row = |v: &Array1<f64>| v.clone().insert_axis(ndarray::Axis(0));
    c.arrays.push(NamedArray::from_matrix(AUX_SHIFT, &row(shift)));
    c.arrays.push(NamedArray::from_matrix(AUX_SCALE, &row(scale)));
    Ok(c)
}

/// The aux prior stored in an aux checkpoint.
pub fn load_aux(ckpt: &Checkpoint) -> Result<AuxPrior> {
    expect_kind(ckpt, AUX_KIND)?;
    let cfg: AuxPriorConfig = serde_json::from_value(
        ckpt.metadata.get("aux_config").cloned().ok_or_else(|| Error::Integrity("metadata lacks 'aux_config'".into()))?,
    )
    .map_err(|e| Error::Integrity(format!("aux config: {e}")))?;
    let d = ckpt
        .metadata
        .get("latent_dim")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Integrity("metadata lacks 'latent_dim'".into()))? as usize;
    let mut prior = AuxPrior::new(d, cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    ckpt.load_params("", prior.params_mut())?;
    let vector = |name: &str| -> Result<Array1<f64>> {
        let a = ckpt.array(name).ok_or_else(|| Error::Integrity(format!("checkpoint lacks '{name}'")))?;
        let m: Array2<f64> = a.to_matrix();
        Ok(m.into_shape_with_order(a.data.len()).expect("row vector"))
    };
    prior.set_standardization(vector(AUX_SHIFT)?, vector(AUX_SCALE)?).map_err(|e| Error::Integrity(e.to_string()))?;
    Ok(prior)
}
