use serde::{Deserialize, Serialize};

use super::subsets::SubsetStrategy;
use crate::error::{invalid, Result};
use crate::noise_schedule::{ScheduleParams, WeightMode};

/// How diffusion times are drawn for one diffusion term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestepSampling {
    /// An independent time for every record in the batch.
    PerRecord,
    /// One time shared by the whole batch.
    PerBatch,
}

/// Widths of the default MLP networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub eps_hidden: usize,
    pub eps_blocks: usize,
    pub time_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self { encoder_hidden: vec![256], decoder_hidden: vec![256], eps_hidden: 256, eps_blocks: 2, time_dim: 32 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    /// Coefficient on `KL(q || N(0, I))`.
    pub kl_weight: f64,
    pub weight_mode: WeightMode,
    pub subset_strategy: SubsetStrategy,
    /// Whether the standard-normal prior joins every product of experts.
    pub include_prior: bool,
    pub timestep_sampling: TimestepSampling,
    pub schedule: ScheduleParams,
    pub arch: ArchConfig,
}

/// Diff-MVAE* with a 16-dimensional latent, sized for the synthetic
/// datasets.
impl Default for ModelConfig {
    fn default() -> Self {
        Self::diff_mvae_star(16)
    }
}

impl ModelConfig {
    pub const DIFF_MVAE_KL_WEIGHT: f64 = 1e-5;

    /// Likelihood-weighted variant on the continuous VP schedule.
    pub fn diff_mvae(latent_dim: usize) -> Self {
        Self {
            latent_dim,
            kl_weight: Self::DIFF_MVAE_KL_WEIGHT,
            weight_mode: WeightMode::Likelihood,
            subset_strategy: SubsetStrategy::Auto,
            include_prior: false,
            timestep_sampling: TimestepSampling::PerRecord,
            schedule: ScheduleParams::default_continuous(),
            arch: ArchConfig::default(),
        }
    }

    /// Unit-weight variant on the discrete schedule.
    pub fn diff_mvae_star(latent_dim: usize) -> Self {
        Self {
            weight_mode: WeightMode::Simple,
            schedule: ScheduleParams::default_discrete(),
            ..Self::diff_mvae(latent_dim)
        }
    }

    /// Image-caption preset: 768-dimensional latent.
    pub fn image_caption_preset() -> Self {
        Self::diff_mvae(768)
    }

    /// Face image, mask and attribute preset: 256-dimensional latent.
    pub fn face_attribute_preset() -> Self {
        Self::diff_mvae(256)
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(invalid("latent_dim must be at least 1"));
        }
        if !(self.kl_weight > 0.0 && self.kl_weight.is_finite()) {
            return Err(invalid(format!("kl_weight must be positive, got {}", self.kl_weight)));
        }
        if let SubsetStrategy::Sampled { k: 0 } = self.subset_strategy {
            return Err(invalid("sampled subset strategy needs k >= 1"));
        }
        if self.arch.time_dim < 2 || !self.arch.time_dim.is_multiple_of(2) {
            return Err(invalid("arch.time_dim must be even and at least 2"));
        }
        if self.arch.eps_hidden == 0 {
            return Err(invalid("arch.eps_hidden must be positive"));
        }
        self.schedule.build().map(|_| ())
    }
}
