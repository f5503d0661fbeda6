//! Conditional and unconditional generation from a trained model.
//!
//! Conditional generation fuses the observed modalities' experts, draws one
//! latent per record and decodes every target from it. Unconditional
//! generation draws latents from the auxiliary prior (or `N(0, I)`) and
//! decodes every modality from the same latent, which is what makes the
//! modalities of one record agree.
//!
//! Feed-forward decoders emit the likelihood mean (probabilities for
//! Bernoulli, one-hot argmax for categorical). Diffusion decoders run the
//! configured sampler conditioned on the latent and map the result back to
//! `[0, 1]`. DDIM clamps its clean estimate to the data range by default;
//! Euler–Maruyama results are only clamped at the end.
//!
//! Random draws happen in this order: the latent (noise for the posterior
//! draw, or the prior's draws), then for each decoded diffusion modality in
//! index order its initial noise followed by any sampler noise.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aux_prior::AuxPrior;
use crate::error::{invalid, Result};
use crate::multimodal_model::{from_diffusion_space, Decoder, DiffMvae, Observed};
use crate::sampling::{ddim_sample_clipped, standard_normal, Conditioned, EulerMaruyama};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Deterministic DDIM; works with both schedule kinds.
    Ddim,
    /// Euler–Maruyama on the reverse SDE; needs a continuous schedule.
    Em,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub steps: usize,
    /// Use the posterior mean instead of a posterior draw when conditioning.
    pub mean_latent: bool,
    /// Clamp DDIM's clean estimate to the data range `[-1, 1]` at every step.
    pub clip_denoised: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self::ddim(50)
    }
}

impl SamplerConfig {
    pub fn ddim(steps: usize) -> Self {
        Self { kind: SamplerKind::Ddim, steps, mean_latent: false, clip_denoised: true }
    }

    pub fn euler_maruyama(steps: usize) -> Self {
        Self { kind: SamplerKind::Em, steps, mean_latent: false, clip_denoised: true }
    }

    pub fn with_mean_latent(self, mean_latent: bool) -> Self {
        Self { mean_latent, ..self }
    }
}

/// Generated modalities keyed by name, each `n x dim`.
pub type Generated = BTreeMap<String, Array2<f64>>;

/// Decodes `targets` (modality indices) from latents `z`.
pub fn decode_latents<R: Rng + ?Sized>(
    model: &DiffMvae,
    z: &Array2<f64>,
    targets: &[usize],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Generated> {
    if z.ncols() != model.latent_dim() {
        return Err(invalid(format!("latents have {} columns, model uses {}", z.ncols(), model.latent_dim())));
    }
    let mut targets = targets.to_vec();
    targets.sort_unstable();
    targets.dedup();
    let mut out = Generated::new();
    for i in targets {
        let m = model.modalities().get(i).ok_or_else(|| invalid(format!("modality index {i} out of range")))?;
        let x = match &m.decoder {
            Decoder::FeedForward(_) => model.decode_feed_forward(i, z)?,
            Decoder::Diffusion(net) => {
                let den = Conditioned::new(net.as_ref(), model.params(), Some(z));
                let x_init = standard_normal(z.nrows(), m.spec.data_dim(), rng);
                let x = match cfg.kind {
                    SamplerKind::Ddim => {
                        let clip = cfg.clip_denoised.then_some((-1.0, 1.0));
                        ddim_sample_clipped(&den, model.schedule(), cfg.steps, x_init, clip)?
                    }
                    SamplerKind::Em => EulerMaruyama::new(cfg.steps).sample_denoiser(&den, model.schedule(), x_init, rng)?,
                };
                from_diffusion_space(&x)
            }
        };
        out.insert(m.spec.name.clone(), x);
    }
    Ok(out)
}

/// Generates `targets` from the observed modalities of each record.
///
/// `observed[i]` is `Some(n x dim_i)` for observed modalities. Targets must
/// not be observed; an empty target set gives an empty result.
pub fn conditional_generate<R: Rng + ?Sized>(
    model: &DiffMvae,
    observed: &Observed<'_>,
    targets: &[usize],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Generated> {
    if observed.len() > model.num_modalities() {
        return Err(invalid(format!("{} observed slots for {} modalities", observed.len(), model.num_modalities())));
    }
    let given: Vec<usize> = observed.iter().enumerate().filter_map(|(i, x)| x.map(|_| i)).collect();
    if given.is_empty() {
        return Err(invalid("conditional generation needs at least one observed modality; use unconditional_generate"));
    }
    if let Some(t) = targets.iter().find(|t| given.contains(t)) {
        return Err(invalid(format!("target modality {t} is also observed")));
    }
    if let Some(t) = targets.iter().find(|&&t| t >= model.num_modalities()) {
        return Err(invalid(format!("target modality index {t} out of range")));
    }
    if targets.is_empty() {
        return Ok(Generated::new());
    }
    let (mean, log_var) = model.posterior(observed, &given)?;
    let z = if cfg.mean_latent {
        mean
    } else {
        let noise = standard_normal(mean.nrows(), mean.ncols(), rng);
        mean + log_var.mapv(|lv| (0.5 * lv).exp()) * noise
    };
    decode_latents(model, &z, targets, cfg, rng)
}

/// Generates `n` complete records from prior latents: the auxiliary prior
/// when given, otherwise `N(0, I)`.
pub fn unconditional_generate<R: Rng + ?Sized>(
    model: &DiffMvae,
    aux: Option<&AuxPrior>,
    n: usize,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Generated> {
    let z = prior_latents(model, aux, n, rng)?;
    let all: Vec<usize> = (0..model.num_modalities()).collect();
    decode_latents(model, &z, &all, cfg, rng)
}

/// `n` latents from the auxiliary prior or `N(0, I)`.
pub fn prior_latents<R: Rng + ?Sized>(
    model: &DiffMvae,
    aux: Option<&AuxPrior>,
    n: usize,
    rng: &mut R,
) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(invalid("need at least one record"));
    }
    match aux {
        Some(prior) => {
            if prior.latent_dim() != model.latent_dim() {
                return Err(invalid(format!(
                    "prior has latent width {}, model uses {}",
                    prior.latent_dim(),
                    model.latent_dim()
                )));
            }
            prior.sample(n, rng)
        }
        None => Ok(standard_normal(n, model.latent_dim(), rng)),
    }
}
