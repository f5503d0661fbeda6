//! Auxiliary latent diffusion prior for unconditional generation.
//!
//! A trained model's aggregate posterior (the product of all modality
//! experts, pooled over the data) rarely matches `N(0, I)`, so decoding
//! standard-normal latents lands in regions the decoders never saw. The
//! auxiliary prior is an unconditional eps-network trained on latents drawn
//! from that aggregate posterior; DDIM sampling from it turns Gaussian noise
//! into latents that resemble the posterior.
//!
//! Encoders stay frozen: latents are collected once from the trained model
//! and the prior is fitted to them afterwards.

use diffmvae_nn::{Adam, ParamStore, Tape};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion_decoder::{simple_eps_loss, ConditionalEpsMlp, EpsNetwork};
use crate::error::{invalid, Error, Result};
use crate::multimodal_model::DiffMvae;
use crate::noise_schedule::{NoiseSchedule, ScheduleParams};
use crate::sampling::{ddim_sample, standard_normal, Conditioned};

/// Standard deviations below this are treated as this value when
/// standardizing latents.
const MIN_SCALE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuxPriorConfig {
    pub hidden: usize,
    pub blocks: usize,
    pub time_dim: usize,
    /// Number of posterior latents collected for training.
    pub num_latents: usize,
    pub train_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fit the prior to per-dimension standardized latents.
    pub standardize: bool,
    pub schedule: ScheduleParams,
    pub sample_steps: usize,
}

impl Default for AuxPriorConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            blocks: 2,
            time_dim: 16,
            num_latents: 20_000,
            train_steps: 5000,
            batch_size: 256,
            lr: 1e-3,
            standardize: true,
            schedule: ScheduleParams::default_discrete(),
            sample_steps: 50,
        }
    }
}

impl AuxPriorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.sample_steps == 0 || self.num_latents == 0 {
            return Err(invalid("aux prior batch size, latent count and sample steps must be positive"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(invalid(format!("aux prior learning rate must be finite and nonnegative, got {}", self.lr)));
        }
        self.schedule.build().map(drop)
    }
}

/// A latent eps-network together with the affine map between model latents
/// and the space the network was trained in.
pub struct AuxPrior {
    config: AuxPriorConfig,
    latent_dim: usize,
    net: Box<dyn EpsNetwork>,
    params: ParamStore,
    schedule: NoiseSchedule,
    shift: Array1<f64>,
    scale: Array1<f64>,
}

impl AuxPrior {
    /// Untrained prior with an MLP eps-network named `aux`.
    pub fn new<R: Rng + ?Sized>(latent_dim: usize, config: AuxPriorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let net = ConditionalEpsMlp::new(&mut params, "aux", latent_dim, 0, config.hidden, config.blocks, config.time_dim, rng)?;
        Self::with_network(config, Box::new(net), params)
    }

    /// Prior around a custom unconditional network.
    pub fn with_network(config: AuxPriorConfig, net: Box<dyn EpsNetwork>, params: ParamStore) -> Result<Self> {
        config.validate()?;
        if net.cond_dim() != 0 {
            return Err(invalid("the latent prior network must be unconditional"));
        }
        let latent_dim = net.data_dim();
        let schedule = config.schedule.build()?;
        Ok(Self {
            config,
            latent_dim,
            net,
            params,
            schedule,
            shift: Array1::zeros(latent_dim),
            scale: Array1::ones(latent_dim),
        })
    }

    pub fn config(&self) -> &AuxPriorConfig {
        &self.config
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// Per-dimension `(shift, scale)`: model latents are `shift + scale * u`
    /// for network-space latents `u`.
    pub fn standardization(&self) -> (&Array1<f64>, &Array1<f64>) {
        (&self.shift, &self.scale)
    }

    pub fn set_standardization(&mut self, shift: Array1<f64>, scale: Array1<f64>) -> Result<()> {
        if shift.len() != self.latent_dim || scale.len() != self.latent_dim {
            return Err(invalid("standardization vectors must match the latent width"));
        }
        if scale.iter().any(|&s| !(s.is_finite() && s > 0.0)) || shift.iter().any(|v| !v.is_finite()) {
            return Err(invalid("standardization must be finite with positive scales"));
        }
        self.shift = shift;
        self.scale = scale;
        Ok(())
    }

    fn to_network_space(&self, z: &Array2<f64>) -> Array2<f64> {
        (z - &self.shift) / &self.scale
    }

    fn from_network_space(&self, u: Array2<f64>) -> Array2<f64> {
        u * &self.scale + &self.shift
    }

    /// Mean eps-MSE on network-space latents `u` with one random time per
    /// row. Draws the times, then the `B x D` noise.
    pub fn loss<'t, R: Rng + ?Sized>(&self, tape: &'t Tape, u: &Array2<f64>, rng: &mut R) -> Result<diffmvae_nn::Var<'t>> {
        let t: Vec<_> = (0..u.nrows()).map(|_| self.schedule.sample_timestep(rng)).collect();
        let eps = standard_normal(u.nrows(), u.ncols(), rng);
        simple_eps_loss(self.net.as_ref(), tape, &self.params, u, None, &t, &eps, &self.schedule)
    }

    /// Draws `n` model-space latents with DDIM.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Array2<f64>> {
        sample_prior(self, n, self.config.sample_steps, rng)
    }
}

/// Draws `n` latents from the full product of experts, one per record,
/// cycling through the records in order when `n` exceeds their count.
///
/// `data` holds every modality. Records are processed in chunks; each chunk
/// draws its `rows x D` noise in turn.
pub fn collect_posterior_latents<R: Rng + ?Sized>(
    model: &DiffMvae,
    data: &[Array2<f64>],
    n: usize,
    rng: &mut R,
) -> Result<Array2<f64>> {
    const CHUNK: usize = 512;
    let records = data.first().map_or(0, Array2::nrows);
    if records == 0 {
        return Err(invalid("cannot collect latents from an empty dataset"));
    }
    if data.len() != model.num_modalities() {
        return Err(invalid(format!(
            "latent collection needs all {} modalities, got {}",
            model.num_modalities(),
            data.len()
        )));
    }
    if data.iter().any(|x| x.nrows() != records) {
        return Err(invalid("modalities have different record counts"));
    }
    let all: Vec<usize> = (0..model.num_modalities()).collect();
    let d = model.latent_dim();
    let mut out = Array2::zeros((n, d));
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let idx: Vec<usize> = (start..end).map(|k| k % records).collect();
        let chunk: Vec<Array2<f64>> = data.iter().map(|x| x.select(Axis(0), &idx)).collect();
        let observed: Vec<Option<&Array2<f64>>> = chunk.iter().map(Some).collect();
        let (mean, log_var) = model.posterior(&observed, &all)?;
        let noise = standard_normal(idx.len(), d, rng);
        let z = mean + log_var.mapv(|lv| (0.5 * lv).exp()) * noise;
        out.slice_mut(ndarray::s![start..end, ..]).assign(&z);
        start = end;
    }
    Ok(out)
}

/// Fits `prior` to `latents` with `steps` Adam steps on minibatches drawn
/// with replacement, and returns the per-step losses. The learning rate
/// follows a cosine decay from the configured value to zero.
///
/// With standardization enabled the prior's shift and scale are first set
/// to the per-dimension mean and standard deviation of `latents`. Zero steps
/// leave the prior untouched.
pub fn train_aux_prior<R: Rng + ?Sized>(
    prior: &mut AuxPrior,
    latents: &Array2<f64>,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = latents.nrows();
    if n == 0 {
        return Err(invalid("cannot train the latent prior on an empty latent set"));
    }
    if latents.ncols() != prior.latent_dim {
        return Err(invalid(format!("latents have {} columns, prior expects {}", latents.ncols(), prior.latent_dim)));
    }
    if latents.iter().any(|v| !v.is_finite()) {
        return Err(invalid("latents contain non-finite values"));
    }
    if steps == 0 {
        return Ok(Vec::new());
    }
    if prior.config.standardize {
        let mean = latents.mean_axis(Axis(0)).expect("nonempty");
        let std = latents.std_axis(Axis(0), 0.0).mapv(|s| s.max(MIN_SCALE));
        prior.set_standardization(mean, std)?;
    }
    let u = prior.to_network_space(latents);
    let batch = prior.config.batch_size.min(n);
    let mut opt = Adam::new(&prior.params, prior.config.lr).with_clip_norm(10.0);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        opt.lr = prior.config.lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / steps as f64).cos());
        let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..n)).collect();
        let ub = u.select(Axis(0), &idx);
        let tape = Tape::new();
        let loss = prior.loss(&tape, &ub, rng)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::NonFinite { term: "latent prior loss".into(), detail: format!("step {step}: {value}") });
        }
        let grads = tape.backward(loss).into_param_grads(&prior.params);
        if !grads.all_finite() {
            return Err(Error::NonFinite { term: "latent prior gradient".into(), detail: format!("step {step}") });
        }
        opt.step(&mut prior.params, &grads);
        losses.push(value);
    }
    Ok(losses)
}

/// DDIM with `steps` steps from `n` standard-normal draws, mapped back to
/// model latent space.
pub fn sample_prior<R: Rng + ?Sized>(prior: &AuxPrior, n: usize, steps: usize, rng: &mut R) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(invalid("need at least one latent sample"));
    }
    let x = standard_normal(n, prior.latent_dim, rng);
    let den = Conditioned::new(prior.net.as_ref(), &prior.params, None);
    let u = ddim_sample(&den, &prior.schedule, steps, x)?;
    Ok(prior.from_network_space(u))
}
