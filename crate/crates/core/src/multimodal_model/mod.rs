//! The multimodal model: per-modality encoders and decoders, subset
//! machinery and the hybrid bound.
//!
//! For every modality subset `A` in the mixture the training loss draws
//! `z ~ q(z | x_A)` (product of the subset's experts) and adds
//!
//! * `-log p(x_i | z)` for each feed-forward modality,
//! * a denoising loss of the diffusion decoder conditioned on `z` for each
//!   diffusion modality,
//! * `kl_weight * KL(q(z | x_A) || N(0, I))`,
//!
//! then combines subsets with their mixture weights. Every modality is
//! reconstructed from every subset's latent.
//!
//! Reductions: feed-forward terms and diffusion terms are means over data
//! elements (categorical terms count one element per record); the KL is
//! summed over latent dimensions; everything is averaged over the batch.
//!
//! Random draws happen in a fixed order, which tests rely on:
//! subset selection (if the strategy samples), then for each subset in
//! mixture order the `B x D` latent noise, then for each diffusion modality
//! in index order its times (`B` draws, or one with
//! [`TimestepSampling::PerBatch`]) followed by its `B x dim` noise.

mod config;
mod gap;
mod networks;
mod subsets;
mod trainer;

use diffmvae_nn::{ParamStore, Tape, Var};
use ndarray::{Array2, Axis};
use rand::Rng;

pub use config::{ArchConfig, ModelConfig, TimestepSampling};
pub use gap::{mixture_elbo_gap, GapEstimate};
pub use networks::{
    from_diffusion_space, to_diffusion_space, Decoder, DecoderKind, Encoder, FeedForwardDecoder, Likelihood,
    MlpDecoder, MlpEncoder, Modality, ModalitySpec,
};
pub use subsets::{enumerate_subsets, SubsetMixture, SubsetStrategy};
pub use trainer::{LrSchedule, StepMetrics, Trainer};

use crate::diffusion_decoder::{likelihood_weighted_loss, simple_eps_loss, ConditionalEpsMlp};
use crate::error::{invalid, Result};
use crate::gaussian_latent::{product_of_experts_var, GaussianVar};
use crate::noise_schedule::{NoiseSchedule, WeightMode};
use crate::sampling::standard_normal;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// One reconstruction term of one subset.
#[derive(Clone, Debug, PartialEq)]
pub struct TermValue {
    pub modality: usize,
    pub kind: DecoderKind,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubsetTerms {
    pub subset: Vec<usize>,
    pub weight: f64,
    pub reconstruction: Vec<TermValue>,
    /// Batch mean of `KL(q || N(0, I))`, before `kl_weight`.
    pub kl: f64,
    pub kl_weight: f64,
}

impl SubsetTerms {
    pub fn total(&self) -> f64 {
        self.reconstruction.iter().map(|t| t.value).sum::<f64>() + self.kl_weight * self.kl
    }
}

/// Per-subset values of every loss term.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub subsets: Vec<SubsetTerms>,
}

impl LossBreakdown {
    fn weighted_sum(&self, f: impl Fn(&SubsetTerms) -> f64) -> f64 {
        self.subsets.iter().map(|s| s.weight * f(s)).sum()
    }

    /// Mixture-weighted sum of the terms of one decoder kind.
    pub fn reconstruction_total(&self, kind: DecoderKind) -> f64 {
        self.weighted_sum(|s| s.reconstruction.iter().filter(|t| t.kind == kind).map(|t| t.value).sum())
    }

    /// Mixture-weighted KL, before `kl_weight`.
    pub fn kl_total(&self) -> f64 {
        self.weighted_sum(|s| s.kl)
    }

    /// Describes the first non-finite term, if any.
    pub fn first_non_finite(&self, names: &[&str]) -> Option<String> {
        for s in &self.subsets {
            for t in &s.reconstruction {
                if !t.value.is_finite() {
                    let kind = match t.kind {
                        DecoderKind::FeedForward => "reconstruction",
                        DecoderKind::Diffusion => "diffusion",
                    };
                    let name = names.get(t.modality).copied().unwrap_or("?");
                    return Some(format!("subset {:?} {kind} term of '{name}'", s.subset));
                }
            }
            if !s.kl.is_finite() {
                return Some(format!("subset {:?} kl term", s.subset));
            }
        }
        (!self.total.is_finite()).then(|| "total".to_string())
    }
}

/// Modality data for an encoding call; `None` marks unobserved modalities.
pub type Observed<'a> = [Option<&'a Array2<f64>>];

pub struct DiffMvae {
    config: ModelConfig,
    modalities: Vec<Modality>,
    params: ParamStore,
    schedule: NoiseSchedule,
    powerset: SubsetMixture,
}

impl DiffMvae {
    /// Builds MLP encoders, MLP decoders and conditional eps-MLPs per
    /// [`ArchConfig`]. Parameter names are prefixed `m{i}.enc`, `m{i}.dec`.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, specs: Vec<ModalitySpec>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let d = config.latent_dim;
        let arch = &config.arch;
        let mut modalities = Vec::with_capacity(specs.len());
        for (i, spec) in specs.into_iter().enumerate() {
            spec.validate()?;
            let dim = spec.data_dim();
            let encoder = MlpEncoder::new(&mut params, &format!("m{i}.enc"), dim, &arch.encoder_hidden, d, rng);
            let decoder = match spec.decoder_kind {
                DecoderKind::FeedForward => Decoder::FeedForward(Box::new(MlpDecoder::new(
                    &mut params,
                    &format!("m{i}.dec"),
                    d,
                    &arch.decoder_hidden,
                    dim,
                    rng,
                ))),
                DecoderKind::Diffusion => Decoder::Diffusion(Box::new(ConditionalEpsMlp::new(
                    &mut params,
                    &format!("m{i}.dec"),
                    dim,
                    d,
                    arch.eps_hidden,
                    arch.eps_blocks,
                    arch.time_dim,
                    rng,
                )?)),
            };
            modalities.push(Modality { spec, encoder: Box::new(encoder), decoder });
        }
        Self::from_parts(config, modalities, params)
    }

    /// Assembles a model from custom networks whose parameters live in
    /// `params`.
    pub fn from_parts(config: ModelConfig, modalities: Vec<Modality>, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let powerset = enumerate_subsets(modalities.len())?;
        for m in &modalities {
            m.validate(config.latent_dim)?;
        }
        for (i, m) in modalities.iter().enumerate() {
            if modalities[..i].iter().any(|o| o.spec.name == m.spec.name) {
                return Err(invalid(format!("duplicate modality name '{}'", m.spec.name)));
            }
        }
        let schedule = config.schedule.build()?;
        Ok(Self { config, modalities, params, schedule, powerset })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    pub fn num_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn specs(&self) -> Vec<ModalitySpec> {
        self.modalities.iter().map(|m| m.spec.clone()).collect()
    }

    pub fn modality_names(&self) -> Vec<&str> {
        self.modalities.iter().map(|m| m.spec.name.as_str()).collect()
    }

    pub fn modality_index(&self, name: &str) -> Option<usize> {
        self.modalities.iter().position(|m| m.spec.name == name)
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
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

    /// The full powerset mixture with uniform weights.
    pub fn powerset(&self) -> &SubsetMixture {
        &self.powerset
    }

    fn check_data(&self, i: usize, x: &Array2<f64>) -> Result<()> {
        let spec = &self.modalities[i].spec;
        if x.ncols() != spec.data_dim() {
            return Err(invalid(format!("modality '{}' expects {} columns, got {}", spec.name, spec.data_dim(), x.ncols())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("modality '{}' contains non-finite data", spec.name)));
        }
        Ok(())
    }

    /// Encoder output for modality `i`.
    pub fn encode<'t>(&self, tape: &'t Tape, i: usize, x: &Array2<f64>) -> Result<GaussianVar<'t>> {
        if i >= self.modalities.len() {
            return Err(invalid(format!("modality index {i} out of range")));
        }
        self.check_data(i, x)?;
        Ok(self.modalities[i].encoder.forward(tape, &self.params, tape.constant(x.clone())))
    }

    /// Product of the experts of the modalities in `subset`.
    pub fn encode_subset<'t>(&self, tape: &'t Tape, data: &Observed<'_>, subset: &[usize]) -> Result<GaussianVar<'t>> {
        if subset.is_empty() {
            return Err(invalid("cannot encode an empty subset"));
        }
        let mut experts = Vec::with_capacity(subset.len());
        let mut rows = None;
        for &i in subset {
            let x = data
                .get(i)
                .copied()
                .flatten()
                .ok_or_else(|| invalid(format!("subset {subset:?} needs modality {i}, which is missing")))?;
            if *rows.get_or_insert(x.nrows()) != x.nrows() {
                return Err(invalid("observed modalities have different batch sizes"));
            }
            experts.push(self.encode(tape, i, x)?);
        }
        Ok(product_of_experts_var(&experts, self.config.include_prior))
    }

    /// Posterior mean and log-variance for `subset`, off the tape.
    pub fn posterior(&self, data: &Observed<'_>, subset: &[usize]) -> Result<(Array2<f64>, Array2<f64>)> {
        let tape = Tape::new();
        let q = self.encode_subset(&tape, data, subset)?;
        Ok((q.mean.value(), q.log_var.value()))
    }

    fn check_batch(&self, batch: &[Array2<f64>]) -> Result<usize> {
        if batch.len() != self.modalities.len() {
            return Err(invalid(format!(
                "batch has {} modalities, model has {}; training needs every modality",
                batch.len(),
                self.modalities.len()
            )));
        }
        let rows = batch[0].nrows();
        if rows == 0 {
            return Err(invalid("empty batch"));
        }
        for (i, x) in batch.iter().enumerate() {
            if x.nrows() != rows {
                return Err(invalid("modalities have different batch sizes"));
            }
            self.check_data(i, x)?;
        }
        Ok(rows)
    }

    /// Negative bound with the configured subset strategy.
    pub fn elbo_loss<'t, R: Rng + ?Sized>(
        &self,
        tape: &'t Tape,
        batch: &[Array2<f64>],
        rng: &mut R,
    ) -> Result<(Var<'t>, LossBreakdown)> {
        self.check_batch(batch)?;
        let mixture = self.config.subset_strategy.select(&self.powerset, self.modalities.len(), rng)?;
        self.elbo_loss_with(tape, batch, &mixture, rng)
    }

    /// Negative bound over an explicit subset mixture.
    pub fn elbo_loss_with<'t, R: Rng + ?Sized>(
        &self,
        tape: &'t Tape,
        batch: &[Array2<f64>],
        mixture: &SubsetMixture,
        rng: &mut R,
    ) -> Result<(Var<'t>, LossBreakdown)> {
        let rows = self.check_batch(batch)?;
        if mixture.modality_span() > self.modalities.len() {
            return Err(invalid("mixture mentions a modality the model does not have"));
        }
        let observed: Vec<Option<&Array2<f64>>> = batch.iter().map(Some).collect();
        let d = self.config.latent_dim;
        let mut total: Option<Var<'t>> = None;
        let mut subsets = Vec::with_capacity(mixture.len());
        for (subset, &weight) in mixture.subsets().iter().zip(mixture.weights()) {
            let q = self.encode_subset(tape, &observed, subset)?;
            let z = q.reparam(tape.constant(standard_normal(rows, d, rng)));
            let mut reconstruction = Vec::with_capacity(self.modalities.len());
            let mut subset_loss: Option<Var<'t>> = None;
            for (i, m) in self.modalities.iter().enumerate() {
                let term = match &m.decoder {
                    Decoder::FeedForward(dec) => {
                        let likelihood = m.spec.likelihood.expect("validated feed-forward likelihood");
                        feed_forward_nll(dec.forward(tape, &self.params, z), likelihood, &batch[i])?
                    }
                    Decoder::Diffusion(net) => self.diffusion_term(tape, net.as_ref(), z, &batch[i], rng)?,
                };
                reconstruction.push(TermValue { modality: i, kind: m.decoder.kind(), value: term.item() });
                subset_loss = Some(subset_loss.map_or(term, |acc| acc + term));
            }
            let kl = q.kl_to_standard().mean();
            let kl_value = kl.item();
            let s_loss = subset_loss.expect("at least one modality") + kl.scale(self.config.kl_weight);
            let weighted = s_loss.scale(weight);
            total = Some(total.map_or(weighted, |acc| acc + weighted));
            subsets.push(SubsetTerms {
                subset: subset.clone(),
                weight,
                reconstruction,
                kl: kl_value,
                kl_weight: self.config.kl_weight,
            });
        }
        let total = total.expect("mixture is nonempty");
        Ok((total, LossBreakdown { total: total.item(), subsets }))
    }

    fn diffusion_term<'t, R: Rng + ?Sized>(
        &self,
        tape: &'t Tape,
        net: &dyn crate::diffusion_decoder::EpsNetwork,
        z: Var<'t>,
        x: &Array2<f64>,
        rng: &mut R,
    ) -> Result<Var<'t>> {
        let rows = x.nrows();
        let s = &self.schedule;
        let times = match self.config.timestep_sampling {
            TimestepSampling::PerRecord => (0..rows).map(|_| s.sample_timestep(rng)).collect(),
            TimestepSampling::PerBatch => vec![s.sample_timestep(rng); rows],
        };
        let eps = standard_normal(rows, x.ncols(), rng);
        let x0 = to_diffusion_space(x);
        match self.config.weight_mode {
            WeightMode::Simple => simple_eps_loss(net, tape, &self.params, &x0, Some(z), &times, &eps, s),
            WeightMode::Likelihood => {
                likelihood_weighted_loss(net, tape, &self.params, &x0, Some(z), &times, &eps, s, WeightMode::Likelihood)
            }
        }
    }

    /// Feed-forward decoder output for latents `z`: probabilities for
    /// Bernoulli, one-hot argmax for categorical, means for Gaussian.
    pub fn decode_feed_forward(&self, i: usize, z: &Array2<f64>) -> Result<Array2<f64>> {
        let m = self.modalities.get(i).ok_or_else(|| invalid(format!("modality index {i} out of range")))?;
        let Decoder::FeedForward(dec) = &m.decoder else {
            return Err(invalid(format!("modality '{}' has a diffusion decoder", m.spec.name)));
        };
        let tape = Tape::new();
        let out = dec.forward(&tape, &self.params, tape.constant(z.clone())).value();
        Ok(match m.spec.likelihood.expect("validated feed-forward likelihood") {
            Likelihood::Bernoulli => out.mapv(|v| 1.0 / (1.0 + (-v).exp())),
            Likelihood::GaussianFixedVariance => out,
            Likelihood::Categorical => one_hot_argmax(&out),
        })
    }
}

/// Row-wise argmax as a one-hot array.
pub fn one_hot_argmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(logits.dim());
    for (r, row) in logits.axis_iter(Axis(0)).enumerate() {
        out[[r, argmax(row.iter().copied())]] = 1.0;
    }
    out
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Batch-mean negative log-likelihood of `x` under decoder output `out`.
fn feed_forward_nll<'t>(out: Var<'t>, likelihood: Likelihood, x: &Array2<f64>) -> Result<Var<'t>> {
    match likelihood {
        Likelihood::Bernoulli => {
            if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(invalid("Bernoulli data must lie in [0, 1]"));
            }
            Ok(out.bce_with_logits(x).mean())
        }
        Likelihood::GaussianFixedVariance => {
            Ok((out - out.tape().constant(x.clone())).square().scale(0.5).mean().add_scalar(HALF_LN_2PI))
        }
        Likelihood::Categorical => {
            let mut labels = Vec::with_capacity(x.nrows());
            for row in x.axis_iter(Axis(0)) {
                let ones = row.iter().filter(|&&v| v == 1.0).count();
                if ones != 1 || row.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(invalid("categorical data must be one-hot rows"));
                }
                labels.push(argmax(row.iter().copied()));
            }
            Ok(out.softmax_cross_entropy(&labels).mean())
        }
    }
}
