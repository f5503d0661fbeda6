use diffmvae_nn::{Activation, Mlp, ParamStore, Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion_decoder::EpsNetwork;
use crate::error::{invalid, Result};
use crate::gaussian_latent::{GaussianVar, LOG_VAR_MAX, LOG_VAR_MIN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    FeedForward,
    Diffusion,
}

/// Observation model of a feed-forward decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    /// Independent Bernoulli per element; data in `[0, 1]`, decoder emits logits.
    Bernoulli,
    /// One categorical variable; data is a one-hot row, decoder emits logits.
    Categorical,
    /// Unit-variance Gaussian per element; decoder emits means.
    GaussianFixedVariance,
}

/// Declares one modality.
///
/// Every modality is fed to its encoder as stored. Diffusion modalities
/// must hold data in `[0, 1]`; they are diffused on the affine image in
/// `[-1, 1]`, see [`to_diffusion_space`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalitySpec {
    pub name: String,
    pub data_shape: Vec<usize>,
    pub decoder_kind: DecoderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub likelihood: Option<Likelihood>,
}

impl ModalitySpec {
    pub fn feed_forward(name: impl Into<String>, data_shape: Vec<usize>, likelihood: Likelihood) -> Self {
        Self { name: name.into(), data_shape, decoder_kind: DecoderKind::FeedForward, likelihood: Some(likelihood) }
    }

    pub fn diffusion(name: impl Into<String>, data_shape: Vec<usize>) -> Self {
        Self { name: name.into(), data_shape, decoder_kind: DecoderKind::Diffusion, likelihood: None }
    }

    /// Number of scalars in one record.
    pub fn data_dim(&self) -> usize {
        self.data_shape.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(invalid("modality name must be nonempty"));
        }
        if self.data_shape.is_empty() || self.data_dim() == 0 {
            return Err(invalid(format!("modality '{}' has empty shape {:?}", self.name, self.data_shape)));
        }
        match (self.decoder_kind, self.likelihood) {
            (DecoderKind::Diffusion, Some(_)) => {
                Err(invalid(format!("diffusion modality '{}' must not declare a likelihood", self.name)))
            }
            (DecoderKind::FeedForward, None) => {
                Err(invalid(format!("feed-forward modality '{}' needs a likelihood", self.name)))
            }
            _ => Ok(()),
        }
    }
}

/// `2x - 1`.
pub fn to_diffusion_space(x: &ndarray::Array2<f64>) -> ndarray::Array2<f64> {
    x.mapv(|v| 2.0 * v - 1.0)
}

/// `(x + 1) / 2` clamped to `[0, 1]`.
pub fn from_diffusion_space(x: &ndarray::Array2<f64>) -> ndarray::Array2<f64> {
    x.mapv(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
}

/// Maps a batch of records to a batch of diagonal Gaussians.
pub trait Encoder: Send + Sync {
    fn input_dim(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn forward<'t>(&self, tape: &'t Tape, params: &ParamStore, x: Var<'t>) -> GaussianVar<'t>;
}

/// Maps latents to likelihood parameters (logits or means).
pub trait FeedForwardDecoder: Send + Sync {
    fn latent_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn forward<'t>(&self, tape: &'t Tape, params: &ParamStore, z: Var<'t>) -> Var<'t>;
}

/// MLP emitting `[mean, log_var]`, with log-variance clamped to
/// `[LOG_VAR_MIN, LOG_VAR_MAX]`.
#[derive(Clone, Debug)]
pub struct MlpEncoder {
    mlp: Mlp,
    latent_dim: usize,
}

impl MlpEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: &[usize],
        latent_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(2 * latent_dim);
        Self { mlp: Mlp::new(store, name, &dims, Activation::Silu, rng), latent_dim }
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }
}

impl Encoder for MlpEncoder {
    fn input_dim(&self) -> usize {
        self.mlp.in_dim()
    }

    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn forward<'t>(&self, tape: &'t Tape, params: &ParamStore, x: Var<'t>) -> GaussianVar<'t> {
        let out = self.mlp.forward(tape, params, x);
        let d = self.latent_dim;
        GaussianVar::new(out.slice_cols(0, d), out.slice_cols(d, 2 * d).clamp(LOG_VAR_MIN, LOG_VAR_MAX))
    }
}

#[derive(Clone, Debug)]
pub struct MlpDecoder {
    mlp: Mlp,
}

impl MlpDecoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        latent_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![latent_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        Self { mlp: Mlp::new(store, name, &dims, Activation::Silu, rng) }
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }
}

impl FeedForwardDecoder for MlpDecoder {
    fn latent_dim(&self) -> usize {
        self.mlp.in_dim()
    }

    fn output_dim(&self) -> usize {
        self.mlp.out_dim()
    }

    fn forward<'t>(&self, tape: &'t Tape, params: &ParamStore, z: Var<'t>) -> Var<'t> {
        self.mlp.forward(tape, params, z)
    }
}

pub enum Decoder {
    FeedForward(Box<dyn FeedForwardDecoder>),
    Diffusion(Box<dyn EpsNetwork>),
}

impl Decoder {
    pub fn kind(&self) -> DecoderKind {
        match self {
            Decoder::FeedForward(_) => DecoderKind::FeedForward,
            Decoder::Diffusion(_) => DecoderKind::Diffusion,
        }
    }
}

/// A declared modality together with its networks.
pub struct Modality {
    pub spec: ModalitySpec,
    pub encoder: Box<dyn Encoder>,
    pub decoder: Decoder,
}

impl Modality {
    /// Checks that the networks agree with the spec and the latent width.
    pub fn validate(&self, latent_dim: usize) -> Result<()> {
        self.spec.validate()?;
        let name = &self.spec.name;
        let dim = self.spec.data_dim();
        if self.encoder.input_dim() != dim {
            return Err(invalid(format!("encoder of '{name}' takes {} inputs, data has {dim}", self.encoder.input_dim())));
        }
        if self.encoder.latent_dim() != latent_dim {
            return Err(invalid(format!(
                "encoder of '{name}' emits {} latent dims, model uses {latent_dim}",
                self.encoder.latent_dim()
            )));
        }
        if self.decoder.kind() != self.spec.decoder_kind {
            return Err(invalid(format!("decoder of '{name}' does not match its declared kind")));
        }
        match &self.decoder {
            Decoder::FeedForward(d) => {
                if d.latent_dim() != latent_dim || d.output_dim() != dim {
                    return Err(invalid(format!("decoder of '{name}' has the wrong shape")));
                }
            }
            Decoder::Diffusion(n) => {
                if n.cond_dim() != latent_dim || n.data_dim() != dim {
                    return Err(invalid(format!("diffusion network of '{name}' has the wrong shape")));
                }
            }
        }
        Ok(())
    }
}
