//! Reverse-process samplers.
//!
//! [`ddim_sample`] is the deterministic DDIM update (eta = 0) over a strided
//! subsequence of the schedule. [`EulerMaruyama`] integrates the reverse-time
//! VP-SDE and only accepts continuous schedules.

use diffmvae_nn::ParamStore;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffusion_decoder::{eps_to_score, EpsNetwork};
use crate::error::{invalid, Result};
use crate::noise_schedule::{NoiseSchedule, ScheduleKind, Timestep};

/// Anything that predicts the noise in `x_t`, given network times per row.
pub trait Denoiser {
    fn data_dim(&self) -> usize;

    fn predict_eps(&self, x_t: &Array2<f64>, times: &[f64]) -> Array2<f64>;
}

/// An [`EpsNetwork`] with its parameters and an optional fixed latent.
pub struct Conditioned<'a, N: EpsNetwork + ?Sized> {
    pub net: &'a N,
    pub params: &'a ParamStore,
    /// One latent row per sample, or `None` for unconditional networks.
    pub z: Option<&'a Array2<f64>>,
}

impl<'a, N: EpsNetwork + ?Sized> Conditioned<'a, N> {
    pub fn new(net: &'a N, params: &'a ParamStore, z: Option<&'a Array2<f64>>) -> Self {
        Self { net, params, z }
    }
}

impl<N: EpsNetwork + ?Sized> Denoiser for Conditioned<'_, N> {
    fn data_dim(&self) -> usize {
        self.net.data_dim()
    }

    fn predict_eps(&self, x_t: &Array2<f64>, times: &[f64]) -> Array2<f64> {
        self.net.predict(self.params, x_t, self.z, times)
    }
}

/// `rows x cols` array of independent standard normals.
pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// The DDIM visiting order: `steps` points from the terminal time downwards
/// with a uniform stride. For a discrete schedule with `T` steps this is
/// `T, T - k, ..., T - (steps - 1) k` with `k = T / steps` (integer division).
pub fn ddim_timesteps(s: &NoiseSchedule, steps: usize) -> Result<Vec<Timestep>> {
    if steps == 0 {
        return Err(invalid("DDIM needs at least one step"));
    }
    match s.kind() {
        ScheduleKind::Discrete => {
            let t = s.steps();
            if steps > t {
                return Err(invalid(format!("{steps} DDIM steps exceed the schedule's {t} timesteps")));
            }
            let stride = t / steps;
            Ok((0..steps).map(|i| Timestep::Discrete(t - i * stride)).collect())
        }
        ScheduleKind::Continuous => {
            Ok((0..steps).map(|i| Timestep::Continuous(1.0 - i as f64 / steps as f64)).collect())
        }
    }
}

/// Deterministic DDIM from the initial noise `x_init`.
///
/// At each visited time the clean estimate
/// `x0_hat = (x_t - sigma_t eps) / sqrt(alpha_bar_t)` is re-noised to the next
/// time with the same `eps`; after the last visited time `x0_hat` is
/// returned.
pub fn ddim_sample<D: Denoiser + ?Sized>(
    den: &D,
    s: &NoiseSchedule,
    steps: usize,
    x_init: Array2<f64>,
) -> Result<Array2<f64>> {
    ddim_sample_clipped(den, s, steps, x_init, None)
}

/// [`ddim_sample`] with the clean estimate clamped to `[lo, hi]` at every
/// step when `clip` is given. The noise estimate is then recomputed from the
/// clamped `x0_hat`, so the re-noised state stays consistent with it.
pub fn ddim_sample_clipped<D: Denoiser + ?Sized>(
    den: &D,
    s: &NoiseSchedule,
    steps: usize,
    x_init: Array2<f64>,
    clip: Option<(f64, f64)>,
) -> Result<Array2<f64>> {
    if x_init.ncols() != den.data_dim() {
        return Err(invalid(format!("initial noise width {} but denoiser expects {}", x_init.ncols(), den.data_dim())));
    }
    if let Some((lo, hi)) = clip {
        if !(lo < hi) {
            return Err(invalid(format!("clip range [{lo}, {hi}] is empty")));
        }
    }
    let times = ddim_timesteps(s, steps)?;
    let rows = x_init.nrows();
    let mut x = x_init;
    for (i, &t) in times.iter().enumerate() {
        let ab = s.alpha_bar(t)?;
        let sigma = (1.0 - ab).sqrt();
        let mut eps = den.predict_eps(&x, &vec![s.network_time(t); rows]);
        let mut x0_hat = (&x - &(&eps * sigma)) / ab.sqrt();
        if let Some((lo, hi)) = clip {
            x0_hat.mapv_inplace(|v| v.clamp(lo, hi));
            if sigma > 0.0 {
                eps = (&x - &(&x0_hat * ab.sqrt())) / sigma;
            }
        }
        match times.get(i + 1) {
            Some(&next) => {
                let ab_next = s.alpha_bar(next)?;
                x = x0_hat * ab_next.sqrt() + eps * (1.0 - ab_next).sqrt();
            }
            None => return Ok(x0_hat),
        }
    }
    unreachable!("ddim_timesteps returns at least one step")
}

/// Euler–Maruyama integrator for the reverse VP-SDE
/// `dx = [-1/2 beta(t) x - beta(t) s(x, t)] dt + sqrt(beta(t)) dw`, run
/// backwards from `t = 1` to `t_end`.
///
/// Each step at time `t` with `dt = (1 - t_end) / steps` applies
/// `x <- x + (1/2 beta x + beta s(x, t)) dt + noise_scale sqrt(beta dt) xi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerMaruyama {
    pub steps: usize,
    pub t_end: f64,
    /// Multiplier on the Brownian increments; 0 gives the drift-only flow.
    pub noise_scale: f64,
}

impl EulerMaruyama {
    pub const DEFAULT_T_END: f64 = 1e-3;

    pub fn new(steps: usize) -> Self {
        Self { steps, t_end: Self::DEFAULT_T_END, noise_scale: 1.0 }
    }

    fn check(&self, s: &NoiseSchedule) -> Result<()> {
        if s.kind() != ScheduleKind::Continuous {
            return Err(invalid("Euler-Maruyama sampling needs a continuous schedule"));
        }
        if self.steps == 0 {
            return Err(invalid("Euler-Maruyama needs at least one step"));
        }
        if !(0.0..1.0).contains(&self.t_end) {
            return Err(invalid(format!("terminal time {} outside [0, 1)", self.t_end)));
        }
        Ok(())
    }

    /// Integrates from `x_init`. `score_fn(x, t)` returns the score at every
    /// row of `x`.
    pub fn sample<R, F>(&self, s: &NoiseSchedule, x_init: Array2<f64>, score_fn: F, rng: &mut R) -> Result<Array2<f64>>
    where
        R: Rng + ?Sized,
        F: FnMut(&Array2<f64>, f64) -> Result<Array2<f64>>,
    {
        self.sample_observed(s, x_init, score_fn, rng, |_, _, _| {})
    }

    /// Like [`EulerMaruyama::sample`], calling `observer(step, t, x)` after
    /// every update with the time `x` has reached.
    pub fn sample_observed<R, F, O>(
        &self,
        s: &NoiseSchedule,
        x_init: Array2<f64>,
        mut score_fn: F,
        rng: &mut R,
        mut observer: O,
    ) -> Result<Array2<f64>>
    where
        R: Rng + ?Sized,
        F: FnMut(&Array2<f64>, f64) -> Result<Array2<f64>>,
        O: FnMut(usize, f64, &Array2<f64>),
    {
        self.check(s)?;
        let dt = (1.0 - self.t_end) / self.steps as f64;
        let mut x = x_init;
        for k in 0..self.steps {
            let t = 1.0 - k as f64 * dt;
            let beta = s.beta(Timestep::Continuous(t))?;
            let score = score_fn(&x, t)?;
            if score.dim() != x.dim() {
                return Err(invalid(format!("score shape {:?} differs from state {:?}", score.dim(), x.dim())));
            }
            let diffusion = self.noise_scale * (beta * dt).sqrt();
            let drift = (&x * (0.5 * beta) + &score * beta) * dt;
            x = x + drift;
            if diffusion != 0.0 {
                x.mapv_inplace(|v| v + diffusion * rng.sample::<f64, _>(StandardNormal));
            }
            observer(k, t - dt, &x);
        }
        Ok(x)
    }

    /// Runs the sampler with the score implied by a noise-predicting denoiser.
    pub fn sample_denoiser<R, D>(&self, den: &D, s: &NoiseSchedule, x_init: Array2<f64>, rng: &mut R) -> Result<Array2<f64>>
    where
        R: Rng + ?Sized,
        D: Denoiser + ?Sized,
    {
        self.sample(
            s,
            x_init,
            |x, t| {
                let eps = den.predict_eps(x, &vec![t; x.nrows()]);
                eps_to_score(&eps, Timestep::Continuous(t), s)
            },
            rng,
        )
    }
}
