use diffmvae_nn::{Adam, Tape};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DiffMvae, LossBreakdown};
use crate::error::{invalid, Error, Result};

/// Outcome of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    /// 1-based index of the step just taken.
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub breakdown: LossBreakdown,
}

/// Learning-rate schedule, evaluated at the optimizer's step count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from the base rate to zero over `total_steps`, constant
    /// at zero afterwards.
    Cosine { total_steps: u64 },
}

impl LrSchedule {
    /// Multiplier on the base rate for the step after `steps_taken` steps.
    pub fn factor(&self, steps_taken: u64) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine { total_steps } => {
                let p = (steps_taken as f64 / total_steps.max(1) as f64).min(1.0);
                0.5 * (1.0 + (std::f64::consts::PI * p).cos())
            }
        }
    }
}

/// A model, its Adam state and the random stream that drives training.
pub struct Trainer {
    model: DiffMvae,
    optimizer: Adam,
    rng: ChaCha8Rng,
    base_lr: f64,
    schedule: LrSchedule,
}

impl Trainer {
    pub const DEFAULT_CLIP_NORM: f64 = 10.0;

    pub fn new(model: DiffMvae, lr: f64, seed: u64) -> Self {
        let optimizer = Adam::new(model.params(), lr).with_clip_norm(Self::DEFAULT_CLIP_NORM);
        Self { model, optimizer, rng: ChaCha8Rng::seed_from_u64(seed), base_lr: lr, schedule: LrSchedule::Constant }
    }

    /// Resumes from previously saved optimizer and RNG state. The base rate
    /// is the optimizer's current rate.
    pub fn from_state(model: DiffMvae, optimizer: Adam, rng: ChaCha8Rng) -> Self {
        let base_lr = optimizer.lr;
        Self { model, optimizer, rng, base_lr, schedule: LrSchedule::Constant }
    }

    pub fn with_lr_schedule(mut self, schedule: LrSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_base_lr(mut self, lr: f64) -> Self {
        self.base_lr = lr;
        self
    }

    pub fn base_lr(&self) -> f64 {
        self.base_lr
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        self.schedule
    }

    pub fn model(&self) -> &DiffMvae {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut DiffMvae {
        &mut self.model
    }

    pub fn into_model(self) -> DiffMvae {
        self.model
    }

    pub fn optimizer(&self) -> &Adam {
        &self.optimizer
    }

    pub fn optimizer_mut(&mut self) -> &mut Adam {
        &mut self.optimizer
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn steps_taken(&self) -> u64 {
        self.optimizer.steps_taken()
    }

    /// One Adam step on the negative bound of `batch`. Parameters are left
    /// untouched when the loss or its gradient is not finite.
    pub fn training_step(&mut self, batch: &[Array2<f64>]) -> Result<StepMetrics> {
        let tape = Tape::new();
        let (loss, breakdown) = self.model.elbo_loss(&tape, batch, &mut self.rng)?;
        if let Some(term) = breakdown.first_non_finite(&self.model.modality_names()) {
            return Err(Error::NonFinite { term, detail: format!("loss = {}", breakdown.total) });
        }
        let grads = tape.backward(loss).into_param_grads(self.model.params());
        if !grads.all_finite() {
            return Err(Error::NonFinite { term: "gradient".into(), detail: format!("loss = {}", breakdown.total) });
        }
        let grad_norm = grads.global_norm();
        self.optimizer.lr = self.base_lr * self.schedule.factor(self.optimizer.steps_taken());
        self.optimizer.step(self.model.params_mut(), &grads);
        Ok(StepMetrics { step: self.optimizer.steps_taken(), loss: breakdown.total, grad_norm, breakdown })
    }

    /// Runs `steps` optimizer steps on shuffled minibatches of `data`,
    /// reshuffling after every pass. `on_step` sees every step's metrics.
    pub fn fit(
        &mut self,
        data: &[Array2<f64>],
        batch_size: usize,
        steps: usize,
        mut on_step: impl FnMut(&StepMetrics),
    ) -> Result<Vec<f64>> {
        let n = data.first().map_or(0, Array2::nrows);
        if n == 0 || batch_size == 0 {
            return Err(invalid("need a nonempty dataset and a positive batch size"));
        }
        let batch_size = batch_size.min(n);
        let mut order: Vec<usize> = (0..n).collect();
        let mut cursor = n;
        let mut losses = Vec::with_capacity(steps);
        for _ in 0..steps {
            if cursor + batch_size > n {
                order.shuffle(&mut self.rng);
                cursor = 0;
            }
            let idx = &order[cursor..cursor + batch_size];
            cursor += batch_size;
            let batch: Vec<Array2<f64>> = data.iter().map(|x| x.select(Axis(0), idx)).collect();
            let metrics = self.training_step(&batch)?;
            on_step(&metrics);
            losses.push(metrics.loss);
        }
        Ok(losses)
    }
}
