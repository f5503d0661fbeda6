//! Variance-preserving diffusion schedules.
//!
//! Two flavours share one type:
//!
//! * **discrete**: `T` steps with `beta_t` linear from `beta_min` to
//!   `beta_max` and `alpha_bar_t = prod_{s <= t} (1 - beta_s)`;
//! * **continuous**: the VP-SDE on `t in [0, 1]` with
//!   `beta(t) = beta_min + t (beta_max - beta_min)` and
//!   `alpha_bar(t) = exp(-int_0^t beta)`, so `g(t)^2 = beta(t)`.
//!
//! Discrete timesteps are 1-indexed everywhere in the public API
//! ([`Timestep::Discrete`] ranges over `1..=T`); the internal tables are
//! 0-indexed and the conversion happens only in [`NoiseSchedule::table_index`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Lower end of the continuous-time training interval; `t = 0` has zero
/// noise and a singular score.
pub const CONTINUOUS_T_MIN: f64 = 1e-5;

pub const DEFAULT_DISCRETE_STEPS: usize = 1000;
pub const DEFAULT_DISCRETE_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_DISCRETE_BETA_MAX: f64 = 0.02;
pub const DEFAULT_CONTINUOUS_BETA_MIN: f64 = 0.1;
pub const DEFAULT_CONTINUOUS_BETA_MAX: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Discrete,
    Continuous,
}

/// A point in diffusion time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Timestep {
    /// 1-indexed step in `1..=T`.
    Discrete(usize),
    /// Time in `[0, 1]`.
    Continuous(f64),
}

/// Weighting of the score-matching loss across time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `lambda(t) = g(t)^2`.
    Likelihood,
    /// `lambda(t) = 1`.
    Simple,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    steps: usize,
    beta_min: f64,
    beta_max: f64,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear-beta discrete schedule.
    pub fn linear_discrete(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(invalid("discrete schedule needs at least one step"));
        }
        if !(0.0 < beta_min && beta_min < beta_max && beta_max < 1.0) {
            return Err(invalid(format!(
                "need 0 < beta_min < beta_max < 1, got beta_min={beta_min}, beta_max={beta_max}"
            )));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_min]
        } else {
            (0..steps)
                .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64)
                .collect()
        };
        let alpha_bars = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self { kind: ScheduleKind::Discrete, steps, beta_min, beta_max, betas, alpha_bars })
    }

    /// VP-SDE schedule on `[0, 1]`.
    pub fn vp_continuous(beta_min: f64, beta_max: f64) -> Result<Self> {
        if !(0.0 < beta_min && beta_min < beta_max && beta_max.is_finite()) {
            return Err(invalid(format!(
                "need 0 < beta_min < beta_max, got beta_min={beta_min}, beta_max={beta_max}"
            )));
        }
        Ok(Self {
            kind: ScheduleKind::Continuous,
            steps: 1,
            beta_min,
            beta_max,
            betas: Vec::new(),
            alpha_bars: Vec::new(),
        })
    }

    /// `T = 1000`, beta from 1e-4 to 0.02.
    pub fn default_discrete() -> Self {
        Self::linear_discrete(DEFAULT_DISCRETE_STEPS, DEFAULT_DISCRETE_BETA_MIN, DEFAULT_DISCRETE_BETA_MAX)
            .expect("default discrete schedule is valid")
    }

    /// beta from 0.1 to 20.
    pub fn default_continuous() -> Self {
        Self::vp_continuous(DEFAULT_CONTINUOUS_BETA_MIN, DEFAULT_CONTINUOUS_BETA_MAX)
            .expect("default continuous schedule is valid")
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// `T` for discrete schedules, 1 for continuous ones.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }

    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    /// The noisiest point of the schedule.
    pub fn terminal(&self) -> Timestep {
        match self.kind {
            ScheduleKind::Discrete => Timestep::Discrete(self.steps),
            ScheduleKind::Continuous => Timestep::Continuous(1.0),
        }
    }

    /// Maps an external 1-indexed step to the internal 0-indexed table slot.
    fn table_index(&self, t: Timestep) -> Result<usize> {
        match (self.kind, t) {
            (ScheduleKind::Discrete, Timestep::Discrete(s)) if (1..=self.steps).contains(&s) => Ok(s - 1),
            (ScheduleKind::Discrete, Timestep::Discrete(s)) => {
                Err(invalid(format!("step {s} outside 1..={}", self.steps)))
            }
            _ => Err(invalid(format!("timestep {t:?} does not belong to a {:?} schedule", self.kind))),
        }
    }

    fn continuous_time(&self, t: Timestep) -> Result<f64> {
        match (self.kind, t) {
            (ScheduleKind::Continuous, Timestep::Continuous(x)) if (0.0..=1.0).contains(&x) => Ok(x),
            (ScheduleKind::Continuous, Timestep::Continuous(x)) => {
                Err(invalid(format!("time {x} outside [0, 1]")))
            }
            _ => Err(invalid(format!("timestep {t:?} does not belong to a {:?} schedule", self.kind))),
        }
    }

    pub fn validate(&self, t: Timestep) -> Result<()> {
        match self.kind {
            ScheduleKind::Discrete => self.table_index(t).map(|_| ()),
            ScheduleKind::Continuous => self.continuous_time(t).map(|_| ()),
        }
    }

    /// `beta_t` (discrete) or `beta(t)` (continuous).
    pub fn beta(&self, t: Timestep) -> Result<f64> {
        match self.kind {
            ScheduleKind::Discrete => Ok(self.betas[self.table_index(t)?]),
            ScheduleKind::Continuous => {
                let x = self.continuous_time(t)?;
                Ok(self.beta_min + x * (self.beta_max - self.beta_min))
            }
        }
    }

    pub fn alpha_bar(&self, t: Timestep) -> Result<f64> {
        match self.kind {
            ScheduleKind::Discrete => Ok(self.alpha_bars[self.table_index(t)?]),
            ScheduleKind::Continuous => {
                let x = self.continuous_time(t)?;
                Ok((-(self.beta_min * x + 0.5 * (self.beta_max - self.beta_min) * x * x)).exp())
            }
        }
    }

    /// Noise standard deviation `sqrt(1 - alpha_bar)`.
    pub fn sigma(&self, t: Timestep) -> Result<f64> {
        Ok((1.0 - self.alpha_bar(t)?).sqrt())
    }

    /// Squared diffusion coefficient. For discrete schedules this is the
    /// continuous-time rate `T * beta_t` of the matching VP-SDE.
    pub fn g_squared(&self, t: Timestep) -> Result<f64> {
        let b = self.beta(t)?;
        Ok(match self.kind {
            ScheduleKind::Discrete => b * self.steps as f64,
            ScheduleKind::Continuous => b,
        })
    }

    /// Time value in `[0, 1]` fed to networks: `t / T` for discrete
    /// schedules, `t` itself for continuous ones.
    pub fn network_time(&self, t: Timestep) -> f64 {
        match t {
            Timestep::Discrete(s) => s as f64 / self.steps as f64,
            Timestep::Continuous(x) => x,
        }
    }

    /// Inverse of [`NoiseSchedule::network_time`].
    pub fn timestep_from_network_time(&self, tau: f64) -> Timestep {
        match self.kind {
            ScheduleKind::Discrete => {
                Timestep::Discrete(((tau * self.steps as f64).round() as usize).clamp(1, self.steps))
            }
            ScheduleKind::Continuous => Timestep::Continuous(tau.clamp(0.0, 1.0)),
        }
    }

    /// Training-time draw: uniform over `1..=T`, or uniform on
    /// `[CONTINUOUS_T_MIN, 1]`.
    pub fn sample_timestep<R: Rng + ?Sized>(&self, rng: &mut R) -> Timestep {
        match self.kind {
            ScheduleKind::Discrete => Timestep::Discrete(rng.random_range(1..=self.steps)),
            ScheduleKind::Continuous => Timestep::Continuous(rng.random_range(CONTINUOUS_T_MIN..=1.0)),
        }
    }

    /// Serializable summary of the schedule parameters.
    pub fn params(&self) -> ScheduleParams {
        ScheduleParams {
            kind: self.kind,
            steps: self.steps,
            beta_min: self.beta_min,
            beta_max: self.beta_max,
        }
    }
}

/// Parameters that fully determine a [`NoiseSchedule`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        match self.kind {
            ScheduleKind::Discrete => NoiseSchedule::linear_discrete(self.steps, self.beta_min, self.beta_max),
            ScheduleKind::Continuous => NoiseSchedule::vp_continuous(self.beta_min, self.beta_max),
        }
    }

    pub fn default_discrete() -> Self {
        NoiseSchedule::default_discrete().params()
    }

    pub fn default_continuous() -> Self {
        NoiseSchedule::default_continuous().params()
    }
}

/// Loss weight `lambda(t)`.
pub fn lambda_weight(s: &NoiseSchedule, t: Timestep, mode: WeightMode) -> Result<f64> {
    s.validate(t)?;
    match mode {
        WeightMode::Likelihood => s.g_squared(t),
        WeightMode::Simple => Ok(1.0),
    }
}

/// Rejects times where the noise level vanishes.
pub(crate) fn positive_sigma(s: &NoiseSchedule, t: Timestep) -> Result<f64> {
    let sigma = s.sigma(t)?;
    if sigma <= 0.0 {
        return Err(Error::Domain(format!("sigma({t:?}) = 0; the score is undefined there")));
    }
    Ok(sigma)
}
