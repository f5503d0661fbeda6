//! Closed-form algebra on diagonal Gaussians.
//!
//! [`DiagonalGaussian`] holds a single distribution as plain vectors and is
//! used for inspection, metrics and tests. [`GaussianVar`] is the batched,
//! differentiable counterpart living on an autodiff tape; the model's
//! training path runs through it. Both parameterize the variance through its
//! logarithm.

use diffmvae_nn::Var;

use crate::error::{invalid, Result};

/// Encoder outputs are clamped to this log-variance range.
pub const LOG_VAR_MIN: f64 = -20.0;
pub const LOG_VAR_MAX: f64 = 10.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Gaussian with diagonal covariance, stored as mean and log-variance.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    log_var: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(invalid("Gaussian dimension must be at least 1"));
        }
        if mean.len() != log_var.len() {
            return Err(invalid(format!(
                "mean has {} entries but log_var has {}",
                mean.len(),
                log_var.len()
            )));
        }
        if mean.iter().chain(&log_var).any(|v| !v.is_finite()) {
            return Err(invalid("Gaussian parameters must be finite"));
        }
        Ok(Self { mean, log_var })
    }

    pub fn from_mean_var(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if var.iter().any(|&v| v <= 0.0) {
            return Err(invalid("variances must be positive"));
        }
        Self::new(mean, var.into_iter().map(f64::ln).collect())
    }

    /// `N(0, I)` in `dim` dimensions.
    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], log_var: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_var(&self) -> &[f64] {
        &self.log_var
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| lv.exp()).collect()
    }

    pub fn std_dev(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| (0.5 * lv).exp()).collect()
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        assert_eq!(z.len(), self.dim(), "point dimension");
        z.iter()
            .zip(&self.mean)
            .zip(&self.log_var)
            .map(|((&z, &m), &lv)| -0.5 * (LN_2PI + lv + (z - m).powi(2) * (-lv).exp()))
            .sum()
    }
}

fn check_same_dim(a: &DiagonalGaussian, b: &DiagonalGaussian) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(invalid(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Precision-weighted product of Gaussian experts.
///
/// With `include_prior` a standard-normal expert joins the product. The
/// dimension is taken from the experts, so the list must be nonempty either
/// way; the prior-only product is just [`DiagonalGaussian::standard`].
pub fn product_of_experts(experts: &[DiagonalGaussian], include_prior: bool) -> Result<DiagonalGaussian> {
    let Some(dim) = experts.first().map(DiagonalGaussian::dim) else {
        return Err(invalid("product of experts needs at least one expert"));
    };
    if experts.len() == 1 && !include_prior {
        return Ok(experts[0].clone());
    }
    for e in experts {
        if e.dim() != dim {
            return Err(invalid(format!("expert dimension {} differs from {}", e.dim(), dim)));
        }
    }
    let init = if include_prior { 1.0 } else { 0.0 };
    let mut precision = vec![init; dim];
    let mut weighted = vec![0.0; dim];
    for e in experts {
        for d in 0..dim {
            let p = (-e.log_var[d]).exp();
            precision[d] += p;
            weighted[d] += e.mean[d] * p;
        }
    }
    let mean = weighted.iter().zip(&precision).map(|(w, p)| w / p).collect();
    let log_var = precision.iter().map(|p| -p.ln()).collect();
    DiagonalGaussian::new(mean, log_var)
}

/// `KL(q || p)` summed over dimensions.
pub fn kl_divergence(q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<f64> {
    check_same_dim(q, p)?;
    let kl = (0..q.dim())
        .map(|d| {
            let (mq, lq, mp, lp) = (q.mean[d], q.log_var[d], p.mean[d], p.log_var[d]);
            0.5 * (lp - lq + ((lq).exp() + (mq - mp).powi(2)) * (-lp).exp() - 1.0)
        })
        .sum::<f64>();
    Ok(kl.max(0.0))
}

/// `mean + exp(log_var / 2) * noise`.
pub fn reparam_sample(q: &DiagonalGaussian, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != q.dim() {
        return Err(invalid(format!("noise has {} entries, expected {}", noise.len(), q.dim())));
    }
    Ok(q.mean
        .iter()
        .zip(&q.log_var)
        .zip(noise)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// A batch of diagonal Gaussians (`B x D` mean and log-variance) on a tape.
#[derive(Clone, Copy, Debug)]
pub struct GaussianVar<'t> {
    pub mean: Var<'t>,
    pub log_var: Var<'t>,
}

impl<'t> GaussianVar<'t> {
    pub fn new(mean: Var<'t>, log_var: Var<'t>) -> Self {
        assert_eq!(mean.shape(), log_var.shape(), "mean/log_var shape");
        Self { mean, log_var }
    }

    pub fn batch(&self) -> usize {
        self.mean.rows()
    }

    pub fn dim(&self) -> usize {
        self.mean.cols()
    }

    /// Row `r` as a plain [`DiagonalGaussian`].
    pub fn row(&self, r: usize) -> DiagonalGaussian {
        let m = self.mean.with_value(|a| a.row(r).to_vec());
        let lv = self.log_var.with_value(|a| a.row(r).to_vec());
        DiagonalGaussian { mean: m, log_var: lv }
    }

    /// Reparameterized draw given `B x D` standard-normal noise.
    pub fn reparam(&self, noise: Var<'t>) -> Var<'t> {
        self.mean + self.log_var.scale(0.5).exp() * noise
    }

    /// Per-row `KL(self || N(0, I))`, shape `B x 1`.
    pub fn kl_to_standard(&self) -> Var<'t> {
        let m2 = self.mean.square();
        (self.log_var.exp() + m2 - self.log_var).add_scalar(-1.0).row_sum().scale(0.5)
    }

    /// Per-row `KL(self || other)`, shape `B x 1`.
    pub fn kl(&self, other: &GaussianVar<'t>) -> Var<'t> {
        let diff2 = (self.mean - other.mean).square();
        let inv_p = (-other.log_var).exp();
        let ratio = (self.log_var.exp() + diff2) * inv_p;
        (other.log_var - self.log_var + ratio).add_scalar(-1.0).row_sum().scale(0.5)
    }
}

/// Batched product of experts on a tape; see [`product_of_experts`].
pub fn product_of_experts_var<'t>(experts: &[GaussianVar<'t>], include_prior: bool) -> GaussianVar<'t> {
    assert!(!experts.is_empty(), "product of experts needs at least one expert");
    if experts.len() == 1 && !include_prior {
        return experts[0];
    }
    let mut precision = (-experts[0].log_var).exp();
    let mut weighted = experts[0].mean * precision;
    for e in &experts[1..] {
        let p = (-e.log_var).exp();
        weighted = weighted + e.mean * p;
        precision = precision + p;
    }
    if include_prior {
        precision = precision.add_scalar(1.0);
    }
    let log_var = -precision.ln();
    GaussianVar { mean: weighted.div(precision), log_var }
}
