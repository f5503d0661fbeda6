use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::gaussian_latent::{reparam_sample, DiagonalGaussian};

/// Monte Carlo comparison of the mixture-posterior bound with the
/// weighted sum of per-subset bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapEstimate {
    /// Estimate of `E_{q_mix}[log p(x, z) - log q_mix(z)]`.
    pub mixture_elbo: f64,
    /// Estimate of `sum_A w_A E_{q_A}[log p(x, z) - log q_A(z)]`.
    pub subset_elbo: f64,
    /// `mixture_elbo - subset_elbo`, an estimate of
    /// `sum_A w_A KL(q_A || q_mix)`.
    pub gap: f64,
    /// Standard error of `gap`.
    pub std_err: f64,
}

/// Estimates both bounds on shared draws: for each of `samples` rounds one
/// `z` is drawn from every `q_A`, and the mixture expectation is taken as
/// `sum_A w_A E_{q_A}`.
pub fn mixture_elbo_gap<R, F>(
    posteriors: &[DiagonalGaussian],
    weights: &[f64],
    log_joint: F,
    samples: usize,
    rng: &mut R,
) -> Result<GapEstimate>
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> f64,
{
    if posteriors.is_empty() || posteriors.len() != weights.len() {
        return Err(invalid("need one weight per posterior and at least one posterior"));
    }
    if samples < 2 {
        return Err(invalid("need at least two samples for a standard error"));
    }
    let dim = posteriors[0].dim();
    if posteriors.iter().any(|q| q.dim() != dim) {
        return Err(invalid("posteriors differ in dimension"));
    }
    if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 || weights.iter().any(|&w| w < 0.0) {
        return Err(invalid("weights must be nonnegative and sum to 1"));
    }
    let log_mix = |z: &[f64]| {
        let terms: Vec<f64> =
            posteriors.iter().zip(weights).map(|(q, &w)| w.ln() + q.log_density(z)).collect();
        let m = terms.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
    };

    let (mut sum_mix, mut sum_sub, mut sum_gap, mut sum_gap2) = (0.0, 0.0, 0.0, 0.0);
    let mut noise = vec![0.0; dim];
    for _ in 0..samples {
        let (mut mix, mut sub) = (0.0, 0.0);
        for (q, &w) in posteriors.iter().zip(weights) {
            noise.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
            let z = reparam_sample(q, &noise)?;
            let lj = log_joint(&z);
            mix += w * (lj - log_mix(&z));
            sub += w * (lj - q.log_density(&z));
        }
        let g = mix - sub;
        sum_mix += mix;
        sum_sub += sub;
        sum_gap += g;
        sum_gap2 += g * g;
    }
    let n = samples as f64;
    let gap = sum_gap / n;
    let var = ((sum_gap2 - n * gap * gap) / (n - 1.0)).max(0.0);
    Ok(GapEstimate { mixture_elbo: sum_mix / n, subset_elbo: sum_sub / n, gap, std_err: (var / n).sqrt() })
}
