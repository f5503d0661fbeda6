//! Sample-quality metrics: Fréchet distance between Gaussian fits,
//! sample-average F1 for binary attributes and cross-modal coherence.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};

use crate::data_synth::ProbeClassifier;
use crate::error::{invalid, Result};

/// Eigenvalues below this magnitude are treated as zero when taking square
/// roots.
pub const EIGEN_CLIP: f64 = 1e-8;

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| a[[r, c]])
}

fn check_covariance(name: &str, cov: &Array2<f64>, dim: usize) -> Result<()> {
    if cov.dim() != (dim, dim) {
        return Err(invalid(format!("{name} has shape {:?}, expected ({dim}, {dim})", cov.dim())));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(invalid(format!("{name} contains non-finite entries")));
    }
    let scale = cov.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    for r in 0..dim {
        for c in 0..r {
            if (cov[[r, c]] - cov[[c, r]]).abs() > 1e-9 * scale {
                return Err(invalid(format!("{name} is not symmetric at ({r}, {c})")));
            }
        }
    }
    Ok(())
}

/// Symmetric square root through the eigendecomposition, with small or
/// negative eigenvalues clipped to zero.
fn psd_sqrt(m: DMatrix<f64>) -> DMatrix<f64> {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| if l < EIGEN_CLIP { 0.0 } else { l.sqrt() });
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `|mu1 - mu2|^2 + Tr(cov1 + cov2 - 2 (cov1 cov2)^{1/2})`.
///
/// The trace of the product root is computed as the trace of
/// `(S cov2 S)^{1/2}` with `S = cov1^{1/2}`, which has the same eigenvalues
/// and stays symmetric.
pub fn frechet_gaussian_distance(
    mu1: &Array1<f64>,
    cov1: &Array2<f64>,
    mu2: &Array1<f64>,
    cov2: &Array2<f64>,
) -> Result<f64> {
    let dim = mu1.len();
    if mu2.len() != dim {
        return Err(invalid(format!("means differ in length: {} vs {}", dim, mu2.len())));
    }
    if dim == 0 {
        return Err(invalid("Gaussians must have at least one dimension"));
    }
    if mu1.iter().chain(mu2.iter()).any(|v| !v.is_finite()) {
        return Err(invalid("means contain non-finite entries"));
    }
    check_covariance("cov1", cov1, dim)?;
    check_covariance("cov2", cov2, dim)?;

    let s = psd_sqrt(to_dmatrix(cov1));
    let inner = &s * to_dmatrix(cov2) * &s;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_root: f64 =
        SymmetricEigen::new(inner).eigenvalues.iter().map(|&l| if l < EIGEN_CLIP { 0.0 } else { l.sqrt() }).sum();
    let mean_term: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b) * (a - b)).sum();
    let d = mean_term + cov1.diag().sum() + cov2.diag().sum() - 2.0 * tr_root;
    Ok(d.max(0.0))
}

/// Sample mean and unbiased sample covariance of the rows of `features`.
pub fn fit_feature_gaussian(features: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let (n, d) = features.dim();
    if d == 0 {
        return Err(invalid("features need at least one column"));
    }
    if n < d + 1 {
        return Err(invalid(format!("need at least {} rows for {d} features, got {n}", d + 1)));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(invalid("features contain non-finite entries"));
    }
    let mean = features.mean_axis(Axis(0)).expect("nonempty");
    let centered = features - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    Ok((mean, cov))
}

fn binary_row_check(x: &Array2<f64>, what: &str) -> Result<()> {
    if x.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(invalid(format!("{what} must contain only 0 and 1")));
    }
    Ok(())
}

/// Mean over records of `2 TP / (2 TP + FP + FN)`. A record with no
/// positives in either matrix scores 1.
pub fn f1_sample_average(predictions: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
    if predictions.dim() != targets.dim() {
        return Err(invalid(format!("shape mismatch: {:?} vs {:?}", predictions.dim(), targets.dim())));
    }
    if predictions.nrows() == 0 {
        return Err(invalid("need at least one record"));
    }
    binary_row_check(predictions, "predictions")?;
    binary_row_check(targets, "targets")?;
    let mut total = 0.0;
    for (p, t) in predictions.axis_iter(Axis(0)).zip(targets.axis_iter(Axis(0))) {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (&a, &b) in p.iter().zip(t.iter()) {
            match (a == 1.0, b == 1.0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let denom = 2 * tp + fp + fn_;
        total += if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 };
    }
    Ok(total / predictions.nrows() as f64)
}

/// Thresholds probabilities at 0.5.
pub fn binarize(probs: &Array2<f64>) -> Array2<f64> {
    probs.mapv(|p| if p >= 0.5 { 1.0 } else { 0.0 })
}

/// What generated labels are compared against.
#[derive(Clone, Copy, Debug)]
pub enum CoherenceReference<'a> {
    /// Every modality must match the label of the record it was generated
    /// from.
    Conditioning(&'a [usize]),
    /// Every modality must agree with every other.
    Mutual,
}

/// Coherence from per-modality predicted labels (`predicted[m][r]`).
pub fn coherence_from_labels(predicted: &[Vec<usize>], reference: CoherenceReference<'_>) -> Result<f64> {
    let n = match (predicted.first(), reference) {
        (Some(p), _) => p.len(),
        (None, CoherenceReference::Conditioning(l)) => l.len(),
        (None, CoherenceReference::Mutual) => return Err(invalid("no modalities to compare")),
    };
    if n == 0 {
        return Err(invalid("need at least one record"));
    }
    if predicted.iter().any(|p| p.len() != n) {
        return Err(invalid("modalities have different record counts"));
    }
    let hits = match reference {
        CoherenceReference::Conditioning(labels) => {
            if labels.len() != n {
                return Err(invalid(format!("{} conditioning labels for {n} records", labels.len())));
            }
            (0..n).filter(|&r| predicted.iter().all(|p| p[r] == labels[r])).count()
        }
        CoherenceReference::Mutual => (0..n).filter(|&r| predicted.iter().all(|p| p[r] == predicted[0][r])).count(),
    };
    Ok(hits as f64 / n as f64)
}

/// Labels every generated modality with its probe and scores agreement.
/// `records` maps modality names to `n x dim` arrays.
pub fn coherence_accuracy(
    records: &BTreeMap<String, Array2<f64>>,
    probes: &BTreeMap<String, ProbeClassifier>,
    reference: CoherenceReference<'_>,
) -> Result<f64> {
    let mut predicted = Vec::with_capacity(records.len());
    for (name, x) in records {
        let probe = probes.get(name).ok_or_else(|| invalid(format!("no probe for modality '{name}'")))?;
        if probe.input_dim() != x.ncols() {
            return Err(invalid(format!(
                "probe for '{name}' expects {} columns, got {}",
                probe.input_dim(),
                x.ncols()
            )));
        }
        predicted.push(probe.predict(x));
    }
    coherence_from_labels(&predicted, reference)
}

/// Fréchet distance between Gaussian fits of probe features of two sample
/// sets.
pub fn frechet_feature_distance(probe: &ProbeClassifier, real: &Array2<f64>, generated: &Array2<f64>) -> Result<f64> {
    let (m1, c1) = fit_feature_gaussian(&probe.features(real))?;
    let (m2, c2) = fit_feature_gaussian(&probe.features(generated))?;
    frechet_gaussian_distance(&m1, &c1, &m2, &c2)
}
