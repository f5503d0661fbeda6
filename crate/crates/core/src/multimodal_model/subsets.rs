use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Weighted set of modality subsets used by the mixture posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsetMixture {
    subsets: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

impl SubsetMixture {
    /// Validates and stores the subsets; each is sorted in place.
    pub fn new(subsets: Vec<Vec<usize>>, weights: Vec<f64>) -> Result<Self> {
        if subsets.is_empty() {
            return Err(invalid("a subset mixture needs at least one subset"));
        }
        if subsets.len() != weights.len() {
            return Err(invalid(format!("{} subsets but {} weights", subsets.len(), weights.len())));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(invalid("subset weights must lie in [0, 1]"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("subset weights sum to {total}, not 1")));
        }
        let mut subsets = subsets;
        for s in &mut subsets {
            if s.is_empty() {
                return Err(invalid("subsets must be nonempty"));
            }
            s.sort_unstable();
            if s.windows(2).any(|w| w[0] == w[1]) {
                return Err(invalid(format!("subset {s:?} repeats a modality")));
            }
        }
        for (i, s) in subsets.iter().enumerate() {
            if subsets[..i].contains(s) {
                return Err(invalid(format!("duplicate subset {s:?}")));
            }
        }
        Ok(Self { subsets, weights })
    }

    /// Equal weights over the given subsets.
    pub fn uniform(subsets: Vec<Vec<usize>>) -> Result<Self> {
        let n = subsets.len().max(1);
        Self::new(subsets, vec![1.0 / n as f64; n])
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    /// Largest modality index mentioned plus one.
    pub fn modality_span(&self) -> usize {
        self.subsets.iter().flatten().max().map_or(0, |m| m + 1)
    }

    /// Draws `k` subsets uniformly with replacement and weights each `1/k`.
    /// Repeated draws are merged, so the result stays a valid mixture whose
    /// objective is an unbiased estimate of the uniform-weight objective.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Self> {
        if k == 0 {
            return Err(invalid("must sample at least one subset"));
        }
        let mut subsets: Vec<Vec<usize>> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for _ in 0..k {
            let s = &self.subsets[rng.random_range(0..self.subsets.len())];
            match subsets.iter().position(|x| x == s) {
                Some(i) => weights[i] += 1.0 / k as f64,
                None => {
                    subsets.push(s.clone());
                    weights.push(1.0 / k as f64);
                }
            }
        }
        Ok(Self { subsets, weights })
    }
}

/// All `2^M - 1` nonempty subsets with uniform weights, in increasing
/// bitmask order: `{0}, {1}, {0, 1}, {2}, {0, 2}, ...`.
pub fn enumerate_subsets(m: usize) -> Result<SubsetMixture> {
    if m == 0 {
        return Err(invalid("need at least one modality"));
    }
    if m > 20 {
        return Err(invalid(format!("{m} modalities give too many subsets to enumerate")));
    }
    let subsets = (1u32..(1 << m))
        .map(|mask| (0..m).filter(|i| mask & (1 << i) != 0).collect())
        .collect();
    SubsetMixture::uniform(subsets)
}

/// How the training objective chooses subsets each batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SubsetStrategy {
    /// Full powerset for `M <= 3`, one sampled subset per batch beyond.
    Auto,
    FullPowerset,
    Sampled { k: usize },
}

impl SubsetStrategy {
    pub const AUTO_POWERSET_LIMIT: usize = 3;

    /// Subsets for one batch, given the full powerset mixture.
    pub fn select<R: Rng + ?Sized>(&self, full: &SubsetMixture, m: usize, rng: &mut R) -> Result<SubsetMixture> {
        match *self {
            SubsetStrategy::FullPowerset => Ok(full.clone()),
            SubsetStrategy::Auto if m <= Self::AUTO_POWERSET_LIMIT => Ok(full.clone()),
            SubsetStrategy::Auto => full.sample_uniform(1, rng),
            SubsetStrategy::Sampled { k } => full.sample_uniform(k, rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn enumeration_examples() {
        let one = enumerate_subsets(1).unwrap();
        assert_eq!(one.subsets(), &[vec![0]]);
        assert_eq!(one.weights(), &[1.0]);

        let three = enumerate_subsets(3).unwrap();
        assert_eq!(three.len(), 7);
        assert!(three.weights().iter().all(|&w| w == 1.0 / 7.0));
        assert_eq!(three.subsets()[2], vec![0, 1]);
        assert_eq!(three.subsets()[6], vec![0, 1, 2]);

        let four = enumerate_subsets(4).unwrap();
        assert_eq!(four.len(), 15);
        assert!((four.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(enumerate_subsets(0).is_err());
    }

    #[test]
    fn mixture_validation() {
        assert!(SubsetMixture::new(vec![vec![0], vec![0]], vec![0.5, 0.5]).is_err());
        assert!(SubsetMixture::new(vec![vec![]], vec![1.0]).is_err());
        assert!(SubsetMixture::new(vec![vec![0], vec![1]], vec![0.7, 0.7]).is_err());
        assert!(SubsetMixture::new(vec![vec![1, 1]], vec![1.0]).is_err());
        let m = SubsetMixture::new(vec![vec![1, 0]], vec![1.0]).unwrap();
        assert_eq!(m.subsets()[0], vec![0, 1]);
    }

    #[test]
    fn sampling_keeps_a_valid_mixture() {
        let full = enumerate_subsets(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for k in [1, 3, 40] {
            let s = full.sample_uniform(k, &mut rng).unwrap();
            assert!((s.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(s.subsets().iter().all(|x| full.subsets().contains(x)));
        }
        let auto = SubsetStrategy::Auto.select(&full, 4, &mut rng).unwrap();
        assert_eq!(auto.len(), 1);
        let small = enumerate_subsets(3).unwrap();
        assert_eq!(SubsetStrategy::Auto.select(&small, 3, &mut rng).unwrap(), small);
    }
}
