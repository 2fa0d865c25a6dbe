//! Pseudo-negative features drawn from `N(μ, σ² I)` around an exponentially
//! smoothed mean of the real features.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureBatch, LABEL_REAL, LABEL_SPOOF};
use crate::error::{contract, Error, Result};
use crate::rng::{self, Stream};

/// How the current batch's centre is computed before smoothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanForm {
    /// Row mean.
    #[default]
    Mean,
    /// Row sum.
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveGaussianState {
    pub mu: Vec<f64>,
    pub sigma: f64,
    pub alpha: f64,
    pub mean_form: MeanForm,
    rng: ChaCha8Rng,
}

impl AdaptiveGaussianState {
    /// `μ = 0`, `σ = 1`, generator on the sampler stream of `seed`.
    pub fn new(dim: usize, alpha: f64, mean_form: MeanForm, seed: u64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(contract(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        Ok(AdaptiveGaussianState {
            mu: vec![0.0; dim],
            sigma: 1.0,
            alpha,
            mean_form,
            rng: rng::stream(seed, Stream::Sampler),
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `μ ← α μ + (1 - α) μ_current` with `μ_current` from the real rows.
    pub fn update_mean(&mut self, real: &FeatureBatch) -> Result<()> {
        if real.is_empty() {
            return Err(Error::EmptyBatch(
                "adaptive mean needs at least one row".into(),
            ));
        }
        if real.dim() != self.dim() {
            return Err(contract(format!(
                "batch width {} differs from sampler width {}",
                real.dim(),
                self.dim()
            )));
        }
        if real.labels().iter().any(|&l| l != LABEL_REAL) {
            return Err(contract("adaptive mean only accepts real (label 0) rows"));
        }
        let mut current = vec![0.0; self.dim()];
        for row in real.rows() {
            current.iter_mut().zip(row).for_each(|(c, x)| *c += x);
        }
        if self.mean_form == MeanForm::Mean {
            let n = real.len() as f64;
            current.iter_mut().for_each(|c| *c /= n);
        }
        let a = self.alpha;
        for (m, c) in self.mu.iter_mut().zip(&current) {
            *m = a * *m + (1.0 - a) * c;
        }
        Ok(())
    }

    /// Draws `n` rows labelled spoof.
    pub fn sample_pseudo_negatives(&mut self, n: usize) -> Result<FeatureBatch> {
        if n == 0 {
            return Err(contract("pseudo-negative count must be positive"));
        }
        let d = self.dim();
        let mut values = vec![0.0; n * d];
        rng::fill_standard_normal(&mut self.rng, &mut values);
        for row in values.chunks_mut(d) {
            for (v, m) in row.iter_mut().zip(&self.mu) {
                *v = m + self.sigma * *v;
            }
        }
        FeatureBatch::new(values, d, vec![LABEL_SPOOF; n])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_batch(m: &[f64], rows: usize) -> FeatureBatch {
        FeatureBatch::new(m.repeat(rows), m.len(), vec![0; rows]).unwrap()
    }

    #[test]
    fn first_update_from_zero() {
        let mut s = AdaptiveGaussianState::new(2, 0.8, MeanForm::Mean, 0).unwrap();
        s.update_mean(&constant_batch(&[1.0, -2.0], 4)).unwrap();
        assert!((s.mu[0] - 0.2).abs() < 1e-15);
        assert!((s.mu[1] + 0.4).abs() < 1e-15);
    }

    #[test]
    fn fixed_point() {
        let mut s = AdaptiveGaussianState::new(2, 0.8, MeanForm::Mean, 0).unwrap();
        s.mu = vec![0.5, 0.25];
        s.update_mean(&constant_batch(&[0.5, 0.25], 3)).unwrap();
        assert_eq!(s.mu, vec![0.5, 0.25]);
    }

    #[test]
    fn closed_form_recurrence() {
        let m = [1.5, -0.75];
        let mut s = AdaptiveGaussianState::new(2, 0.8, MeanForm::Mean, 0).unwrap();
        for t in 1..=3 {
            s.update_mean(&constant_batch(&m, 8)).unwrap();
            let expected = 1.0 - 0.8f64.powi(t);
            for (mu, mj) in s.mu.iter().zip(m) {
                assert!((mu - mj * expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn sum_form_scales_with_batch() {
        let mut s = AdaptiveGaussianState::new(1, 0.5, MeanForm::Sum, 0).unwrap();
        s.update_mean(&constant_batch(&[1.0], 4)).unwrap();
        assert_eq!(s.mu, vec![2.0]);
    }

    #[test]
    fn rejects_spoof_rows_and_empty() {
        let mut s = AdaptiveGaussianState::new(1, 0.8, MeanForm::Mean, 0).unwrap();
        let spoof = FeatureBatch::new(vec![1.0], 1, vec![1]).unwrap();
        assert!(s.update_mean(&spoof).is_err());
        let empty = FeatureBatch::new(vec![], 1, vec![]).unwrap();
        assert!(matches!(s.update_mean(&empty), Err(Error::EmptyBatch(_))));
    }

    #[test]
    fn sampling_is_deterministic() {
        let mut a = AdaptiveGaussianState::new(2, 0.8, MeanForm::Mean, 42).unwrap();
        let mut b = AdaptiveGaussianState::new(2, 0.8, MeanForm::Mean, 42).unwrap();
        let x = a.sample_pseudo_negatives(4).unwrap();
        assert_eq!(x, b.sample_pseudo_negatives(4).unwrap());
        assert!(x.labels().iter().all(|&l| l == 1));
        assert_ne!(x, a.sample_pseudo_negatives(4).unwrap());
    }
}
