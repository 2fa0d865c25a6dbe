//! Pairwise-confusion and cross-entropy losses on ball embeddings.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{contract, Result};
use crate::geometry::{self, PoincarePoint};
use crate::tape_geometry;

/// Per-sample weight in the cross-entropy sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightForm {
    /// `1 / (2n)` for every sample, making the loss a mean.
    #[default]
    BatchNormalized,
    /// Weight 1, making the loss a sum.
    Unit,
}

impl WeightForm {
    pub fn weight(self, batch_len: usize) -> f64 {
        match self {
            WeightForm::BatchNormalized => 1.0 / batch_len as f64,
            WeightForm::Unit => 1.0,
        }
    }
}

/// `(1/n) Σ_{i < n/2} D(S_i, S_{i+n/2})` over the positive embeddings.
pub fn hyp_pc(positives: &[PoincarePoint]) -> Result<f64> {
    let n = positives.len();
    if n == 0 || !n.is_multiple_of(2) {
        return Err(contract(format!(
            "pairwise confusion needs an even, non-zero count, got {n}"
        )));
    }
    let half = n / 2;
    let mut total = 0.0;
    for i in 0..half {
        total += geometry::geodesic_distance(&positives[i], &positives[i + half])?;
    }
    Ok(total / n as f64)
}

/// Negative log-likelihood of the labelled class, `-log softmax(ζ)_y`.
pub fn sample_nll(logits: [f64; 2], label: u8) -> Result<f64> {
    let (own, other) = match label {
        0 => (logits[0], logits[1]),
        1 => (logits[1], logits[0]),
        l => return Err(contract(format!("label {l} outside {{0, 1}}"))),
    };
    // log(e^own + e^other) - own
    Ok(crate::autodiff::softplus(other - own))
}

/// Weighted sum of per-sample negative log-likelihoods.
pub fn hyp_ce(logits: &[[f64; 2]], labels: &[u8], weights: &[f64]) -> Result<f64> {
    if logits.len() != labels.len() || logits.len() != weights.len() {
        return Err(contract("logits, labels and weights differ in length"));
    }
    if let Some(w) = weights.iter().find(|w| w.is_nan() || **w <= 0.0) {
        return Err(contract(format!("sample weight {w} must be positive")));
    }
    let mut total = 0.0;
    for ((z, &y), w) in logits.iter().zip(labels).zip(weights) {
        total += w * sample_nll(*z, y)?;
    }
    Ok(total)
}

pub fn total_loss(pc: f64, ce: f64) -> f64 {
    pc + ce
}

/// Pairwise confusion over the `n × d` positive block `s`.
pub fn hyp_pc_on_tape(t: &Tape, s: Var, c: f64) -> Var {
    let (n, _) = t.shape(s);
    assert!(
        n > 0 && n % 2 == 0,
        "hyp_pc_on_tape needs an even row count"
    );
    let half = n / 2;
    let a = t.slice_rows(s, 0, half);
    let b = t.slice_rows(s, half, n);
    t.scale(
        t.sum(tape_geometry::geodesic_distance_rows(t, a, b, c)),
        1.0 / n as f64,
    )
}

/// Cross-entropy over logit columns `z0`, `z1` (`r × 1`) with a shared weight.
pub fn hyp_ce_on_tape(t: &Tape, z0: Var, z1: Var, labels: &[u8], weight: f64) -> Var {
    let r = labels.len();
    assert_eq!(t.shape(z0), (r, 1));
    // other - own = s * (z1 - z0), s = +1 for real rows, -1 for spoof rows
    let sign: Vec<f64> = labels
        .iter()
        .map(|&y| if y == 0 { 1.0 } else { -1.0 })
        .collect();
    let sign = t.constant(sign, r, 1);
    let margin = t.mul(sign, t.sub(z1, z0));
    t.scale(t.sum(t.softplus(margin)), weight)
}
