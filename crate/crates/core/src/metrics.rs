//! Presentation attack detection metrics over spoof-likelihood scores.
//!
//! Scores are oriented "high = spoof". A sample is rejected as an attack
//! when its score is at or above the threshold.

use serde::{Deserialize, Serialize};

use crate::data::{LABEL_REAL, LABEL_SPOOF};
use crate::error::{contract, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub label: u8,
}

impl ScoredSample {
    pub fn new(score: f64, label: u8) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(contract(format!("score {score} outside [0, 1]")));
        }
        if label > LABEL_SPOOF {
            return Err(contract(format!("label {label} outside {{0, 1}}")));
        }
        Ok(ScoredSample { score, label })
    }
}

/// Pairs scores with labels.
pub fn scored(scores: &[f64], labels: &[u8]) -> Result<Vec<ScoredSample>> {
    if scores.len() != labels.len() {
        return Err(contract("score and label counts differ"));
    }
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &l)| ScoredSample::new(s, l))
        .collect()
}

fn class_counts(samples: &[ScoredSample]) -> Result<(usize, usize)> {
    let spoof = samples.iter().filter(|s| s.label == LABEL_SPOOF).count();
    let real = samples.len() - spoof;
    if real == 0 || spoof == 0 {
        return Err(contract("metrics need both real and spoof samples"));
    }
    Ok((real, spoof))
}

/// `(APCER, BPCER)`: attacks scored below the threshold and bona fide
/// samples scored at or above it.
pub fn confusion_rates(samples: &[ScoredSample], threshold: f64) -> Result<(f64, f64)> {
    let (real, spoof) = class_counts(samples)?;
    let accepted = samples
        .iter()
        .filter(|s| s.label == LABEL_SPOOF && s.score < threshold)
        .count();
    let rejected = samples
        .iter()
        .filter(|s| s.label == LABEL_REAL && s.score >= threshold)
        .count();
    Ok((
        accepted as f64 / spoof as f64,
        rejected as f64 / real as f64,
    ))
}

pub fn hter(samples: &[ScoredSample], threshold: f64) -> Result<f64> {
    let (a, b) = confusion_rates(samples, threshold)?;
    Ok((a + b) / 2.0)
}

/// Observed score minimising `|APCER - BPCER|`, lowest on ties.
pub fn eer_threshold(samples: &[ScoredSample]) -> Result<f64> {
    class_counts(samples)?;
    let mut candidates: Vec<f64> = samples.iter().map(|s| s.score).collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best = (f64::INFINITY, candidates[0]);
    for &t in &candidates {
        let (a, b) = confusion_rates(samples, t)?;
        let gap = (a - b).abs();
        if gap < best.0 {
            best = (gap, t);
        }
    }
    Ok(best.1)
}

/// Probability that a random spoof outscores a random real sample, ties
/// counted half, via the rank-sum statistic.
pub fn auc(samples: &[ScoredSample]) -> Result<f64> {
    let (real, spoof) = class_counts(samples)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&i, &j| samples[i].score.total_cmp(&samples[j].score));
    let mut spoof_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && samples[order[j + 1]].score == samples[order[i]].score {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        let k = order[i..=j]
            .iter()
            .filter(|&&o| samples[o].label == LABEL_SPOOF)
            .count();
        spoof_rank_sum += mean_rank * k as f64;
        i = j + 1;
    }
    let s = spoof as f64;
    Ok((spoof_rank_sum - s * (s + 1.0) / 2.0) / (s * real as f64))
}

/// Area under the ROC curve by trapezoidal integration over every distinct
/// threshold.
pub fn roc_auc_trapezoid(samples: &[ScoredSample]) -> Result<f64> {
    let (real, spoof) = class_counts(samples)?;
    let mut thresholds: Vec<f64> = samples.iter().map(|s| s.score).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut area, mut prev_fpr, mut prev_tpr) = (0.0, 0.0, 0.0);
    for t in thresholds {
        let tp = samples
            .iter()
            .filter(|s| s.label == LABEL_SPOOF && s.score >= t)
            .count();
        let fp = samples
            .iter()
            .filter(|s| s.label == LABEL_REAL && s.score >= t)
            .count();
        let (tpr, fpr) = (tp as f64 / spoof as f64, fp as f64 / real as f64);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_fpr = fpr;
        prev_tpr = tpr;
    }
    Ok(area)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    Eer,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub n_real: usize,
    pub n_spoof: usize,
    pub threshold: f64,
    pub threshold_source: ThresholdSource,
    pub apcer: f64,
    pub bpcer: f64,
    pub hter: f64,
    /// Equal error rate: HTER at the EER threshold.
    pub eer: f64,
    pub eer_threshold: f64,
    pub auc: f64,
}

impl MetricReport {
    /// Rates at `threshold`, or at the EER threshold when none is given.
    pub fn compute(samples: &[ScoredSample], threshold: Option<f64>) -> Result<Self> {
        let (n_real, n_spoof) = class_counts(samples)?;
        let eer_t = eer_threshold(samples)?;
        let (threshold, source) = match threshold {
            Some(t) if t.is_finite() => (t, ThresholdSource::User),
            Some(t) => return Err(contract(format!("threshold must be finite, got {t}"))),
            None => (eer_t, ThresholdSource::Eer),
        };
        let (apcer, bpcer) = confusion_rates(samples, threshold)?;
        Ok(MetricReport {
            n_real,
            n_spoof,
            threshold,
            threshold_source: source,
            apcer,
            bpcer,
            hter: (apcer + bpcer) / 2.0,
            eer: hter(samples, eer_t)?,
            eer_threshold: eer_t,
            auc: auc(samples)?,
        })
    }

    /// One `key=value` line per metric followed by the report as JSON on a
    /// single line.
    pub fn to_text(&self) -> String {
        let source = match self.threshold_source {
            ThresholdSource::Eer => "eer",
            ThresholdSource::User => "user",
        };
        format!(
            "n_real={}\nn_spoof={}\nthreshold={}\nthreshold_source={source}\napcer={}\nbpcer={}\nhter={}\neer={}\neer_threshold={}\nauc={}\n{}\n",
            self.n_real,
            self.n_spoof,
            self.threshold,
            self.apcer,
            self.bpcer,
            self.hter,
            self.eer,
            self.eer_threshold,
            self.auc,
            serde_json::to_string(self).expect("report serialisation cannot fail"),
        )
    }

    /// Reads the JSON line of [`MetricReport::to_text`] output.
    pub fn from_text(s: &str) -> Result<Self> {
        let line = s
            .lines()
            .find(|l| l.starts_with('{'))
            .ok_or_else(|| contract("report has no JSON block"))?;
        Ok(serde_json::from_str(line)?)
    }
}
