//! Training configuration and the JSON config file.
//!
//! Every field has a default, so a config file only needs the keys it
//! overrides. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{Activation, EncoderConfig};
use crate::error::{contract, Result};
use crate::geometry::{Curvature, ExpMapForm};
use crate::losses::WeightForm;
use crate::sampler::MeanForm;

/// Which head parameters receive the Riemannian gradient rescaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingScope {
    /// Base point, gyroplane points and gyroplane normals.
    #[default]
    AllHeadParams,
    /// Base point and gyroplane points only.
    BallParamsOnly,
}

/// Form of the Riemannian rescaling factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingNorm {
    /// `(1 - c‖x‖²)² / 4`, the inverse squared conformal factor.
    #[default]
    Squared,
    /// `(1 - c‖x‖)² / 4`.
    Verbatim,
}

/// Which configured radius bounds the per-parameter gradient norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradClipLimit {
    /// `grad_clip` (p).
    #[default]
    GradClip,
    /// `feature_clip` (r).
    FeatureClip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModeFlags {
    pub exp_map_form: ExpMapForm,
    pub mean_form: MeanForm,
    pub weight_form: WeightForm,
    pub riemannian_scaling_scope: ScalingScope,
    pub riemannian_norm_form: ScalingNorm,
    pub grad_clip_limit: GradClipLimit,
}

impl ModeFlags {
    /// Every formula in its literal, uncorrected form.
    pub fn verbatim() -> Self {
        ModeFlags {
            exp_map_form: ExpMapForm::Verbatim,
            mean_form: MeanForm::Sum,
            weight_form: WeightForm::Unit,
            riemannian_scaling_scope: ScalingScope::AllHeadParams,
            riemannian_norm_form: ScalingNorm::Verbatim,
            grad_clip_limit: GradClipLimit::FeatureClip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub curvature: f64,
    /// Smoothing factor of the adaptive mean.
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Euclidean feature clipping radius r.
    pub feature_clip: f64,
    pub feature_clipping: bool,
    /// Gradient clipping limit p.
    pub grad_clip: f64,
    /// Real rows per step (n); each step sees 2n rows.
    pub batch_size: usize,
    pub epochs: usize,
    /// Encoder layer widths, input first, ball dimension last.
    pub widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub seed: u64,
    pub modes: ModeFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            curvature: 0.1,
            alpha: 0.8,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            learning_rate: 1e-3,
            weight_decay: 1e-6,
            feature_clip: 2.0,
            feature_clipping: true,
            grad_clip: 3.0,
            batch_size: 8,
            epochs: 60,
            widths: EncoderConfig::DESK_WIDTHS.to_vec(),
            hidden_activation: Activation::Relu,
            seed: 0,
            modes: ModeFlags::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        Curvature::new(self.curvature)?;
        let open_unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(contract(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        open_unit("alpha", self.alpha)?;
        open_unit("beta1", self.beta1)?;
        open_unit("beta2", self.beta2)?;
        for (name, v) in [
            ("adam_eps", self.adam_eps),
            ("feature_clip", self.feature_clip),
            ("grad_clip", self.grad_clip),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(contract(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(contract(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return Err(contract(format!(
                "batch_size must be even and ≥ 2, got {}",
                self.batch_size
            )));
        }
        self.encoder_config()?;
        Ok(())
    }

    pub fn curvature(&self) -> Result<Curvature> {
        Curvature::new(self.curvature)
    }

    pub fn encoder_config(&self) -> Result<EncoderConfig> {
        EncoderConfig::new(self.widths.clone(), self.hidden_activation)
    }

    pub fn input_dim(&self) -> usize {
        self.widths.first().copied().unwrap_or(0)
    }

    pub fn ball_dim(&self) -> usize {
        self.widths.last().copied().unwrap_or(0)
    }

    /// Limit applied by gradient clipping under the active mode.
    pub fn grad_clip_limit(&self) -> f64 {
        match self.modes.grad_clip_limit {
            GradClipLimit::GradClip => self.grad_clip,
            GradClipLimit::FeatureClip => self.feature_clip,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
