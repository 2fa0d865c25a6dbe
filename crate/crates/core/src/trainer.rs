//! Training loop: adaptive pseudo-negatives, clipped and rescaled Adam steps,
//! epoch shuffling and versioned checkpoints.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{GradClipLimit, ScalingNorm, ScalingScope, TrainConfig};
use crate::data::{FeatureBatch, LABEL_REAL};
use crate::error::{contract, Error, Result};
use crate::geometry;
use crate::model::{record, LossBreakdown, ModelParams, ParamKind, ParamsRecord, Stage};
use crate::rng::{self, Stream};
use crate::sampler::AdaptiveGaussianState;

pub const CHECKPOINT_FORMAT: &str = "hypoc-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// First and second moment estimates, one vector per parameter slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Number of completed updates.
    pub t: u64,
}

impl AdamState {
    pub fn zeros(params: &ModelParams) -> Self {
        let m: Vec<Vec<f64>> = params.slots().iter().map(|s| vec![0.0; s.len()]).collect();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: AdamState,
    pub sampler: AdaptiveGaussianState,
    /// Completed steps.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
}

impl TrainState {
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        let params = ModelParams::init(cfg)?;
        let sampler =
            AdaptiveGaussianState::new(cfg.input_dim(), cfg.alpha, cfg.modes.mean_form, cfg.seed)?;
        Ok(TrainState {
            adam: AdamState::zeros(&params),
            params,
            sampler,
            step: 0,
            epoch: 0,
        })
    }
}

/// Rescales `g` to norm `limit` when its norm exceeds it.
pub fn grad_clip(g: &[f64], limit: f64) -> Vec<f64> {
    let n = geometry::norm(g);
    if n > limit {
        let k = limit / n;
        g.iter().map(|x| x * k).collect()
    } else {
        g.to_vec()
    }
}

/// Rescaling applied to head gradients, evaluated at the base point.
pub fn riemannian_factor(base_sq_norm: f64, c: f64, form: ScalingNorm) -> f64 {
    let s = match form {
        ScalingNorm::Squared => 1.0 - c * base_sq_norm,
        ScalingNorm::Verbatim => 1.0 - c * base_sq_norm.sqrt(),
    };
    s * s / 4.0
}

fn scaled(kind: ParamKind, scope: ScalingScope) -> bool {
    match (kind, scope) {
        (ParamKind::Euclidean, _) => false,
        (ParamKind::BallPoint, _) => true,
        (ParamKind::HeadNormal, ScalingScope::AllHeadParams) => true,
        (ParamKind::HeadNormal, ScalingScope::BallParamsOnly) => false,
    }
}

/// One optimisation step on `n` real rows and `n` fresh pseudo-negatives.
///
/// On error the state is left unchanged.
pub fn train_step(
    state: &mut TrainState,
    real: &FeatureBatch,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    train_step_traced(state, real, cfg, None)
}

/// [`train_step`] that also records the executed stages.
pub fn train_step_traced(
    state: &mut TrainState,
    real: &FeatureBatch,
    cfg: &TrainConfig,
    mut trace: Option<&mut Vec<Stage>>,
) -> Result<LossBreakdown> {
    let n = real.len();
    if n < 2 || !n.is_multiple_of(2) {
        return Err(contract(format!(
            "real batch size must be even and at least 2, got {n}"
        )));
    }
    if real.labels().iter().any(|&l| l != LABEL_REAL) {
        return Err(contract("training batches must contain only real rows"));
    }

    let mut sampler = state.sampler.clone();
    record(&mut trace, Stage::UpdateMean);
    sampler.update_mean(real)?;
    record(&mut trace, Stage::SamplePseudoNegatives);
    let negatives = sampler.sample_pseudo_negatives(n)?;
    record(&mut trace, Stage::Concat);
    let batch = real.concat(&negatives)?;

    let (loss, grads) = state
        .params
        .loss_and_grads_traced(&batch, cfg, trace.as_deref_mut())?;

    let c = cfg.curvature;
    let factor = riemannian_factor(
        state.params.base.0.sq_norm(),
        c,
        cfg.modes.riemannian_norm_form,
    );
    let limit = match cfg.modes.grad_clip_limit {
        GradClipLimit::GradClip => cfg.grad_clip,
        GradClipLimit::FeatureClip => cfg.feature_clip,
    };
    let t = state.adam.t + 1;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let lr = cfg.learning_rate;

    let slots = state.params.slots();
    let mut values = state.params.flatten();
    let mut adam = state.adam.clone();
    for (i, slot) in slots.iter().enumerate() {
        record(&mut trace, Stage::GradClip(i));
        let mut g = grad_clip(&grads[i], limit);
        if scaled(slot.kind, cfg.modes.riemannian_scaling_scope) {
            record(&mut trace, Stage::RiemannianScale(i));
            g.iter_mut().for_each(|x| *x *= factor);
        }
        record(&mut trace, Stage::Moments(i));
        let (m, v) = (&mut adam.m[i], &mut adam.v[i]);
        for ((mj, vj), gj) in m.iter_mut().zip(v.iter_mut()).zip(&g) {
            *mj = cfg.beta1 * *mj + (1.0 - cfg.beta1) * gj;
            *vj = cfg.beta2 * *vj + (1.0 - cfg.beta2) * gj * gj;
        }
        record(&mut trace, Stage::BiasCorrection(i));
        record(&mut trace, Stage::Update(i));
        let decay = slot.kind == ParamKind::Euclidean;
        for ((w, mj), vj) in values[i].iter_mut().zip(m.iter()).zip(v.iter()) {
            let m_hat = mj / bc1;
            let v_hat = vj / bc2;
            let old = *w;
            *w -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
            if decay {
                *w -= lr * cfg.weight_decay * old;
            }
        }
        if values[i].iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                op: format!("adam update of {}", slot.name),
            });
        }
    }
    adam.t = t;

    record(&mut trace, Stage::Project);
    let mut params = state.params.clone();
    params.assign(&values)?;

    state.params = params;
    state.adam = adam;
    state.sampler = sampler;
    state.step += 1;
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: u64,
    pub hyp_pc: f64,
    pub hyp_ce: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitLog {
    pub steps: Vec<StepLog>,
}

impl FitLog {
    pub fn extend(&mut self, other: FitLog) {
        self.steps.extend(other.steps);
    }

    /// `(epoch, mean total loss)` per epoch.
    pub fn epoch_means(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64, usize)> = Vec::new();
        for s in &self.steps {
            match out.last_mut() {
                Some(last) if last.0 == s.epoch => {
                    last.1 += s.total;
                    last.2 += 1;
                }
                _ => out.push((s.epoch, s.total, 1)),
            }
        }
        out.into_iter()
            .map(|(e, sum, k)| (e, sum / k as f64))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,step,hyp_pc,hyp_ce,total\n");
        for l in &self.steps {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                l.epoch, l.step, l.hyp_pc, l.hyp_ce, l.total
            ));
        }
        s
    }
}

/// Row order for epoch `epoch`, a seeded permutation of `0..n`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, Stream::Shuffle(epoch as u64)));
    idx
}

/// Trains from a fresh state for `cfg.epochs` epochs.
pub fn fit(cfg: &TrainConfig, train: &FeatureBatch) -> Result<(TrainState, FitLog)> {
    let mut state = TrainState::init(cfg)?;
    let log = run_epochs(&mut state, cfg, train, cfg.epochs)?;
    Ok((state, log))
}

/// Continues training until `until_epoch` epochs are complete.
///
/// Remainder rows that do not fill a batch are skipped for that epoch.
pub fn run_epochs(
    state: &mut TrainState,
    cfg: &TrainConfig,
    train: &FeatureBatch,
    until_epoch: usize,
) -> Result<FitLog> {
    cfg.validate()?;
    if train.labels().iter().any(|&l| l != LABEL_REAL) {
        return Err(contract("training data must contain only real rows"));
    }
    if train.dim() != cfg.input_dim() {
        return Err(contract(format!(
            "training feature width {} differs from configured input {}",
            train.dim(),
            cfg.input_dim()
        )));
    }
    let n = cfg.batch_size;
    if train.len() < n {
        return Err(Error::EmptyBatch(format!(
            "{} training rows cannot fill a batch of {n}",
            train.len()
        )));
    }
    let mut log = FitLog::default();
    while state.epoch < until_epoch {
        let epoch = state.epoch;
        let order = epoch_order(cfg.seed, epoch, train.len());
        for chunk in order.chunks_exact(n) {
            let loss = train_step(state, &train.select(chunk), cfg)?;
            log.steps.push(StepLog {
                epoch,
                step: state.step,
                hyp_pc: loss.hyp_pc,
                hyp_ce: loss.hyp_ce,
                total: loss.total,
            });
        }
        state.epoch += 1;
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateRecord {
    params: ParamsRecord,
    adam: AdamState,
    sampler: AdaptiveGaussianState,
    step: u64,
    epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointRecord {
    format: String,
    version: u32,
    config: TrainConfig,
    state: StateRecord,
}

/// Configuration plus the full training state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let s = &self.state;
        let rec = CheckpointRecord {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            state: StateRecord {
                params: s.params.to_record(),
                adam: s.adam.clone(),
                sampler: s.sampler.clone(),
                step: s.step,
                epoch: s.epoch,
            },
        };
        serde_json::to_string_pretty(&rec).expect("checkpoint serialisation cannot fail")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let rec: CheckpointRecord = serde_json::from_str(s)?;
        if rec.format != CHECKPOINT_FORMAT {
            return Err(contract(format!(
                "not a checkpoint: format `{}`",
                rec.format
            )));
        }
        if rec.version != CHECKPOINT_VERSION {
            return Err(contract(format!(
                "unsupported checkpoint version {}",
                rec.version
            )));
        }
        let config = rec.config;
        config.validate()?;
        let params = ModelParams::from_record(rec.state.params)?;
        params.check_against(&config)?;
        let slots = params.slots();
        let adam = rec.state.adam;
        let shapes_ok = |moments: &[Vec<f64>]| {
            moments.len() == slots.len()
                && moments.iter().zip(&slots).all(|(m, s)| m.len() == s.len())
        };
        if !shapes_ok(&adam.m) || !shapes_ok(&adam.v) {
            return Err(contract("optimizer moments do not match parameter shapes"));
        }
        let sampler = rec.state.sampler;
        if sampler.dim() != config.input_dim() {
            return Err(contract("sampler width differs from configured input"));
        }
        if !(sampler.alpha > 0.0 && sampler.alpha < 1.0) || !sampler.sigma.is_finite() {
            return Err(contract("invalid sampler state"));
        }
        Ok(Checkpoint {
            config,
            state: TrainState {
                params,
                adam,
                sampler,
                step: rec.state.step,
                epoch: rec.state.epoch,
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig {
            widths: vec![3, 4, 2],
            batch_size: 2,
            epochs: 2,
            ..Default::default()
        }
    }

    fn data(rows: usize) -> FeatureBatch {
        let v: Vec<f64> = (0..rows * 3)
            .map(|i| ((i * 7) % 11) as f64 / 11.0)
            .collect();
        FeatureBatch::new(v, 3, vec![0; rows]).unwrap()
    }

    #[test]
    fn clip_bounds_norm() {
        let g = grad_clip(&[3.0, 4.0], 1.0);
        assert!((geometry::norm(&g) - 1.0).abs() < 1e-15);
        assert_eq!(grad_clip(&[0.3, 0.4], 1.0), vec![0.3, 0.4]);
    }

    #[test]
    fn factor_at_origin_is_quarter() {
        assert_eq!(riemannian_factor(0.0, 1.0, ScalingNorm::Squared), 0.25);
        assert_eq!(riemannian_factor(0.0, 1.0, ScalingNorm::Verbatim), 0.25);
        let x = 0.25;
        assert!((riemannian_factor(x, 1.0, ScalingNorm::Verbatim) - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            weight_decay: 0.0,
            ..cfg()
        };
        let mut s = TrainState::init(&cfg).unwrap();
        let before = s.params.clone();
        train_step(&mut s, &data(2), &cfg).unwrap();
        assert_eq!(s.params, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn failed_step_leaves_state() {
        let cfg = cfg();
        let mut s = TrainState::init(&cfg).unwrap();
        let before = s.clone();
        assert!(train_step(&mut s, &data(3), &cfg).is_err());
        assert_eq!(s, before);
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = cfg();
        let (state, log) = fit(&cfg, &data(5)).unwrap();
        assert_eq!(log.steps.len(), 4);
        let cp = Checkpoint { config: cfg, state };
        let back = Checkpoint::from_json_str(&cp.to_json()).unwrap();
        assert_eq!(back, cp);
        assert_eq!(back.to_json(), cp.to_json());
    }

    #[test]
    fn checkpoint_rejects_wrong_version() {
        let cfg = cfg();
        let cp = Checkpoint {
            state: TrainState::init(&cfg).unwrap(),
            config: cfg,
        };
        let j = cp.to_json().replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(
            Checkpoint::from_json_str(&j),
            Err(Error::Contract(_))
        ));
    }
}
