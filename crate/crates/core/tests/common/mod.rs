#![allow(dead_code)]

use hypoc::config::{GradClipLimit, ModeFlags, ScalingNorm, ScalingScope, TrainConfig};
use hypoc::data::FeatureBatch;
use hypoc::model::{ModelParams, ParamKind};
use hypoc::trainer::{self, TrainState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Point with norm at most `frac / √c`, direction uniform.
pub fn ball_point(rng: &mut ChaCha8Rng, dim: usize, c: f64, frac: f64) -> Vec<f64> {
    let dir: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
    let n = norm(&dir);
    let r = frac * rng.gen::<f64>() / c.sqrt();
    dir.iter().map(|x| x * r / n).collect()
}

pub fn tiny_config(seed: u64, c: f64) -> TrainConfig {
    TrainConfig {
        widths: vec![3, 5, 3],
        curvature: c,
        batch_size: 2,
        seed,
        ..Default::default()
    }
}

/// Model from `cfg` with base point and gyroplane points moved off the origin.
pub fn perturbed_model(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> ModelParams {
    let mut m = ModelParams::init(cfg).unwrap();
    let mut v = m.flatten();
    let k = v.len();
    let d = *cfg.widths.last().unwrap();
    for slot in &mut v[k - 5..k - 2] {
        *slot = ball_point(rng, d, cfg.curvature, 0.6);
    }
    m.assign(&v).unwrap();
    m
}

/// Batch of `n` real rows followed by `n` spoof rows.
pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize, scale: f64) -> FeatureBatch {
    let v: Vec<f64> = (0..2 * n * dim).map(|_| scale * normal(rng)).collect();
    let mut labels = vec![0u8; n];
    labels.extend(vec![1u8; n]);
    FeatureBatch::new(v, dim, labels).unwrap()
}

/// Central differences of the direct-path total loss.
pub fn fd_grads(m: &ModelParams, batch: &FeatureBatch, cfg: &TrainConfig, h: f64) -> Vec<Vec<f64>> {
    let base = m.flatten();
    base.iter()
        .enumerate()
        .map(|(i, slot)| {
            (0..slot.len())
                .map(|j| {
                    let at = |d: f64| {
                        let mut p = m.clone();
                        let mut v = base.clone();
                        v[i][j] += d;
                        p.assign(&v).unwrap();
                        p.loss(batch, cfg).unwrap().total
                    };
                    (at(h) - at(-h)) / (2.0 * h)
                })
                .collect()
        })
        .collect()
}

/// Largest relative error, entries within `abs_floor` counted as exact.
pub fn max_rel_error(a: &[Vec<f64>], b: &[Vec<f64>], abs_floor: f64) -> f64 {
    let mut worst = 0.0f64;
    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
        let e = (x - y).abs();
        if e > abs_floor {
            worst = worst.max(e / x.abs().max(y.abs()));
        }
    }
    worst
}

/// `-Σ w ln softmax(z)_y` with explicit exponentials.
pub fn naive_ce(logits: &[[f64; 2]], labels: &[u8], w: f64) -> f64 {
    logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| {
            let e = [z[0].exp(), z[1].exp()];
            -w * (e[y as usize] / (e[0] + e[1])).ln()
        })
        .sum()
}

/// The default two-Gaussian task as `(train, test)`.
pub fn default_task() -> (FeatureBatch, FeatureBatch) {
    hypoc::data::generate_synthetic(&hypoc::data::SyntheticSpec::default()).unwrap()
}

pub fn hand_config(modes: ModeFlags) -> TrainConfig {
    TrainConfig {
        widths: vec![2, 2],
        batch_size: 2,
        curvature: 0.5,
        learning_rate: 0.01,
        weight_decay: 0.01,
        grad_clip: 0.05,
        seed: 5,
        modes,
        ..Default::default()
    }
}

/// Runs the optimiser lines on finite-difference gradients, starting from
/// zero moments at t = 1.
pub fn oracle_step(state: &TrainState, real: &FeatureBatch, cfg: &TrainConfig) -> Vec<Vec<f64>> {
    // adaptive mean and pseudo-negatives
    let mut sampler = state.sampler.clone();
    let n = real.len() as f64;
    let mut current = vec![0.0; real.dim()];
    for row in real.rows() {
        current.iter_mut().zip(row).for_each(|(c, x)| *c += x);
    }
    if cfg.modes.mean_form == hypoc::sampler::MeanForm::Mean {
        current.iter_mut().for_each(|c| *c /= n);
    }
    let expect_mu: Vec<f64> = sampler
        .mu
        .iter()
        .zip(&current)
        .map(|(m, c)| cfg.alpha * m + (1.0 - cfg.alpha) * c)
        .collect();
    sampler.update_mean(real).unwrap();
    assert_eq!(sampler.mu, expect_mu);
    let batch = real
        .concat(&sampler.sample_pseudo_negatives(real.len()).unwrap())
        .unwrap();

    let params = &state.params;
    let grads = fd_grads(params, &batch, cfg, 1e-6);
    let (_, tape) = params.loss_and_grads(&batch, cfg).unwrap();
    assert!(max_rel_error(&grads, &tape, 1e-9) < 1e-5);

    let x = params.base.0.coords();
    let sq: f64 = x.iter().map(|v| v * v).sum();
    let factor = match cfg.modes.riemannian_norm_form {
        ScalingNorm::Squared => (1.0 - cfg.curvature * sq).powi(2) / 4.0,
        ScalingNorm::Verbatim => (1.0 - cfg.curvature * sq.sqrt()).powi(2) / 4.0,
    };
    let limit = match cfg.modes.grad_clip_limit {
        GradClipLimit::GradClip => cfg.grad_clip,
        GradClipLimit::FeatureClip => cfg.feature_clip,
    };
    let mut out = Vec::new();
    for ((slot, w), g) in params.slots().iter().zip(params.flatten()).zip(grads) {
        let gn = norm(&g);
        let mut g: Vec<f64> = if gn > limit {
            g.iter().map(|v| v * limit / gn).collect()
        } else {
            g
        };
        let scaled = match slot.kind {
            ParamKind::Euclidean => false,
            ParamKind::BallPoint => true,
            ParamKind::HeadNormal => {
                cfg.modes.riemannian_scaling_scope == ScalingScope::AllHeadParams
            }
        };
        if scaled {
            g.iter_mut().for_each(|v| *v *= factor);
        }
        let new: Vec<f64> = w
            .iter()
            .zip(&g)
            .map(|(&wj, &gj)| {
                let m = (1.0 - cfg.beta1) * gj;
                let v = (1.0 - cfg.beta2) * gj * gj;
                let m_hat = m / (1.0 - cfg.beta1);
                let v_hat = v / (1.0 - cfg.beta2);
                let mut u = wj - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
                if slot.kind == ParamKind::Euclidean {
                    u -= cfg.learning_rate * cfg.weight_decay * wj;
                }
                u
            })
            .collect();
        out.push(new);
    }
    out
}

/// Largest per-parameter gap between one `train_step` on the hand-sized
/// model and [`oracle_step`].
pub fn single_step_error(modes: ModeFlags) -> f64 {
    let cfg = hand_config(modes);
    let mut rng = rng(8);
    let mut state = TrainState::init(&cfg).unwrap();
    state.params = perturbed_model(&cfg, &mut rng);
    let real = FeatureBatch::new(vec![0.3, -0.2, 0.9, 0.4], 2, vec![0, 0]).unwrap();
    let expected = oracle_step(&state, &real, &cfg);
    trainer::train_step(&mut state, &real, &cfg).unwrap();
    assert_eq!(state.adam.t, 1);
    expected
        .iter()
        .flatten()
        .zip(state.params.flatten().iter().flatten())
        .map(|(e, g)| (e - g).abs())
        .fold(0.0, f64::max)
}
