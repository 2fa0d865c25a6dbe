//! Randomised property checks run by `hypoc check-geometry`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::data::FeatureBatch;
use crate::geometry::{self, ExpMapForm, EPS_BALL};
use crate::model::ModelParams;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed error against the tolerance.
    pub detail: String,
}

fn check(name: &str, worst: f64, tol: f64) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed: worst.is_finite() && worst <= tol,
        detail: format!("worst={worst:.3e} tol={tol:.0e}"),
    }
}

/// Uniform point in the ball of radius `max_frac / √c`.
fn ball_point(rng: &mut ChaCha8Rng, dim: usize, c: f64, max_frac: f64) -> Vec<f64> {
    let dir = rng::standard_normal_vec(rng, dim);
    let n = geometry::norm(&dir).max(f64::MIN_POSITIVE);
    let r = max_frac * rng.gen::<f64>().powf(1.0 / dim as f64) / c.sqrt();
    dir.iter().map(|x| x * r / n).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn run(seed: u64, cases: usize) -> Vec<CheckResult> {
    let mut rng = rng::stream(seed, Stream::SelfCheck);
    let mut out = Vec::new();
    let dim = 4;

    for c in [0.1, 1.0] {
        let (mut ident, mut inverse, mut cancel) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..cases {
            let u = ball_point(&mut rng, dim, c, 0.9);
            let v = ball_point(&mut rng, dim, c, 0.9);
            let neg_u: Vec<f64> = u.iter().map(|x| -x).collect();
            ident = ident.max(max_abs_diff(
                &geometry::mobius_add_slices(&[0.0; 4], &v, c),
                &v,
            ));
            inverse = inverse.max(geometry::norm(&geometry::mobius_add_slices(&u, &neg_u, c)));
            let uv = geometry::mobius_add_slices(&u, &v, c);
            cancel = cancel.max(max_abs_diff(
                &geometry::mobius_add_slices(&neg_u, &uv, c),
                &v,
            ));
        }
        out.push(check(&format!("left identity c={c}"), ident, 1e-12));
        out.push(check(&format!("left inverse c={c}"), inverse, 1e-12));
        out.push(check(&format!("left cancellation c={c}"), cancel, 1e-9));
    }

    let c = 0.1;
    let (mut sym, mut ident, mut tri, mut neg) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..cases {
        let u = ball_point(&mut rng, dim, c, 0.9);
        let v = ball_point(&mut rng, dim, c, 0.9);
        let w = ball_point(&mut rng, dim, c, 0.9);
        let d = |a: &[f64], b: &[f64]| geometry::geodesic_distance_slices(a, b, c);
        sym = sym.max((d(&u, &v) - d(&v, &u)).abs());
        ident = ident.max(d(&u, &u));
        tri = tri.max(d(&u, &w) - d(&u, &v) - d(&v, &w));
        neg = neg.max(-d(&u, &v));
    }
    out.push(check("distance symmetry", sym, 1e-10));
    out.push(check("distance identity", ident, 1e-10));
    out.push(check("distance non-negativity", neg, 0.0));
    out.push(check("triangle inequality", tri, 1e-9));

    let c = 1e-8;
    let (mut dist, mut add, mut exp) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..cases {
        let u = ball_point(&mut rng, dim, 1.0, 0.5);
        let v = ball_point(&mut rng, dim, 1.0, 0.5);
        let diff: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
        let e = 2.0 * geometry::norm(&diff);
        if e > 1e-6 {
            dist = dist.max((geometry::geodesic_distance_slices(&u, &v, c) - e).abs() / e);
        }
        let sum: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
        add = add.max(max_abs_diff(&geometry::mobius_add_slices(&u, &v, c), &sum));
        exp = exp.max(max_abs_diff(
            &geometry::exp_map_slices(&u, &v, c, ExpMapForm::Standard),
            &sum,
        ));
    }
    out.push(check("distance euclidean limit (relative)", dist, 1e-3));
    out.push(check("mobius euclidean limit", add, 1e-6));
    out.push(check("exp map euclidean limit", exp, 1e-4));

    let mut closure = f64::NEG_INFINITY;
    for c in [0.1, 1.0] {
        for _ in 0..cases {
            let x = ball_point(&mut rng, dim, c, 0.999_999);
            let u: Vec<f64> = rng::standard_normal_vec(&mut rng, dim)
                .iter()
                .map(|z| z * 50.0)
                .collect();
            let y = geometry::exp_map_slices(&x, &u, c, ExpMapForm::Standard);
            closure = closure.max(c * geometry::sq_norm(&y) - (1.0 - EPS_BALL));
        }
    }
    out.push(check(
        "exp map closure (c|x|^2 - (1 - eps))",
        closure.max(0.0),
        0.0,
    ));

    out.push(gradient_check(seed, 3));
    out
}

/// Central finite differences of the direct loss against tape gradients on
/// small random models.
pub fn gradient_check(seed: u64, models: usize) -> CheckResult {
    let mut worst = 0.0f64;
    let mut rng = rng::stream(seed, Stream::SelfCheck);
    for m in 0..models {
        let cfg = TrainConfig {
            widths: vec![3, 5, 3],
            curvature: [0.1, 0.5, 1.0][m % 3],
            batch_size: 2,
            seed: seed.wrapping_add(m as u64),
            ..Default::default()
        };
        let Ok(mut params) = ModelParams::init(&cfg) else {
            return check("finite-difference gradients", f64::NAN, 1e-3);
        };
        // move ball parameters away from the origin so every path is exercised
        let mut values = params.flatten();
        let k = values.len();
        for v in &mut values[k - 5..k - 2] {
            *v = ball_point(&mut rng, 3, cfg.curvature, 0.5);
        }
        if params.assign(&values).is_err() {
            return check("finite-difference gradients", f64::NAN, 1e-3);
        }
        let feats = rng::standard_normal_vec(&mut rng, 12);
        let Ok(batch) = FeatureBatch::new(feats, 3, vec![0, 0, 1, 1]) else {
            return check("finite-difference gradients", f64::NAN, 1e-3);
        };
        worst = worst.max(max_fd_error(&params, &batch, &cfg).unwrap_or(f64::NAN));
    }
    check("finite-difference gradients (relative)", worst, 1e-3)
}

/// Largest relative error between tape gradients and central differences,
/// with entries below `1e-8` absolute counted as exact.
pub fn max_fd_error(
    params: &ModelParams,
    batch: &FeatureBatch,
    cfg: &TrainConfig,
) -> crate::Result<f64> {
    let h = 1e-4;
    let (_, grads) = params.loss_and_grads(batch, cfg)?;
    let base = params.flatten();
    let mut worst = 0.0f64;
    for (i, slot) in base.iter().enumerate() {
        for j in 0..slot.len() {
            let eval = |delta: f64| -> crate::Result<f64> {
                let mut p = params.clone();
                let mut v = base.clone();
                v[i][j] += delta;
                p.assign(&v)?;
                Ok(p.loss(batch, cfg)?.total)
            };
            let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
            let g = grads[i][j];
            let err = (g - fd).abs();
            if err > 1e-8 {
                worst = worst.max(err / g.abs().max(fd.abs()));
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for r in run(1, 200) {
            assert!(r.passed, "{} {}", r.name, r.detail);
        }
    }
}
