//! Two-class gyroplane classifier head.
//!
//! Class `k` owns a gyroplane through `p_k` with normal `a_k`. Its logit is
//! `λ_{p_k} ‖a_k‖ d(x, H_k)` where `d` is the hyperbolic distance from `x` to
//! the gyroplane; the class likelihood is the softmax of the two logits.
//! Index 0 is the real class, index 1 the spoof class.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{contract, Result};
use crate::geometry::{self, Curvature, PoincarePoint, TangentVector};
use crate::tape_geometry;

/// Floor on `1 - c‖-p ⊕ x‖²` in the distance denominator.
pub const EPS_DEN: f64 = 1e-9;
/// Minimum norm kept for each gyroplane normal.
pub const EPS_A: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GyroplaneParams {
    points: [PoincarePoint; 2],
    normals: [TangentVector; 2],
}

impl GyroplaneParams {
    pub fn new(points: [PoincarePoint; 2], normals: [TangentVector; 2]) -> Result<Self> {
        let c = points[0].curvature();
        let d = points[0].dim();
        if points[1].curvature() != c {
            return Err(contract("gyroplane points disagree on curvature"));
        }
        if points.iter().any(|p| p.dim() != d) || normals.iter().any(|a| a.dim() != d) {
            return Err(contract("gyroplane parameters disagree on dimension"));
        }
        let mut params = GyroplaneParams { points, normals };
        params.enforce_normal_floor();
        Ok(params)
    }

    pub fn point(&self, k: usize) -> &PoincarePoint {
        &self.points[k]
    }

    pub fn normal(&self, k: usize) -> &TangentVector {
        &self.normals[k]
    }

    pub fn curvature(&self) -> Curvature {
        self.points[0].curvature()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub(crate) fn points_mut(&mut self) -> &mut [PoincarePoint; 2] {
        &mut self.points
    }

    pub(crate) fn normals_mut(&mut self) -> &mut [TangentVector; 2] {
        &mut self.normals
    }

    /// Scales any normal shorter than `EPS_A` up to that length. A zero
    /// normal becomes `EPS_A` along the first axis.
    pub fn enforce_normal_floor(&mut self) {
        for a in &mut self.normals {
            let n = a.norm();
            if n >= EPS_A {
                continue;
            }
            let v = a.coords_mut();
            if n == 0.0 {
                v[0] = EPS_A;
            } else {
                let s = EPS_A / n;
                v.iter_mut().for_each(|x| *x *= s);
            }
        }
    }
}

/// The exponential-map reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct BasePoint(pub PoincarePoint);

/// Serialized layout of the head parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadRecord {
    pub curvature: f64,
    pub base_point: Vec<f64>,
    pub points: [Vec<f64>; 2],
    pub normals: [Vec<f64>; 2],
}

impl HeadRecord {
    pub fn from_params(head: &GyroplaneParams, base: &BasePoint) -> Self {
        HeadRecord {
            curvature: head.curvature().value(),
            base_point: base.0.coords().to_vec(),
            points: [
                head.points[0].coords().to_vec(),
                head.points[1].coords().to_vec(),
            ],
            normals: [
                head.normals[0].coords().to_vec(),
                head.normals[1].coords().to_vec(),
            ],
        }
    }

    pub fn into_params(self) -> Result<(GyroplaneParams, BasePoint)> {
        let c = Curvature::new(self.curvature)?;
        let [p0, p1] = self.points;
        let [a0, a1] = self.normals;
        let head = GyroplaneParams::new(
            [PoincarePoint::new(p0, c)?, PoincarePoint::new(p1, c)?],
            [TangentVector::new(a0)?, TangentVector::new(a1)?],
        )?;
        let base = PoincarePoint::new(self.base_point, c)?;
        if base.dim() != head.dim() {
            return Err(contract("base point dimension differs from head"));
        }
        Ok((head, BasePoint(base)))
    }
}

fn check_point(x: &PoincarePoint, params: &GyroplaneParams) -> Result<()> {
    if x.dim() != params.dim() || x.curvature() != params.curvature() {
        return Err(contract("point does not live in the head's ball"));
    }
    Ok(())
}

pub(crate) fn gyroplane_distance_slices(x: &[f64], p: &[f64], a: &[f64], c: f64) -> f64 {
    let neg_p: Vec<f64> = p.iter().map(|v| -v).collect();
    let mut w = geometry::mobius_add_slices(&neg_p, x, c);
    geometry::project_slice(&mut w, c);
    let sc = c.sqrt();
    let den = (1.0 - c * geometry::sq_norm(&w)).max(EPS_DEN) * geometry::norm(a);
    (2.0 * sc * geometry::dot(&w, a).abs() / den).asinh() / sc
}

pub(crate) fn logit_slices(x: &[f64], p: &[f64], a: &[f64], c: f64) -> f64 {
    geometry::conformal_factor_slice(p, c)
        * geometry::norm(a)
        * gyroplane_distance_slices(x, p, a, c)
}

/// Hyperbolic distance from `x` to the gyroplane of class `k`.
pub fn gyroplane_distance(x: &PoincarePoint, k: usize, params: &GyroplaneParams) -> Result<f64> {
    check_point(x, params)?;
    let c = params.curvature().value();
    Ok(gyroplane_distance_slices(
        x.coords(),
        params.points[k].coords(),
        params.normals[k].coords(),
        c,
    ))
}

pub fn logit(x: &PoincarePoint, k: usize, params: &GyroplaneParams) -> Result<f64> {
    check_point(x, params)?;
    let c = params.curvature().value();
    Ok(logit_slices(
        x.coords(),
        params.points[k].coords(),
        params.normals[k].coords(),
        c,
    ))
}

/// Max-shifted two-way softmax.
pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// `(P(real | x), P(spoof | x))`.
pub fn likelihood(x: &PoincarePoint, params: &GyroplaneParams) -> Result<[f64; 2]> {
    Ok(softmax2([logit(x, 0, params)?, logit(x, 1, params)?]))
}

pub fn predict(x: &PoincarePoint, params: &GyroplaneParams) -> Result<usize> {
    let [z0, z1] = likelihood(x, params)?;
    Ok(usize::from(z1 > z0))
}

/// Logits of every row of `s` (`r × d`) for the gyroplane `(p, a)`, where `p`
/// and `a` are `1 × d` tape variables. Returns `r × 1`.
pub fn logits_on_tape(t: &Tape, s: Var, p: Var, a: Var, c: f64) -> Var {
    let (r, _) = t.shape(s);
    let sc = c.sqrt();
    let neg_p = t.broadcast_rows(t.neg(p), r);
    let w = tape_geometry::mobius_add_rows(t, neg_p, s, c);
    let ip = t.abs(t.row_dot(w, t.broadcast_rows(a, r)));
    let den_ball = t.clamp(
        t.offset(t.scale(t.row_sq_norm(w), -c), 1.0),
        EPS_DEN,
        f64::INFINITY,
    );
    let a_norm = t.row_norm(a);
    let den = t.mul(den_ball, t.broadcast_rows(a_norm, r));
    let dist = t.scale(t.asinh(t.scale(t.div(ip, den), 2.0 * sc)), 1.0 / sc);
    let lambda_p = tape_geometry::conformal_factor_rows(t, p, c);
    t.mul(dist, t.broadcast_rows(t.mul(lambda_p, a_norm), r))
}
