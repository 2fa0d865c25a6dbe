//! Gyrovector operations on the Poincaré ball of curvature `-c`.
//!
//! The ball is `{x : c‖x‖² < 1}`. Every point produced here is kept strictly
//! inside it: results whose norm exceeds `(1 - EPS_BALL) / √c` are pulled back
//! radially onto that radius.
//!
//! The slice kernels (`mobius_add_slices`, `project_slice`, ...) are the
//! allocation-light core; the typed wrappers add dimension and curvature
//! checks.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Safety margin kept between any stored point and the ball boundary.
pub const EPS_BALL: f64 = 1e-5;
/// Tangent vectors shorter than this are treated as zero by the exponential map.
pub const EPS_VEC: f64 = 1e-12;
/// The arctanh argument is clamped to `[0, 1 - EPS_ATANH]`.
pub const EPS_ATANH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(c: f64) -> Result<Self> {
        if !c.is_finite() || c <= 0.0 {
            return Err(contract(format!(
                "curvature must be finite and > 0, got {c}"
            )));
        }
        Ok(Curvature(c))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn sqrt(self) -> f64 {
        self.0.sqrt()
    }

    /// Largest Euclidean norm a stored point may have.
    pub fn max_norm(self) -> f64 {
        (1.0 - EPS_BALL) / self.0.sqrt()
    }
}

impl TryFrom<f64> for Curvature {
    type Error = crate::error::Error;

    fn try_from(c: f64) -> Result<Self> {
        Curvature::new(c)
    }
}

impl From<Curvature> for f64 {
    fn from(c: Curvature) -> f64 {
        c.0
    }
}

/// Which closed form the exponential map uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpMapForm {
    /// `x ⊕ tanh(√c λ_x ‖u‖ / 2) u / (√c ‖u‖)`; reduces to `x + u` as `c → 0`.
    #[default]
    Standard,
    /// Same without the conformal factor inside `tanh`; reduces to `x + u/2`.
    Verbatim,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoincarePoint {
    coords: Vec<f64>,
    curvature: Curvature,
}

impl PoincarePoint {
    /// Validates that `coords` is finite and satisfies `c‖x‖² < 1 - EPS_BALL`.
    pub fn new(coords: Vec<f64>, curvature: Curvature) -> Result<Self> {
        check_finite(&coords, "point")?;
        let c_norm_sq = curvature.value() * sq_norm(&coords);
        if c_norm_sq >= 1.0 - EPS_BALL {
            return Err(contract(format!(
                "point outside the ball: c‖x‖² = {c_norm_sq} ≥ 1 - {EPS_BALL}"
            )));
        }
        Ok(PoincarePoint { coords, curvature })
    }

    /// Builds a point from arbitrary finite coordinates, pulling it back inside
    /// the ball if needed.
    pub fn projected(mut coords: Vec<f64>, curvature: Curvature) -> Result<Self> {
        check_finite(&coords, "point")?;
        project_slice(&mut coords, curvature.value());
        Ok(PoincarePoint { coords, curvature })
    }

    pub fn origin(dim: usize, curvature: Curvature) -> Self {
        PoincarePoint {
            coords: vec![0.0; dim],
            curvature,
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn sq_norm(&self) -> f64 {
        sq_norm(&self.coords)
    }

    /// Gyro-inverse `-x`, which for the Poincaré ball is plain negation.
    pub fn neg(&self) -> PoincarePoint {
        PoincarePoint {
            coords: self.coords.iter().map(|v| -v).collect(),
            curvature: self.curvature,
        }
    }

    /// Overwrites the coordinates and re-projects.
    pub(crate) fn set_coords_projected(&mut self, coords: &[f64]) {
        self.coords.clear();
        self.coords.extend_from_slice(coords);
        project_slice(&mut self.coords, self.curvature.value());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TangentVector(Vec<f64>);

impl TangentVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        check_finite(&coords, "tangent vector")?;
        Ok(TangentVector(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        TangentVector(vec![0.0; dim])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub(crate) fn coords_mut(&mut self) -> &mut Vec<f64> {
        &mut self.0
    }
}

impl TryFrom<Vec<f64>> for TangentVector {
    type Error = crate::error::Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        TangentVector::new(v)
    }
}

impl From<TangentVector> for Vec<f64> {
    fn from(v: TangentVector) -> Vec<f64> {
        v.0
    }
}

/// `λ_x = 2 / (1 - c‖x‖²)`.
pub fn conformal_factor(x: &PoincarePoint) -> f64 {
    conformal_factor_slice(&x.coords, x.curvature.value())
}

pub fn mobius_add(u: &PoincarePoint, v: &PoincarePoint) -> Result<PoincarePoint> {
    check_pair(u, v)?;
    let c = u.curvature.value();
    let mut out = mobius_add_slices(&u.coords, &v.coords, c);
    project_slice(&mut out, c);
    Ok(PoincarePoint {
        coords: out,
        curvature: u.curvature,
    })
}

pub fn exp_map(x: &PoincarePoint, u: &TangentVector, form: ExpMapForm) -> Result<PoincarePoint> {
    if x.dim() != u.dim() {
        return Err(contract(format!(
            "dimension mismatch: point {} vs tangent {}",
            x.dim(),
            u.dim()
        )));
    }
    let coords = exp_map_slices(&x.coords, &u.0, x.curvature.value(), form);
    Ok(PoincarePoint {
        coords,
        curvature: x.curvature,
    })
}

/// `(2/√c) artanh(√c ‖-u ⊕ v‖)`.
pub fn geodesic_distance(u: &PoincarePoint, v: &PoincarePoint) -> Result<f64> {
    check_pair(u, v)?;
    Ok(geodesic_distance_slices(
        &u.coords,
        &v.coords,
        u.curvature.value(),
    ))
}

fn check_pair(u: &PoincarePoint, v: &PoincarePoint) -> Result<()> {
    if u.dim() != v.dim() {
        return Err(contract(format!(
            "dimension mismatch: {} vs {}",
            u.dim(),
            v.dim()
        )));
    }
    if u.curvature != v.curvature {
        return Err(contract(format!(
            "curvature mismatch: {} vs {}",
            u.curvature.value(),
            v.curvature.value()
        )));
    }
    Ok(())
}

pub(crate) fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(contract(format!(
            "{what} has non-finite entry at index {i}"
        )));
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sq_norm(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    sq_norm(a).sqrt()
}

pub fn conformal_factor_slice(x: &[f64], c: f64) -> f64 {
    2.0 / (1.0 - c * sq_norm(x))
}

/// Radially pulls `x` back to `(1 - EPS_BALL)/√c` if it lies beyond it.
pub fn project_slice(x: &mut [f64], c: f64) {
    let max_norm = (1.0 - EPS_BALL) / c.sqrt();
    let n = norm(x);
    if n > max_norm {
        let s = max_norm / n;
        x.iter_mut().for_each(|v| *v *= s);
    }
}

/// Raw Möbius addition without projection.
pub fn mobius_add_slices(u: &[f64], v: &[f64], c: f64) -> Vec<f64> {
    let uv = dot(u, v);
    let uu = sq_norm(u);
    let vv = sq_norm(v);
    let coef_u = 1.0 + 2.0 * c * uv + c * vv;
    let coef_v = 1.0 - c * uu;
    let den = 1.0 + 2.0 * c * uv + c * c * uu * vv;
    u.iter()
        .zip(v)
        .map(|(a, b)| (coef_u * a + coef_v * b) / den)
        .collect()
}

pub fn exp_map_slices(x: &[f64], u: &[f64], c: f64, form: ExpMapForm) -> Vec<f64> {
    let un = norm(u);
    if un < EPS_VEC {
        return x.to_vec();
    }
    let sc = c.sqrt();
    let lambda = match form {
        ExpMapForm::Standard => conformal_factor_slice(x, c),
        ExpMapForm::Verbatim => 1.0,
    };
    let coef = (sc * lambda * un / 2.0).tanh() / (sc * un);
    let mut step: Vec<f64> = u.iter().map(|v| coef * v).collect();
    project_slice(&mut step, c);
    let mut out = mobius_add_slices(x, &step, c);
    project_slice(&mut out, c);
    out
}

pub fn geodesic_distance_slices(u: &[f64], v: &[f64], c: f64) -> f64 {
    let neg_u: Vec<f64> = u.iter().map(|x| -x).collect();
    let mut w = mobius_add_slices(&neg_u, v, c);
    project_slice(&mut w, c);
    let sc = c.sqrt();
    let arg = (sc * norm(&w)).clamp(0.0, 1.0 - EPS_ATANH);
    2.0 / sc * arg.atanh()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(coords: &[f64], c: f64) -> PoincarePoint {
        PoincarePoint::new(coords.to_vec(), Curvature::new(c).unwrap()).unwrap()
    }

    #[test]
    fn curvature_rejects_nonpositive() {
        assert!(Curvature::new(0.0).is_err());
        assert!(Curvature::new(-1.0).is_err());
        assert!(Curvature::new(f64::NAN).is_err());
        assert!(Curvature::new(f64::INFINITY).is_err());
    }

    #[test]
    fn point_rejects_outside_and_nonfinite() {
        let c = Curvature::new(1.0).unwrap();
        assert!(PoincarePoint::new(vec![1.0, 0.0], c).is_err());
        assert!(PoincarePoint::new(vec![f64::NAN], c).is_err());
        let p = PoincarePoint::projected(vec![3.0, 4.0], c).unwrap();
        assert!(c.value() * p.sq_norm() < 1.0 - EPS_BALL);
    }

    #[test]
    fn conformal_factor_values() {
        assert_eq!(
            conformal_factor(&PoincarePoint::origin(3, Curvature::new(0.7).unwrap())),
            2.0
        );
        // ‖x‖² = 5 at c = 0.1
        let x = pt(&[1.0, 2.0], 0.1);
        assert!((conformal_factor(&x) - 4.0).abs() < 1e-12);
        // 2 / (1 - 0.1 * 0.25) = 2 / 0.975
        let x = pt(&[0.3, 0.4], 0.1);
        assert!((conformal_factor(&x) - 2.051_282_051_282_051).abs() < 1e-12);
    }

    #[test]
    fn mobius_identity_and_inverse() {
        let c = 0.1;
        let v = pt(&[0.3, -1.2, 0.5], c);
        let zero = PoincarePoint::origin(3, v.curvature());
        assert_eq!(mobius_add(&zero, &v).unwrap(), v);
        let r = mobius_add(&v, &v.neg()).unwrap();
        assert!(norm(r.coords()) < 1e-12);
    }

    #[test]
    fn mobius_euclidean_limit() {
        let r = mobius_add(&pt(&[0.1, 0.2], 1e-9), &pt(&[0.3, -0.1], 1e-9)).unwrap();
        assert!((r.coords()[0] - 0.4).abs() < 1e-6);
        assert!((r.coords()[1] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn mobius_reference_value() {
        // reference values from tests/oracles/geometry_oracle.py
        let r = mobius_add(&pt(&[0.3, 0.0], 0.1), &pt(&[0.0, 0.4], 0.1)).unwrap();
        assert!((r.coords()[0] - 0.304_756_115_119_422_8).abs() < 1e-12);
        assert!((r.coords()[1] - 0.396_342_926_618_566_9).abs() < 1e-12);
    }

    #[test]
    fn mobius_mismatch_is_contract_error() {
        assert!(mobius_add(&pt(&[0.1], 0.1), &pt(&[0.1, 0.2], 0.1)).is_err());
        assert!(mobius_add(&pt(&[0.1], 0.1), &pt(&[0.1], 0.2)).is_err());
    }

    #[test]
    fn exp_map_zero_tangent_is_identity() {
        let x = pt(&[0.2, 0.1], 0.1);
        let y = exp_map(&x, &TangentVector::zeros(2), ExpMapForm::Standard).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn exp_map_origin_reference() {
        let x = PoincarePoint::origin(2, Curvature::new(0.1).unwrap());
        let u = TangentVector::new(vec![1.0, 0.0]).unwrap();
        let y = exp_map(&x, &u, ExpMapForm::Standard).unwrap();
        // tanh(√0.1) / √0.1
        assert!((y.coords()[0] - 0.967_948_133_514_745_1).abs() < 1e-12);
        assert_eq!(y.coords()[1], 0.0);
    }

    #[test]
    fn exp_map_verbatim_halves_in_limit() {
        let x = pt(&[0.2, 0.1], 1e-8);
        let u = TangentVector::new(vec![0.05, -0.02]).unwrap();
        let s = exp_map(&x, &u, ExpMapForm::Standard).unwrap();
        let v = exp_map(&x, &u, ExpMapForm::Verbatim).unwrap();
        assert!((s.coords()[0] - 0.25).abs() < 1e-4);
        assert!((v.coords()[0] - 0.225).abs() < 1e-4);
    }

    #[test]
    fn geodesic_reference_value() {
        let d = geodesic_distance(&pt(&[0.5, 0.0], 0.1), &pt(&[-0.5, 0.0], 0.1)).unwrap();
        assert!((d - 2.016_921_219_571_897).abs() < 1e-12, "{d}");
        assert_eq!(
            geodesic_distance(&pt(&[0.5, 0.0], 0.1), &pt(&[0.5, 0.0], 0.1)).unwrap(),
            0.0
        );
    }

    fn ball_vec(dim: usize, radius: f64) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, dim).prop_map(move |v| {
            let n = norm(&v).max(1.0);
            v.into_iter().map(|x| x / n * radius).collect()
        })
    }

    proptest! {
        #[test]
        fn left_cancellation(u in ball_vec(4, 0.9), v in ball_vec(4, 0.9), c in prop::sample::select(vec![0.1, 1.0])) {
            let u = pt(&u, c);
            let v = pt(&v, c);
            let w = mobius_add(&u.neg(), &mobius_add(&u, &v).unwrap()).unwrap();
            for (a, b) in w.coords().iter().zip(v.coords()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn distance_is_symmetric(u in ball_vec(3, 2.0), v in ball_vec(3, 2.0)) {
            let u = PoincarePoint::projected(u, Curvature::new(0.1).unwrap()).unwrap();
            let v = PoincarePoint::projected(v, Curvature::new(0.1).unwrap()).unwrap();
            let d1 = geodesic_distance(&u, &v).unwrap();
            let d2 = geodesic_distance(&v, &u).unwrap();
            prop_assert!(d1 >= 0.0);
            prop_assert!((d1 - d2).abs() < 1e-10);
        }

        #[test]
        fn outputs_stay_in_ball(u in ball_vec(3, 3.1), t in prop::collection::vec(-50.0f64..50.0, 3)) {
            let c = Curvature::new(0.1).unwrap();
            let x = PoincarePoint::projected(u, c).unwrap();
            let y = exp_map(&x, &TangentVector::new(t).unwrap(), ExpMapForm::Standard).unwrap();
            prop_assert!(c.value() * y.sq_norm() < 1.0 - EPS_BALL);
            let z = mobius_add(&x, &y).unwrap();
            prop_assert!(c.value() * z.sq_norm() < 1.0 - EPS_BALL);
        }
    }
}
