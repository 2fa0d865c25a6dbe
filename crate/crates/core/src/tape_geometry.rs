//! Batched Poincaré-ball operations recorded on a [`Tape`].
//!
//! Each function works on `r × d` row blocks, one point per row, and mirrors
//! the scalar kernels in [`crate::geometry`], including the boundary
//! projection and the arctanh clamp.

use crate::autodiff::{Tape, Var};
use crate::geometry::{ExpMapForm, EPS_ATANH, EPS_BALL, EPS_VEC};

/// Pulls rows back inside the ball, matching [`crate::geometry::project_slice`].
pub fn project_rows(t: &Tape, x: Var, c: f64) -> Var {
    t.row_clip_norm(x, (1.0 - EPS_BALL) / c.sqrt())
}

/// `2 / (1 - c‖x‖²)` per row, `r × 1`.
pub fn conformal_factor_rows(t: &Tape, x: Var, c: f64) -> Var {
    let den = t.offset(t.scale(t.row_sq_norm(x), -c), 1.0);
    let two = t.constant(vec![2.0; t.shape(x).0], t.shape(x).0, 1);
    t.div(two, den)
}

/// Row-wise `u ⊕_c v` followed by projection.
pub fn mobius_add_rows(t: &Tape, u: Var, v: Var, c: f64) -> Var {
    let (_, d) = t.shape(u);
    let uv = t.row_dot(u, v);
    let uu = t.row_sq_norm(u);
    let vv = t.row_sq_norm(v);
    let two_c_uv = t.scale(uv, 2.0 * c);
    let coef_u = t.offset(t.add(two_c_uv, t.scale(vv, c)), 1.0);
    let coef_v = t.offset(t.scale(uu, -c), 1.0);
    let den = t.offset(t.add(two_c_uv, t.scale(t.mul(uu, vv), c * c)), 1.0);
    let num = t.add(
        t.mul(t.broadcast_cols(coef_u, d), u),
        t.mul(t.broadcast_cols(coef_v, d), v),
    );
    project_rows(t, t.div(num, t.broadcast_cols(den, d)), c)
}

/// Row-wise exponential map of tangent rows `u` at base rows `x`.
///
/// Tangent norms are floored at `EPS_VEC`, so a zero tangent maps to `x` up
/// to a displacement of order `EPS_VEC`.
pub fn exp_map_rows(t: &Tape, x: Var, u: Var, c: f64, form: ExpMapForm) -> Var {
    let (r, d) = t.shape(u);
    let sc = c.sqrt();
    let un = t.clamp(t.row_norm(u), EPS_VEC, f64::INFINITY);
    let arg = match form {
        ExpMapForm::Standard => t.mul(conformal_factor_rows(t, x, c), t.scale(un, sc / 2.0)),
        ExpMapForm::Verbatim => t.scale(un, sc / 2.0),
    };
    let coef = t.div(t.tanh(arg), t.scale(un, sc));
    let step = project_rows(t, t.mul(t.broadcast_cols(coef, d), u), c);
    debug_assert_eq!(t.shape(x), (r, d));
    mobius_add_rows(t, x, step, c)
}

/// Row-wise geodesic distance, `r × 1`.
pub fn geodesic_distance_rows(t: &Tape, u: Var, v: Var, c: f64) -> Var {
    let sc = c.sqrt();
    let w = mobius_add_rows(t, t.neg(u), v, c);
    let arg = t.clamp(t.scale(t.row_norm(w), sc), 0.0, 1.0 - EPS_ATANH);
    t.scale(t.atanh_clamped(arg, 1.0 - EPS_ATANH), 2.0 / sc)
}
