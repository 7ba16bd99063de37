//! Splat-weight kernels and the sharpness schedule.
//!
//! The rectangle kernel weighs an in-plane offset `(P_X, P_Y)` by a pair of
//! scaled sigmoids, one per axis, picking the positive or negative extent by
//! the sign of the offset. The Gaussian kernel is kept as a baseline.

use serde::{Deserialize, Serialize};

use crate::geometry::{PlaneFrame, Vec3};

/// Sharpness schedule and weight filtering.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplatParams {
    pub lambda_base: f64,
    pub lambda_rate: f64,
    pub lambda_max: f64,
    /// Intersections weighing less than this are dropped.
    pub weight_floor: f64,
}

impl Default for SplatParams {
    fn default() -> Self {
        SplatParams {
            lambda_base: 20.0,
            lambda_rate: 0.001,
            lambda_max: 300.0,
            weight_floor: 1e-4,
        }
    }
}

impl SplatParams {
    /// `min(base * exp(-(1 - rate * ite)), max)`
    pub fn lambda(&self, ite: u64) -> f64 {
        (self.lambda_base * (-(1.0 - self.lambda_rate * ite as f64)).exp()).min(self.lambda_max)
    }
}

/// Schedule with the default constants.
pub fn lambda_schedule(ite: u64) -> f64 {
    SplatParams::default().lambda(ite)
}

#[inline]
pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Kernel value at one in-plane offset plus the partials of the blended weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatEval {
    /// Blended weight, `min(w_x, w_y)` clamped to `[0, 1]`.
    pub weight: f64,
    pub raw_x: f64,
    pub raw_y: f64,
    pub px: f64,
    pub py: f64,
    pub d_px: f64,
    pub d_py: f64,
    /// Partials with respect to `[x+, x-, y+, y-]`.
    pub d_radii: [f64; 4],
}

/// In-plane offset of `x` from the primitive center.
#[inline]
pub fn project_local(x: &Vec3, center: &Vec3, frame: &PlaneFrame) -> (f64, f64) {
    let rel = x - center;
    (rel.dot(&frame.x_axis), rel.dot(&frame.y_axis))
}

/// One axis of the kernel: `(2σ(5λ(r - |P|)), ∂/∂P, ∂/∂r, radius slot)`.
#[inline]
fn axis_weight(p: f64, r_pos: f64, r_neg: f64, lambda: f64, slot_pos: usize) -> (f64, f64, f64, usize) {
    let (r, slot, sign) = if p > 0.0 {
        (r_pos, slot_pos, 1.0)
    } else {
        (r_neg, slot_pos + 1, -1.0)
    };
    let k = 5.0 * lambda;
    let s = sigmoid(k * (r - p.abs()));
    let dw_da = 2.0 * s * (1.0 - s);
    (2.0 * s, -dw_da * k * sign, dw_da * k, slot)
}

/// Rectangle kernel with analytic partials.
///
/// Gradients flow through the smaller axis weight only (ties go to X) and
/// vanish where the clamp to 1 is active.
pub fn plane_splat_weight(px: f64, py: f64, radii: &[f64; 4], lambda: f64) -> SplatEval {
    let (wx, dx_p, dx_r, sx) = axis_weight(px, radii[0], radii[1], lambda, 0);
    let (wy, dy_p, dy_r, sy) = axis_weight(py, radii[2], radii[3], lambda, 2);
    let mut eval = SplatEval {
        weight: 0.0,
        raw_x: wx,
        raw_y: wy,
        px,
        py,
        d_px: 0.0,
        d_py: 0.0,
        d_radii: [0.0; 4],
    };
    let raw = if wx <= wy { wx } else { wy };
    eval.weight = raw.clamp(0.0, 1.0);
    if raw < 1.0 {
        if wx <= wy {
            eval.d_px = dx_p;
            eval.d_radii[sx] = dx_r;
        } else {
            eval.d_py = dy_p;
            eval.d_radii[sy] = dy_r;
        }
    }
    eval
}

/// Blended weight alone; equal to `plane_splat_weight(..).weight`.
#[inline]
pub fn plane_splat_value(px: f64, py: f64, radii: &[f64; 4], lambda: f64) -> f64 {
    let k = 5.0 * lambda;
    let rx = if px > 0.0 { radii[0] } else { radii[1] };
    let ry = if py > 0.0 { radii[2] } else { radii[3] };
    let wx = 2.0 * sigmoid(k * (rx - px.abs()));
    let wy = 2.0 * sigmoid(k * (ry - py.abs()));
    let raw = if wx <= wy { wx } else { wy };
    raw.clamp(0.0, 1.0)
}

/// Distance past an extent at which the kernel decays to `floor`.
pub fn falloff_margin(lambda: f64, floor: f64) -> f64 {
    let half = 0.5 * floor;
    let logit = (half / (1.0 - half)).ln();
    -logit / (5.0 * lambda)
}

/// Gaussian baseline in its in-plane form, using the averaged extents as
/// standard deviations.
pub fn gaussian_weight_local(px: f64, py: f64, radii: &[f64; 4]) -> f64 {
    let sx = 0.5 * (radii[0] + radii[1]);
    let sy = 0.5 * (radii[2] + radii[3]);
    (-0.5 * (px * px / (sx * sx) + py * py / (sy * sy))).exp()
}

/// Gaussian baseline through the full 3x3 covariance
/// `Σ = R diag(s_x², s_y², ε) Rᵀ`.
pub fn gaussian_splat_weight(x: &Vec3, center: &Vec3, frame: &PlaneFrame, radii: &[f64; 4]) -> f64 {
    const NORMAL_VARIANCE: f64 = 1e-8;
    let sx = 0.5 * (radii[0] + radii[1]);
    let sy = 0.5 * (radii[2] + radii[3]);
    let rot = nalgebra::Matrix3::from_columns(&[frame.x_axis, frame.y_axis, frame.normal]);
    // dᵀ R diag⁻¹ Rᵀ d, evaluated in the rotated frame
    let local = rot.transpose() * (x - center);
    let inv_var = Vec3::new(1.0 / (sx * sx), 1.0 / (sy * sy), 1.0 / NORMAL_VARIANCE);
    (-0.5 * local.component_mul(&local).dot(&inv_var)).exp()
}
