//! Fixtures shared by the integration tests: random scenes and an
//! independent brute-force renderer.

#![allow(dead_code)]

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use planar_splat::geometry::{CameraView, Intrinsics, PlanePrimitive, Pose, Quat, Vec3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n < 1.0 {
            return v / n;
        }
    }
}

pub fn random_quat(rng: &mut ChaCha8Rng) -> Quat {
    let q = Quat::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    if q.norm() < 0.2 {
        return random_quat(rng);
    }
    q.normalized()
}

/// Rotation matrix of `(w, x, y, z)` through nalgebra.
pub fn rotation_of(q: &Quat) -> Matrix3<f64> {
    let [w, x, y, z] = q.to_array();
    UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)).to_rotation_matrix().into_inner()
}

/// Camera near the origin looking roughly along +z.
pub fn random_view(rng: &mut ChaCha8Rng, width: u32, height: u32) -> CameraView {
    let axis = unit(rng);
    let tilt = rng.gen_range(0.0..0.3);
    let rotation = UnitQuaternion::from_scaled_axis(Vector3::new(axis.x, axis.y, axis.z) * tilt)
        .to_rotation_matrix()
        .into_inner();
    let pose = Pose {
        rotation,
        translation: Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
    };
    let k = Intrinsics::from_hfov(width, height, rng.gen_range(50.0..80.0));
    CameraView::unsupervised(0, k, width, height, pose)
}

/// `n` rectangles in front of the camera, tilted up to ~60° away from it.
pub fn random_primitives(rng: &mut ChaCha8Rng, view: &CameraView, n: usize) -> Vec<PlanePrimitive> {
    (0..n)
        .map(|i| {
            let cam = Vec3::new(rng.gen_range(-0.8..0.8), rng.gen_range(-0.6..0.6), 1.0) * rng.gen_range(1.5..4.0);
            let center = view.pose.camera_to_world(&cam);
            let toward = -(view.pose.rotation * cam.normalize());
            let mut n = toward + unit(rng) * rng.gen_range(0.0..0.9);
            if rng.gen_bool(0.3) {
                n = -n;
            }
            let base = Quat::from_z_to(&n.normalize());
            let spin = Quat::from_axis_angle(&Vec3::z(), rng.gen_range(0.0..std::f64::consts::TAU));
            let radii = std::array::from_fn(|_| rng.gen_range(0.1..0.8));
            PlanePrimitive::new(i as u64, center, base.mul(&spin).normalized(), radii)
        })
        .collect()
}

/// Fill every pixel with a random target: depth in [1, 5] and a
/// camera-facing unit normal.
pub fn random_targets(rng: &mut ChaCha8Rng, view: &mut CameraView) {
    for i in 0..view.pixel_count() {
        view.target_depth[i] = rng.gen_range(1.0..5.0);
        let mut n = unit(rng);
        if n.z > 0.0 {
            n.z = -n.z;
        }
        view.target_normal[i] = n;
    }
}

/// Per-pixel brute force over every primitive: ray-plane hit, kernel
/// weight, depth sort, truncation and front-to-back compositing.
pub struct Reference {
    pub depth: Vec<f64>,
    pub normal: Vec<Vec3>,
    pub alpha: Vec<f64>,
}

pub const FLOOR: f64 = 1e-4;
pub const MAX_HITS: usize = 30;

fn kernel(p: f64, r_pos: f64, r_neg: f64, lambda: f64) -> f64 {
    let r = if p > 0.0 { r_pos } else { r_neg };
    2.0 / (1.0 + (-5.0 * lambda * (r - p.abs())).exp())
}

pub fn reference_render(view: &CameraView, prims: &[PlanePrimitive], lambda: f64) -> Reference {
    let n = view.pixel_count();
    let mut out = Reference {
        depth: vec![0.0; n],
        normal: vec![Vec3::zeros(); n],
        alpha: vec![0.0; n],
    };
    let k = view.intrinsics;
    let r_wc = view.pose.rotation;
    let o = view.pose.translation;
    let frames: Vec<Matrix3<f64>> = prims.iter().map(|p| rotation_of(&p.rotation)).collect();
    for v in 0..view.height {
        for u in 0..view.width {
            let dc = Vec3::new((u as f64 + 0.5 - k.cx) / k.fx, (v as f64 + 0.5 - k.cy) / k.fy, 1.0);
            let d = r_wc * dc.normalize();
            let mut hits: Vec<(f64, usize, f64, Vec3)> = Vec::new();
            for (i, (p, r)) in prims.iter().zip(&frames).enumerate() {
                let (vx, vy, nrm) = (r.column(0).into_owned(), r.column(1).into_owned(), r.column(2).into_owned());
                let dn = d.dot(&nrm);
                if dn.abs() < 1e-8 {
                    continue;
                }
                let t = (p.center - o).dot(&nrm) / dn;
                if t <= 0.01 {
                    continue;
                }
                let x = o + d * t;
                let (px, py) = ((x - p.center).dot(&vx), (x - p.center).dot(&vy));
                let w = kernel(px, p.radii[0], p.radii[1], lambda)
                    .min(kernel(py, p.radii[2], p.radii[3], lambda))
                    .min(1.0);
                if w < FLOOR {
                    continue;
                }
                let z = (r_wc.transpose() * (x - o)).z;
                let facing = if dn > 0.0 { -nrm } else { nrm };
                hits.push((z, i, w, r_wc.transpose() * facing));
            }
            hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            hits.truncate(MAX_HITS);
            let idx = (v * view.width + u) as usize;
            let mut trans = 1.0;
            for (z, _, w, nc) in hits {
                out.depth[idx] += trans * w * z;
                out.normal[idx] += nc * (trans * w);
                out.alpha[idx] += trans * w;
                trans *= 1.0 - w;
            }
        }
    }
    out
}

/// Parameters of one primitive as `[center 3, quaternion 4, radii 4]`.
pub fn params_of(p: &PlanePrimitive) -> [f64; 11] {
    let mut a = [0.0; 11];
    a[..3].copy_from_slice(p.center.as_slice());
    a[3..7].copy_from_slice(&p.rotation.to_array());
    a[7..].copy_from_slice(&p.radii);
    a
}

pub fn with_param(p: &PlanePrimitive, k: usize, value: f64) -> PlanePrimitive {
    let mut a = params_of(p);
    a[k] = value;
    PlanePrimitive::new(
        p.id,
        Vec3::new(a[0], a[1], a[2]),
        Quat::new(a[3], a[4], a[5], a[6]),
        [a[7], a[8], a[9], a[10]],
    )
}

/// Corners of `p` in the order (+x+y, -x+y, -x-y, +x-y), built from the
/// nalgebra rotation.
pub fn corners_of(p: &PlanePrimitive) -> [Vec3; 4] {
    let r = rotation_of(&p.rotation);
    let (vx, vy) = (r.column(0).into_owned(), r.column(1).into_owned());
    let [xp, xn, yp, yn] = p.radii;
    [
        p.center + vx * xp + vy * yp,
        p.center - vx * xn + vy * yp,
        p.center - vx * xn - vy * yn,
        p.center + vx * xp - vy * yn,
    ]
}

/// Whether two point sets agree up to order within `tol`.
pub fn same_point_set(a: &[Vec3], b: &[Vec3], tol: f64) -> bool {
    a.len() == b.len()
        && a.iter().all(|p| b.iter().any(|q| (p - q).norm() < tol))
        && b.iter().all(|p| a.iter().any(|q| (p - q).norm() < tol))
}

pub struct GradMismatch {
    pub primitive: usize,
    pub param: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Central differences of the mean rendering loss against the analytic
/// gradient, every parameter of every primitive.
pub fn gradient_mismatches(
    view: &CameraView,
    prims: &[PlanePrimitive],
    lambda: f64,
    weights: &planar_splat::renderer::LossWeights,
    step: f64,
) -> (usize, Vec<GradMismatch>) {
    use planar_splat::renderer::{forward_backward, render_loss, render_view, GradientBuffer, RenderSettings};
    let settings = RenderSettings::default();
    let loss = |ps: &[PlanePrimitive]| render_loss(&render_view(view, ps, lambda, &settings), view, weights).loss;
    let mut grads = GradientBuffer::new(prims.len());
    forward_backward(view, prims, lambda, &settings, weights, &mut grads).expect("finite gradients");
    let mut bad = Vec::new();
    let mut checked = 0;
    for i in 0..prims.len() {
        let analytic = grads.grads[i].to_array();
        let base = params_of(&prims[i]);
        for k in 0..11 {
            let mut plus = prims.to_vec();
            let mut minus = prims.to_vec();
            plus[i] = with_param(&prims[i], k, base[k] + step);
            minus[i] = with_param(&prims[i], k, base[k] - step);
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * step);
            let err = (analytic[k] - numeric).abs();
            let scale = analytic[k].abs().max(numeric.abs());
            checked += 1;
            if !(err < 1e-8 || err < 1e-3 * scale) {
                bad.push(GradMismatch {
                    primitive: i,
                    param: k,
                    analytic: analytic[k],
                    numeric,
                });
            }
        }
    }
    (checked, bad)
}

/// Scene for the gradient check: random camera, primitives and targets.
pub fn gradient_scene(seed: u64, n: usize, size: u32) -> (CameraView, Vec<PlanePrimitive>) {
    let mut r = rng(seed);
    let mut view = random_view(&mut r, size, size);
    let prims = random_primitives(&mut r, &view, n);
    random_targets(&mut r, &mut view);
    (view, prims)
}
