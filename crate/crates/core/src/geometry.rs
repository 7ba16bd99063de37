//! Primitive representation, quaternion algebra, the pinhole camera and
//! ray/plane intersection.
//!
//! Conventions: world units are meters, camera frames follow the
//! x-right / y-down / z-forward convention, and depth always means the
//! camera-frame z coordinate of a point (not the ray parameter).

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Default lower bound for every radius, in meters.
pub const RADII_FLOOR: f64 = 1e-4;

/// Rotation quaternion stored as `(w, x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let a = axis.normalize();
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, a.x * s, a.y * s, a.z * s)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    /// Smallest rotation taking `+z` onto `normal`. The antipodal case uses a
    /// half turn about `+x`.
    pub fn from_z_to(normal: &Vec3) -> Self {
        let n = normal.normalize();
        let w = 1.0 + n.z;
        if w < 1e-12 {
            return Quat::new(0.0, 1.0, 0.0, 0.0);
        }
        // z × n = (-n_y, n_x, 0)
        Quat::new(w, -n.y, n.x, 0.0).normalized()
    }

    /// Rotation whose columns are the given right-handed orthonormal axes.
    pub fn from_frame(x_axis: &Vec3, y_axis: &Vec3, normal: &Vec3) -> Self {
        let m = Matrix3::from_columns(&[*x_axis, *y_axis, *normal]);
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(m));
        Quat::new(q.w, q.i, q.j, q.k)
    }

    /// Hamilton product `self * rhs`.
    pub fn mul(&self, rhs: &Quat) -> Quat {
        let (a, b) = (self, rhs);
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    /// Rotation matrix of the normalized quaternion.
    pub fn to_matrix(&self) -> Matrix3<f64> {
        let f = PlaneFrame::from_rotation(self);
        Matrix3::from_columns(&[f.x_axis, f.y_axis, f.normal])
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.to_matrix() * v
    }
}

/// Learnable rectangle: center, rotation and four directional extents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanePrimitive {
    pub id: u64,
    pub center: Vec3,
    pub rotation: Quat,
    /// `[x+, x-, y+, y-]` extents in meters.
    pub radii: [f64; 4],
}

impl PlanePrimitive {
    pub fn new(id: u64, center: Vec3, rotation: Quat, radii: [f64; 4]) -> Self {
        PlanePrimitive {
            id,
            center,
            rotation,
            radii,
        }
    }

    pub fn frame(&self) -> PlaneFrame {
        PlaneFrame::from_rotation(&self.rotation)
    }

    pub fn area(&self) -> f64 {
        (self.radii[0] + self.radii[1]) * (self.radii[2] + self.radii[3])
    }

    /// Corners in counter-clockwise order around the normal:
    /// `(+x,+y), (-x,+y), (-x,-y), (+x,-y)`.
    pub fn corners(&self) -> [Vec3; 4] {
        let f = self.frame();
        let [xp, xn, yp, yn] = self.radii;
        let c = self.center;
        [
            c + f.x_axis * xp + f.y_axis * yp,
            c - f.x_axis * xn + f.y_axis * yp,
            c - f.x_axis * xn - f.y_axis * yn,
            c + f.x_axis * xp - f.y_axis * yn,
        ]
    }
}

/// In-plane axes and normal of a primitive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneFrame {
    pub x_axis: Vec3,
    pub y_axis: Vec3,
    pub normal: Vec3,
}

impl PlaneFrame {
    /// Columns of `R(q)`; `q` is normalized first.
    pub fn from_rotation(q: &Quat) -> Self {
        let Quat { w, x, y, z } = q.normalized();
        PlaneFrame {
            x_axis: Vec3::new(
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y + w * z),
                2.0 * (x * z - w * y),
            ),
            y_axis: Vec3::new(
                2.0 * (x * y - w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z + w * x),
            ),
            normal: Vec3::new(
                2.0 * (x * z + w * y),
                2.0 * (y * z - w * x),
                1.0 - 2.0 * (x * x + y * y),
            ),
        }
    }
}

/// Pull the gradients of the frame columns back onto the raw quaternion.
///
/// The frame is built from `q / |q|`, so the result already carries the
/// normalization Jacobian `(I - q̂q̂ᵀ) / |q|` and is orthogonal to `q`.
pub fn frame_vjp(q: &Quat, g_x: &Vec3, g_y: &Vec3, g_n: &Vec3) -> [f64; 4] {
    let norm = q.norm();
    let Quat { w, x, y, z } = q.normalized();
    let d = |v: &Vec3, a: [f64; 3]| v.x * a[0] + v.y * a[1] + v.z * a[2];

    let gw = d(g_x, [0.0, 2.0 * z, -2.0 * y])
        + d(g_y, [-2.0 * z, 0.0, 2.0 * x])
        + d(g_n, [2.0 * y, -2.0 * x, 0.0]);
    let gx = d(g_x, [0.0, 2.0 * y, 2.0 * z])
        + d(g_y, [2.0 * y, -4.0 * x, 2.0 * w])
        + d(g_n, [2.0 * z, -2.0 * w, -4.0 * x]);
    let gy = d(g_x, [-4.0 * y, 2.0 * x, -2.0 * w])
        + d(g_y, [2.0 * x, 0.0, 2.0 * z])
        + d(g_n, [2.0 * w, 2.0 * z, -4.0 * y]);
    let gz = d(g_x, [-4.0 * z, 2.0 * w, 2.0 * x])
        + d(g_y, [-2.0 * w, -4.0 * z, 2.0 * y])
        + d(g_n, [2.0 * x, 2.0 * y, 0.0]);

    let radial = w * gw + x * gx + y * gy + z * gz;
    [
        (gw - w * radial) / norm,
        (gx - x * radial) / norm,
        (gy - y * radial) / norm,
        (gz - z * radial) / norm,
    ]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Square pixels, principal point at the image center.
    pub fn from_hfov(width: u32, height: u32, hfov_deg: f64) -> Self {
        let f = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Intrinsics {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
        }
    }
}

/// Rigid camera-to-world transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        Pose {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: Vec3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]),
        }
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m[(0, 3)] = self.translation.x;
        m[(1, 3)] = self.translation.y;
        m[(2, 3)] = self.translation.z;
        m
    }

    /// Camera looking from `eye` toward `target`, image `y` pointing as close
    /// to `-up` as possible.
    pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(up);
        if right.norm() < 1e-6 {
            let alt = if forward.x.abs() < 0.9 {
                Vec3::x()
            } else {
                Vec3::y()
            };
            right = forward.cross(&alt);
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        Pose {
            rotation: Matrix3::from_columns(&[right, down, forward]),
            translation: *eye,
        }
    }

    pub fn center(&self) -> Vec3 {
        self.translation
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let r = &self.rotation;
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        err <= tol && (r.determinant() - 1.0).abs() <= tol
    }
}

/// One posed frame with its depth/normal supervision.
///
/// Depth `<= 0` and the zero normal mark invalid pixels. Normals live in the
/// camera frame. Maps are row-major, `width * height` long.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraView {
    pub id: u32,
    pub intrinsics: Intrinsics,
    pub width: u32,
    pub height: u32,
    pub pose: Pose,
    pub target_depth: Vec<f64>,
    pub target_normal: Vec<Vec3>,
}

impl CameraView {
    /// View without supervision (all pixels invalid).
    pub fn unsupervised(id: u32, intrinsics: Intrinsics, width: u32, height: u32, pose: Pose) -> Self {
        let n = (width * height) as usize;
        CameraView {
            id,
            intrinsics,
            width,
            height,
            pose,
            target_depth: vec![0.0; n],
            target_normal: vec![Vec3::zeros(); n],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn is_valid_pixel(&self, idx: usize) -> bool {
        self.target_depth[idx] > 0.0 && self.target_normal[idx] != Vec3::zeros()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.pixel_count();
        if n == 0 {
            return Err(Error::InvalidInput(format!("view {} has zero resolution", self.id)));
        }
        if self.target_depth.len() != n || self.target_normal.len() != n {
            return Err(Error::InvalidInput(format!(
                "view {}: target maps do not match {}x{}",
                self.id, self.width, self.height
            )));
        }
        if !self.pose.is_orthonormal(1e-6) {
            return Err(Error::InvalidInput(format!(
                "view {}: pose rotation is not orthonormal",
                self.id
            )));
        }
        for (i, n) in self.target_normal.iter().enumerate() {
            if *n == Vec3::zeros() {
                continue;
            }
            let len = n.norm();
            if !(1.0 - 1e-4..=1.0 + 1e-4).contains(&len) {
                return Err(Error::InvalidInput(format!(
                    "view {}: normal at pixel {} has length {}",
                    self.id, i, len
                )));
            }
        }
        Ok(())
    }

    /// Unit camera-frame direction through the pixel position `(u + 0.5, v + 0.5)`.
    pub fn camera_direction(&self, u: f64, v: f64) -> Vec3 {
        let k = &self.intrinsics;
        Vec3::new((u + 0.5 - k.cx) / k.fx, (v + 0.5 - k.cy) / k.fy, 1.0).normalize()
    }

    /// Continuous image coordinates of a world point, or `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        let c = self.pose.world_to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some((k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy))
    }

    /// World-frame point seen at pixel `idx` with depth `z`.
    pub fn back_project(&self, idx: usize, z: f64) -> Vec3 {
        let u = (idx % self.width as usize) as f64;
        let v = (idx / self.width as usize) as f64;
        let k = &self.intrinsics;
        let cam = Vec3::new(
            (u + 0.5 - k.cx) / k.fx * z,
            (v + 0.5 - k.cy) / k.fy * z,
            z,
        );
        self.pose.camera_to_world(&cam)
    }
}

/// A camera ray. `z_per_t` converts the ray parameter into camera depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub pixel: (f64, f64),
    pub z_per_t: f64,
}

/// Ray through pixel `(u, v)`; panics when the pixel lies outside the image.
pub fn generate_ray(view: &CameraView, u: f64, v: f64) -> Ray {
    assert!(
        (0.0..view.width as f64).contains(&u) && (0.0..view.height as f64).contains(&v),
        "pixel ({u}, {v}) outside {}x{} image",
        view.width,
        view.height
    );
    let d_cam = view.camera_direction(u, v);
    Ray {
        origin: view.pose.center(),
        direction: view.pose.rotation * d_cam,
        pixel: (u, v),
        z_per_t: d_cam.z,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntersectParams {
    pub t_near: f64,
    pub parallel_eps: f64,
}

impl Default for IntersectParams {
    fn default() -> Self {
        IntersectParams {
            t_near: 0.01,
            parallel_eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub point: Vec3,
    pub t: f64,
    pub z_cam: f64,
}

/// Intersection of a ray with the infinite plane through `center` with the
/// frame's normal. `None` for parallel rays and hits closer than `t_near`.
pub fn intersect(ray: &Ray, center: &Vec3, frame: &PlaneFrame, params: &IntersectParams) -> Option<Hit> {
    let denom = ray.direction.dot(&frame.normal);
    if denom.abs() < params.parallel_eps {
        return None;
    }
    let t = (center - ray.origin).dot(&frame.normal) / denom;
    if t <= params.t_near {
        return None;
    }
    Some(Hit {
        point: ray.origin + ray.direction * t,
        t,
        z_cam: t * ray.z_per_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn approx_eq(a: &Vec3, b: &Vec3, tol: f64) -> bool {
        (a - b).abs().max() <= tol
    }

    fn random_quat(rng: &mut ChaCha8Rng) -> Quat {
        Quat::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalized()
    }

    fn view(fx: f64, cx: f64, w: u32, h: u32, pose: Pose) -> CameraView {
        let k = Intrinsics {
            fx,
            fy: fx,
            cx,
            cy: cx,
        };
        CameraView::unsupervised(0, k, w, h, pose)
    }

    #[test]
    fn identity_frame() {
        let f = PlaneFrame::from_rotation(&Quat::IDENTITY);
        assert_eq!(f.x_axis, Vec3::x());
        assert_eq!(f.y_axis, Vec3::y());
        assert_eq!(f.normal, Vec3::z());
    }

    #[test]
    fn quarter_turn_about_z() {
        let q = Quat::from_axis_angle(&Vec3::z(), std::f64::consts::FRAC_PI_2);
        let f = PlaneFrame::from_rotation(&q);
        assert!(approx_eq(&f.x_axis, &Vec3::new(0.0, 1.0, 0.0), 1e-12));
        assert!(approx_eq(&f.y_axis, &Vec3::new(-1.0, 0.0, 0.0), 1e-12));
        assert!(approx_eq(&f.normal, &Vec3::z(), 1e-12));
    }

    #[test]
    fn frame_round_trip() {
        let q = Quat::new(0.2, -0.7, 0.4, 0.5).normalized();
        let f = PlaneFrame::from_rotation(&q);
        let back = Quat::from_frame(&f.x_axis, &f.y_axis, &f.normal);
        let g = PlaneFrame::from_rotation(&back);
        assert!((f.x_axis - g.x_axis).norm() < 1e-12);
        assert!((f.normal - g.normal).norm() < 1e-12);
    }

    #[test]
    fn random_frames_are_right_handed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let f = PlaneFrame::from_rotation(&random_quat(&mut rng));
            assert!(f.x_axis.dot(&f.y_axis).abs() < 1e-6);
            assert!(approx_eq(&f.x_axis.cross(&f.y_axis), &f.normal, 1e-6));
        }
    }

    #[test]
    fn frame_vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            // deliberately non-unit, the frame normalizes internally
            let q = Quat::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let gx = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            let gy = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            let gn = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            let scalar = |q: &Quat| {
                let f = PlaneFrame::from_rotation(q);
                gx.dot(&f.x_axis) + gy.dot(&f.y_axis) + gn.dot(&f.normal)
            };
            let analytic = frame_vjp(&q, &gx, &gy, &gn);
            let base = q.to_array();
            for i in 0..4 {
                let h = 1e-6;
                let mut a = base;
                let mut b = base;
                a[i] += h;
                b[i] -= h;
                let fd = (scalar(&Quat::from_array(a)) - scalar(&Quat::from_array(b))) / (2.0 * h);
                assert!((fd - analytic[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", analytic[i]);
            }
        }
    }

    #[test]
    fn z_to_normal_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
            let q = Quat::from_z_to(&n);
            assert!((q.norm() - 1.0).abs() < 1e-12);
            assert!(approx_eq(&q.rotate(&Vec3::z()), &n, 1e-9));
        }
        let q = Quat::from_z_to(&-Vec3::z());
        assert!(approx_eq(&q.rotate(&Vec3::z()), &-Vec3::z(), 1e-12));
    }

    #[test]
    fn principal_ray() {
        let v = view(100.0, 50.0, 100, 100, Pose::identity());
        let r = generate_ray(&v, 49.5, 49.5);
        assert!(approx_eq(&r.direction, &Vec3::z(), 1e-15));
        assert_eq!(r.origin, Vec3::zeros());
    }

    #[test]
    fn off_axis_ray() {
        let v = view(100.0, 50.0, 100, 100, Pose::identity());
        let r = generate_ray(&v, 99.5, 49.5);
        let expected = Vec3::new(0.5, 0.0, 1.0).normalize();
        assert!(approx_eq(&r.direction, &expected, 1e-15));
        assert!((r.direction.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn translated_origin() {
        let pose = Pose {
            rotation: Matrix3::identity(),
            translation: Vec3::new(1.0, 2.0, 3.0),
        };
        let v = view(100.0, 50.0, 100, 100, pose);
        assert_eq!(generate_ray(&v, 3.0, 7.0).origin, Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    #[should_panic]
    fn out_of_bounds_pixel_panics() {
        let v = view(100.0, 50.0, 100, 100, Pose::identity());
        generate_ray(&v, 100.0, 0.0);
    }

    #[test]
    fn axis_aligned_hit() {
        let ray = Ray {
            origin: Vec3::zeros(),
            direction: Vec3::z(),
            pixel: (0.0, 0.0),
            z_per_t: 1.0,
        };
        let frame = PlaneFrame::from_rotation(&Quat::from_z_to(&-Vec3::z()));
        let hit = intersect(&ray, &Vec3::new(0.0, 0.0, 2.0), &frame, &IntersectParams::default()).unwrap();
        assert!(approx_eq(&hit.point, &Vec3::new(0.0, 0.0, 2.0), 1e-12));
        assert!((hit.z_cam - 2.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_ray_misses() {
        let ray = Ray {
            origin: Vec3::zeros(),
            direction: Vec3::x(),
            pixel: (0.0, 0.0),
            z_per_t: 0.0,
        };
        let frame = PlaneFrame::from_rotation(&Quat::IDENTITY);
        assert!(intersect(&ray, &Vec3::new(0.0, 0.0, 2.0), &frame, &IntersectParams::default()).is_none());
    }

    #[test]
    fn oblique_hit() {
        let ray = Ray {
            origin: Vec3::zeros(),
            direction: Vec3::new(0.0, 0.6, 0.8),
            pixel: (0.0, 0.0),
            z_per_t: 0.8,
        };
        let frame = PlaneFrame::from_rotation(&Quat::IDENTITY);
        let hit = intersect(&ray, &Vec3::new(0.0, 0.0, 4.0), &frame, &IntersectParams::default()).unwrap();
        assert!((hit.t - 5.0).abs() < 1e-12);
        assert!(approx_eq(&hit.point, &Vec3::new(0.0, 3.0, 4.0), 1e-12));
    }

    #[test]
    fn behind_and_near_hits_are_rejected() {
        let ray = Ray {
            origin: Vec3::zeros(),
            direction: Vec3::z(),
            pixel: (0.0, 0.0),
            z_per_t: 1.0,
        };
        let frame = PlaneFrame::from_rotation(&Quat::IDENTITY);
        let p = IntersectParams::default();
        assert!(intersect(&ray, &Vec3::new(0.0, 0.0, -1.0), &frame, &p).is_none());
        assert!(intersect(&ray, &Vec3::new(0.0, 0.0, 0.005), &frame, &p).is_none());
    }

    #[test]
    fn hit_lies_on_plane_and_ignores_normal_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pose = Pose::look_at(&Vec3::new(0.3, -0.2, 0.1), &Vec3::new(1.0, 2.0, 3.0), &Vec3::z());
        let v = view(40.0, 16.0, 32, 32, pose);
        let params = IntersectParams::default();
        for _ in 0..500 {
            let q = random_quat(&mut rng);
            let center = Vec3::new(rng.gen_range(-2.0..3.0), rng.gen_range(0.0..4.0), rng.gen_range(1.0..5.0));
            let f = PlaneFrame::from_rotation(&q);
            let flipped = PlaneFrame {
                normal: -f.normal,
                ..f
            };
            let ray = generate_ray(&v, rng.gen_range(0.0..32.0), rng.gen_range(0.0..32.0));
            let (Some(a), Some(b)) = (intersect(&ray, &center, &f, &params), intersect(&ray, &center, &flipped, &params)) else {
                continue;
            };
            assert!((a.point - center).dot(&f.normal).abs() <= 1e-6 * a.point.norm().max(1.0));
            assert!(approx_eq(&a.point, &b.point, 1e-12));
            assert!((a.z_cam - b.z_cam).abs() < 1e-12);
            // reprojection reproduces the pixel position
            let (pu, pv) = v.project(&a.point).unwrap();
            assert!((pu - (ray.pixel.0 + 0.5)).abs() < 1e-4);
            assert!((pv - (ray.pixel.1 + 0.5)).abs() < 1e-4);
            let cam = v.pose.world_to_camera(&a.point);
            assert!((cam.z - a.z_cam).abs() < 1e-9);
        }
    }
}
