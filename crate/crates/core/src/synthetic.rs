//! Synthetic box rooms with exact ground-truth depth, normal and instance
//! maps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraView, Intrinsics, PlanePrimitive, Pose, Quat, Vec3};

/// Instance value of pixels that hit nothing.
pub const NO_INSTANCE: u32 = u32::MAX;

const BOX_FOOTPRINT: (f64, f64) = (0.4, 1.0);
const BOX_HEIGHT: (f64, f64) = (0.3, 0.9);
/// Free space kept between boxes and walls, and between boxes.
const WALL_CLEARANCE: f64 = 0.8;
const BOX_GAP: f64 = 0.8;
const MAX_ATTEMPTS: u32 = 100;
const TARGET_MAX_DEG: f64 = 55.0;
const COVERAGE_MAX_DEG: f64 = 60.0;
const MIN_VIEWS_PER_FACE: usize = 3;
const CAMERA_WALL_MARGIN: f64 = 0.2;
const CAMERA_BOX_MARGIN: f64 = 0.2;

/// Ground-truth planar rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtFace {
    pub id: u32,
    pub center: Vec3,
    pub u_axis: Vec3,
    pub v_axis: Vec3,
    pub half_u: f64,
    pub half_v: f64,
    /// Points into free space; `u × v`.
    pub normal: Vec3,
}

impl GtFace {
    fn new(id: u32, center: Vec3, u_axis: Vec3, v_axis: Vec3, half_u: f64, half_v: f64) -> Self {
        GtFace {
            id,
            center,
            u_axis,
            v_axis,
            half_u,
            half_v,
            normal: u_axis.cross(&v_axis),
        }
    }

    pub fn area(&self) -> f64 {
        4.0 * self.half_u * self.half_v
    }

    pub fn point(&self, a: f64, b: f64) -> Vec3 {
        self.center + self.u_axis * (a * self.half_u) + self.v_axis * (b * self.half_v)
    }

    /// Ray parameter of the hit with this face, if any.
    pub fn hit(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        const TOL: f64 = 1e-9;
        let denom = dir.dot(&self.normal);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (self.center - origin).dot(&self.normal) / denom;
        if t <= 0.0 {
            return None;
        }
        let rel = origin + dir * t - self.center;
        (rel.dot(&self.u_axis).abs() <= self.half_u + TOL && rel.dot(&self.v_axis).abs() <= self.half_v + TOL).then_some(t)
    }

    /// The face as a primitive lying exactly on it.
    pub fn to_primitive(&self, id: u64) -> PlanePrimitive {
        PlanePrimitive::new(
            id,
            self.center,
            Quat::from_frame(&self.u_axis, &self.v_axis, &self.normal),
            [self.half_u, self.half_u, self.half_v, self.half_v],
        )
    }
}

/// Axis-aligned room `[0, width] × [0, depth] × [0, height]`, `z` up.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomBounds {
    pub width: f64,
    pub depth: f64,
    pub height: f64,
}

impl RoomBounds {
    pub fn center(&self) -> Vec3 {
        Vec3::new(self.width, self.depth, self.height) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        Vec3::new(self.width, self.depth, self.height).norm()
    }

    pub fn contains_strictly(&self, p: &Vec3) -> bool {
        p.x > 0.0 && p.x < self.width && p.y > 0.0 && p.y < self.depth && p.z > 0.0 && p.z < self.height
    }
}

/// Axis-aligned box standing on the floor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxObstacle {
    pub min: Vec3,
    pub max: Vec3,
}

impl BoxObstacle {
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] > self.min[k] && p[k] < self.max[k])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub faces: Vec<GtFace>,
    pub bounds: RoomBounds,
    pub boxes: Vec<BoxObstacle>,
    pub poses: Vec<Pose>,
}

impl SyntheticScene {
    /// Nearest face hit along a ray: `(face index, t)`.
    pub fn first_hit(&self, origin: &Vec3, dir: &Vec3) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, f) in self.faces.iter().enumerate() {
            if let Some(t) = f.hit(origin, dir) {
                if best.is_none_or(|(_, bt)| t < bt) {
                    best = Some((i, t));
                }
            }
        }
        best
    }

    /// Whether point `p` on face `face` is the first surface seen from `eye`.
    pub fn visible(&self, eye: &Vec3, p: &Vec3, face: usize) -> bool {
        let dist = (p - eye).norm();
        if dist < 1e-9 {
            return false;
        }
        let dir = (p - eye) / dist;
        match self.first_hit(eye, &dir) {
            Some((i, t)) => i == face || t >= dist - 1e-6,
            None => false,
        }
    }
}

/// Generation and rendering settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub width: f64,
    pub depth: f64,
    pub height: f64,
    pub boxes: usize,
    pub views: usize,
    pub image_width: u32,
    pub image_height: u32,
    pub hfov_deg: f64,
    /// Standard deviation of additive depth noise in meters; 0 disables it.
    pub depth_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 4.0,
            depth: 4.0,
            height: 3.0,
            boxes: 0,
            views: 100,
            image_width: 80,
            image_height: 60,
            hfov_deg: 70.0,
            depth_noise: 0.0,
            seed: 0,
        }
    }
}

fn room_faces(b: &RoomBounds) -> Vec<GtFace> {
    let (w, d, h) = (b.width, b.depth, b.height);
    let (x, y, z) = (Vec3::x(), Vec3::y(), Vec3::z());
    vec![
        GtFace::new(0, Vec3::new(w / 2.0, d / 2.0, 0.0), x, y, w / 2.0, d / 2.0),
        GtFace::new(1, Vec3::new(w / 2.0, d / 2.0, h), y, x, d / 2.0, w / 2.0),
        GtFace::new(2, Vec3::new(0.0, d / 2.0, h / 2.0), y, z, d / 2.0, h / 2.0),
        GtFace::new(3, Vec3::new(w, d / 2.0, h / 2.0), z, y, h / 2.0, d / 2.0),
        GtFace::new(4, Vec3::new(w / 2.0, 0.0, h / 2.0), z, x, h / 2.0, w / 2.0),
        GtFace::new(5, Vec3::new(w / 2.0, d, h / 2.0), x, z, w / 2.0, h / 2.0),
    ]
}

/// Top and four side faces of a box, outward normals.
fn box_faces(first_id: u32, b: &BoxObstacle) -> [GtFace; 5] {
    let c = (b.min + b.max) * 0.5;
    let e = (b.max - b.min) * 0.5;
    let (x, y, z) = (Vec3::x(), Vec3::y(), Vec3::z());
    [
        GtFace::new(first_id, Vec3::new(c.x, c.y, b.max.z), x, y, e.x, e.y),
        GtFace::new(first_id + 1, Vec3::new(b.max.x, c.y, c.z), y, z, e.y, e.z),
        GtFace::new(first_id + 2, Vec3::new(b.min.x, c.y, c.z), z, y, e.z, e.y),
        GtFace::new(first_id + 3, Vec3::new(c.x, b.max.y, c.z), z, x, e.z, e.x),
        GtFace::new(first_id + 4, Vec3::new(c.x, b.min.y, c.z), x, z, e.x, e.z),
    ]
}

/// Draw one box that keeps its clearances from the walls and `placed`.
fn draw_box(bounds: &RoomBounds, placed: &[BoxObstacle], rng: &mut ChaCha8Rng) -> Option<BoxObstacle> {
    for _ in 0..MAX_ATTEMPTS {
        let sx = rng.gen_range(BOX_FOOTPRINT.0..=BOX_FOOTPRINT.1);
        let sy = rng.gen_range(BOX_FOOTPRINT.0..=BOX_FOOTPRINT.1);
        let sz = rng.gen_range(BOX_HEIGHT.0..=BOX_HEIGHT.1);
        let free_x = bounds.width - 2.0 * WALL_CLEARANCE - sx;
        let free_y = bounds.depth - 2.0 * WALL_CLEARANCE - sy;
        if free_x < 0.0 || free_y < 0.0 || sz >= bounds.height {
            continue;
        }
        let x0 = WALL_CLEARANCE + rng.gen_range(0.0..=free_x);
        let y0 = WALL_CLEARANCE + rng.gen_range(0.0..=free_y);
        let cand = BoxObstacle {
            min: Vec3::new(x0, y0, 0.0),
            max: Vec3::new(x0 + sx, y0 + sy, sz),
        };
        let clear = placed.iter().all(|b| {
            let gap_x = (b.min.x - cand.max.x).max(cand.min.x - b.max.x);
            let gap_y = (b.min.y - cand.max.y).max(cand.min.y - b.max.y);
            gap_x.max(gap_y) >= BOX_GAP
        });
        if clear {
            return Some(cand);
        }
    }
    None
}

/// Room with `n_boxes` non-overlapping boxes. A box that cannot be placed
/// after 100 draws restarts the layout; 100 failed layouts are an error.
pub fn generate_box_room(width: f64, depth: f64, height: f64, n_boxes: usize, seed: u64) -> Result<SyntheticScene> {
    if !(width > 0.0 && depth > 0.0 && height > 0.0) {
        return Err(Error::Generation(format!("room dimensions must be positive: {width}x{depth}x{height}")));
    }
    let bounds = RoomBounds { width, depth, height };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stuck = 0;
    for _ in 0..MAX_ATTEMPTS {
        let mut boxes: Vec<BoxObstacle> = Vec::with_capacity(n_boxes);
        while boxes.len() < n_boxes {
            match draw_box(&bounds, &boxes, &mut rng) {
                Some(b) => boxes.push(b),
                None => break,
            }
        }
        if boxes.len() < n_boxes {
            stuck = boxes.len();
            continue;
        }
        let mut faces = room_faces(&bounds);
        for b in &boxes {
            faces.extend(box_faces(faces.len() as u32, b));
        }
        return Ok(SyntheticScene {
            faces,
            bounds,
            boxes,
            poses: Vec::new(),
        });
    }
    Err(Error::Generation(format!(
        "could not place box {stuck} in {MAX_ATTEMPTS} layouts"
    )))
}

fn height_range(scene: &SyntheticScene) -> Result<(f64, f64)> {
    let h = scene.bounds.height;
    let (lo, hi) = (0.25 * h, 0.65 * h);
    if hi - lo < 0.05 {
        return Err(Error::Generation("room too low for cameras".into()));
    }
    Ok((lo, hi))
}

fn angle_deg(a: &Vec3, b: &Vec3) -> f64 {
    (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Whether a camera may sit at `eye`: inside the room away from the walls,
/// within the height band and clear of every box.
fn eye_allowed(scene: &SyntheticScene, heights: (f64, f64), eye: &Vec3) -> bool {
    let b = &scene.bounds;
    let m = CAMERA_WALL_MARGIN;
    let in_room = eye.x > m && eye.x < b.width - m && eye.y > m && eye.y < b.depth - m;
    let in_band = eye.z >= heights.0 && eye.z <= heights.1;
    let clear = scene.boxes.iter().all(|bx| {
        let grown = BoxObstacle {
            min: bx.min - Vec3::repeat(CAMERA_BOX_MARGIN),
            max: bx.max + Vec3::repeat(CAMERA_BOX_MARGIN),
        };
        !grown.contains(eye)
    });
    in_room && in_band && clear
}

/// Camera position on a jittered orbit around the room center.
fn orbit_eye(scene: &SyntheticScene, heights: (f64, f64), rng: &mut ChaCha8Rng) -> Vec3 {
    let b = &scene.bounds;
    let r = b.width.min(b.depth);
    loop {
        let rho = rng.gen_range(0.1 * r..=0.3 * r);
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let z = rng.gen_range(heights.0..=heights.1);
        let eye = Vec3::new(b.width / 2.0 + rho * theta.cos(), b.depth / 2.0 + rho * theta.sin(), z);
        if eye_allowed(scene, heights, &eye) {
            return eye;
        }
    }
}

/// Uniform direction within `max_deg` of `axis`.
fn cone_direction(axis: &Vec3, max_deg: f64, rng: &mut ChaCha8Rng) -> Vec3 {
    let cos_t = rng.gen_range(max_deg.to_radians().cos()..=1.0);
    let sin_t = (1.0 - cos_t * cos_t).sqrt();
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = axis.cross(&helper).normalize();
    let e2 = axis.cross(&e1);
    axis * cos_t + (e1 * phi.cos() + e2 * phi.sin()) * sin_t
}

fn face_samples(f: &GtFace) -> impl Iterator<Item = Vec3> + '_ {
    [-0.8, 0.0, 0.8].into_iter().flat_map(move |a| [-0.8, 0.0, 0.8].into_iter().map(move |b| f.point(a, b)))
}

/// Whether `view` sees some sample point of face `fi` head-on enough.
fn observes(scene: &SyntheticScene, view: &CameraView, fi: usize) -> bool {
    let f = &scene.faces[fi];
    let eye = view.pose.center();
    face_samples(f).any(|p| {
        let to_eye = eye - p;
        if f.normal.dot(&to_eye) <= 0.0 || angle_deg(&f.normal, &to_eye) > COVERAGE_MAX_DEG {
            return false;
        }
        let Some((u, v)) = view.project(&p) else {
            return false;
        };
        let inside = u >= 0.0 && v >= 0.0 && u < view.width as f64 && v < view.height as f64;
        inside && scene.visible(&eye, &p, fi)
    })
}

/// Per-face count of views that observe it.
pub fn coverage_counts(scene: &SyntheticScene, views: &[CameraView]) -> Vec<usize> {
    (0..scene.faces.len())
        .map(|fi| views.iter().filter(|v| observes(scene, v, fi)).count())
        .collect()
}

fn pose_towards(scene: &SyntheticScene, fi: usize, heights: (f64, f64), rng: &mut ChaCha8Rng) -> Pose {
    let reach = scene.bounds.diagonal();
    let f = &scene.faces[fi];
    for _ in 0..500 {
        let target = f.point(rng.gen_range(-0.8..=0.8), rng.gen_range(-0.8..=0.8));
        let dir = cone_direction(&f.normal, TARGET_MAX_DEG, rng);
        let eye = target + dir * rng.gen_range(0.5..=0.6 * reach);
        if eye_allowed(scene, heights, &eye) && scene.visible(&eye, &target, fi) {
            return Pose::look_at(&eye, &target, &Vec3::z());
        }
    }
    let eye = orbit_eye(scene, heights, rng);
    let mut target = scene.bounds.center();
    target.z = 0.0;
    Pose::look_at(&eye, &target, &Vec3::z())
}

fn probe_view(pose: &Pose, k: Intrinsics, w: u32, h: u32) -> CameraView {
    CameraView {
        id: 0,
        intrinsics: k,
        width: w,
        height: h,
        pose: *pose,
        target_depth: Vec::new(),
        target_normal: Vec::new(),
    }
}

/// Each view targets the least observed face so far, ties broken round-robin.
fn sample_poses(
    scene: &SyntheticScene,
    n_views: usize,
    image: (u32, u32),
    hfov: f64,
    heights: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> (Vec<Pose>, Vec<usize>) {
    let k = Intrinsics::from_hfov(image.0, image.1, hfov);
    let nf = scene.faces.len();
    let mut counts = vec![0usize; nf];
    let poses = (0..n_views)
        .map(|i| {
            let fi = (0..nf)
                .min_by_key(|&f| (counts[f], (f + nf - i % nf) % nf))
                .expect("room has faces");
            let pose = pose_towards(scene, fi, heights, rng);
            let view = probe_view(&pose, k, image.0, image.1);
            for (f, c) in counts.iter_mut().enumerate() {
                if observes(scene, &view, f) {
                    *c += 1;
                }
            }
            pose
        })
        .collect();
    (poses, counts)
}

/// Interior camera poses, each aimed at the least observed face so far from
/// within a cone around its normal. Re-drawn until every face is
/// observed by at least three views.
pub fn sample_trajectory(
    scene: &SyntheticScene,
    n_views: usize,
    image: (u32, u32),
    hfov_deg: f64,
    seed: u64,
) -> Result<Vec<Pose>> {
    if n_views < 1 {
        return Err(Error::Generation("n_views must be at least 1".into()));
    }
    let heights = height_range(scene)?;
    let mut uncovered = Vec::new();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (attempt as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03));
        let (poses, counts) = sample_poses(scene, n_views, image, hfov_deg, heights, &mut rng);
        uncovered = counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c < MIN_VIEWS_PER_FACE)
            .map(|(i, _)| scene.faces[i].id)
            .collect();
        if uncovered.is_empty() {
            return Ok(poses);
        }
    }
    Err(Error::Coverage {
        uncovered,
        attempts: MAX_ATTEMPTS,
    })
}

/// Exact per-pixel ground truth of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct GtMaps {
    pub depth: Vec<f64>,
    pub normal: Vec<Vec3>,
    pub instance: Vec<u32>,
}

/// Nearest face per pixel: z-depth, camera-facing camera-frame normal and
/// face id. Misses get depth 0, the zero normal and [`NO_INSTANCE`].
pub fn render_ground_truth(scene: &SyntheticScene, view: &CameraView) -> GtMaps {
    let n = view.pixel_count();
    let mut out = GtMaps {
        depth: vec![0.0; n],
        normal: vec![Vec3::zeros(); n],
        instance: vec![NO_INSTANCE; n],
    };
    let origin = view.pose.center();
    let r_t = view.pose.rotation.transpose();
    for v in 0..view.height {
        for u in 0..view.width {
            let idx = (v * view.width + u) as usize;
            let d_cam = view.camera_direction(u as f64, v as f64);
            let d = view.pose.rotation * d_cam;
            if let Some((fi, t)) = scene.first_hit(&origin, &d) {
                let f = &scene.faces[fi];
                let n_cam = r_t * f.normal;
                out.depth[idx] = t * d_cam.z;
                out.normal[idx] = if n_cam.dot(&d_cam) > 0.0 { -n_cam } else { n_cam };
                out.instance[idx] = f.id;
            }
        }
    }
    out
}

/// Supervised views of every trajectory pose, with optional depth noise.
pub fn render_views(scene: &SyntheticScene, cfg: &SynthConfig) -> Vec<(CameraView, Vec<u32>)> {
    let k = Intrinsics::from_hfov(cfg.image_width, cfg.image_height, cfg.hfov_deg);
    scene
        .poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let mut view = CameraView::unsupervised(i as u32, k, cfg.image_width, cfg.image_height, *pose);
            let gt = render_ground_truth(scene, &view);
            view.target_depth = gt.depth;
            view.target_normal = gt.normal;
            if cfg.depth_noise > 0.0 {
                let noise = Normal::new(0.0, cfg.depth_noise).expect("finite noise level");
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6E6F_6973_6500_0000 ^ i as u64);
                for d in view.target_depth.iter_mut().filter(|d| **d > 0.0) {
                    *d += noise.sample(&mut rng);
                }
            }
            (view, gt.instance)
        })
        .collect()
}

/// Room, boxes and a covering trajectory from one config.
pub fn generate(cfg: &SynthConfig) -> Result<SyntheticScene> {
    let mut scene = generate_box_room(cfg.width, cfg.depth, cfg.height, cfg.boxes, cfg.seed)?;
    scene.poses = sample_trajectory(&scene, cfg.views, (cfg.image_width, cfg.image_height), cfg.hfov_deg, cfg.seed)?;
    Ok(scene)
}
