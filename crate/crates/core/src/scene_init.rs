//! Initial primitive sets: sampled from the back-projected depth targets, or
//! spread over the scene's bounding sphere.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraView, PlanePrimitive, Quat, Vec3, RADII_FLOOR};
use crate::metrics::kdtree::KdTree;
use crate::synthetic::GtFace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Depth,
    Sphere,
    /// One primitive per ground-truth face (synthetic datasets only).
    Gt,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    pub mode: InitMode,
    pub n_primitives: usize,
    pub radius_scale: f64,
    pub sphere_radius_value: f64,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            mode: InitMode::Depth,
            n_primitives: 2000,
            radius_scale: 0.5,
            sphere_radius_value: 0.05,
            seed: 0,
        }
    }
}

/// Initial primitives and the point the merge offsets are measured from.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialScene {
    pub primitives: Vec<PlanePrimitive>,
    pub scene_center: Vec3,
}

#[derive(Clone, Copy, Debug)]
struct Bounds {
    min: Vec3,
    max: Vec3,
}

impl Bounds {
    fn empty() -> Self {
        Bounds {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn add(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn is_empty(&self) -> bool {
        self.min.x > self.max.x
    }

    fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }
}

fn valid_pixels(view: &CameraView) -> impl Iterator<Item = usize> + '_ {
    (0..view.pixel_count()).filter(|&i| view.is_valid_pixel(i))
}

fn depth_bounds(views: &[CameraView]) -> Bounds {
    let mut b = Bounds::empty();
    for v in views {
        for i in valid_pixels(v) {
            b.add(&v.back_project(i, v.target_depth[i]));
        }
    }
    b
}

/// Primitives centered on uniformly sampled back-projected target pixels,
/// oriented by the target normals and sized by nearest-neighbour spacing.
pub fn init_from_depth(views: &[CameraView], cfg: &InitConfig) -> Result<InitialScene> {
    if cfg.n_primitives < 1 {
        return Err(Error::Init("n_primitives must be at least 1".into()));
    }
    let counts: Vec<usize> = views.iter().map(|v| valid_pixels(v).count()).collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Init("no valid depth in any view".into()));
    }
    let n = cfg.n_primitives.min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut picks = index::sample(&mut rng, total, n).into_vec();
    picks.sort_unstable();

    // walk the valid pixels in order, picking the sampled ranks
    let mut samples: Vec<(Vec3, Vec3)> = Vec::with_capacity(n);
    let mut next = picks.iter().peekable();
    let mut rank = 0usize;
    'views: for (v, &count) in views.iter().zip(&counts) {
        if next.peek().is_none() {
            break;
        }
        if rank + count <= **next.peek().unwrap() {
            rank += count;
            continue;
        }
        for i in valid_pixels(v) {
            while next.peek() == Some(&&rank) {
                next.next();
                let point = v.back_project(i, v.target_depth[i]);
                let normal = (v.pose.rotation * v.target_normal[i]).normalize();
                samples.push((point, normal));
            }
            rank += 1;
            if next.peek().is_none() {
                break 'views;
            }
        }
    }
    debug_assert_eq!(samples.len(), n);

    let bounds = depth_bounds(views);
    let centers: Vec<Vec3> = samples.iter().map(|s| s.0).collect();
    let tree = KdTree::new(centers.clone());
    let primitives = samples
        .iter()
        .enumerate()
        .map(|(i, (c, normal))| {
            let r = match tree.nearest_excluding(c, Some(i)) {
                Some((_, d)) => cfg.radius_scale * d,
                None => 0.05 * bounds.diagonal(),
            }
            .max(RADII_FLOOR);
            PlanePrimitive::new(i as u64, *c, Quat::from_z_to(normal), [r; 4])
        })
        .collect();
    Ok(InitialScene {
        primitives,
        scene_center: bounds.center(),
    })
}

/// Primitives on a Fibonacci lattice over the bounding sphere of the depth
/// points and camera centers, facing the sphere center.
pub fn init_sphere(views: &[CameraView], cfg: &InitConfig) -> Result<InitialScene> {
    if cfg.n_primitives < 1 {
        return Err(Error::Init("n_primitives must be at least 1".into()));
    }
    let mut bounds = depth_bounds(views);
    for v in views {
        bounds.add(&v.pose.center());
    }
    if bounds.is_empty() {
        return Err(Error::Init("no views to bound".into()));
    }
    let center = bounds.center();
    let radius = 0.5 * bounds.diagonal();
    if !(radius > 1e-9) {
        return Err(Error::Init(format!("degenerate scene bounds (radius {radius})")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let g: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
    let spin = Quat::from_array(g).normalized();

    let n = cfg.n_primitives;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let primitives = (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let ring = (1.0 - y * y).max(0.0).sqrt();
            let phi = golden * i as f64;
            let dir = spin.rotate(&Vec3::new(ring * phi.cos(), y, ring * phi.sin())).normalize();
            PlanePrimitive::new(
                i as u64,
                center + dir * radius,
                Quat::from_z_to(&-dir),
                [cfg.sphere_radius_value; 4],
            )
        })
        .collect();
    Ok(InitialScene {
        primitives,
        scene_center: center,
    })
}

/// One primitive lying exactly on each ground-truth face.
pub fn init_from_faces(faces: &[GtFace], scene_center: Vec3) -> Result<InitialScene> {
    if faces.is_empty() {
        return Err(Error::Init("no ground-truth planes to initialize from".into()));
    }
    Ok(InitialScene {
        primitives: faces.iter().enumerate().map(|(i, f)| f.to_primitive(i as u64)).collect(),
        scene_center,
    })
}

/// Initial scene for `cfg.mode`. Ground-truth mode needs `gt`.
pub fn initialize(views: &[CameraView], gt: Option<(&[GtFace], Vec3)>, cfg: &InitConfig) -> Result<InitialScene> {
    match cfg.mode {
        InitMode::Depth => init_from_depth(views, cfg),
        InitMode::Sphere => init_sphere(views, cfg),
        InitMode::Gt => {
            let (faces, center) = gt.ok_or_else(|| Error::Init("gt mode needs a dataset with ground-truth planes".into()))?;
            init_from_faces(faces, center)
        }
    }
}
