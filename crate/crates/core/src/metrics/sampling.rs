use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{PlanePrimitive, Vec3};
use crate::optimizer::PlaneInstance;
use crate::synthetic::GtFace;

use super::SampledSurface;

/// Labeled rectangle with asymmetric extents `[u+, u-, v+, v-]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleRect {
    pub center: Vec3,
    pub u_axis: Vec3,
    pub v_axis: Vec3,
    pub extents: [f64; 4],
    pub label: u32,
}

impl SampleRect {
    pub fn area(&self) -> f64 {
        (self.extents[0] + self.extents[1]) * (self.extents[2] + self.extents[3])
    }

    pub fn from_primitive(p: &PlanePrimitive, label: u32) -> Self {
        let f = p.frame();
        SampleRect {
            center: p.center,
            u_axis: f.x_axis,
            v_axis: f.y_axis,
            extents: p.radii,
            label,
        }
    }

    pub fn from_face(f: &GtFace) -> Self {
        SampleRect {
            center: f.center,
            u_axis: f.u_axis,
            v_axis: f.v_axis,
            extents: [f.half_u, f.half_u, f.half_v, f.half_v],
            label: f.id,
        }
    }
}

/// Member rectangles of every instance, labeled by instance id.
pub fn instance_rects(instances: &[PlaneInstance], primitives: &[PlanePrimitive]) -> Vec<SampleRect> {
    let labels = crate::optimizer::instance_labels(instances, primitives);
    primitives
        .iter()
        .zip(labels)
        .map(|(p, l)| SampleRect::from_primitive(p, l))
        .collect()
}

pub fn face_rects(faces: &[GtFace]) -> Vec<SampleRect> {
    faces.iter().map(SampleRect::from_face).collect()
}

/// Jittered stratified samples, `round(area * density)` per rectangle.
pub fn sample_rects(rects: &[SampleRect], density: f64, seed: u64) -> Result<SampledSurface> {
    if !(density > 0.0) {
        return Err(Error::InvalidInput(format!("sampling density must be positive, got {density}")));
    }
    let total: f64 = rects.iter().map(|r| r.area()).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("nothing to sample: zero total area".into()));
    }
    let mut out = SampledSurface::default();
    for (ordinal, r) in rects.iter().enumerate() {
        let count = (r.area() * density).round() as usize;
        if count == 0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (ordinal as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let len_u = r.extents[0] + r.extents[1];
        let len_v = r.extents[2] + r.extents[3];
        let gu = ((count as f64 * len_u / len_v).sqrt().ceil() as usize).clamp(1, count);
        let gv = count.div_ceil(gu);
        let cells = index::sample(&mut rng, gu * gv, count).into_vec();
        for c in cells {
            let (i, j) = (c % gu, c / gu);
            let a = (i as f64 + rng.gen::<f64>()) / gu as f64;
            let b = (j as f64 + rng.gen::<f64>()) / gv as f64;
            let pu = -r.extents[1] + a * len_u;
            let pv = -r.extents[3] + b * len_v;
            out.points.push(r.center + r.u_axis * pu + r.v_axis * pv);
            out.labels.push(r.label);
        }
    }
    Ok(out)
}
