use serde::{Deserialize, Serialize};

use crate::geometry::{PlanePrimitive, Vec3};

/// Thresholds of the merge graph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MergeParams {
    pub normal_deg: f64,
    pub offset: f64,
    /// `None` drops the rectangle-distance gate.
    pub adjacency: Option<f64>,
}

impl Default for MergeParams {
    fn default() -> Self {
        MergeParams {
            normal_deg: 25.0,
            offset: 0.1,
            adjacency: Some(0.05),
        }
    }
}

/// A connected group of merged primitives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneInstance {
    pub id: u32,
    /// Primitive ids, in scene order.
    pub members: Vec<u64>,
    pub normal: [f64; 3],
    /// Distance from the scene center to the instance plane.
    pub offset: f64,
    pub area: f64,
}

impl PlaneInstance {
    pub fn normal(&self) -> Vec3 {
        Vec3::from(self.normal)
    }
}

/// `|(p - c)·n|`
pub fn plane_offset(prim: &PlanePrimitive, scene_center: &Vec3) -> f64 {
    (prim.center - scene_center).dot(&prim.frame().normal).abs()
}

/// Rectangle as corner list plus in-plane frame, for distance queries.
#[derive(Clone, Copy, Debug)]
struct Rect {
    center: Vec3,
    x: Vec3,
    y: Vec3,
    n: Vec3,
    radii: [f64; 4],
    corners: [Vec3; 4],
}

impl Rect {
    fn new(p: &PlanePrimitive) -> Self {
        let f = p.frame();
        Rect {
            center: p.center,
            x: f.x_axis,
            y: f.y_axis,
            n: f.normal,
            radii: p.radii,
            corners: p.corners(),
        }
    }

    fn closest_point(&self, q: &Vec3) -> Vec3 {
        let d = q - self.center;
        let u = d.dot(&self.x).clamp(-self.radii[1], self.radii[0]);
        let v = d.dot(&self.y).clamp(-self.radii[3], self.radii[2]);
        self.center + self.x * u + self.y * v
    }

    fn contains_in_plane(&self, q: &Vec3, tol: f64) -> bool {
        let d = q - self.center;
        let u = d.dot(&self.x);
        let v = d.dot(&self.y);
        u <= self.radii[0] + tol && -u <= self.radii[1] + tol && v <= self.radii[2] + tol && -v <= self.radii[3] + tol
    }

    /// Whether segment `a b` passes through the rectangle's plane inside it.
    fn pierced_by(&self, a: &Vec3, b: &Vec3) -> bool {
        let da = (a - self.center).dot(&self.n);
        let db = (b - self.center).dot(&self.n);
        if da == 0.0 && db == 0.0 {
            // coplanar segments are handled by the boundary distances
            return false;
        }
        if da * db > 0.0 {
            return false;
        }
        let s = da / (da - db);
        self.contains_in_plane(&(a + (b - a) * s), 1e-12)
    }
}

/// Closest distance between segments `p1 q1` and `p2 q2`.
pub fn segment_distance(p1: &Vec3, q1: &Vec3, p2: &Vec3, q2: &Vec3) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    const EPS: f64 = 1e-18;
    let (s, t) = if a <= EPS && e <= EPS {
        (0.0, 0.0)
    } else if a <= EPS {
        (0.0, (f / e).clamp(0.0, 1.0))
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            ((-c / a).clamp(0.0, 1.0), 0.0)
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s = if denom > EPS { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
            (s, t)
        }
    };
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

/// Minimum distance between two rectangles (0 when they touch or cross).
pub fn rectangle_distance(a: &PlanePrimitive, b: &PlanePrimitive) -> f64 {
    let ra = Rect::new(a);
    let rb = Rect::new(b);
    for (r, other) in [(&ra, &rb), (&rb, &ra)] {
        for i in 0..4 {
            if r.pierced_by(&other.corners[i], &other.corners[(i + 1) % 4]) {
                return 0.0;
            }
        }
    }
    let mut best = f64::INFINITY;
    for i in 0..4 {
        let (a0, a1) = (ra.corners[i], ra.corners[(i + 1) % 4]);
        for j in 0..4 {
            let (b0, b1) = (rb.corners[j], rb.corners[(j + 1) % 4]);
            best = best.min(segment_distance(&a0, &a1, &b0, &b1));
        }
        best = best.min((ra.corners[i] - rb.closest_point(&ra.corners[i])).norm());
        best = best.min((rb.corners[i] - ra.closest_point(&rb.corners[i])).norm());
    }
    best
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Whether two primitives are joined by a merge-graph edge.
pub fn mergeable(a: &PlanePrimitive, b: &PlanePrimitive, scene_center: &Vec3, params: &MergeParams) -> bool {
    let na = a.frame().normal;
    let nb = b.frame().normal;
    let cos = na.dot(&nb).abs().min(1.0);
    if cos.acos().to_degrees() >= params.normal_deg {
        return false;
    }
    if (plane_offset(a, scene_center) - plane_offset(b, scene_center)).abs() >= params.offset {
        return false;
    }
    match params.adjacency {
        Some(limit) => rectangle_distance(a, b) < limit,
        None => true,
    }
}

/// Group primitives into plane instances by connected components of the
/// merge graph. Instances are numbered by their first member's position.
pub fn merge_planes(primitives: &[PlanePrimitive], scene_center: &Vec3, params: &MergeParams) -> Vec<PlaneInstance> {
    let n = primitives.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if find(&mut parent, i) == find(&mut parent, j) {
                continue;
            }
            if mergeable(&primitives[i], &primitives[j], scene_center, params) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push(i);
    }

    groups
        .into_iter()
        .enumerate()
        .map(|(id, members)| {
            let largest = members
                .iter()
                .copied()
                .max_by(|&a, &b| primitives[a].area().total_cmp(&primitives[b].area()).then(b.cmp(&a)))
                .expect("non-empty group");
            let reference = primitives[largest].frame().normal;
            let mut normal = Vec3::zeros();
            let mut offset = 0.0;
            let mut area = 0.0;
            for &m in &members {
                let p = &primitives[m];
                let a = p.area();
                let nm = p.frame().normal;
                normal += if nm.dot(&reference) < 0.0 { -nm } else { nm } * a;
                offset += plane_offset(p, scene_center) * a;
                area += a;
            }
            let normal = normal.try_normalize(0.0).unwrap_or(reference);
            PlaneInstance {
                id: id as u32,
                members: members.iter().map(|&m| primitives[m].id).collect(),
                normal: normal.into(),
                offset: if area > 0.0 { offset / area } else { 0.0 },
                area,
            }
        })
        .collect()
}

/// Instance id of every primitive, in scene order.
pub fn instance_labels(instances: &[PlaneInstance], primitives: &[PlanePrimitive]) -> Vec<u32> {
    let lookup: std::collections::HashMap<u64, u32> = instances
        .iter()
        .flat_map(|inst| inst.members.iter().map(move |&m| (m, inst.id)))
        .collect();
    primitives
        .iter()
        .map(|p| *lookup.get(&p.id).expect("primitive belongs to an instance"))
        .collect()
}
