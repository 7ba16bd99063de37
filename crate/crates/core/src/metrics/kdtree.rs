//! Static 3-d tree for nearest-neighbour queries.

use crate::geometry::Vec3;

const LEAF: usize = 8;

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vec3>,
    /// Point indices, arranged so every subrange `[lo, hi)` is a subtree
    /// whose splitting point sits at the midpoint.
    order: Vec<usize>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn new(points: Vec<Vec3>) -> Self {
        let n = points.len();
        let mut tree = KdTree {
            order: (0..n).collect(),
            axes: vec![0; n],
            points,
        };
        tree.build(0, n);
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi - lo <= LEAF {
            return;
        }
        let (mut min, mut max) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for &i in &self.order[lo..hi] {
            min = min.inf(&self.points[i]);
            max = max.sup(&self.points[i]);
        }
        let axis = (max - min).imax();
        let mid = (lo + hi) / 2;
        let pts = &self.points;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b)));
        self.axes[mid] = axis as u8;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    /// Index and distance of the nearest point. Ties go to the lower index.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        self.nearest_excluding(q, None)
    }

    /// Nearest point other than `skip`.
    pub fn nearest_excluding(&self, q: &Vec3, skip: Option<usize>) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, self.points.len(), q, skip, &mut best);
        (best.0 != usize::MAX).then(|| (best.0, best.1.sqrt()))
    }

    fn consider(&self, i: usize, q: &Vec3, skip: Option<usize>, best: &mut (usize, f64)) {
        if Some(i) == skip {
            return;
        }
        let d2 = (self.points[i] - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && i < best.0) {
            *best = (i, d2);
        }
    }

    fn search(&self, lo: usize, hi: usize, q: &Vec3, skip: Option<usize>, best: &mut (usize, f64)) {
        if hi - lo <= LEAF {
            for &i in &self.order[lo..hi] {
                self.consider(i, q, skip, best);
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.order[mid];
        let axis = self.axes[mid] as usize;
        self.consider(i, q, skip, best);
        let diff = q[axis] - self.points[i][axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(near.0, near.1, q, skip, best);
        if diff * diff <= best.1 {
            self.search(far.0, far.1, q, skip, best);
        }
    }
}
