//! Depth/normal rendering of rectangle primitives and its analytic adjoint.
//!
//! Each pixel ray is intersected with every candidate primitive, the hits
//! are weighted by the rectangle kernel, filtered, sorted front to back and
//! alpha-composited. Candidates come from a per-view tile binning of each
//! primitive's projected footprint, grown by the distance at which the kernel
//! falls below the weight floor. Tiles are processed in parallel; partial
//! gradient sums are reduced in tile order so results do not depend on the
//! thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{frame_vjp, CameraView, IntersectParams, PlaneFrame, PlanePrimitive, Ray, Vec3};
use crate::splatting::{falloff_margin, plane_splat_value, plane_splat_weight};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSettings {
    /// Nearest intersections kept per ray.
    pub max_intersections: usize,
    /// Set from the splat parameters during training.
    #[serde(skip)]
    pub weight_floor: f64,
    pub t_near: f64,
    pub parallel_eps: f64,
    pub tile_size: u32,
    /// Divide rendered depth and normal by the accumulated alpha.
    pub normalize_by_alpha: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            max_intersections: 30,
            weight_floor: 1e-4,
            t_near: 0.01,
            parallel_eps: 1e-8,
            tile_size: 16,
            normalize_by_alpha: false,
        }
    }
}

impl RenderSettings {
    pub fn intersect_params(&self) -> IntersectParams {
        IntersectParams {
            t_near: self.t_near,
            parallel_eps: self.parallel_eps,
        }
    }
}

/// Weights of the rendering loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha_normal: f64,
    pub alpha_depth: f64,
    /// Pixels whose rendered alpha is below this are left out of the loss.
    pub min_alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_normal: 5.0,
            alpha_depth: 1.0,
            min_alpha: 0.05,
        }
    }
}

/// One surviving ray hit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntersectionRecord {
    /// Position in the primitive slice.
    pub index: usize,
    pub id: u64,
    pub point: Vec3,
    pub z_cam: f64,
    pub weight: f64,
}

/// Hits of one ray, filtered by weight, sorted by depth and truncated.
pub fn gather_intersections(
    ray: &Ray,
    primitives: &[PlanePrimitive],
    lambda: f64,
    settings: &RenderSettings,
) -> Vec<IntersectionRecord> {
    let params = settings.intersect_params();
    let mut out: Vec<IntersectionRecord> = primitives
        .iter()
        .enumerate()
        .filter_map(|(index, prim)| {
            let frame = prim.frame();
            let hit = crate::geometry::intersect(ray, &prim.center, &frame, &params)?;
            let (px, py) = crate::splatting::project_local(&hit.point, &prim.center, &frame);
            let weight = plane_splat_weight(px, py, &prim.radii, lambda).weight;
            (weight >= settings.weight_floor).then_some(IntersectionRecord {
                index,
                id: prim.id,
                point: hit.point,
                z_cam: hit.z_cam,
                weight,
            })
        })
        .collect();
    out.sort_by(|a, b| a.z_cam.total_cmp(&b.z_cam).then(a.index.cmp(&b.index)));
    out.truncate(settings.max_intersections);
    out
}

/// Input to [`composite`]: depth, camera-facing normal and weight of one hit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlendSample {
    pub z: f64,
    pub normal: Vec3,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub depth: f64,
    pub normal: Vec3,
    pub alpha: f64,
    /// `T_j * w_j` per sample.
    pub blend: Vec<f64>,
}

/// Front-to-back compositing of depth-sorted samples.
pub fn composite(samples: &[BlendSample]) -> Composite {
    let mut out = Composite {
        depth: 0.0,
        normal: Vec3::zeros(),
        alpha: 0.0,
        blend: Vec::with_capacity(samples.len()),
    };
    let mut transmittance = 1.0;
    for s in samples {
        let b = transmittance * s.weight;
        out.depth += b * s.z;
        out.normal += s.normal * b;
        out.alpha += b;
        out.blend.push(b);
        transmittance *= 1.0 - s.weight;
    }
    out
}

/// Rendered depth (meters), camera-frame normal and accumulated alpha.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedMaps {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<f64>,
    pub normal: Vec<Vec3>,
    pub alpha: Vec<f64>,
}

impl RenderedMaps {
    fn empty(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        RenderedMaps {
            width,
            height,
            depth: vec![0.0; n],
            normal: vec![Vec3::zeros(); n],
            alpha: vec![0.0; n],
        }
    }
}

/// Loss value and its gradient with respect to the rendered maps.
#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub valid_pixels: usize,
    pub d_depth: Vec<f64>,
    pub d_normal: Vec<Vec3>,
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
fn pixel_in_loss(view: &CameraView, idx: usize, alpha: f64, weights: &LossWeights) -> bool {
    view.is_valid_pixel(idx) && alpha >= weights.min_alpha
}

/// Unnormalized loss of one pixel and its gradient.
#[inline]
fn pixel_loss(depth: f64, normal: &Vec3, t_depth: f64, t_normal: &Vec3, w: &LossWeights) -> (f64, f64, Vec3) {
    let cos_res = 1.0 - normal.dot(t_normal);
    let diff = normal - t_normal;
    let d_res = depth - t_depth;
    let loss = w.alpha_normal * cos_res.abs() + w.alpha_normal * diff.abs().sum() + w.alpha_depth * d_res.abs();
    let g_normal = -t_normal * (w.alpha_normal * sign(cos_res)) + diff.map(sign) * w.alpha_normal;
    (loss, w.alpha_depth * sign(d_res), g_normal)
}

/// Mean per-pixel loss over pixels with valid targets and enough coverage.
pub fn render_loss(maps: &RenderedMaps, view: &CameraView, weights: &LossWeights) -> LossEval {
    assert!(
        maps.width == view.width && maps.height == view.height,
        "rendered {}x{} vs target {}x{}",
        maps.width,
        maps.height,
        view.width,
        view.height
    );
    let n = view.pixel_count();
    let mut out = LossEval {
        loss: 0.0,
        valid_pixels: 0,
        d_depth: vec![0.0; n],
        d_normal: vec![Vec3::zeros(); n],
    };
    for idx in 0..n {
        if !pixel_in_loss(view, idx, maps.alpha[idx], weights) {
            continue;
        }
        let (l, gd, gn) = pixel_loss(
            maps.depth[idx],
            &maps.normal[idx],
            view.target_depth[idx],
            &view.target_normal[idx],
            weights,
        );
        out.loss += l;
        out.d_depth[idx] = gd;
        out.d_normal[idx] = gn;
        out.valid_pixels += 1;
    }
    if out.valid_pixels > 0 {
        let inv = 1.0 / out.valid_pixels as f64;
        out.loss *= inv;
        out.d_depth.iter_mut().for_each(|g| *g *= inv);
        out.d_normal.iter_mut().for_each(|g| *g *= inv);
    }
    out
}

/// Per-primitive loss gradient: 3 center, 4 quaternion, 4 radii partials.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PrimGrad {
    pub center: Vec3,
    pub rotation: [f64; 4],
    pub radii: [f64; 4],
}

impl PrimGrad {
    pub fn to_array(&self) -> [f64; 11] {
        let mut a = [0.0; 11];
        a[..3].copy_from_slice(self.center.as_slice());
        a[3..7].copy_from_slice(&self.rotation);
        a[7..].copy_from_slice(&self.radii);
        a
    }

    pub fn is_zero(&self) -> bool {
        self.to_array().iter().all(|v| *v == 0.0)
    }
}

/// Gradient accumulators plus the running radii-gradient statistics used by
/// plane splitting.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientBuffer {
    pub grads: Vec<PrimGrad>,
    /// Sum of `|∂L/∂r|` per radius since the last reset.
    pub radii_abs_sum: Vec<[f64; 4]>,
    /// Steps folded into `radii_abs_sum`.
    pub steps: u64,
}

impl GradientBuffer {
    pub fn new(primitive_count: usize) -> Self {
        GradientBuffer {
            grads: vec![PrimGrad::default(); primitive_count],
            radii_abs_sum: vec![[0.0; 4]; primitive_count],
            steps: 0,
        }
    }

    pub fn zero(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = PrimGrad::default());
    }

    /// Fold the current gradients into the running radii statistics.
    pub fn record_step(&mut self) {
        for (sum, g) in self.radii_abs_sum.iter_mut().zip(&self.grads) {
            for k in 0..4 {
                sum[k] += g.radii[k].abs();
            }
        }
        self.steps += 1;
    }

    pub fn reset_running(&mut self) {
        self.radii_abs_sum.iter_mut().for_each(|s| *s = [0.0; 4]);
        self.steps = 0;
    }

    /// Mean of `|∂L/∂r_x+|` and `|∂L/∂r_x-|` over the recorded steps.
    pub fn mean_x(&self, i: usize) -> f64 {
        self.running_mean(i, 0)
    }

    pub fn mean_y(&self, i: usize) -> f64 {
        self.running_mean(i, 2)
    }

    fn running_mean(&self, i: usize, slot: usize) -> f64 {
        if self.steps == 0 {
            return 0.0;
        }
        0.5 * (self.radii_abs_sum[i][slot] + self.radii_abs_sum[i][slot + 1]) / self.steps as f64
    }
}

/// Primitive data specialised to one camera.
#[derive(Clone, Copy, Debug)]
struct Prepared {
    index: u32,
    center: Vec3,
    frame: PlaneFrame,
    radii: [f64; 4],
    /// `(p - o)`, `(p - o)·n`, `(p - o)·v_x`, `(p - o)·v_y`
    rel: Vec3,
    rel_n: f64,
    rel_x: f64,
    rel_y: f64,
    flip: f64,
    normal_cam: Vec3,
    reach: [f64; 4],
}

struct ViewContext<'a> {
    view: &'a CameraView,
    dirs: Vec<Vec3>,
    z_per_t: Vec<f64>,
    prepared: Vec<Prepared>,
    tiles_x: u32,
    bins: Vec<Vec<u32>>,
    lambda: f64,
    settings: RenderSettings,
}

impl<'a> ViewContext<'a> {
    fn new(view: &'a CameraView, primitives: &[PlanePrimitive], lambda: f64, settings: &RenderSettings) -> Self {
        let (w, h) = (view.width, view.height);
        let n = view.pixel_count();
        let mut dirs = Vec::with_capacity(n);
        let mut z_per_t = Vec::with_capacity(n);
        for v in 0..h {
            for u in 0..w {
                let d = view.camera_direction(u as f64, v as f64);
                dirs.push(view.pose.rotation * d);
                z_per_t.push(d.z);
            }
        }
        let origin = view.pose.center();
        let margin = falloff_margin(lambda, settings.weight_floor);
        let r_t = view.pose.rotation.transpose();
        let prepared: Vec<Prepared> = primitives
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let frame = p.frame();
                let rel = p.center - origin;
                let rel_n = rel.dot(&frame.normal);
                let flip = if rel_n > 0.0 { -1.0 } else { 1.0 };
                Prepared {
                    index: i as u32,
                    center: p.center,
                    frame,
                    radii: p.radii,
                    rel,
                    rel_n,
                    rel_x: rel.dot(&frame.x_axis),
                    rel_y: rel.dot(&frame.y_axis),
                    flip,
                    normal_cam: r_t * (frame.normal * flip),
                    reach: p.radii.map(|r| r + margin),
                }
            })
            .collect();

        let ts = settings.tile_size.max(1);
        let tiles_x = w.div_ceil(ts);
        let tiles_y = h.div_ceil(ts);
        let mut ctx = ViewContext {
            view,
            dirs,
            z_per_t,
            prepared,
            tiles_x,
            bins: vec![Vec::new(); (tiles_x * tiles_y) as usize],
            lambda,
            settings: *settings,
        };
        ctx.bin_primitives();
        ctx
    }

    /// Pixel-index bounding box of a primitive's extended footprint.
    fn footprint(&self, p: &Prepared) -> Option<[i64; 4]> {
        let view = self.view;
        let [xp, xn, yp, yn] = p.reach;
        let f = &p.frame;
        let corners = [
            p.center + f.x_axis * xp + f.y_axis * yp,
            p.center - f.x_axis * xn + f.y_axis * yp,
            p.center - f.x_axis * xn - f.y_axis * yn,
            p.center + f.x_axis * xp - f.y_axis * yn,
        ];
        let cam: Vec<Vec3> = corners.iter().map(|c| view.pose.world_to_camera(c)).collect();

        // Hits satisfy t > t_near, hence z > t_near * min(z_per_t).
        let k = &view.intrinsics;
        let edge_x = (k.cx / k.fx).abs().max(((view.width as f64 - k.cx) / k.fx).abs());
        let edge_y = (k.cy / k.fy).abs().max(((view.height as f64 - k.cy) / k.fy).abs());
        let min_zpt = 1.0 / (1.0 + edge_x * edge_x + edge_y * edge_y).sqrt();
        let z_clip = 0.5 * self.settings.t_near * min_zpt;

        let mut poly: Vec<Vec3> = Vec::with_capacity(8);
        for i in 0..4 {
            let a = cam[i];
            let b = cam[(i + 1) % 4];
            let a_in = a.z >= z_clip;
            let b_in = b.z >= z_clip;
            if a_in {
                poly.push(a);
            }
            if a_in != b_in {
                let s = (z_clip - a.z) / (b.z - a.z);
                poly.push(a + (b - a) * s);
            }
        }
        if poly.is_empty() {
            return None;
        }
        let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for c in &poly {
            let z = c.z.max(z_clip);
            let u = k.fx * c.x / z + k.cx;
            let v = k.fy * c.y / z + k.cy;
            u0 = u0.min(u);
            u1 = u1.max(u);
            v0 = v0.min(v);
            v1 = v1.max(v);
        }
        // pixel i is centered at i + 0.5; one pixel of slack for rounding
        let lo = |a: f64| (a - 0.5).ceil() as i64 - 1;
        let hi = |a: f64| (a - 0.5).floor() as i64 + 1;
        let (x0, x1) = (lo(u0).max(0), hi(u1).min(view.width as i64 - 1));
        let (y0, y1) = (lo(v0).max(0), hi(v1).min(view.height as i64 - 1));
        (x0 <= x1 && y0 <= y1).then_some([x0, x1, y0, y1])
    }

    fn bin_primitives(&mut self) {
        let ts = self.settings.tile_size.max(1) as i64;
        let footprints: Vec<Option<[i64; 4]>> = self.prepared.iter().map(|p| self.footprint(p)).collect();
        for (p, fp) in self.prepared.iter().zip(footprints) {
            let Some([x0, x1, y0, y1]) = fp else { continue };
            for ty in (y0 / ts)..=(y1 / ts) {
                for tx in (x0 / ts)..=(x1 / ts) {
                    let tile = (ty as u32 * self.tiles_x + tx as u32) as usize;
                    if self.tile_may_hit(p, tile) {
                        self.bins[tile].push(p.index);
                    }
                }
            }
        }
    }

    /// Conservative test whether any pixel of `tile` can reach `p`'s
    /// extended rectangle. The tile's corner rays, padded by a pixel, cut the
    /// plane in a convex quad that is checked against the rectangle.
    fn tile_may_hit(&self, p: &Prepared, tile: usize) -> bool {
        let ts = self.settings.tile_size.max(1);
        let tx = tile as u32 % self.tiles_x;
        let ty = tile as u32 / self.tiles_x;
        let x1 = ((tx + 1) * ts).min(self.view.width);
        let y1 = ((ty + 1) * ts).min(self.view.height);
        // camera_direction adds half a pixel
        let us = [tx as f64 * ts as f64 - 1.5, x1 as f64 + 0.5];
        let vs = [ty as f64 * ts as f64 - 1.5, y1 as f64 + 0.5];
        let mut quad = [(0.0, 0.0); 4];
        for (k, (u, v)) in [(us[0], vs[0]), (us[1], vs[0]), (us[1], vs[1]), (us[0], vs[1])].into_iter().enumerate() {
            let d = self.view.pose.rotation * self.view.camera_direction(u, v);
            let denom = d.dot(&p.frame.normal);
            if denom.abs() < 1e-12 {
                return true;
            }
            let t = p.rel_n / denom;
            if t <= 0.0 {
                return true;
            }
            quad[k] = (t * d.dot(&p.frame.x_axis) - p.rel_x, t * d.dot(&p.frame.y_axis) - p.rel_y);
        }
        let [xp, xn, yp, yn] = p.reach;
        let slack = 1e-9 * (1.0 + xp + xn + yp + yn);
        let (lo_x, hi_x, lo_y, hi_y) = (-xn - slack, xp + slack, -yn - slack, yp + slack);
        if quad.iter().all(|q| q.0 > hi_x)
            || quad.iter().all(|q| q.0 < lo_x)
            || quad.iter().all(|q| q.1 > hi_y)
            || quad.iter().all(|q| q.1 < lo_y)
        {
            return false;
        }
        let rect = [(lo_x, lo_y), (hi_x, lo_y), (hi_x, hi_y), (lo_x, hi_y)];
        let orient = {
            let (a, b, c) = (quad[0], quad[1], quad[2]);
            (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
        };
        for k in 0..4 {
            let a = quad[k];
            let b = quad[(k + 1) % 4];
            let side = |q: &(f64, f64)| ((b.0 - a.0) * (q.1 - a.1) - (b.1 - a.1) * (q.0 - a.0)) * orient.signum();
            let scale = ((b.0 - a.0).abs() + (b.1 - a.1).abs()) * (hi_x - lo_x + hi_y - lo_y + 1.0);
            if rect.iter().all(|q| side(q) < -1e-9 * scale) {
                return false;
            }
        }
        true
    }

    fn tile_pixels(&self, tile: usize) -> impl Iterator<Item = usize> + '_ {
        let ts = self.settings.tile_size.max(1);
        let tx = tile as u32 % self.tiles_x;
        let ty = tile as u32 / self.tiles_x;
        let (w, h) = (self.view.width, self.view.height);
        let x1 = ((tx + 1) * ts).min(w);
        let y1 = ((ty + 1) * ts).min(h);
        (ty * ts..y1).flat_map(move |y| (tx * ts..x1).map(move |x| (y * w + x) as usize))
    }

    /// Surviving candidates of one pixel, sorted and truncated.
    fn gather(&self, idx: usize, bin: &[u32], out: &mut Vec<Cand>) {
        out.clear();
        let d = self.dirs[idx];
        let floor = self.settings.weight_floor;
        for (slot, &pi) in bin.iter().enumerate() {
            let p = &self.prepared[pi as usize];
            let denom = d.dot(&p.frame.normal);
            if denom.abs() < self.settings.parallel_eps {
                continue;
            }
            let t = p.rel_n / denom;
            if t <= self.settings.t_near {
                continue;
            }
            let px = t * d.dot(&p.frame.x_axis) - p.rel_x;
            let py = t * d.dot(&p.frame.y_axis) - p.rel_y;
            if px > p.reach[0] || -px > p.reach[1] || py > p.reach[2] || -py > p.reach[3] {
                continue;
            }
            let weight = plane_splat_value(px, py, &p.radii, self.lambda);
            if weight < floor {
                continue;
            }
            out.push(Cand {
                slot: slot as u32,
                prim: pi,
                t,
                denom,
                z: t * self.z_per_t[idx],
                px,
                py,
                weight,
            });
        }
        let by_depth = |a: &Cand, b: &Cand| a.z.total_cmp(&b.z).then(a.prim.cmp(&b.prim));
        let m = self.settings.max_intersections;
        if out.len() > m {
            out.select_nth_unstable_by(m - 1, by_depth);
            out.truncate(m);
        }
        out.sort_unstable_by(by_depth);
    }

    fn shade(&self, cands: &[Cand]) -> PixelOut {
        let mut out = PixelOut::default();
        let mut transmittance = 1.0;
        for c in cands {
            if transmittance == 0.0 {
                break;
            }
            let b = transmittance * c.weight;
            out.depth += b * c.z;
            out.normal += self.prepared[c.prim as usize].normal_cam * b;
            out.alpha += b;
            transmittance *= 1.0 - c.weight;
        }
        if self.settings.normalize_by_alpha && out.alpha > 0.0 {
            out.depth /= out.alpha;
            out.normal /= out.alpha;
        }
        out
    }

    /// Adjoint of `shade` for one pixel given the gradient of its outputs.
    fn backprop(&self, idx: usize, cands: &[Cand], shaded: &PixelOut, g_depth: f64, g_normal: Vec3, acc: &mut [[f64; 16]]) {
        if cands.is_empty() {
            return;
        }
        let (mut gd, mut gn, mut ga) = (g_depth, g_normal, 0.0);
        if self.settings.normalize_by_alpha {
            if shaded.alpha <= 0.0 {
                return;
            }
            let inv = 1.0 / shaded.alpha;
            ga = -(g_depth * shaded.depth + g_normal.dot(&shaded.normal)) * inv;
            gd *= inv;
            gn *= inv;
        }

        // remainder composites behind each record
        let m = cands.len();
        let mut rest = vec![(0.0f64, Vec3::zeros(), 0.0f64); m];
        for j in (0..m.saturating_sub(1)).rev() {
            let c = &cands[j + 1];
            let w = c.weight;
            let (rd, rn, ra) = rest[j + 1];
            let n = self.prepared[c.prim as usize].normal_cam;
            rest[j] = (w * c.z + (1.0 - w) * rd, n * w + rn * (1.0 - w), w + (1.0 - w) * ra);
        }

        let d = self.dirs[idx];
        let r_wc = &self.view.pose.rotation;
        let mut transmittance = 1.0;
        for (j, c) in cands.iter().enumerate() {
            if transmittance == 0.0 {
                break;
            }
            let p = &self.prepared[c.prim as usize];
            let w = c.weight;
            let (rd, rn, ra) = rest[j];
            let g_w = transmittance * (gd * (c.z - rd) + gn.dot(&(p.normal_cam - rn)) + ga * (1.0 - ra));
            let tw = transmittance * w;
            let g_z = gd * tw;
            let g_ncam = gn * tw;

            let e = plane_splat_weight(c.px, c.py, &p.radii, self.lambda);
            let g_px = g_w * e.d_px;
            let g_py = g_w * e.d_py;
            let a = &mut acc[c.slot as usize];
            for k in 0..4 {
                a[12 + k] += g_w * e.d_radii[k];
            }

            let fr = &p.frame;
            let g_t = g_z * self.z_per_t[idx] + g_px * d.dot(&fr.x_axis) + g_py * d.dot(&fr.y_axis);
            let x_rel = d * c.t - p.rel; // x - p
            let g_p = -(fr.x_axis * g_px + fr.y_axis * g_py) + fr.normal * (g_t / c.denom);
            let g_vx = x_rel * g_px;
            let g_vy = x_rel * g_py;
            let g_n = -x_rel * (g_t / c.denom) + (r_wc * g_ncam) * p.flip;
            for k in 0..3 {
                a[k] += g_p[k];
                a[3 + k] += g_vx[k];
                a[6 + k] += g_vy[k];
                a[9 + k] += g_n[k];
            }
            transmittance *= 1.0 - w;
        }
    }

    fn tile_count(&self) -> usize {
        self.bins.len()
    }
}

#[derive(Clone, Copy, Debug)]
struct Cand {
    slot: u32,
    prim: u32,
    t: f64,
    denom: f64,
    z: f64,
    px: f64,
    py: f64,
    weight: f64,
}

#[derive(Clone, Copy, Debug, Default)]
struct PixelOut {
    depth: f64,
    normal: Vec3,
    alpha: f64,
}

/// Render depth, normal and alpha maps of one view.
pub fn render_view(view: &CameraView, primitives: &[PlanePrimitive], lambda: f64, settings: &RenderSettings) -> RenderedMaps {
    let mut maps = RenderedMaps::empty(view.width, view.height);
    if primitives.is_empty() || view.pixel_count() == 0 {
        return maps;
    }
    let ctx = ViewContext::new(view, primitives, lambda, settings);
    let tiles: Vec<Vec<(usize, PixelOut)>> = (0..ctx.tile_count())
        .into_par_iter()
        .map(|tile| {
            let bin = &ctx.bins[tile];
            let mut cands = Vec::new();
            ctx.tile_pixels(tile)
                .map(|idx| {
                    if bin.is_empty() {
                        return (idx, PixelOut::default());
                    }
                    ctx.gather(idx, bin, &mut cands);
                    (idx, ctx.shade(&cands))
                })
                .collect()
        })
        .collect();
    for (idx, px) in tiles.into_iter().flatten() {
        maps.depth[idx] = px.depth;
        maps.normal[idx] = px.normal;
        maps.alpha[idx] = px.alpha;
    }
    maps
}

fn finish_gradients(
    ctx: &ViewContext,
    primitives: &[PlanePrimitive],
    tiles: Vec<Vec<[f64; 16]>>,
    scale: f64,
    grads: &mut GradientBuffer,
) -> Result<()> {
    let mut total = vec![[0.0f64; 16]; primitives.len()];
    for (tile, acc) in tiles.into_iter().enumerate() {
        for (slot, a) in acc.iter().enumerate() {
            let t = &mut total[ctx.bins[tile][slot] as usize];
            for k in 0..16 {
                t[k] += a[k];
            }
        }
    }
    for (i, (prim, a)) in primitives.iter().zip(&total).enumerate() {
        if a.iter().all(|v| *v == 0.0) {
            continue;
        }
        let v = |o: usize| Vec3::new(a[o], a[o + 1], a[o + 2]) * scale;
        let rot = frame_vjp(&prim.rotation, &v(3), &v(6), &v(9));
        let g = &mut grads.grads[i];
        g.center += v(0);
        for k in 0..4 {
            g.rotation[k] += rot[k];
            g.radii[k] += a[12 + k] * scale;
        }
        if !g.to_array().iter().all(|x| x.is_finite()) {
            return Err(Error::NonFiniteGradient { id: prim.id });
        }
    }
    Ok(())
}

/// Accumulate `∂L/∂θ` for every primitive into `grads` given the map
/// gradients in `loss`.
pub fn backward(
    view: &CameraView,
    primitives: &[PlanePrimitive],
    lambda: f64,
    settings: &RenderSettings,
    loss: &LossEval,
    grads: &mut GradientBuffer,
) -> Result<()> {
    assert_eq!(grads.grads.len(), primitives.len(), "gradient buffer size");
    if primitives.is_empty() {
        return Ok(());
    }
    let ctx = ViewContext::new(view, primitives, lambda, settings);
    let tiles: Vec<Vec<[f64; 16]>> = (0..ctx.tile_count())
        .into_par_iter()
        .map(|tile| {
            let bin = &ctx.bins[tile];
            let mut acc = vec![[0.0; 16]; bin.len()];
            if bin.is_empty() {
                return acc;
            }
            let mut cands = Vec::new();
            for idx in ctx.tile_pixels(tile) {
                let (gd, gn) = (loss.d_depth[idx], loss.d_normal[idx]);
                if gd == 0.0 && gn == Vec3::zeros() {
                    continue;
                }
                ctx.gather(idx, bin, &mut cands);
                let shaded = ctx.shade(&cands);
                ctx.backprop(idx, &cands, &shaded, gd, gn, &mut acc);
            }
            acc
        })
        .collect();
    finish_gradients(&ctx, primitives, tiles, 1.0, grads)
}

/// Render, evaluate the loss and accumulate its gradient in a single pass.
///
/// Equivalent to [`render_view`], [`render_loss`] and [`backward`] in
/// sequence; the per-pixel gradients are normalized once at the end.
/// Returns the loss and the number of pixels it covers.
pub fn forward_backward(
    view: &CameraView,
    primitives: &[PlanePrimitive],
    lambda: f64,
    settings: &RenderSettings,
    weights: &LossWeights,
    grads: &mut GradientBuffer,
) -> Result<(f64, usize)> {
    assert_eq!(grads.grads.len(), primitives.len(), "gradient buffer size");
    if primitives.is_empty() {
        return Ok((0.0, 0));
    }
    let ctx = ViewContext::new(view, primitives, lambda, settings);
    let tiles: Vec<(Vec<[f64; 16]>, f64, usize)> = (0..ctx.tile_count())
        .into_par_iter()
        .map(|tile| {
            let bin = &ctx.bins[tile];
            let mut acc = vec![[0.0; 16]; bin.len()];
            let (mut loss, mut count) = (0.0, 0usize);
            let mut cands = Vec::new();
            for idx in ctx.tile_pixels(tile) {
                let shaded = if bin.is_empty() {
                    cands.clear();
                    PixelOut::default()
                } else {
                    ctx.gather(idx, bin, &mut cands);
                    ctx.shade(&cands)
                };
                if !pixel_in_loss(view, idx, shaded.alpha, weights) {
                    continue;
                }
                let (l, gd, gn) = pixel_loss(
                    shaded.depth,
                    &shaded.normal,
                    view.target_depth[idx],
                    &view.target_normal[idx],
                    weights,
                );
                loss += l;
                count += 1;
                ctx.backprop(idx, &cands, &shaded, gd, gn, &mut acc);
            }
            (acc, loss, count)
        })
        .collect();
    let count: usize = tiles.iter().map(|t| t.2).sum();
    let loss: f64 = tiles.iter().map(|t| t.1).sum();
    if count == 0 {
        return Ok((0.0, 0));
    }
    let scale = 1.0 / count as f64;
    let accs = tiles.into_iter().map(|t| t.0).collect();
    finish_gradients(&ctx, primitives, accs, scale, grads)?;
    Ok((loss * scale, count))
}
