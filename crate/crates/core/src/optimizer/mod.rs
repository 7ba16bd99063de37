//! Per-scene optimization: Adam updates over sampled views, periodic plane
//! splitting and the final plane merge.

mod adam;
mod merge;
mod split;

pub use adam::{AdamHyper, AdamState};
pub use merge::{instance_labels, merge_planes, mergeable, plane_offset, rectangle_distance, segment_distance, MergeParams, PlaneInstance};
pub use split::{split_decision, split_primitive, SplitAxis};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraView, PlanePrimitive, Quat, Vec3};
use crate::renderer::{forward_backward, GradientBuffer, LossWeights, RenderSettings};
use crate::splatting::SplatParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub iterations: u64,
    pub lr_center: f64,
    pub lr_radii: f64,
    pub lr_rotation: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub splitting: bool,
    pub split_interval: u64,
    pub split_grad_threshold: f64,
    /// Independent positive and negative extents; off ties `r+ = r-`.
    pub double_radii: bool,
    pub merge_normal_deg: f64,
    pub merge_offset: f64,
    pub merge_adjacency: f64,
    pub merge_use_adjacency: bool,
    pub views_per_step: usize,
    pub radii_floor: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            iterations: 5000,
            lr_center: 0.001,
            lr_radii: 0.001,
            lr_rotation: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            splitting: true,
            split_interval: 1000,
            split_grad_threshold: 0.2,
            double_radii: true,
            merge_normal_deg: 25.0,
            merge_offset: 0.1,
            merge_adjacency: 0.05,
            merge_use_adjacency: true,
            views_per_step: 1,
            radii_floor: crate::geometry::RADII_FLOOR,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let lrs = [self.lr_center, self.lr_radii, self.lr_rotation];
        if lrs.iter().any(|lr| !(*lr > 0.0)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.split_interval < 1 {
            return Err(Error::Config("split_interval must be at least 1".into()));
        }
        if self.views_per_step < 1 {
            return Err(Error::Config("views_per_step must be at least 1".into()));
        }
        if !(self.radii_floor > 0.0) {
            return Err(Error::Config("radii_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn merge_params(&self) -> MergeParams {
        MergeParams {
            normal_deg: self.merge_normal_deg,
            offset: self.merge_offset,
            adjacency: self.merge_use_adjacency.then_some(self.merge_adjacency),
        }
    }

    fn hyper(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    fn learning_rates(&self) -> [f64; 11] {
        let mut lr = [0.0; 11];
        lr[..3].fill(self.lr_center);
        lr[3..7].fill(self.lr_rotation);
        lr[7..].fill(self.lr_radii);
        lr
    }
}

/// Everything the training loop reads.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainConfig {
    pub splat: SplatParams,
    pub render: RenderSettings,
    pub loss: LossWeights,
    pub optim: OptimConfig,
}

impl TrainConfig {
    /// Render settings with the splat weight floor applied.
    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            weight_floor: self.splat.weight_floor,
            ..self.render
        }
    }
}

/// Full optimization state: the primitives plus everything needed to
/// continue the run bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub primitives: Vec<PlanePrimitive>,
    pub adam: Vec<AdamState>,
    pub grads: GradientBuffer,
    /// Next iteration to run.
    pub iteration: u64,
    pub next_id: u64,
    pub scene_center: Vec3,
}

impl OptimState {
    pub fn new(primitives: Vec<PlanePrimitive>, scene_center: Vec3) -> Self {
        let n = primitives.len();
        let next_id = primitives.iter().map(|p| p.id + 1).max().unwrap_or(0);
        OptimState {
            primitives,
            adam: vec![AdamState::default(); n],
            grads: GradientBuffer::new(n),
            iteration: 0,
            next_id,
            scene_center,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: u64,
    pub loss: f64,
    pub lambda: f64,
    pub primitives: usize,
}

/// View index used for the `k`-th sample of iteration `ite`.
///
/// Views are drawn without replacement; every epoch uses a fresh seeded
/// permutation, so the choice depends only on `(seed, ite, k)`.
pub fn sample_view(ite: u64, k: usize, views_per_step: usize, n_views: usize, seed: u64) -> usize {
    let pos = ite * views_per_step as u64 + k as u64;
    let epoch = pos / n_views as u64;
    let mut order: Vec<usize> = (0..n_views).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order[(pos % n_views as u64) as usize]
}

fn to_params(p: &PlanePrimitive) -> [f64; 11] {
    let mut a = [0.0; 11];
    a[..3].copy_from_slice(p.center.as_slice());
    a[3..7].copy_from_slice(&p.rotation.to_array());
    a[7..].copy_from_slice(&p.radii);
    a
}

fn from_params(p: &mut PlanePrimitive, a: &[f64; 11], radii_floor: f64) {
    p.center = Vec3::new(a[0], a[1], a[2]);
    let q = Quat::new(a[3], a[4], a[5], a[6]);
    p.rotation = if q.norm() > 0.0 { q.normalized() } else { Quat::IDENTITY };
    for k in 0..4 {
        p.radii[k] = a[7 + k].max(radii_floor);
    }
}

/// One optimization step at iteration `state.iteration`. Returns the loss.
pub fn step(state: &mut OptimState, views: &[CameraView], cfg: &TrainConfig) -> Result<f64> {
    assert!(!views.is_empty(), "no views");
    let ite = state.iteration;
    let o = &cfg.optim;
    let lambda = cfg.splat.lambda(ite);
    let settings = cfg.render_settings();
    state.grads.zero();
    let mut loss = 0.0;
    for k in 0..o.views_per_step {
        let v = &views[sample_view(ite, k, o.views_per_step, views.len(), o.seed)];
        let (l, _) = forward_backward(v, &state.primitives, lambda, &settings, &cfg.loss, &mut state.grads)?;
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss {
                loss: l,
                iteration: ite,
                view: v.id,
            });
        }
        loss += l;
    }
    let inv = 1.0 / o.views_per_step as f64;
    loss *= inv;
    if o.views_per_step > 1 {
        for g in state.grads.grads.iter_mut() {
            g.center *= inv;
            g.rotation.iter_mut().for_each(|x| *x *= inv);
            g.radii.iter_mut().for_each(|x| *x *= inv);
        }
    }
    if !o.double_radii {
        for g in state.grads.grads.iter_mut() {
            let x = g.radii[0] + g.radii[1];
            let y = g.radii[2] + g.radii[3];
            g.radii = [x, x, y, y];
        }
    }
    state.grads.record_step();

    let lr = o.learning_rates();
    let hyper = o.hyper();
    for ((p, s), g) in state.primitives.iter_mut().zip(state.adam.iter_mut()).zip(&state.grads.grads) {
        let mut params = to_params(p);
        s.update(&mut params, &g.to_array(), &lr, &hyper);
        from_params(p, &params, o.radii_floor);
    }
    state.iteration += 1;
    Ok(loss)
}

/// Split primitives whose running radii-gradient mean exceeds the
/// threshold. Acts only on positive multiples of the split interval and
/// resets the running means. Returns the number of split primitives.
pub fn maybe_split(state: &mut OptimState, cfg: &OptimConfig, ite: u64) -> usize {
    if ite == 0 || ite % cfg.split_interval != 0 {
        return 0;
    }
    let n = state.primitives.len();
    let mut primitives = Vec::with_capacity(n);
    let mut adam = Vec::with_capacity(n);
    let mut splits = 0;
    for (i, p) in state.primitives.iter().enumerate() {
        let axis = if cfg.splitting {
            split_decision(state.grads.mean_x(i), state.grads.mean_y(i), cfg.split_grad_threshold)
        } else {
            None
        };
        match axis {
            None => {
                primitives.push(*p);
                adam.push(state.adam[i]);
            }
            Some(axis) => {
                primitives.extend(split_primitive(p, axis, state.next_id));
                adam.extend([AdamState::default(); 2]);
                state.next_id += 2;
                splits += 1;
            }
        }
    }
    state.primitives = primitives;
    state.adam = adam;
    state.grads = GradientBuffer::new(state.primitives.len());
    splits
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub instances: Vec<PlaneInstance>,
    pub log: Vec<LossRecord>,
}

/// Optimize from `state.iteration` up to (excluding) `end`, calling
/// `on_step` after every iteration.
pub fn run_until(
    state: &mut OptimState,
    views: &[CameraView],
    cfg: &TrainConfig,
    end: u64,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<Vec<LossRecord>> {
    cfg.optim.validate()?;
    let mut log = Vec::new();
    while state.iteration < end {
        let ite = state.iteration;
        let loss = step(state, views, cfg)?;
        maybe_split(state, &cfg.optim, ite);
        let rec = LossRecord {
            iteration: ite,
            loss,
            lambda: cfg.splat.lambda(ite),
            primitives: state.primitives.len(),
        };
        on_step(&rec);
        log.push(rec);
    }
    Ok(log)
}

/// Optimize for the configured iterations, then merge.
pub fn run(state: &mut OptimState, views: &[CameraView], cfg: &TrainConfig) -> Result<RunOutput> {
    let log = run_until(state, views, cfg, cfg.optim.iterations, |_| {})?;
    let instances = merge_planes(&state.primitives, &state.scene_center, &cfg.optim.merge_params());
    Ok(RunOutput { instances, log })
}
