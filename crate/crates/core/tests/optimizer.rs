mod common;

use std::collections::BTreeSet;

use common::*;
use planar_splat::geometry::{CameraView, Intrinsics, PlanePrimitive, Pose, Quat, Vec3};
use planar_splat::optimizer::{
    maybe_split, merge_planes, run, split_decision, split_primitive, step, MergeParams, OptimState, SplitAxis, TrainConfig,
};
use planar_splat::renderer::LossWeights;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn prim_strategy() -> impl Strategy<Value = PlanePrimitive> {
    (
        prop::array::uniform3(-5.0f64..5.0),
        prop::array::uniform4(-1.0f64..1.0),
        prop::array::uniform4(0.01f64..3.0),
    )
        .prop_filter("degenerate quaternion", |(_, q, _)| q.iter().map(|v| v * v).sum::<f64>() > 0.05)
        .prop_map(|(c, q, r)| PlanePrimitive::new(3, Vec3::from(c), Quat::from_array(q).normalized(), r))
}

/// Points where the cut line meets the parent boundary.
fn cut_points(p: &PlanePrimitive, axis: SplitAxis) -> [Vec3; 2] {
    let r = rotation_of(&p.rotation);
    let (vx, vy) = (r.column(0).into_owned(), r.column(1).into_owned());
    let [xp, xn, yp, yn] = p.radii;
    match axis {
        SplitAxis::AlongY => [p.center + vy * yp, p.center - vy * yn],
        SplitAxis::AlongX => [p.center + vx * xp, p.center - vx * xn],
    }
}

proptest! {
    #[test]
    fn split_children_tile_the_parent(parent in prim_strategy(), along_y in any::<bool>()) {
        let axis = if along_y { SplitAxis::AlongY } else { SplitAxis::AlongX };
        let children = split_primitive(&parent, axis, 100);
        let mut child_corners: Vec<Vec3> = children.iter().flat_map(corners_of).collect();
        let cuts = cut_points(&parent, axis);
        // every cut point is shared by exactly two child corners
        for c in &cuts {
            prop_assert_eq!(child_corners.iter().filter(|q| (*q - c).norm() < 1e-9).count(), 2);
        }
        child_corners.retain(|q| cuts.iter().all(|c| (q - c).norm() >= 1e-9));
        prop_assert!(same_point_set(&child_corners, &corners_of(&parent), 1e-9));
        let area: f64 = children.iter().map(|c| c.area()).sum();
        prop_assert!((area - parent.area()).abs() < 1e-9 * (1.0 + parent.area()));
        for c in &children {
            prop_assert_eq!(c.rotation, parent.rotation);
        }
        prop_assert_eq!((children[0].id, children[1].id), (100, 101));
    }

    #[test]
    fn split_decision_follows_threshold(mx in 0.0f64..0.5, my in 0.0f64..0.5) {
        let d = split_decision(mx, my, 0.2);
        match d {
            None => prop_assert!(mx <= 0.2 && my <= 0.2),
            Some(SplitAxis::AlongY) => prop_assert!(mx > 0.2 && mx >= my),
            Some(SplitAxis::AlongX) => prop_assert!(my > 0.2 && (mx <= 0.2 || my > mx)),
        }
    }
}

/// Patches scattered over a few planes, some coplanar and touching.
fn patchwork(seed: u64, n: usize) -> Vec<PlanePrimitive> {
    let mut r = rng(seed);
    let planes: Vec<(Vec3, f64)> = (0..4).map(|_| (unit(&mut r), r.gen_range(-2.0..2.0))).collect();
    (0..n)
        .map(|i| {
            let (nrm, d) = planes[r.gen_range(0..planes.len())];
            let tilt = unit(&mut r) * r.gen_range(0.0..0.2);
            let normal = (nrm + tilt).normalize();
            let q = Quat::from_z_to(&normal);
            let frame = planar_splat::geometry::PlaneFrame::from_rotation(&q);
            let center = nrm * d + frame.x_axis * r.gen_range(-2.0..2.0) + frame.y_axis * r.gen_range(-2.0..2.0);
            PlanePrimitive::new(i as u64, center, q, std::array::from_fn(|_| r.gen_range(0.1..0.6)))
        })
        .collect()
}

fn partition(instances: &[planar_splat::optimizer::PlaneInstance]) -> BTreeSet<BTreeSet<u64>> {
    instances.iter().map(|i| i.members.iter().copied().collect()).collect()
}

#[test]
fn merge_partitions_every_primitive_once() {
    for seed in 0..10 {
        let prims = patchwork(seed, 60);
        for params in [MergeParams::default(), MergeParams { adjacency: None, ..Default::default() }] {
            let inst = merge_planes(&prims, &Vec3::zeros(), &params);
            let mut ids: Vec<u64> = inst.iter().flat_map(|i| i.members.clone()).collect();
            ids.sort();
            assert_eq!(ids, (0..60).collect::<Vec<u64>>());
            for i in &inst {
                assert!(!i.members.is_empty());
                assert!((i.normal().norm() - 1.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn merge_is_order_independent() {
    for seed in 0..10 {
        let prims = patchwork(seed, 50);
        let base = partition(&merge_planes(&prims, &Vec3::zeros(), &MergeParams::default()));
        let mut r = rng(seed + 99);
        for _ in 0..5 {
            let mut shuffled = prims.clone();
            shuffled.shuffle(&mut r);
            let got = partition(&merge_planes(&shuffled, &Vec3::zeros(), &MergeParams::default()));
            assert_eq!(got, base);
        }
    }
}

fn hinged_pair(deg: f64) -> [PlanePrimitive; 2] {
    // two unit squares sharing the edge x = 0 on the plane z = 1
    let a = PlanePrimitive::new(0, Vec3::new(-0.5, 0.0, 1.0), Quat::IDENTITY, [0.5; 4]);
    let th = deg.to_radians();
    let q = Quat::from_axis_angle(&Vec3::y(), th);
    let b = PlanePrimitive::new(1, Vec3::new(0.5 * th.cos(), 0.0, 1.0 - 0.5 * th.sin()), q, [0.5; 4]);
    [a, b]
}

#[test]
fn normal_gate_at_twenty_five_degrees() {
    // scene center on the shared edge keeps both offsets equal
    let center = Vec3::new(0.0, 0.0, 1.0 - 1e-3);
    let params = MergeParams::default();
    assert_eq!(merge_planes(&hinged_pair(24.9), &center, &params).len(), 1);
    assert_eq!(merge_planes(&hinged_pair(25.1), &center, &params).len(), 2);
}

#[test]
fn offset_gate() {
    let a = PlanePrimitive::new(0, Vec3::new(0.0, 0.0, 1.0), Quat::IDENTITY, [0.5; 4]);
    let params = MergeParams {
        adjacency: None,
        ..Default::default()
    };
    for (dz, expected) in [(0.5, 2), (0.11, 2), (0.09, 1), (0.0, 1)] {
        let b = PlanePrimitive::new(1, Vec3::new(0.3, 0.0, 1.0 + dz), Quat::IDENTITY, [0.5; 4]);
        assert_eq!(merge_planes(&[a, b], &Vec3::zeros(), &params).len(), expected, "dz {dz}");
    }
}

#[test]
fn adjacency_gate_separates_distant_coplanar_patches() {
    let a = PlanePrimitive::new(0, Vec3::new(0.0, 0.0, 1.0), Quat::IDENTITY, [0.5; 4]);
    let near = PlanePrimitive::new(1, Vec3::new(1.04, 0.0, 1.0), Quat::IDENTITY, [0.5; 4]);
    let far = PlanePrimitive::new(2, Vec3::new(3.0, 0.0, 1.0), Quat::IDENTITY, [0.5; 4]);
    let params = MergeParams::default();
    assert_eq!(merge_planes(&[a, near], &Vec3::zeros(), &params).len(), 1);
    assert_eq!(merge_planes(&[a, far], &Vec3::zeros(), &params).len(), 2);
    let literal = MergeParams {
        adjacency: None,
        ..params
    };
    assert_eq!(merge_planes(&[a, far], &Vec3::zeros(), &literal).len(), 1);
}

fn wall_view(depth: f64) -> CameraView {
    let k = Intrinsics::from_hfov(24, 18, 60.0);
    let mut v = CameraView::unsupervised(0, k, 24, 18, Pose::identity());
    for i in 0..v.pixel_count() {
        v.target_depth[i] = depth;
        v.target_normal[i] = -Vec3::z();
    }
    v
}

#[test]
fn depth_loss_pulls_plane_toward_camera() {
    let view = wall_view(2.0);
    let plane = PlanePrimitive::new(0, Vec3::new(0.0, 0.0, 2.5), Quat::IDENTITY, [3.0; 4]);
    let mut state = OptimState::new(vec![plane], Vec3::zeros());
    let mut cfg = TrainConfig::default();
    cfg.loss = LossWeights {
        alpha_normal: 0.0,
        ..Default::default()
    };
    for _ in 0..20 {
        step(&mut state, std::slice::from_ref(&view), &cfg).unwrap();
    }
    let z = state.primitives[0].center.z;
    assert!(z < 2.5 && z > 2.45, "z = {z}");
}

#[test]
fn zero_iterations_return_the_merged_initialization() {
    let prims = patchwork(4, 30);
    let mut state = OptimState::new(prims.clone(), Vec3::zeros());
    let mut cfg = TrainConfig::default();
    cfg.optim.iterations = 0;
    let out = run(&mut state, &[wall_view(2.0)], &cfg).unwrap();
    assert_eq!(state.primitives, prims);
    assert!(out.log.is_empty());
    assert_eq!(out.instances, merge_planes(&prims, &Vec3::zeros(), &cfg.optim.merge_params()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn steps_keep_unit_quaternions_and_radii_floor(seed in any::<u64>(), lr in 0.001f64..0.3) {
        let mut r = rng(seed);
        let mut view = random_view(&mut r, 12, 10);
        random_targets(&mut r, &mut view);
        let mut prims = random_primitives(&mut r, &view, 8);
        for p in prims.iter_mut() {
            p.radii = std::array::from_fn(|_| r.gen_range(1e-4..0.05));
        }
        let mut state = OptimState::new(prims, Vec3::zeros());
        let mut cfg = TrainConfig::default();
        cfg.optim.lr_center = lr;
        cfg.optim.lr_rotation = lr;
        cfg.optim.lr_radii = lr;
        for _ in 0..15 {
            step(&mut state, std::slice::from_ref(&view), &cfg).unwrap();
            for p in &state.primitives {
                prop_assert!((p.rotation.norm() - 1.0).abs() < 1e-6);
                prop_assert!(p.radii.iter().all(|r| *r >= cfg.optim.radii_floor));
            }
        }
    }
}

#[test]
fn split_bookkeeping() {
    let view = wall_view(2.0);
    let prims: Vec<PlanePrimitive> = (0..4)
        .map(|i| PlanePrimitive::new(i, Vec3::new(i as f64 - 1.5, 0.0, 2.0), Quat::IDENTITY, [0.4; 4]))
        .collect();
    let mut state = OptimState::new(prims, Vec3::zeros());
    let mut cfg = TrainConfig::default();
    step(&mut state, std::slice::from_ref(&view), &cfg).unwrap();
    // synthetic running means: primitive 1 along x, primitive 3 along y
    state.grads.radii_abs_sum = vec![[0.0; 4]; 4];
    state.grads.radii_abs_sum[1] = [0.5, 0.3, 0.1, 0.1];
    state.grads.radii_abs_sum[3] = [0.1, 0.1, 0.9, 0.0];
    state.grads.steps = 1;
    let before = state.primitives.clone();
    assert_eq!(maybe_split(&mut state, &cfg.optim, 999), 0);
    assert_eq!(state.primitives, before);
    assert_eq!(maybe_split(&mut state, &cfg.optim, 1000), 2);
    assert_eq!(state.primitives.len(), 6);
    assert_eq!(state.adam.len(), 6);
    let ids: Vec<u64> = state.primitives.iter().map(|p| p.id).collect();
    assert_eq!(ids, vec![0, 4, 5, 2, 6, 7]);
    // children sit half a radius out along the split axis of the parent
    let f1 = before[1].frame();
    let child = before[1].center + f1.x_axis * (before[1].radii[0] / 2.0);
    assert!((state.primitives[1].center - child).norm() < 1e-12);
    assert!((state.primitives[1].radii[0] - before[1].radii[0] / 2.0).abs() < 1e-15);
    let f3 = before[3].frame();
    let child = before[3].center - f3.y_axis * (before[3].radii[3] / 2.0);
    assert!((state.primitives[5].center - child).norm() < 1e-12);
    assert_eq!(state.grads.steps, 0);
    cfg.optim.splitting = false;
    state.grads.radii_abs_sum[0] = [9.0; 4];
    state.grads.steps = 1;
    assert_eq!(maybe_split(&mut state, &cfg.optim, 2000), 0);
}

fn small_room() -> (Vec<CameraView>, OptimState) {
    use planar_splat::scene_init::{init_from_depth, InitConfig};
    use planar_splat::synthetic::{generate, render_views, SynthConfig};
    let cfg = SynthConfig {
        views: 20,
        image_width: 32,
        image_height: 24,
        ..Default::default()
    };
    let scene = generate(&cfg).unwrap();
    let views: Vec<CameraView> = render_views(&scene, &cfg).into_iter().map(|(v, _)| v).collect();
    let init = init_from_depth(
        &views,
        &InitConfig {
            n_primitives: 60,
            ..Default::default()
        },
    )
    .unwrap();
    (views, OptimState::new(init.primitives, init.scene_center))
}

#[test]
fn run_is_identical_across_thread_pools() {
    let (views, base) = small_room();
    let mut cfg = TrainConfig::default();
    cfg.optim.iterations = 150;
    let results: Vec<_> = [1, 3]
        .iter()
        .map(|&t| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap();
            pool.install(|| {
                let mut s = base.clone();
                let out = run(&mut s, &views, &cfg).unwrap();
                (s.primitives, out.instances, out.log)
            })
        })
        .collect();
    assert_eq!(results[0], results[1]);
}

#[test]
fn windowed_loss_decreases() {
    let (views, mut state) = small_room();
    let mut cfg = TrainConfig::default();
    cfg.optim.iterations = 600;
    let log = run(&mut state, &views, &cfg).unwrap().log;
    let mean = |r: &[planar_splat::optimizer::LossRecord]| r.iter().map(|x| x.loss).sum::<f64>() / r.len() as f64;
    assert!(mean(&log[500..]) < mean(&log[..100]));
}
