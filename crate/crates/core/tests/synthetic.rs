use planar_splat::geometry::{generate_ray, intersect, IntersectParams, Vec3};
use planar_splat::synthetic::*;

fn config(boxes: usize, views: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        boxes,
        views,
        seed,
        image_width: 40,
        image_height: 30,
        ..Default::default()
    }
}

#[test]
fn ground_truth_agrees_with_plane_intersection() {
    let params = IntersectParams {
        t_near: 0.0,
        parallel_eps: 1e-12,
    };
    for boxes in 0..3 {
        let cfg = config(boxes, 40, 11 + boxes as u64);
        let scene = generate(&cfg).unwrap();
        for (view, inst) in render_views(&scene, &cfg).iter().step_by(4) {
            let r_t = view.pose.rotation.transpose();
            for v in 0..view.height {
                for u in 0..view.width {
                    let idx = (v * view.width + u) as usize;
                    // a closed room leaves no pixel empty
                    assert_ne!(inst[idx], NO_INSTANCE);
                    let face = scene.faces.iter().find(|f| f.id == inst[idx]).unwrap();
                    let ray = generate_ray(view, u as f64, v as f64);
                    let hit = intersect(&ray, &face.center, &face.to_primitive(0).frame(), &params).unwrap();
                    assert!((hit.z_cam - view.target_depth[idx]).abs() < 1e-9);
                    let n = r_t * face.normal;
                    let got = view.target_normal[idx];
                    assert!((got - n).norm() < 1e-12 || (got + n).norm() < 1e-12);
                    let d_cam = r_t * ray.direction;
                    assert!(got.dot(&d_cam) < 0.0);
                    // no other face is hit in front of it
                    for other in &scene.faces {
                        let rel_ok = |p: Vec3| {
                            let rel = p - other.center;
                            rel.dot(&other.u_axis).abs() < other.half_u - 1e-6
                                && rel.dot(&other.v_axis).abs() < other.half_v - 1e-6
                        };
                        if let Some(h) = intersect(&ray, &other.center, &other.to_primitive(0).frame(), &params) {
                            if rel_ok(h.point) {
                                assert!(h.t >= hit.t - 1e-9, "face {} occludes {}", other.id, face.id);
                            }
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn views_agree_on_shared_surfaces() {
    let cfg = config(2, 30, 5);
    let scene = generate(&cfg).unwrap();
    let views = render_views(&scene, &cfg);
    let mut checked = 0;
    for (a, (va, ia)) in views.iter().enumerate() {
        let (vb, ib) = &views[(a + 7) % views.len()];
        for idx in (0..va.pixel_count()).step_by(13) {
            let x = va.back_project(idx, va.target_depth[idx]);
            let Some((u, v)) = vb.project(&x) else { continue };
            if !(u >= 0.0 && v >= 0.0 && u < vb.width as f64 && v < vb.height as f64) {
                continue;
            }
            let jdx = (v as u32 * vb.width + u as u32) as usize;
            if ib[jdx] != ia[idx] {
                continue;
            }
            let y = vb.back_project(jdx, vb.target_depth[jdx]);
            let face = scene.faces.iter().find(|f| f.id == ia[idx]).unwrap();
            assert!((x - face.center).dot(&face.normal).abs() < 1e-9);
            assert!((y - face.center).dot(&face.normal).abs() < 1e-9);
            checked += 1;
        }
    }
    assert!(checked > 100);
}

#[test]
fn trajectories_cover_every_face() {
    for boxes in 0..=2 {
        for seed in 0..3 {
            let cfg = config(boxes, 100, seed);
            let scene = generate(&cfg).unwrap();
            assert_eq!(scene.faces.len(), 6 + 5 * boxes);
            assert_eq!(scene.poses.len(), 100);
            let views: Vec<_> = render_views(&scene, &cfg).into_iter().map(|(v, _)| v).collect();
            let counts = coverage_counts(&scene, &views);
            assert!(counts.iter().all(|c| *c >= 3), "boxes {boxes} seed {seed}: {counts:?}");
            for p in &scene.poses {
                let eye = p.center();
                assert!(scene.bounds.contains_strictly(&eye));
                assert!(scene.boxes.iter().all(|b| !b.contains(&eye)));
                assert!(p.is_orthonormal(1e-9));
            }
        }
    }
}

#[test]
fn boxes_keep_clear_of_walls_and_each_other() {
    for seed in 0..20 {
        let scene = generate_box_room(4.0, 4.0, 3.0, 2, seed).unwrap();
        let b = scene.bounds;
        for (i, x) in scene.boxes.iter().enumerate() {
            assert!(x.min.x >= 0.8 - 1e-12 && x.min.y >= 0.8 - 1e-12);
            assert!(x.max.x <= b.width - 0.8 + 1e-12 && x.max.y <= b.depth - 0.8 + 1e-12);
            assert_eq!(x.min.z, 0.0);
            assert!(x.max.z < b.height);
            for y in &scene.boxes[i + 1..] {
                let gap_x = (y.min.x - x.max.x).max(x.min.x - y.max.x);
                let gap_y = (y.min.y - x.max.y).max(x.min.y - y.max.y);
                assert!(gap_x.max(gap_y) >= 0.8 - 1e-12);
            }
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let cfg = config(2, 50, 9);
    assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    let other = generate(&SynthConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(generate(&cfg).unwrap().poses, other.poses);
}

#[test]
fn depth_noise_has_the_requested_spread() {
    let clean_cfg = config(0, 20, 1);
    let noisy_cfg = SynthConfig {
        depth_noise: 0.01,
        ..clean_cfg
    };
    let scene = generate(&clean_cfg).unwrap();
    let clean = render_views(&scene, &clean_cfg);
    let noisy = render_views(&scene, &noisy_cfg);
    let diffs: Vec<f64> = clean
        .iter()
        .zip(&noisy)
        .flat_map(|(a, b)| a.0.target_depth.iter().zip(&b.0.target_depth).map(|(x, y)| y - x).collect::<Vec<_>>())
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 1e-3);
    assert!((sd - 0.01).abs() < 5e-4, "sd {sd}");
    assert_eq!(clean[3].0.target_normal, noisy[3].0.target_normal);
}
