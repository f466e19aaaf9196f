use std::collections::BTreeMap;

use nalgebra::Vector3;
use sparsense_core::dataset::{DepthMap, Frame, RgbImage, Session};
use sparsense_core::geometry::{relative_transform, Intrinsics, PoseSE3};
use sparsense_core::metrics::{ssim_depth, ssim_rgb};
use sparsense_core::synth::{generate_session, presets, BoxScene};
use sparsense_core::warp::*;

fn frame(rgb: RgbImage, depth: DepthMap, pose: PoseSE3) -> Frame {
    let mut sources = BTreeMap::new();
    sources.insert("gt".to_string(), depth);
    Frame { index: 0, timestamp_us: 0, rgb, depth_sources: sources, pose }
}

fn textured(w: u32, h: u32) -> RgbImage {
    let data = (0..w * h)
        .flat_map(|i| {
            let (x, y) = (i % w, i / w);
            [((x * 37 + y * 11) % 256) as u8, ((x * 5 + y * 53) % 256) as u8, ((x ^ y) * 7 % 256) as u8]
        })
        .collect();
    RgbImage::new(w, h, data).unwrap()
}

fn strafe(noise: bool) -> Session {
    let n = presets::default_noise(7);
    generate_session(&BoxScene::default(), &presets::strafe(60), &presets::strafe_intrinsics(), 60.0, noise.then_some(&n)).unwrap()
}

/// Forward point splatting: every valid source pixel lands on its nearest target pixel; nearest depth wins.
fn splat(src: &Frame, dst_pose: &PoseSE3, k: &Intrinsics) -> Vec<f64> {
    let depth = src.depth("gt").unwrap();
    let t = relative_transform(&src.pose, dst_pose);
    let mut out = vec![f64::INFINITY; k.pixel_count()];
    for y in 0..k.height {
        for x in 0..k.width {
            let d = depth.get(x, y);
            if d <= 0.0 {
                continue;
            }
            let p = Vector3::new(d * (x as f64 - k.cx) / k.fx, d * (y as f64 - k.cy) / k.fy, d);
            let q = t.apply(&p);
            if q.z <= 0.0 {
                continue;
            }
            let u = (k.fx * q.x / q.z + k.cx).round();
            let v = (k.fy * q.y / q.z + k.cy).round();
            if u >= 0.0 && v >= 0.0 && u < k.width as f64 && v < k.height as f64 {
                let i = v as usize * k.width as usize + u as usize;
                out[i] = out[i].min(q.z);
            }
        }
    }
    out
}

#[test]
fn fronto_parallel_plane_shifts_by_analytic_disparity() {
    let k = Intrinsics::centered(60.0, 48, 36).unwrap();
    let rgb = textured(48, 36);
    let f = frame(rgb.clone(), DepthMap::filled(48, 36, 2.0).unwrap(), PoseSE3::identity());
    let dst = PoseSE3::from_translation(Vector3::new(0.1, 0.0, 0.0));
    let r = warp_frame(&f, "gt", &dst, &k, 95.0).unwrap();
    let shift = 3; // fx * 0.1 / 2
    for y in 0..36 {
        for x in 0..48 - shift {
            assert_eq!(r.rgb.get(x, y), rgb.get(x + shift, y), "pixel ({x},{y})");
            assert!((r.depth.get(x, y) - 2.0).abs() < 1e-9);
        }
        for x in 48 - shift..48 {
            assert!(!r.valid_mask[(y * 48 + x) as usize]);
        }
    }
}

#[test]
fn bridging_triangles_are_discarded() {
    let (w, h) = (40u32, 30u32);
    let k = Intrinsics::centered(50.0, w, h).unwrap();
    let depth = DepthMap::from_fn(w, h, |x, _| if x < 20 { 1.0 } else { 3.0 }).unwrap();
    let mesh = build_screen_space_mesh(&depth, &RgbImage::black(w, h), &k, 95.0).unwrap();

    // brute force: candidate areas, nearest-rank threshold, kept count
    let vert = |x: u32, y: u32| {
        let d = depth.get(x, y);
        Vector3::new(d * (x as f64 - k.cx) / k.fx, d * (y as f64 - k.cy) / k.fy, d)
    };
    let mut areas = Vec::new();
    let mut bridging = Vec::new();
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let (a, b, c, d) = (vert(x, y), vert(x + 1, y), vert(x, y + 1), vert(x + 1, y + 1));
            for tri in [[a, b, d], [a, d, c]] {
                areas.push(0.5 * (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).norm());
                bridging.push(x == 19);
            }
        }
    }
    let mut sorted = areas.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = (0.95 * sorted.len() as f64).ceil() as usize;
    let threshold = sorted[rank - 1];
    let kept = areas.iter().filter(|a| **a <= threshold * (1.0 + 1e-9)).count();
    assert_eq!(mesh.candidate_count, areas.len());
    assert_eq!(mesh.triangles.len(), kept);
    assert!(bridging.iter().zip(&areas).filter(|(b, _)| **b).all(|(_, a)| *a > threshold));
    let wide = w;
    assert!(mesh.triangles.iter().all(|t| {
        let xs: Vec<u32> = t.iter().map(|i| i % wide).collect();
        xs.iter().all(|x| *x <= 19) || xs.iter().all(|x| *x >= 20)
    }));
}

#[test]
fn rasterizer_agrees_with_point_splatting() {
    let s = strafe(false);
    let k = *s.intrinsics();
    for (i, j) in [(0, 2), (10, 14), (20, 21), (30, 33), (40, 44)] {
        let (a, b) = (s.frame(i), s.frame(j));
        let r = warp_frame(a, "gt", &b.pose, &k, 95.0).unwrap();
        let oracle = splat(a, &b.pose, &k);
        let (mut both, mut agree) = (0, 0);
        for (idx, o) in oracle.iter().enumerate() {
            if r.valid_mask[idx] && o.is_finite() {
                both += 1;
                if ((r.depth.values()[idx] - o) / o).abs() <= 0.02 {
                    agree += 1;
                }
            }
        }
        assert!(both > 1000);
        assert!(agree as f64 >= 0.95 * both as f64, "pair ({i},{j}): {agree}/{both}");
    }
}

#[test]
fn warped_depth_is_epipolar_consistent() {
    let s = strafe(false);
    let k = *s.intrinsics();
    for (i, j) in [(0, 4), (25, 21), (50, 54)] {
        let (a, b) = (s.frame(i), s.frame(j));
        let r = warp_frame(a, "gt", &b.pose, &k, 95.0).unwrap();
        let target = b.depth("gt").unwrap();
        let (mut sum, mut n) = (0.0, 0usize);
        for (idx, valid) in r.valid_mask.iter().enumerate() {
            if *valid {
                sum += (r.depth.values()[idx] - target.values()[idx]).abs();
                n += 1;
            }
        }
        assert!(sum / n as f64 <= 0.005, "pair ({i},{j}): {}", sum / n as f64);
    }
}

#[test]
fn identity_warp_reproduces_synthetic_frames() {
    let s = generate_session(&BoxScene::default(), &presets::orbit(12), &presets::strafe_intrinsics(), 60.0, None).unwrap();
    let k = *s.intrinsics();
    for f in s.frames() {
        let r = warp_frame(f, "gt", &f.pose, &k, 95.0).unwrap();
        let depth = f.depth("gt").unwrap();
        assert_eq!(r.overlap_ratio, depth.valid_count() as f64 / k.pixel_count() as f64);
        for (i, valid) in r.valid_mask.iter().enumerate() {
            assert!(*valid);
            assert!((r.depth.values()[i] - depth.values()[i]).abs() <= 1e-4);
            for c in 0..3 {
                let (a, b) = (r.rgb.data()[3 * i + c], f.rgb.data()[3 * i + c]);
                assert!(a.abs_diff(b) <= 1);
            }
        }
    }
}

#[test]
fn synthetic_warp_matches_true_render() {
    let s = strafe(false);
    let k = *s.intrinsics();
    // frames 0..=30 keep the +x wall out of view
    for i in 0..=30usize {
        for j in i.saturating_sub(4)..=(i + 4).min(30) {
            if i == j {
                continue;
            }
            let (a, b) = (s.frame(i), s.frame(j));
            let r = warp_frame(a, "gt", &b.pose, &k, 95.0).unwrap();
            let score = ssim_rgb(&r.rgb, &b.rgb, Some(&r.valid_mask)).unwrap();
            assert!(score >= 0.95, "pair ({i},{j}): {score}");
        }
    }
}

#[test]
fn masking_disocclusions_does_not_lower_ssim() {
    let s = strafe(false);
    let k = *s.intrinsics();
    for (i, j) in [(0, 10), (10, 30), (20, 50)] {
        let (a, b) = (s.frame(i), s.frame(j));
        let r = warp_frame(a, "gt", &b.pose, &k, 95.0).unwrap();
        let target = b.depth("gt").unwrap();
        let masked = ssim_depth(&r.depth, target, Some(&r.valid_mask), 10.0).unwrap();
        let full = ssim_depth(&r.depth, target, None, 10.0).unwrap();
        assert!(masked >= full, "pair ({i},{j}): {masked} < {full}");
        let masked = ssim_rgb(&r.rgb, &b.rgb, Some(&r.valid_mask)).unwrap();
        let full = ssim_rgb(&r.rgb, &b.rgb, None).unwrap();
        assert!(masked >= full);
    }
}

#[test]
fn overlap_shrinks_with_gap_under_constant_velocity() {
    let s = strafe(false);
    let k = *s.intrinsics();
    let mut prev = 1.0;
    for gap in 1..=50 {
        let r = overlap_ratio(s.frame(0), "gt", &s.frame(gap).pose, &k).unwrap();
        assert!(r < prev, "gap {gap}: {r} !< {prev}");
        prev = r;
    }
}

#[test]
fn warp_outputs_are_valid_and_deterministic_across_pools() {
    let s = strafe(true);
    let k = *s.intrinsics();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            (0..5)
                .map(|i| warp_frame(s.frame(i * 10), "noisy", &s.frame(i * 10 + 7).pose, &k, 95.0).unwrap())
                .collect::<Vec<_>>()
        })
    };
    let one = run(1);
    assert_eq!(one, run(3));
    for r in &one {
        assert!((0.0..=1.0).contains(&r.overlap_ratio));
        for (m, d) in r.valid_mask.iter().zip(r.depth.values()) {
            assert_eq!(*m, *d > 0.0);
            assert!(d.is_finite());
        }
    }
}
