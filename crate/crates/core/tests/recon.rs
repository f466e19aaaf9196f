use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsense_core::dataset::{PointCloud, Session};
use sparsense_core::geometry::RelativeTransform;
use sparsense_core::metrics::{hausdorff, HausdorffParams};
use sparsense_core::recon::*;
use sparsense_core::synth::{generate_session, presets, scene_ground_truth_cloud, BoxScene, GT_SOURCE, NOISY_SOURCE};

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
    (0..n).map(|_| Vector3::new(rng.gen(), rng.gen::<f64>() * 0.8, rng.gen::<f64>() * 0.6)).collect()
}

fn random_transform(rng: &mut ChaCha8Rng, max_angle: f64, max_shift: f64) -> RelativeTransform {
    let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let shift = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * max_shift;
    RelativeTransform::from_axis_angle(axis, rng.gen_range(-max_angle..max_angle), shift)
}

fn transform_error(a: &RelativeTransform, b: &RelativeTransform) -> (f64, f64) {
    let d = a.then(&b.inverse());
    (d.angle(), d.translation().norm())
}

fn params() -> IcpParams {
    IcpParams { max_iterations: 200, max_correspondence_distance: 0.3, convergence_translation: 1e-12, convergence_rotation: 1e-12 }
}

#[test]
fn kabsch_recovers_exact_correspondences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let src = random_cloud(&mut rng, 50);
    let t = random_transform(&mut rng, 3.0, 5.0);
    let dst: Vec<_> = src.iter().map(|p| t.apply(p)).collect();
    let (rot, shift) = transform_error(&kabsch(&src, &dst), &t);
    assert!(rot < 1e-12 && shift < 1e-12, "{rot} {shift}");
}

#[test]
fn icp_recovers_small_rigid_motions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..25 {
        let dst = random_cloud(&mut rng, 1500);
        let truth = random_transform(&mut rng, 10f64.to_radians(), 0.1);
        let src: Vec<_> = dst.iter().map(|p| truth.inverse().apply(p)).collect();
        let r = icp_align(&src, &dst, &RelativeTransform::identity(), &params()).unwrap();
        let (rot, shift) = transform_error(&r.transform, &truth);
        assert!(rot < 1e-6 && shift < 1e-6, "trial {trial}: {rot} {shift}");
    }
}

#[test]
fn icp_tolerates_outliers() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..10 {
        let clean = random_cloud(&mut rng, 1500);
        let truth = random_transform(&mut rng, 10f64.to_radians(), 0.1);
        let mut src: Vec<_> = clean.iter().map(|p| truth.inverse().apply(p)).collect();
        for p in src.iter_mut().take(150) {
            *p += Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let p = IcpParams { max_correspondence_distance: 0.05, ..params() };
        let coarse = icp_align(&src, &clean, &RelativeTransform::identity(), &IcpParams { max_correspondence_distance: 0.3, ..p }).unwrap();
        let r = icp_align(&src, &clean, &coarse.transform, &p).unwrap();
        let (rot, shift) = transform_error(&r.transform, &truth);
        assert!(rot < 1e-3 && shift < 1e-3, "trial {trial}: {rot} {shift}");
    }
}

#[test]
fn icp_reports_degenerate_inputs() {
    let src = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)];
    assert!(matches!(
        icp_align(&src, &src, &RelativeTransform::identity(), &IcpParams::default()),
        Err(ReconError::Degenerate { .. })
    ));
}

fn stations(hold: usize, noisy: bool) -> Session {
    let n = presets::default_noise(11);
    generate_session(&BoxScene::default(), &presets::stations(hold), &presets::stations_intrinsics(), 60.0, noisy.then_some(&n)).unwrap()
}

fn max_surface_distance(scene: &BoxScene, cloud: &PointCloud) -> f64 {
    cloud.points.iter().map(|p| scene.sdf(p).abs()).fold(0.0, f64::max)
}

fn mean_surface_distance(scene: &BoxScene, cloud: &PointCloud) -> f64 {
    cloud.points.iter().map(|p| scene.sdf(p).abs()).sum::<f64>() / cloud.len() as f64
}

#[test]
fn lifted_points_lie_on_the_room_surface() {
    let scene = BoxScene::default();
    let session = generate_session(&scene, &presets::orbit(8), &presets::strafe_intrinsics(), 60.0, None).unwrap();
    for f in session.frames() {
        let cloud = frame_to_pointcloud(f, GT_SOURCE, session.intrinsics(), 1).unwrap();
        assert_eq!(cloud.len(), f.depth(GT_SOURCE).unwrap().valid_count());
        assert!(max_surface_distance(&scene, &cloud) < 1e-3);
    }
}

#[test]
fn fused_icp_corrects_an_offset_cloud() {
    let scene = BoxScene::default();
    let a = scene_ground_truth_cloud(&scene, 4000.0, 1).unwrap();
    let b = scene_ground_truth_cloud(&scene, 4000.0, 2).unwrap();
    let offset = RelativeTransform::from_axis_angle(Vector3::z(), 0.0, Vector3::new(0.01, -0.006, 0.008));
    let shifted = b.transformed(&offset);
    let fused = MergeMethod::Fused { voxel_size: 0.02 };
    let baseline = merge_clouds(&[a.clone(), b], &fused).unwrap();
    let naive = merge_clouds(&[a.clone(), shifted.clone()], &fused).unwrap();
    let aligned = merge_clouds(&[a, shifted], &MergeMethod::FusedIcp { voxel_size: 0.02, icp: IcpParams::default() }).unwrap();
    assert!(aligned.skipped.is_empty());
    let (e_base, e_naive, e_icp) = (
        mean_surface_distance(&scene, &baseline.cloud),
        mean_surface_distance(&scene, &naive.cloud),
        mean_surface_distance(&scene, &aligned.cloud),
    );
    assert!(e_icp < e_naive, "{e_icp} vs {e_naive}");
    assert!(e_icp < e_base + 0.5e-3, "{e_icp} vs {e_base}");
}

#[test]
fn concat_keeps_every_valid_pixel() {
    let session = stations(1, false);
    let r = reconstruct_session(&session, GT_SOURCE, 1, &MergeMethod::Concat, 2).unwrap();
    let expected: usize = session
        .frames()
        .iter()
        .map(|f| frame_to_pointcloud(f, GT_SOURCE, session.intrinsics(), 2).unwrap().len())
        .sum();
    assert_eq!(r.cloud.len(), expected);
    assert_eq!(r.frames, (0..6).collect::<Vec<_>>());
}

#[test]
fn voxel_count_shrinks_with_coarser_grids() {
    let session = stations(1, false);
    let counts: Vec<usize> = [0.01, 0.02, 0.04, 0.08]
        .iter()
        .map(|v| reconstruct_session(&session, GT_SOURCE, 1, &MergeMethod::Fused { voxel_size: *v }, 2).unwrap().cloud.len())
        .collect();
    assert!(counts.windows(2).all(|w| w[1] < w[0]), "{counts:?}");
}

#[test]
fn frame_stride_within_a_station_hold_changes_little() {
    let session = stations(10, false);
    let voxel = 0.02;
    let method = MergeMethod::Fused { voxel_size: voxel };
    let dense = reconstruct_session(&session, GT_SOURCE, 1, &method, 2).unwrap();
    let sparse = reconstruct_session(&session, GT_SOURCE, 10, &method, 2).unwrap();
    assert_eq!(sparse.frames, vec![0, 10, 20, 30, 40, 50]);
    let h = hausdorff(&dense.cloud, &sparse.cloud, &HausdorffParams::default()).unwrap();
    assert!(h.distance <= 2.0 * voxel, "{}", h.distance);
}

#[test]
fn noisy_depth_reconstructs_worse_than_ground_truth() {
    let scene = BoxScene::default();
    let session = stations(1, true);
    let truth = scene_ground_truth_cloud(&scene, 2000.0, 5).unwrap();
    let method = MergeMethod::Fused { voxel_size: 0.02 };
    let params = HausdorffParams::default();
    let gt = reconstruct_session(&session, GT_SOURCE, 1, &method, 1).unwrap();
    let noisy = reconstruct_session(&session, NOISY_SOURCE, 1, &method, 1).unwrap();
    let h_gt = hausdorff(&gt.cloud, &truth, &params).unwrap().distance;
    let h_noisy = hausdorff(&noisy.cloud, &truth, &params).unwrap().distance;
    assert!(h_gt < 0.04, "{h_gt}");
    assert!(h_noisy > h_gt, "{h_noisy} vs {h_gt}");
}

#[test]
fn reconstruction_is_independent_of_thread_count() {
    let session = stations(2, false);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| reconstruct_session(&session, GT_SOURCE, 1, &MergeMethod::Fused { voxel_size: 0.02 }, 3).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn invalid_strides_are_rejected() {
    let session = stations(1, false);
    let m = MergeMethod::Fused { voxel_size: 0.02 };
    assert!(matches!(reconstruct_session(&session, GT_SOURCE, 0, &m, 1), Err(ReconError::InvalidParams(_))));
    assert!(matches!(reconstruct_session(&session, GT_SOURCE, 1, &m, 0), Err(ReconError::InvalidParams(_))));
    assert!(reconstruct_session(&session, "missing", 1, &m, 1).is_err());
}
