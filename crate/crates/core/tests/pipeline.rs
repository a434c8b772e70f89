use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use triplane_slam::field::{FieldConfig, SceneField};
use triplane_slam::objective::{evaluate, pose_block, GradTargets, ObjectiveConfig, PixelSample, Workspace};
use triplane_slam::pipeline::{Phase, SlamConfig, SlamSystem};
use triplane_slam::submap::Aabb;
use triplane_slam::synthetic::{render_gt_frame, AnalyticScene, Frame, TrajectorySpec};
use triplane_slam::{CameraIntrinsics, Pose};

fn small_intr() -> CameraIntrinsics {
    CameraIntrinsics::new(10.0, 10.0, 7.5, 5.5, 16, 12, 5000.0).unwrap()
}

fn frame_at(pose: &Pose, intr: &CameraIntrinsics) -> Frame {
    render_gt_frame(&AnalyticScene::box_room(), intr, pose, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
}

fn median3(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v[1]
}

/// A field fitted for many iterations to one frame at its true pose.
fn converged(intr: CameraIntrinsics, start: &Pose) -> SlamSystem {
    let cfg = SlamConfig {
        rays_track: 192,
        rays_map: 192,
        iters_init: 200,
        ..SlamConfig::default()
    };
    let mut slam = SlamSystem::new(cfg, intr).unwrap();
    slam.process_frame(&frame_at(start, &intr), Some(start)).unwrap();
    slam
}

#[test]
fn init_and_mapping_losses_decrease() {
    let intr = small_intr();
    let poses = TrajectorySpec::box_room_orbit(100).poses();
    let cfg = SlamConfig {
        rays_track: 128,
        rays_map: 192,
        ..SlamConfig::default()
    };
    let mut slam = SlamSystem::new(cfg, intr).unwrap();
    for p in poses.iter().take(6) {
        slam.process_frame(&frame_at(p, &intr), Some(&poses[0])).unwrap();
    }
    let totals = |phase: Phase| -> Vec<f64> {
        slam.loss_log.iter().filter(|r| r.phase == phase).map(|r| r.loss.total).collect()
    };
    let init = totals(Phase::Init);
    assert_eq!(init.len(), 15);
    assert!(init[14] < init[0], "init loss {} -> {}", init[0], init[14]);
    let map = totals(Phase::Map);
    assert_eq!(map.len(), 15);
    assert!(median3(&map[12..]) < median3(&map[..3]), "{map:?}");
}

#[test]
fn tracking_from_the_true_pose_stays_put() {
    let intr = small_intr();
    let gt = TrajectorySpec::box_room_orbit(100).poses()[0];
    let mut slam = converged(intr, &gt);
    // A stationary camera predicts the previous pose, so tracking starts at the truth.
    let est = slam.process_frame(&frame_at(&gt, &intr), None).unwrap();
    let (dt, dr) = est.distance(&gt);
    // Adam's first step alone moves each coordinate by about the 1e-3 learning rate.
    assert!(dt < 5e-3 && dr.to_degrees() < 0.5, "drift {dt} m, {} deg", dr.to_degrees());
}

#[test]
fn tracking_reduces_a_small_offset() {
    let intr = small_intr();
    let gt0 = TrajectorySpec::box_room_orbit(100).poses()[0];
    let mut slam = converged(intr, &gt0);
    let gt1 = Pose::new(gt0.q, gt0.t + Vector3::new(0.02, 0.0, -0.01));
    let est = slam.process_frame(&frame_at(&gt1, &intr), None).unwrap();
    let before = gt0.distance(&gt1).0;
    let after = est.distance(&gt1).0;
    // Ten steps at learning rate 1e-3 can travel about 1 cm per coordinate.
    assert!(after < before - 3e-3, "{before} -> {after}");
}

#[test]
fn a_frustum_spanning_two_submaps_trains_both() {
    let intr = small_intr();
    let pose = TrajectorySpec::box_room_orbit(100).poses()[0];
    let frame = frame_at(&pose, &intr);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut field = SceneField::new(&FieldConfig::default(), &mut rng);
    // Split the room through the camera along a horizontal axis across the view direction.
    let forward = pose.q * Vector3::z();
    let a = if forward.x.abs() < forward.y.abs() { 0 } else { 1 };
    let (lo, hi) = (AnalyticScene::box_room().bounds.min, AnalyticScene::box_room().bounds.max);
    let (mut mid_hi, mut mid_lo) = (hi, lo);
    mid_hi[a] = pose.t[a];
    mid_lo[a] = pose.t[a];
    field.manager.push(Aabb::new(lo, mid_hi).unwrap(), &mut rng).unwrap();
    field.manager.push(Aabb::new(mid_lo, hi).unwrap(), &mut rng).unwrap();
    let pixels: Vec<PixelSample> = (0..intr.num_pixels())
        .map(|i| PixelSample {
            frame: 0,
            u: (i % intr.width) as f64,
            v: (i / intr.width) as f64,
            depth: frame.depth[i],
            color: frame.color[i],
        })
        .collect();
    let mut poses = vec![pose_block("pose", &pose, 0.0)];
    evaluate(
        &mut field,
        &mut poses,
        &pixels,
        &intr,
        &ObjectiveConfig::default(),
        GradTargets { scene: true, poses: &[false] },
        &mut Workspace::default(),
        &mut rng,
    )
    .unwrap();
    for k in 0..2 {
        let trained = field.blocks().iter().filter(|b| b.name.starts_with(&format!("submap{k}."))).any(|b| b.has_nonzero_grad());
        assert!(trained, "submap {k} received no gradient");
    }
}
