use nalgebra::Vector3;
use panelnav::pipeline::{
    build_simulation, run_stage1, surface_voxel_set, ScenarioConfig, StageOneParams,
};
use panelnav::scene::DepthProfileKind;
use panelnav::voxel::{OccupancyMap, OccupancyParams};

#[test]
#[ignore]
fn coverage_diagnostics() {
    let cfg = ScenarioConfig::default();
    let sim = build_simulation(&cfg).unwrap();
    let stage1 = run_stage1(&sim, &StageOneParams::default()).unwrap();
    let surface = surface_voxel_set(&sim.scene, &stage1.map);
    let mut missing_by_z: std::collections::BTreeMap<i64, usize> = Default::default();
    let mut total_by_z: std::collections::BTreeMap<i64, usize> = Default::default();
    let mut missing_xy: Vec<(i64, i64)> = Vec::new();
    for v in &surface {
        *total_by_z.entry(v.2).or_default() += 1;
        if !stage1.map.is_occupied(*v) {
            *missing_by_z.entry(v.2).or_default() += 1;
            if v.2 == 10 {
                missing_xy.push((v.0, v.1));
            }
        }
    }
    println!("coverage {}", stage1.surface_coverage);
    for (z, total) in &total_by_z {
        let miss = missing_by_z.get(z).copied().unwrap_or(0);
        println!("z={z:>3} total={total:>4} missing={miss:>4}");
    }
    println!("mid-height missing xy: {missing_xy:?}");
}

#[test]
#[ignore]
fn voxel_history() {
    let cfg = ScenarioConfig::default();
    let sim = build_simulation(&cfg).unwrap();
    let target = (9i64, 15i64, 10i64);
    let mut map = OccupancyMap::new(OccupancyParams::default()).unwrap();
    let panel_inv = sim.scene.panel_pose.inverse();
    let mut prev = 0.0f64;
    for step in &sim.steps {
        let cam_in_panel = panel_inv
            .compose(&step.gt_camera)
            .unwrap();
        let depth = sim.depth_frame(step.index, DepthProfileKind::Reference);
        let points: Vec<Vector3<f64>> = depth
            .cloud()
            .iter()
            .map(|p| cam_in_panel.transform_point(p))
            .collect();
        let endpoints_in = points
            .iter()
            .filter(|p| map.voxel_of(p) == target)
            .count();
        map.integrate_cloud(&cam_in_panel.position, &points);
        let lo = map.log_odds(target);
        if (lo - prev).abs() > 1e-12 {
            println!(
                "step {:>3} t={:>5.1} endpoints={} lo {:>8.3} -> {:>8.3} cam=({:.2},{:.2})",
                step.index, step.t, endpoints_in, prev, lo,
                cam_in_panel.position.x, cam_in_panel.position.y
            );
        }
        prev = lo;
    }
}

#[test]
#[ignore]
fn coverage_quiet_and_noisy() {
    for quiet in [true, false] {
        let mut cfg = ScenarioConfig::default();
        if quiet {
            cfg.noise = panelnav::pipeline::NoiseConfig::quiet();
        }
        let sim = build_simulation(&cfg).unwrap();
        let stage1 = run_stage1(&sim, &StageOneParams::default()).unwrap();
        println!(
            "quiet={quiet} coverage={:.4} occupied={} integrated={}",
            stage1.surface_coverage, stage1.occupied_voxels, stage1.integrated_frames
        );
    }
}

#[test]
#[ignore]
fn tracker_freeze_diagnostics() {
    use panelnav::marker_odom::{
        infer_robot_pose, panel_pose_sample, MarkerRegistry, PanelPoseTracker, PanelTrackerParams,
    };
    use panelnav::fusion::{FilterState, Fusion, FusionConfig, MeasurementEvent, MeasurementPayload};

    let mut cfg = ScenarioConfig::default();
    cfg.noise = cfg.noise.calibrated();
    let sim = build_simulation(&cfg).unwrap();
    let registry = MarkerRegistry::from_scene(&sim.scene);
    let mut fusion = Fusion::new(
        FusionConfig::default(),
        FilterState::at_rest(sim.steps[0].t, &sim.steps[0].gt_robot, 1e-6, 1e-6),
    )
    .unwrap();
    let mut tracker = PanelPoseTracker::new(PanelTrackerParams::default());
    let mut det_frames = 0;
    let mut ok_frames = 0;
    let mut consistent_frames = 0;
    let mut samples: Vec<(f64, Vector3<f64>, f64)> = Vec::new();
    for step in &sim.steps {
        fusion
            .ingest(MeasurementEvent {
                timestamp: step.t,
                payload: MeasurementPayload::DeadReckonTwist(step.twist.clone()),
            })
            .unwrap();
        if step.detections.is_empty() {
            continue;
        }
        det_frames += 1;
        let Ok(est) = infer_robot_pose(&step.detections, &registry, &panelnav::scene::camera_extrinsics()) else { continue; };
        ok_frames += 1;
        if !est.consistent {
            continue;
        }
        consistent_frames += 1;
        let s = panel_pose_sample(&fusion.state().pose(), &est.pose).unwrap();
        let rot = (sim.scene.panel_pose.orientation.inverse() * s.orientation)
            .scaled_axis()
            .norm();
        samples.push((step.t, s.position - sim.scene.panel_pose.position, rot));
        tracker.push(s);
        if tracker.fixed().is_some() {
            println!("froze at t={} after {} samples", step.t, samples.len());
            break;
        }
    }
    println!("det={} ok={} consistent={}", det_frames, ok_frames, consistent_frames);
    for (t, dp, rot) in samples.iter().take(40) {
        println!("t={t:5.2} dpos=({:+.3},{:+.3},{:+.3}) |rot|={:.4}", dp.x, dp.y, dp.z, rot);
    }
}
