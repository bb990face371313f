//! End-to-end runs on the synthetic panel scenario: sensor stream
//! construction, stage-1 occupancy mapping from marker localization,
//! plane extraction evaluation, and the gated multi-modal fusion
//! variants. Everything is deterministic in (config, seeds); depth
//! frames are derived lazily from per-step seeds so unused modalities
//! cost nothing.

use crate::features::{
    estimate_motion, make_feature_frame, relocalize, FeatureError, FeatureFrame, FeatureParams,
    KeyframePolicy, KeyframeStore,
};
use crate::fusion::{
    lag_one_autocorrelation, pose_error, FeatureDeltaMeasurement, FilterState, Fusion,
    FusionConfig, FusionError, MeasurementEvent, MeasurementPayload, MetricsReport, NisRecord,
    PlaneRotationMeasurement, TwistMeasurement,
};
use crate::geometry::{FramedPose, GeometryError, PoseWithCovariance};
use crate::iqa::{aggregate, feature_score, mdm_score, Gate, GateConfig, IqaError, Modality};
use crate::marker_odom::{
    infer_robot_pose, panel_pose_sample, MarkerError, MarkerRegistry, PanelPoseTracker,
    PanelTrackerParams,
};
use crate::planes::{extract_planes, ExtractionParams, FittedPlane, PlaneError};
use crate::registration::{
    estimate_rotation, match_planes, paired_normals, MatchParams, RegistrationError,
};
use crate::rng;
use crate::scene::{
    build_panel_scene, camera_extrinsics, detect_markers, generate_trajectory,
    render_image_proxy, DepthFrame, DepthProfile, DepthProfileKind, ImageProxy, PointLabel,
    Scene, SceneError,
};
use crate::voxel::{OccupancyIndex, OccupancyMap, OccupancyParams, VoxelError};
use nalgebra::{Matrix3, Matrix6, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeSet;
use thiserror::Error;

// SALT_DEPTH spans three values, one per depth profile.
const SALT_TWIST: u64 = 0x70;
const SALT_OUTAGE: u64 = 0x71;
const SALT_DETECTIONS: u64 = 0x72;
const SALT_IMAGE: u64 = 0x73;
const SALT_DEPTH: u64 = 0x74;
const SALT_FEATURES: u64 = 0x78;
const SALT_MOTION: u64 = 0x79;
const SALT_DRIFT: u64 = 0x7A;

/// Stereo geometry behind the depth accuracy rule: disparity error of
/// 3 px maps to 3 z^2 / (f b) meters of depth error.
pub const STEREO_FOCAL_PX: f64 = 595.8;
pub const STEREO_BASELINE_M: f64 = 0.3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Marker(#[from] MarkerError),
    #[error(transparent)]
    Plane(#[from] PlaneError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Voxel(#[from] VoxelError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Iqa(#[from] IqaError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("filtered plane evaluation needs a stage-1 map")]
    MissingMap,
    #[error("simulation produced no sensor steps")]
    EmptySimulation,
}

/// Sensor corruption levels. `quiet` turns everything off for
/// exactness tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub twist_linear_sigma: f64,
    pub twist_angular_sigma: f64,
    /// Unmodeled yaw-rate offset; the drift source dead reckoning
    /// cannot see.
    pub gyro_yaw_bias: f64,
    pub marker_position_sigma: f64,
    pub marker_rotation_sigma: f64,
    pub feature_sigma: f64,
    pub feature_outlier_rate: f64,
    /// How strongly low image quality degrades feature measurements.
    pub quality_noise_gain: f64,
    /// Whole-constellation apparent shift per low-quality frame, meters
    /// at full quality deficit. Backscatter and refraction move every
    /// tracked point coherently, so the shift survives consensus checks
    /// and the residuals stay small.
    pub feature_drift_sigma: f64,
    /// Whole-constellation apparent rotation counterpart, radians.
    pub feature_drift_rot_sigma: f64,
    /// Long-run fraction of frames inside a fiducial detection outage.
    pub marker_outage_rate: f64,
    /// Mean outage burst length, seconds.
    pub marker_outage_mean_s: f64,
    /// Outage-free lead-in; the survey starts once fiducial lock is
    /// confirmed, so the panel anchor freezes from clean fixes.
    pub marker_outage_grace_s: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            twist_linear_sigma: 0.05,
            twist_angular_sigma: 0.04,
            gyro_yaw_bias: 0.002,
            marker_position_sigma: 0.01,
            marker_rotation_sigma: 0.01,
            feature_sigma: 0.003,
            feature_outlier_rate: 0.05,
            quality_noise_gain: 4.0,
            feature_drift_sigma: 0.05,
            feature_drift_rot_sigma: 0.06,
            marker_outage_rate: 0.35,
            marker_outage_mean_s: 2.5,
            marker_outage_grace_s: 8.0,
        }
    }
}

impl NoiseConfig {
    /// Mapping-pass variant: same sensors, freshly calibrated gyro and
    /// a clean fiducial lock. Maps are built under good conditions; the
    /// localization runs afterwards inherit whatever this run produced.
    pub fn calibrated(&self) -> Self {
        Self {
            gyro_yaw_bias: 0.0,
            marker_outage_rate: 0.0,
            ..*self
        }
    }

    pub fn quiet() -> Self {
        Self {
            twist_linear_sigma: 0.0,
            twist_angular_sigma: 0.0,
            gyro_yaw_bias: 0.0,
            marker_position_sigma: 0.0,
            marker_rotation_sigma: 0.0,
            feature_sigma: 0.0,
            feature_outlier_rate: 0.0,
            quality_noise_gain: 0.0,
            feature_drift_sigma: 0.0,
            feature_drift_rot_sigma: 0.0,
            marker_outage_rate: 0.0,
            marker_outage_mean_s: 0.0,
            marker_outage_grace_s: 0.0,
        }
    }
}

/// One circling experiment: scene, trajectory, sensing.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scene_seed: u64,
    pub run_seed: u64,
    pub side_length: f64,
    pub corner_radius: f64,
    pub standoff: f64,
    /// Revolution rate, rad/s.
    pub angular_rate: f64,
    pub duration: f64,
    pub sensor_rate: f64,
    pub noise: NoiseConfig,
    /// Depth generator used by plane odometry in fusion runs.
    pub depth_profile: DepthProfileKind,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scene_seed: 1,
            run_seed: 1,
            side_length: 3.0,
            corner_radius: 0.3,
            standoff: 1.5,
            angular_rate: 2.0 * std::f64::consts::PI / 60.0,
            duration: 60.0,
            sensor_rate: 10.0,
            noise: NoiseConfig::default(),
            depth_profile: DepthProfileKind::CompleteSmooth,
        }
    }
}

/// Everything the sensors deliver at one timestamp, in replay order
/// twist, markers, camera.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorStep {
    pub index: usize,
    pub t: f64,
    pub gt_robot: FramedPose,
    pub gt_camera: FramedPose,
    pub twist: TwistMeasurement,
    pub detections: Vec<(u32, FramedPose)>,
    pub image: ImageProxy,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub scene: Scene,
    pub registry: MarkerRegistry,
    pub extrinsics: FramedPose,
    pub config: ScenarioConfig,
    pub steps: Vec<SensorStep>,
}

pub fn profile_of(kind: DepthProfileKind) -> DepthProfile {
    match kind {
        DepthProfileKind::Reference => DepthProfile::reference(),
        DepthProfileKind::AccurateSparse => DepthProfile::accurate_sparse(),
        DepthProfileKind::CompleteSmooth => DepthProfile::complete_smooth(),
    }
}

fn profile_salt(kind: DepthProfileKind) -> u64 {
    match kind {
        DepthProfileKind::Reference => 0,
        DepthProfileKind::AccurateSparse => 1,
        DepthProfileKind::CompleteSmooth => 2,
    }
}

pub fn build_simulation(config: &ScenarioConfig) -> Result<Simulation, PipelineError> {
    let scene = build_panel_scene(config.scene_seed, config.side_length, config.corner_radius)?;
    let trajectory = generate_trajectory(
        &scene,
        config.standoff,
        config.angular_rate,
        config.duration,
        config.sensor_rate,
    )?;
    if trajectory.is_empty() {
        return Err(PipelineError::EmptySimulation);
    }
    let extrinsics = camera_extrinsics();
    let noise = &config.noise;

    // Fiducial detection outages as a two-state chain whose stationary
    // occupancy matches the configured rate. Bursts, not independent
    // drops: dead reckoning must actually bridge a gap.
    let mut outage = vec![false; trajectory.len()];
    if noise.marker_outage_rate > 0.0 && noise.marker_outage_mean_s > 0.0 {
        let mut draw = rng::chacha(rng::derive2(config.run_seed, SALT_OUTAGE, 0), 0);
        let dt = 1.0 / config.sensor_rate;
        let rate = noise.marker_outage_rate.min(0.95);
        let p_exit = (dt / noise.marker_outage_mean_s).min(1.0);
        let p_enter = (p_exit * rate / (1.0 - rate)).min(1.0);
        let mut dark = false;
        for (k, slot) in outage.iter_mut().enumerate() {
            if (k as f64) * dt < noise.marker_outage_grace_s {
                continue;
            }
            *slot = dark;
            let flip = if dark { p_exit } else { p_enter };
            if draw.random_bool(flip) {
                dark = !dark;
            }
        }
    }

    let mut steps = Vec::with_capacity(trajectory.len());
    for (k, sample) in trajectory.iter().enumerate() {
        let gt_camera = sample.pose.compose(&extrinsics)?;
        let mut draw = rng::chacha(rng::derive2(config.run_seed, SALT_TWIST, k as u64), 0);
        let gauss3 = |draw: &mut rand_chacha::ChaCha8Rng| {
            Vector3::new(
                draw.sample::<f64, _>(StandardNormal),
                draw.sample::<f64, _>(StandardNormal),
                draw.sample::<f64, _>(StandardNormal),
            )
        };
        let linear = sample.linear + gauss3(&mut draw) * noise.twist_linear_sigma;
        let angular = sample.angular
            + gauss3(&mut draw) * noise.twist_angular_sigma
            + Vector3::new(0.0, 0.0, noise.gyro_yaw_bias);
        let mut covariance = Matrix6::zeros();
        for i in 0..3 {
            covariance[(i, i)] = noise.twist_linear_sigma * noise.twist_linear_sigma;
            covariance[(3 + i, 3 + i)] = noise.twist_angular_sigma * noise.twist_angular_sigma;
        }
        let detections = if outage[k] {
            Vec::new()
        } else {
            detect_markers(
                &scene,
                &gt_camera,
                noise.marker_position_sigma,
                noise.marker_rotation_sigma,
                rng::derive2(config.run_seed, SALT_DETECTIONS, k as u64),
            )
        };
        let image = render_image_proxy(
            &scene,
            &gt_camera,
            sample.t,
            rng::derive2(config.run_seed, SALT_IMAGE, k as u64),
        );
        steps.push(SensorStep {
            index: k,
            t: sample.t,
            gt_robot: sample.pose,
            gt_camera,
            twist: TwistMeasurement {
                linear,
                angular,
                covariance,
            },
            detections,
            image,
        });
    }
    Ok(Simulation {
        registry: MarkerRegistry::from_scene(&scene),
        scene,
        extrinsics,
        config: config.clone(),
        steps,
    })
}

impl Simulation {
    /// Depth frame for one step, rendered on demand.
    pub fn depth_frame(&self, index: usize, kind: DepthProfileKind) -> DepthFrame {
        let seed = rng::derive2(
            self.config.run_seed,
            SALT_DEPTH + profile_salt(kind),
            index as u64,
        );
        crate::scene::render_depth(
            &self.scene,
            &self.steps[index].gt_camera,
            &profile_of(kind),
            seed,
        )
    }

    /// Feature frame for one step at the given corruption level. The
    /// drift sigmas apply one rigid whole-frame perturbation on top of
    /// the per-point noise; consecutive frames draw independent
    /// perturbations, so the implied motion is wrong while the point
    /// set stays self-consistent.
    pub fn feature_frame(
        &self,
        index: usize,
        quality: f64,
        sigma: f64,
        outlier_rate: f64,
        drift_sigma: f64,
        drift_rot_sigma: f64,
        max_features: usize,
    ) -> FeatureFrame {
        let mut frame = make_feature_frame(
            &self.scene,
            &self.steps[index].gt_camera,
            self.steps[index].t,
            quality,
            sigma,
            outlier_rate,
            max_features,
            rng::derive2(self.config.run_seed, SALT_FEATURES, index as u64),
        );
        if drift_sigma > 0.0 || drift_rot_sigma > 0.0 {
            let mut draw = rng::chacha(
                rng::derive2(self.config.run_seed, SALT_DRIFT, index as u64),
                0,
            );
            let gauss3 = |draw: &mut rand_chacha::ChaCha8Rng| {
                Vector3::new(
                    draw.sample::<f64, _>(StandardNormal),
                    draw.sample::<f64, _>(StandardNormal),
                    draw.sample::<f64, _>(StandardNormal),
                )
            };
            let shift = gauss3(&mut draw) * drift_sigma;
            let spin = UnitQuaternion::from_scaled_axis(gauss3(&mut draw) * drift_rot_sigma);
            for (_, p) in frame.observations.iter_mut() {
                *p = spin * *p + shift;
            }
        }
        frame
    }
}

// ---------------------------------------------------------------- stage 1

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageOneParams {
    pub tracker: PanelTrackerParams,
    pub map: OccupancyParams,
    pub fusion: FusionConfig,
    /// Integrate every n-th camera frame.
    pub integration_stride: usize,
}

impl Default for StageOneParams {
    fn default() -> Self {
        Self {
            tracker: PanelTrackerParams::default(),
            map: OccupancyParams::default(),
            fusion: FusionConfig::default(),
            integration_stride: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageOneResult {
    /// Panel-frame occupancy map.
    pub map: OccupancyMap,
    /// Odom <- Panel, frozen by the startup tracker.
    pub panel_pose: FramedPose,
    pub occupied_voxels: usize,
    /// Fraction of true panel-surface voxels the map marks occupied.
    pub surface_coverage: f64,
    pub integrated_frames: usize,
}

/// Marker pose estimate lifted into the odometry frame through a
/// fixed panel pose; covariance position block rotates along.
fn marker_measurement_in_odom(
    panel_pose: &FramedPose,
    estimate_pose: &FramedPose,
    covariance: &Matrix6<f64>,
) -> Result<PoseWithCovariance, GeometryError> {
    let pose = panel_pose.compose(estimate_pose)?;
    let r = panel_pose.orientation.to_rotation_matrix();
    let mut j = Matrix6::identity();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(r.matrix());
    let cov = j * covariance * j.transpose();
    Ok(PoseWithCovariance {
        pose,
        covariance: cov,
    })
}

/// Voxel indices on the true panel surface, sampled at half the map
/// resolution.
pub fn surface_voxel_set(scene: &Scene, map: &OccupancyMap) -> BTreeSet<(i64, i64, i64)> {
    let res = map.params().resolution;
    let step = res * 0.5;
    let mut voxels = BTreeSet::new();
    for side in &scene.sides {
        let width = side.half_width * 2.0;
        let height = side.z_max - side.z_min;
        let nu = (width / step).ceil() as i64;
        let nz = (height / step).ceil() as i64;
        for iu in 0..=nu {
            let u = -side.half_width + width * iu as f64 / nu as f64;
            for iz in 0..=nz {
                let z = side.z_min + height * iz as f64 / nz as f64;
                let p = side.center
                    + side.tangent * u
                    + Vector3::new(0.0, 0.0, z - (side.z_min + side.z_max) * 0.5);
                voxels.insert(map.voxel_of(&p));
            }
        }
    }
    for corner in &scene.corners {
        let arc = corner.radius * (corner.angle_range.1 - corner.angle_range.0);
        let na = (arc / step).ceil() as i64;
        let nz = (crate::scene::PANEL_HEIGHT / step).ceil() as i64;
        for ia in 0..=na {
            let phi = corner.angle_range.0
                + (corner.angle_range.1 - corner.angle_range.0) * ia as f64 / na as f64;
            for iz in 0..=nz {
                let z = crate::scene::PANEL_HEIGHT * iz as f64 / nz as f64;
                let p = Vector3::new(
                    corner.center_xy.x + corner.radius * phi.cos(),
                    corner.center_xy.y + corner.radius * phi.sin(),
                    z,
                );
                voxels.insert(map.voxel_of(&p));
            }
        }
    }
    voxels
}

/// First pass around the panel: marker-based localization anchors the
/// panel frame, dead reckoning bridges the gaps, and reference-grade
/// depth builds the panel-frame occupancy map.
pub fn run_stage1(sim: &Simulation, params: &StageOneParams) -> Result<StageOneResult, PipelineError> {
    if sim.steps.is_empty() {
        return Err(PipelineError::EmptySimulation);
    }
    let mut fusion = Fusion::new(
        params.fusion,
        FilterState::at_rest(sim.steps[0].t, &sim.steps[0].gt_robot, 1e-6, 1e-6),
    )?;
    let mut tracker = PanelPoseTracker::new(params.tracker);
    let mut map = OccupancyMap::new(params.map)?;
    let mut integrated = 0usize;
    let stride = params.integration_stride.max(1);

    for step in &sim.steps {
        fusion.ingest(MeasurementEvent {
            timestamp: step.t,
            payload: MeasurementPayload::DeadReckonTwist(step.twist.clone()),
        })?;
        // A consistent marker fix localizes the robot in the panel
        // frame directly; it both anchors the panel pose and gives the
        // drift-free integration pose for this frame.
        let mut robot_in_panel = None;
        if !step.detections.is_empty() {
            if let Ok(est) = infer_robot_pose(&step.detections, &sim.registry, &sim.extrinsics) {
                if est.consistent {
                    tracker.push(panel_pose_sample(&fusion.state().pose(), &est.pose)?);
                    robot_in_panel = Some(est.pose);
                    if let Some(panel) = tracker.fixed().cloned() {
                        let m = marker_measurement_in_odom(&panel, &est.pose, &est.covariance)?;
                        fusion.ingest(MeasurementEvent {
                            timestamp: step.t,
                            payload: MeasurementPayload::MarkerPose(m),
                        })?;
                    }
                }
            }
        }
        if let Some(panel) = tracker.fixed() {
            if step.index % stride == 0 {
                // Away from the markers the odometry estimate bridges
                // through the frozen panel pose.
                let robot = match robot_in_panel {
                    Some(pose) => pose,
                    None => panel.inverse().compose(&fusion.state().pose())?,
                };
                let cam_in_panel = robot.compose(&sim.extrinsics)?;
                let depth = sim.depth_frame(step.index, DepthProfileKind::Reference);
                let points: Vec<Vector3<f64>> = depth
                    .cloud()
                    .iter()
                    .map(|p| cam_in_panel.transform_point(p))
                    .collect();
                map.integrate_cloud(&cam_in_panel.position, &points);
                integrated += 1;
            }
        }
    }

    let panel_pose = tracker
        .fixed()
        .cloned()
        .unwrap_or_else(|| sim.scene.panel_pose);
    let surface = surface_voxel_set(&sim.scene, &map);
    let covered = surface.iter().filter(|v| map.is_occupied(**v)).count();
    let coverage = if surface.is_empty() {
        0.0
    } else {
        covered as f64 / surface.len() as f64
    };
    Ok(StageOneResult {
        occupied_voxels: map.occupied_centers().len(),
        surface_coverage: coverage,
        integrated_frames: integrated,
        map,
        panel_pose,
    })
}

// ------------------------------------------------------------- plane eval

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneEvalParams {
    pub match_params: MatchParams,
    /// Evaluate every n-th frame.
    pub frame_stride: usize,
    pub filter_radius_scale: f64,
}

impl Default for PlaneEvalParams {
    fn default() -> Self {
        Self {
            match_params: MatchParams::default(),
            frame_stride: 1,
            filter_radius_scale: 1.5,
        }
    }
}

/// Table-style aggregate for one (profile, filtered) arm.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneEvalRow {
    pub profile: DepthProfileKind,
    pub filtered: bool,
    /// Mean fraction of delivered points within the depth error rule.
    pub accuracy: f64,
    /// Mean fraction of surface rays delivered (after filtering).
    pub coverage: f64,
    pub plane_count: usize,
    pub hole_count: usize,
    pub orientation_error_mean_deg: f64,
    pub orientation_error_std_deg: f64,
    /// Frames contributing a full-rank frame-to-frame rotation.
    pub registration_frames: usize,
    pub frames: usize,
}

/// Depth correctness rule: within 3 px of stereo disparity or 5% of
/// the true depth, whichever is looser.
pub fn depth_error_tolerance(true_depth: f64) -> f64 {
    let disparity_term = 3.0 * true_depth * true_depth / (STEREO_FOCAL_PX * STEREO_BASELINE_M);
    disparity_term.max(0.05 * true_depth)
}

/// Per-profile extraction/filter evaluation against ground-truth
/// camera poses. Filtered arms need the stage-1 map.
pub fn run_plane_eval(
    sim: &Simulation,
    stage1: Option<&StageOneResult>,
    profiles: &[DepthProfileKind],
    params: &PlaneEvalParams,
) -> Result<Vec<PlaneEvalRow>, PipelineError> {
    let mut rows = Vec::new();
    for &profile in profiles {
        for filtered in [false, true] {
            rows.push(run_plane_arm(sim, stage1, profile, filtered, params)?);
        }
    }
    Ok(rows)
}

/// One (profile, filtered) evaluation arm.
pub fn run_plane_arm(
    sim: &Simulation,
    stage1: Option<&StageOneResult>,
    kind: DepthProfileKind,
    filtered: bool,
    params: &PlaneEvalParams,
) -> Result<PlaneEvalRow, PipelineError> {
    let index: Option<(OccupancyIndex, f64)> = if filtered {
        let s = stage1.ok_or(PipelineError::MissingMap)?;
        let radius = params.filter_radius_scale * s.map.params().resolution;
        Some((s.map.build_index(), radius))
    } else {
        None
    };
    let profile = profile_of(kind);
    let extraction = ExtractionParams::for_noise(profile.depth_noise_sigma);
    let stride = params.frame_stride.max(1);

    let mut accuracy_sum = 0.0;
    let mut coverage_sum = 0.0;
    let mut frames = 0usize;
    let mut plane_count = 0usize;
    let mut hole_count = 0usize;
    let mut orientation_errors = Vec::new();
    let mut prev: Option<(FramedPose, Vec<FittedPlane>)> = None;

    for step in sim.steps.iter().step_by(stride) {
        let depth = sim.depth_frame(step.index, kind);
        let delivered: Vec<&crate::scene::LabeledPoint> = depth
            .points
            .iter()
            .filter(|p| p.label != PointLabel::Dropout)
            .collect();
        let cam_in_panel = sim
            .scene
            .panel_pose
            .inverse()
            .compose(&step.gt_camera)?;
        let kept: Vec<&crate::scene::LabeledPoint> = match &index {
            Some((idx, radius)) => {
                let panel_pts: Vec<Vector3<f64>> = delivered
                    .iter()
                    .map(|p| cam_in_panel.transform_point(&p.point))
                    .collect();
                let mask = idx.retain_mask(&panel_pts, *radius);
                delivered
                    .iter()
                    .zip(mask)
                    .filter(|(_, keep)| *keep)
                    .map(|(p, _)| *p)
                    .collect()
            }
            None => delivered,
        };

        if depth.surface_rays > 0 {
            coverage_sum += kept.len() as f64 / depth.surface_rays as f64;
        }
        let correct = kept
            .iter()
            .filter(|p| (p.depth - p.true_depth).abs() < depth_error_tolerance(p.true_depth))
            .count();
        if !kept.is_empty() {
            accuracy_sum += correct as f64 / kept.len() as f64;
        }
        frames += 1;

        let cloud: Vec<Vector3<f64>> = kept.iter().map(|p| p.point).collect();
        let extraction_result = extract_planes(&cloud, &Vector3::zeros(), &extraction)?;
        plane_count += extraction_result.planes.len();
        hole_count += extraction_result
            .planes
            .iter()
            .map(|p| p.hole_count)
            .sum::<usize>();
        let planes: Vec<FittedPlane> = extraction_result
            .planes
            .iter()
            .map(|p| p.plane.clone())
            .collect();

        if let Some((prev_cam, prev_planes)) = &prev {
            let pairs = match_planes(prev_planes, &planes, &params.match_params);
            if !pairs.is_empty() {
                if let Ok(est) = estimate_rotation(&paired_normals(prev_planes, &planes, &pairs))
                {
                    if est.observable_dof == 3 {
                        let gt_rel =
                            prev_cam.orientation.inverse() * step.gt_camera.orientation;
                        let err = crate::geometry::geodesic_distance(&est.rotation, &gt_rel);
                        orientation_errors.push(err.to_degrees());
                    }
                }
            }
        }
        prev = Some((step.gt_camera, planes));
    }

    let (mean, std) = crate::fusion::mean_std(&orientation_errors);
    Ok(PlaneEvalRow {
        profile: kind,
        filtered,
        accuracy: if frames > 0 {
            accuracy_sum / frames as f64
        } else {
            0.0
        },
        coverage: if frames > 0 {
            coverage_sum / frames as f64
        } else {
            0.0
        },
        plane_count,
        hole_count,
        orientation_error_mean_deg: mean,
        orientation_error_std_deg: std,
        registration_frames: orientation_errors.len(),
        frames,
    })
}

// ------------------------------------------------------------ fusion runs

/// Which measurement set a run fuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// Every modality, no gating.
    All,
    /// Markers plus IQA-gated visual odometry.
    Adaptive,
    /// Dead reckoning plus markers.
    MarkersOnly,
    /// IQA-gated visual odometry without marker updates.
    GatedNoMarkers,
}

impl FusionMode {
    fn uses_markers(self) -> bool {
        !matches!(self, FusionMode::GatedNoMarkers)
    }

    fn uses_camera(self) -> bool {
        !matches!(self, FusionMode::MarkersOnly)
    }

    fn gated(self) -> bool {
        matches!(self, FusionMode::Adaptive | FusionMode::GatedNoMarkers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionRunParams {
    pub fusion: FusionConfig,
    pub gate: GateConfig,
    /// Pins the gate decision for every frame when set.
    pub gate_override: Option<Modality>,
    pub features: FeatureParams,
    pub keyframes: KeyframePolicy,
    pub match_params: MatchParams,
    /// Scales the registration-derived rotation covariance.
    pub plane_rot_var_scale: f64,
    /// Variance assigned to rotation directions the planes leave
    /// unconstrained.
    pub rot_inflation: f64,
    /// Filter plane clouds through the stage-1 map.
    pub use_map_filter: bool,
    pub initial_position_var: f64,
    pub initial_rotation_var: f64,
}

impl Default for FusionRunParams {
    fn default() -> Self {
        Self {
            fusion: FusionConfig::default(),
            gate: GateConfig::default(),
            gate_override: None,
            features: FeatureParams::default(),
            keyframes: KeyframePolicy::default(),
            match_params: MatchParams::default(),
            plane_rot_var_scale: 1.0,
            rot_inflation: 1e6,
            use_map_filter: true,
            initial_position_var: 1e-4,
            initial_rotation_var: 1e-4,
        }
    }
}

/// One per-frame output sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub pose: FramedPose,
    pub err_p: f64,
    pub err_q: f64,
    pub modality: &'static str,
}

/// One IQA trace sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IqaRow {
    pub t: f64,
    pub mdm: Vector3<f64>,
    pub feature: f64,
    pub average: f64,
    pub choice: Modality,
    /// Which panel region the camera faced.
    pub facing_side: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct FusionRunResult {
    pub mode: FusionMode,
    pub trajectory: Vec<TrajectoryRow>,
    /// Per-frame errors against simulation ground truth.
    pub metrics: MetricsReport,
    /// Errors against marker-derived poses, sampled before the
    /// marker update was applied.
    pub marker_metrics: MetricsReport,
    pub iqa: Vec<IqaRow>,
    pub nis: Vec<NisRecord>,
    pub tracking_failures: usize,
    pub relocalizations: usize,
}

/// The camera-facing panel region of a step, from the true pose.
fn facing_side(sim: &Simulation, step: &SensorStep) -> Option<usize> {
    let in_panel = sim
        .scene
        .panel_pose
        .inverse()
        .compose(&step.gt_robot)
        .ok()?;
    match sim
        .scene
        .facing(&nalgebra::Vector2::new(in_panel.position.x, in_panel.position.y))
    {
        crate::scene::Facing::Side(k) => Some(k),
        _ => None,
    }
}

/// Maps a camera-frame relative rotation and tangent covariance into
/// the robot frame through the fixed extrinsics.
fn rotation_to_robot(
    extrinsics: &FramedPose,
    rotation: UnitQuaternion<f64>,
    covariance: Matrix3<f64>,
) -> (UnitQuaternion<f64>, Matrix3<f64>) {
    let q_e = extrinsics.orientation;
    let r_e = q_e.to_rotation_matrix();
    (
        q_e * rotation * q_e.inverse(),
        r_e.matrix() * covariance * r_e.matrix().transpose(),
    )
}

/// Maps a camera-frame relative pose and its (translation, rotation)
/// covariance into the robot frame: the adjoint of the extrinsics.
fn delta_to_robot(
    extrinsics: &FramedPose,
    delta: &FramedPose,
    covariance: &Matrix6<f64>,
) -> Result<(FramedPose, Matrix6<f64>), GeometryError> {
    let mapped = extrinsics.compose(delta)?.compose(&extrinsics.inverse())?;
    let r_e = extrinsics.orientation.to_rotation_matrix();
    let t_skew = Matrix3::new(
        0.0,
        -extrinsics.position.z,
        extrinsics.position.y,
        extrinsics.position.z,
        0.0,
        -extrinsics.position.x,
        -extrinsics.position.y,
        extrinsics.position.x,
        0.0,
    );
    let mut adj = Matrix6::zeros();
    adj.fixed_view_mut::<3, 3>(0, 0).copy_from(r_e.matrix());
    adj.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(t_skew * r_e.matrix()));
    adj.fixed_view_mut::<3, 3>(3, 3).copy_from(r_e.matrix());
    Ok((mapped, adj * covariance * adj.transpose()))
}

/// Runs one fusion variant over the shared sensor stream.
pub fn run_fusion(
    sim: &Simulation,
    stage1: &StageOneResult,
    mode: FusionMode,
    params: &FusionRunParams,
) -> Result<FusionRunResult, PipelineError> {
    if sim.steps.is_empty() {
        return Err(PipelineError::EmptySimulation);
    }
    let panel_pose = stage1.panel_pose;
    let map_index = if params.use_map_filter {
        Some((
            stage1.map.build_index(),
            1.5 * stage1.map.params().resolution,
        ))
    } else {
        None
    };
    let profile = profile_of(sim.config.depth_profile);
    let extraction = ExtractionParams::for_noise(profile.depth_noise_sigma);

    let mut fusion = Fusion::new(
        params.fusion,
        FilterState::at_rest(
            sim.steps[0].t,
            &sim.steps[0].gt_robot,
            params.initial_position_var,
            params.initial_rotation_var,
        ),
    )?;
    let mut gate = Gate::new(params.gate)?;
    let mut keyframes = KeyframeStore::default();
    let mut prev_feature: Option<(f64, FeatureFrame)> = None;
    let mut prev_planes: Option<(f64, Vec<FittedPlane>)> = None;

    let mut trajectory = Vec::with_capacity(sim.steps.len());
    let mut states = Vec::with_capacity(sim.steps.len());
    let mut iqa_rows = Vec::with_capacity(sim.steps.len());
    let mut gt_errors_p = Vec::new();
    let mut gt_errors_q = Vec::new();
    let mut marker_errors_p = Vec::new();
    let mut marker_errors_q = Vec::new();
    let mut marker_updates = 0usize;
    let mut feature_updates = 0usize;
    let mut plane_updates = 0usize;
    let mut tracking_failures = 0usize;
    let mut relocalizations = 0usize;

    for step in &sim.steps {
        fusion.ingest(MeasurementEvent {
            timestamp: step.t,
            payload: MeasurementPayload::DeadReckonTwist(step.twist.clone()),
        })?;

        if !step.detections.is_empty() {
            if let Ok(est) = infer_robot_pose(&step.detections, &sim.registry, &sim.extrinsics) {
                if est.consistent {
                    let m = marker_measurement_in_odom(&panel_pose, &est.pose, &est.covariance)?;
                    let (ep, eq) = pose_error(&fusion.state().pose(), &m.pose)?;
                    marker_errors_p.push(ep);
                    marker_errors_q.push(eq);
                    if mode.uses_markers() {
                        fusion.ingest(MeasurementEvent {
                            timestamp: step.t,
                            payload: MeasurementPayload::MarkerPose(m),
                        })?;
                        marker_updates += 1;
                    }
                }
            }
        }

        let mdm = mdm_score(&step.image)?;
        let feat = feature_score(step.image.trackable_feature_count, &gate.config());
        let score = aggregate(mdm, feat, step.t, gate.config().averaging);
        let choice = match params.gate_override {
            Some(forced) => forced,
            None => gate.decide(&score),
        };
        iqa_rows.push(IqaRow {
            t: step.t,
            mdm,
            feature: feat,
            average: score.average,
            choice,
            facing_side: facing_side(sim, step),
        });

        let mut modality: &'static str = match mode {
            FusionMode::All => "all",
            FusionMode::MarkersOnly => "none",
            _ => "",
        };

        if mode.uses_camera() {
            let run_features = !mode.gated() || choice == Modality::FeatureVO;
            let mut run_planes = !mode.gated() || choice == Modality::PlaneVO;

            if run_features {
                if mode.gated() {
                    modality = "feature";
                }
                let deficit =
                    ((gate.config().threshold - score.average).max(0.0) / gate.config().threshold)
                        .min(1.0);
                let degrade = 1.0 + sim.config.noise.quality_noise_gain * deficit;
                let sigma = sim.config.noise.feature_sigma * degrade;
                let outliers = (sim.config.noise.feature_outlier_rate * degrade).min(0.9);
                let frame = sim.feature_frame(
                    step.index,
                    score.average,
                    sigma,
                    outliers,
                    sim.config.noise.feature_drift_sigma * deficit,
                    sim.config.noise.feature_drift_rot_sigma * deficit,
                    params.features.max_features,
                );
                let motion_seed = rng::derive2(sim.config.run_seed, SALT_MOTION, step.index as u64);
                let mut tracked = false;
                if let Some((tp, prev)) = &prev_feature {
                    if step.t - tp <= params.fusion.history_horizon {
                        match estimate_motion(prev, &frame, &params.features, motion_seed) {
                            Ok(motion) => {
                                let (delta, cov) = delta_to_robot(
                                    &sim.extrinsics,
                                    &motion.delta,
                                    &motion.covariance,
                                )?;
                                fusion.ingest(MeasurementEvent {
                                    timestamp: step.t,
                                    payload: MeasurementPayload::FeatureDelta(
                                        FeatureDeltaMeasurement {
                                            t_prev: *tp,
                                            delta,
                                            covariance: cov,
                                        },
                                    ),
                                })?;
                                feature_updates += 1;
                                tracked = true;
                            }
                            Err(_) => {
                                tracking_failures += 1;
                                if relocalize(
                                    &keyframes,
                                    &frame,
                                    &sim.extrinsics,
                                    &params.features,
                                    motion_seed,
                                )
                                .is_ok()
                                {
                                    relocalizations += 1;
                                }
                                if mode.gated() {
                                    run_planes = true;
                                    modality = "plane";
                                }
                            }
                        }
                    }
                }
                let _ = tracked;
                keyframes.maybe_insert(&fusion.state().pose(), &frame, &params.keyframes);
                prev_feature = Some((step.t, frame));
            }

            if run_planes {
                if mode.gated() && modality.is_empty() {
                    modality = "plane";
                }
                let depth = sim.depth_frame(step.index, sim.config.depth_profile);
                let mut cloud = depth.cloud();
                if let Some((idx, radius)) = &map_index {
                    let cam_in_panel = panel_pose
                        .inverse()
                        .compose(&fusion.state().pose())?
                        .compose(&sim.extrinsics)?;
                    let panel_pts: Vec<Vector3<f64>> = cloud
                        .iter()
                        .map(|p| cam_in_panel.transform_point(p))
                        .collect();
                    let mask = idx.retain_mask(&panel_pts, *radius);
                    cloud = cloud
                        .into_iter()
                        .zip(mask)
                        .filter(|(_, keep)| *keep)
                        .map(|(p, _)| p)
                        .collect();
                }
                let extraction_result = extract_planes(&cloud, &Vector3::zeros(), &extraction)?;
                let planes: Vec<FittedPlane> = extraction_result
                    .planes
                    .iter()
                    .map(|p| p.plane.clone())
                    .collect();
                if let Some((tp, prev)) = &prev_planes {
                    if step.t - tp <= params.fusion.history_horizon && !planes.is_empty() {
                        let pairs = match_planes(prev, &planes, &params.match_params);
                        if !pairs.is_empty() {
                            if let Ok(est) =
                                estimate_rotation(&paired_normals(prev, &planes, &pairs))
                            {
                                let cov_cam = est
                                    .tangent_covariance(
                                        params.rot_inflation / params.plane_rot_var_scale,
                                    )
                                    * params.plane_rot_var_scale;
                                let (rotation, covariance) =
                                    rotation_to_robot(&sim.extrinsics, est.rotation, cov_cam);
                                fusion.ingest(MeasurementEvent {
                                    timestamp: step.t,
                                    payload: MeasurementPayload::PlaneRotation(
                                        PlaneRotationMeasurement {
                                            t_prev: *tp,
                                            rotation,
                                            covariance,
                                        },
                                    ),
                                })?;
                                plane_updates += 1;
                            }
                        }
                    }
                }
                prev_planes = Some((step.t, planes));
            }
        }
        if modality.is_empty() {
            modality = "none";
        }

        let (err_p, err_q) = pose_error(&fusion.state().pose(), &step.gt_robot)?;
        gt_errors_p.push(err_p);
        gt_errors_q.push(err_q);
        states.push(fusion.state().clone());
        trajectory.push(TrajectoryRow {
            t: step.t,
            pose: fusion.state().pose(),
            err_p,
            err_q,
            modality,
        });
    }

    let m_a = lag_one_autocorrelation(&states)?;
    let mut metrics = MetricsReport::from_errors(gt_errors_p, gt_errors_q, m_a);
    metrics.marker_updates = marker_updates;
    metrics.feature_updates = feature_updates;
    metrics.plane_updates = plane_updates;
    metrics.dropped_events = fusion.dropped_late() + fusion.dropped_gaps();
    let mut marker_metrics = MetricsReport::from_errors(marker_errors_p, marker_errors_q, m_a);
    marker_metrics.marker_updates = marker_updates;
    marker_metrics.feature_updates = feature_updates;
    marker_metrics.plane_updates = plane_updates;
    marker_metrics.dropped_events = metrics.dropped_events;

    Ok(FusionRunResult {
        mode,
        trajectory,
        metrics,
        marker_metrics,
        iqa: iqa_rows,
        nis: fusion.nis_records(),
        tracking_failures,
        relocalizations,
    })
}

/// IQA trace without running a filter.
pub fn run_iqa_trace(
    sim: &Simulation,
    gate_config: &GateConfig,
) -> Result<Vec<IqaRow>, PipelineError> {
    let mut gate = Gate::new(*gate_config)?;
    let mut rows = Vec::with_capacity(sim.steps.len());
    for step in &sim.steps {
        let mdm = mdm_score(&step.image)?;
        let feat = feature_score(step.image.trackable_feature_count, gate_config);
        let score = aggregate(mdm, feat, step.t, gate_config.averaging);
        let choice = gate.decide(&score);
        rows.push(IqaRow {
            t: step.t,
            mdm,
            feature: feat,
            average: score.average,
            choice,
            facing_side: facing_side(sim, step),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_config(duration: f64) -> ScenarioConfig {
        ScenarioConfig {
            scene_seed: 7,
            run_seed: 7,
            duration,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn simulation_is_deterministic_and_ordered() {
        let cfg = short_config(5.0);
        let a = build_simulation(&cfg).unwrap();
        let b = build_simulation(&cfg).unwrap();
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.steps.len(), 50);
        assert!(a.steps.windows(2).all(|w| w[0].t < w[1].t));
        let d1 = a.depth_frame(3, DepthProfileKind::CompleteSmooth);
        let d2 = b.depth_frame(3, DepthProfileKind::CompleteSmooth);
        assert_eq!(d1, d2);
    }

    #[test]
    fn quiet_stage_one_freezes_an_accurate_panel_pose() {
        let mut cfg = short_config(20.0);
        cfg.noise = NoiseConfig::quiet();
        let sim = build_simulation(&cfg).unwrap();
        let result = run_stage1(&sim, &StageOneParams::default()).unwrap();
        let (dp, dq) = pose_error(&result.panel_pose, &sim.scene.panel_pose).unwrap();
        assert!(dp < 1e-6, "panel position error {dp}");
        assert!(dq < 1e-6, "panel rotation error {dq}");
        assert!(result.occupied_voxels > 100);
        assert!(result.integrated_frames > 100);
        assert!(result.surface_coverage > 0.2, "partial circle covers some");
    }

    #[test]
    fn markers_only_run_tracks_the_loop() {
        let cfg = short_config(20.0);
        let sim = build_simulation(&cfg).unwrap();
        let stage1 = run_stage1(&sim, &StageOneParams::default()).unwrap();
        let result = run_fusion(
            &sim,
            &stage1,
            FusionMode::MarkersOnly,
            &FusionRunParams::default(),
        )
        .unwrap();
        assert_eq!(result.trajectory.len(), sim.steps.len());
        assert!(result.metrics.marker_updates > 20);
        assert_eq!(result.metrics.feature_updates, 0);
        assert_eq!(result.metrics.plane_updates, 0);
        assert!(
            result.metrics.mean_position_error < 0.2,
            "mean error {}",
            result.metrics.mean_position_error
        );
        assert!(result.trajectory.iter().all(|r| r.modality == "none"));
    }

    #[test]
    fn fusion_runs_are_reproducible() {
        let cfg = short_config(12.0);
        let sim = build_simulation(&cfg).unwrap();
        let stage1 = run_stage1(&sim, &StageOneParams::default()).unwrap();
        let a = run_fusion(
            &sim,
            &stage1,
            FusionMode::Adaptive,
            &FusionRunParams::default(),
        )
        .unwrap();
        let b = run_fusion(
            &sim,
            &stage1,
            FusionMode::Adaptive,
            &FusionRunParams::default(),
        )
        .unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.iqa, b.iqa);
        assert_eq!(a.nis.len(), b.nis.len());
    }

    #[test]
    fn adaptive_run_uses_features_on_textured_sides() {
        let cfg = short_config(12.0);
        let sim = build_simulation(&cfg).unwrap();
        let stage1 = run_stage1(&sim, &StageOneParams::default()).unwrap();
        let result = run_fusion(
            &sim,
            &stage1,
            FusionMode::Adaptive,
            &FusionRunParams::default(),
        )
        .unwrap();
        assert!(
            result.metrics.feature_updates > 50,
            "feature updates {}",
            result.metrics.feature_updates
        );
        let feature_frames = result
            .trajectory
            .iter()
            .filter(|r| r.modality == "feature")
            .count();
        assert!(feature_frames > 50);
    }

    #[test]
    fn forced_feature_gate_logs_failures_on_the_bare_side() {
        // Start on the textureless side by shifting the start face.
        let mut cfg = short_config(10.0);
        cfg.scene_seed = 3;
        let sim = build_simulation(&cfg).unwrap();
        let stage1 = run_stage1(&sim, &StageOneParams::default()).unwrap();
        // A window of frames facing the bare side would be ideal, but
        // the trajectory starts on side 0; force the gate instead and
        // degrade features hard so matching collapses there.
        let params = FusionRunParams {
            gate_override: Some(Modality::FeatureVO),
            ..FusionRunParams::default()
        };
        let result = run_fusion(&sim, &stage1, FusionMode::Adaptive, &params).unwrap();
        assert!(result.metrics.feature_updates > 0);
        assert!(result.trajectory.iter().all(|r| r.modality != "none"));
    }

    #[test]
    fn depth_tolerance_blends_disparity_and_relative_terms() {
        // Below the crossover depth the 5% term dominates.
        let z_cross = 0.05 * STEREO_FOCAL_PX * STEREO_BASELINE_M / 3.0;
        assert!((depth_error_tolerance(1.0) - 0.05).abs() < 1e-12);
        let above = depth_error_tolerance(z_cross + 1.0);
        assert!(above > 0.05 * (z_cross + 1.0));
    }

    #[test]
    fn plane_eval_requires_a_map_for_filtered_rows() {
        let cfg = short_config(3.0);
        let sim = build_simulation(&cfg).unwrap();
        let err = run_plane_arm(
            &sim,
            None,
            DepthProfileKind::Reference,
            true,
            &PlaneEvalParams::default(),
        );
        assert!(matches!(err, Err(PipelineError::MissingMap)));
    }

    #[test]
    fn reference_profile_scores_perfect_accuracy_and_coverage() {
        let mut cfg = short_config(6.0);
        cfg.noise = NoiseConfig::quiet();
        let sim = build_simulation(&cfg).unwrap();
        let params = PlaneEvalParams {
            frame_stride: 5,
            ..PlaneEvalParams::default()
        };
        let row = run_plane_arm(&sim, None, DepthProfileKind::Reference, false, &params).unwrap();
        assert_eq!(row.accuracy, 1.0);
        assert_eq!(row.coverage, 1.0);
        assert!(row.plane_count > 0);
    }
}
