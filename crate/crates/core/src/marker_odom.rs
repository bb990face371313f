//! Marker-based localization. A registry of surveyed marker poses in
//! the panel frame turns camera-frame detections into robot poses, and
//! a startup tracker estimates the panel's odometry-frame pose once,
//! then freezes it so later marker fixes become absolute.

use crate::geometry::{slerp_mean, FrameId, FramedPose, GeometryError};
use crate::scene::Scene;
use nalgebra::{Matrix6, UnitQuaternion, Vector3};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarkerError {
    #[error("no usable marker detections")]
    NoDetections,
    #[error("registry text line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Surveyed marker poses, Panel <- Marker, keyed by id.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerRegistry {
    entries: BTreeMap<u32, FramedPose>,
}

impl MarkerRegistry {
    pub fn from_scene(scene: &Scene) -> Self {
        Self {
            entries: scene
                .markers
                .iter()
                .map(|m| (m.id, m.pose_in_panel))
                .collect(),
        }
    }

    pub fn get(&self, id: u32) -> Option<&FramedPose> {
        self.entries.get(&id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One `id px py pz qw qx qy qz` row per marker, id ascending.
    pub fn to_text(&self) -> String {
        let mut out = String::from("id px py pz qw qx qy qz\n");
        for (id, pose) in &self.entries {
            let p = pose.position;
            let q = pose.orientation.into_inner();
            out.push_str(&format!(
                "{id} {} {} {} {} {} {} {}\n",
                p.x, p.y, p.z, q.w, q.i, q.j, q.k
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, MarkerError> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if n == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 8 {
                return Err(MarkerError::Parse {
                    line: n + 1,
                    message: format!("expected 8 fields, got {}", fields.len()),
                });
            }
            let bad = |message: &str| MarkerError::Parse {
                line: n + 1,
                message: message.to_string(),
            };
            let id: u32 = fields[0].parse().map_err(|_| bad("bad id"))?;
            let mut vals = [0.0f64; 7];
            for (k, field) in fields[1..].iter().enumerate() {
                vals[k] = field.parse().map_err(|_| bad("bad number"))?;
            }
            entries.insert(
                id,
                FramedPose::new(
                    FrameId::Panel,
                    FrameId::Marker(id),
                    Vector3::new(vals[0], vals[1], vals[2]),
                    UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                        vals[3], vals[4], vals[5], vals[6],
                    )),
                ),
            );
        }
        Ok(Self { entries })
    }

    pub fn save_text(&self, path: &Path) -> Result<(), MarkerError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load_text(path: &Path) -> Result<Self, MarkerError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Robot pose inferred from one frame of marker detections.
#[derive(Debug, Clone)]
pub struct MarkerPoseEstimate {
    /// Panel <- Robot.
    pub pose: FramedPose,
    /// Covariance in (x, y, z, roll, pitch, yaw) order.
    pub covariance: Matrix6<f64>,
    /// Detections that matched the registry.
    pub used: usize,
    /// Largest position disagreement between per-marker solutions.
    pub position_spread: f64,
    /// Largest angular disagreement between per-marker solutions.
    pub rotation_spread: f64,
    /// False when the per-marker solutions disagree beyond tolerance.
    pub consistent: bool,
}

/// Variance floor applied per axis; single detections otherwise claim
/// perfect confidence.
pub const VARIANCE_FLOOR: f64 = 1e-4;
/// Per-marker solutions further apart than these are flagged.
pub const SPREAD_POS_TOL: f64 = 0.10;
pub const SPREAD_ROT_TOL: f64 = 0.10;

/// Combines marker detections (id, Camera <- Marker) into one robot
/// pose in the panel frame. `extrinsics` is Robot <- Camera. Unknown
/// ids are skipped.
pub fn infer_robot_pose(
    detections: &[(u32, FramedPose)],
    registry: &MarkerRegistry,
    extrinsics: &FramedPose,
) -> Result<MarkerPoseEstimate, MarkerError> {
    let cam_from_robot = extrinsics.inverse();
    let mut solutions: Vec<FramedPose> = Vec::new();
    for (id, det) in detections {
        let Some(surveyed) = registry.get(*id) else {
            continue;
        };
        // Panel <- Robot through this marker.
        let pose = surveyed
            .compose(&det.inverse())?
            .compose(&cam_from_robot)?;
        solutions.push(pose);
    }
    if solutions.is_empty() {
        return Err(MarkerError::NoDetections);
    }

    let n = solutions.len() as f64;
    let mean_pos = solutions
        .iter()
        .fold(Vector3::zeros(), |acc, s| acc + s.position)
        / n;
    let quats: Vec<UnitQuaternion<f64>> = solutions.iter().map(|s| s.orientation).collect();
    let weights = vec![1.0; quats.len()];
    let mean_q = slerp_mean(&quats, &weights)?;
    let pose = FramedPose::new(FrameId::Panel, FrameId::Robot, mean_pos, mean_q);

    let mut covariance = Matrix6::zeros();
    let mut position_spread = 0.0_f64;
    let mut rotation_spread = 0.0_f64;
    for s in &solutions {
        let dp = s.position - mean_pos;
        let dq = (mean_q.inverse() * s.orientation).scaled_axis();
        position_spread = position_spread.max(dp.norm());
        rotation_spread = rotation_spread.max(dq.norm());
        for i in 0..3 {
            for j in 0..3 {
                covariance[(i, j)] += dp[i] * dp[j];
                covariance[(i + 3, j + 3)] += dq[i] * dq[j];
            }
        }
    }
    // Sample covariance of the mean; a lone solution leaves zeros.
    if solutions.len() > 1 {
        covariance /= n * (n - 1.0);
    }
    for i in 0..6 {
        covariance[(i, i)] = covariance[(i, i)].max(VARIANCE_FLOOR);
    }

    Ok(MarkerPoseEstimate {
        pose,
        covariance,
        used: solutions.len(),
        position_spread,
        rotation_spread,
        consistent: position_spread < SPREAD_POS_TOL && rotation_spread < SPREAD_ROT_TOL,
    })
}

/// Panel pose in the odometry frame implied by one marker fix and the
/// current odometry-frame robot pose.
pub fn panel_pose_sample(
    robot_in_odom: &FramedPose,
    robot_in_panel: &FramedPose,
) -> Result<FramedPose, GeometryError> {
    robot_in_odom.compose(&robot_in_panel.inverse())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanelTrackerParams {
    pub min_samples: usize,
    pub position_spread_tol: f64,
    pub rotation_spread_tol: f64,
}

impl Default for PanelTrackerParams {
    fn default() -> Self {
        Self {
            min_samples: 10,
            position_spread_tol: 0.05,
            rotation_spread_tol: 0.05,
        }
    }
}

/// Accumulates panel-pose samples during startup and freezes their
/// mean once enough mutually consistent samples arrived. Later samples
/// are ignored; localization needs one fixed panel anchor, not a
/// drifting one.
#[derive(Debug, Clone)]
pub struct PanelPoseTracker {
    params: PanelTrackerParams,
    samples: Vec<FramedPose>,
    fixed: Option<FramedPose>,
}

impl PanelPoseTracker {
    pub fn new(params: PanelTrackerParams) -> Self {
        Self {
            params,
            samples: Vec::new(),
            fixed: None,
        }
    }

    pub fn fixed(&self) -> Option<&FramedPose> {
        self.fixed.as_ref()
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    /// Feeds one Odom <- Panel sample; returns the frozen pose once the
    /// window is consistent.
    pub fn push(&mut self, sample: FramedPose) -> Option<&FramedPose> {
        if self.fixed.is_some() {
            return self.fixed.as_ref();
        }
        self.samples.push(sample);
        if self.samples.len() < self.params.min_samples {
            return None;
        }
        let window = &self.samples[self.samples.len() - self.params.min_samples..];
        let mean_pos = window
            .iter()
            .fold(Vector3::zeros(), |acc, s| acc + s.position)
            / window.len() as f64;
        let quats: Vec<UnitQuaternion<f64>> = window.iter().map(|s| s.orientation).collect();
        let mean_q = slerp_mean(&quats, &vec![1.0; quats.len()]).ok()?;
        let pos_ok = window
            .iter()
            .all(|s| (s.position - mean_pos).norm() < self.params.position_spread_tol);
        let rot_ok = window.iter().all(|s| {
            (mean_q.inverse() * s.orientation).scaled_axis().norm()
                < self.params.rotation_spread_tol
        });
        if pos_ok && rot_ok {
            self.fixed = Some(FramedPose::new(
                FrameId::Odom,
                FrameId::Panel,
                mean_pos,
                mean_q,
            ));
        }
        self.fixed.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::geodesic_distance;
    use crate::rng;
    use crate::scene::{
        build_panel_scene, camera_extrinsics, detect_markers, generate_trajectory,
    };
    use rand::Rng;

    #[test]
    fn registry_text_roundtrip_preserves_poses() {
        let scene = build_panel_scene(3, 3.0, 0.3).unwrap();
        let registry = MarkerRegistry::from_scene(&scene);
        assert_eq!(registry.len(), 6);
        let text = registry.to_text();
        let back = MarkerRegistry::from_text(&text).unwrap();
        for (id, pose) in &registry.entries {
            let other = back.get(*id).unwrap();
            assert!((pose.position - other.position).norm() < 1e-12);
            assert!(geodesic_distance(&pose.orientation, &other.orientation) < 1e-12);
        }
        assert!(MarkerRegistry::from_text("id\n1 2 3\n").is_err());
    }

    /// Ground-truth camera pose from a trajectory sample.
    fn camera_pose(scene: &Scene, standoff_t: f64) -> (FramedPose, FramedPose) {
        let rate = 2.0 * std::f64::consts::PI / 60.0;
        let traj = generate_trajectory(scene, 1.5, rate, 60.0, 10.0).unwrap();
        let idx = ((standoff_t * 10.0) as usize).min(traj.len() - 1);
        let robot = traj[idx].pose;
        let cam = robot.compose(&camera_extrinsics()).unwrap();
        (robot, cam)
    }

    use crate::scene::Scene;

    #[test]
    fn noiseless_detections_recover_the_robot_pose() {
        let scene = build_panel_scene(4, 3.0, 0.3).unwrap();
        let registry = MarkerRegistry::from_scene(&scene);
        let (robot, cam) = camera_pose(&scene, 0.0);
        let detections = detect_markers(&scene, &cam, 0.0, 0.0, 7);
        assert!(!detections.is_empty());
        let est = infer_robot_pose(&detections, &registry, &camera_extrinsics()).unwrap();
        let truth = scene.panel_pose.inverse().compose(&robot).unwrap();
        assert!((est.pose.position - truth.position).norm() < 1e-9);
        assert!(geodesic_distance(&est.pose.orientation, &truth.orientation) < 1e-9);
        assert_eq!(est.used, detections.len());
        assert!(est.consistent);
        assert!(est.position_spread < 1e-9);
        for i in 0..6 {
            assert_eq!(est.covariance[(i, i)], VARIANCE_FLOOR);
        }
    }

    /// Wide view of side 0 from which all three of its markers fit the
    /// frustum; the circling trajectory itself sees one or two at a time.
    fn wide_view(scene: &Scene) -> FramedPose {
        let side = &scene.sides[0];
        crate::scene::look_at_camera_pose(scene, side.center + side.normal * 2.5, side.center)
    }

    #[test]
    fn noisy_detections_stay_consistent_and_widen_covariance() {
        let scene = build_panel_scene(4, 3.0, 0.3).unwrap();
        let registry = MarkerRegistry::from_scene(&scene);
        let cam = wide_view(&scene);
        let detections = detect_markers(&scene, &cam, 0.01, 0.005, 8);
        assert!(detections.len() >= 2);
        let est = infer_robot_pose(&detections, &registry, &camera_extrinsics()).unwrap();
        assert!(est.consistent);
        assert!(est.position_spread > 1e-4);
        let trace: f64 = (0..3).map(|i| est.covariance[(i, i)]).sum();
        assert!(trace >= 3.0 * VARIANCE_FLOOR);
    }

    #[test]
    fn corrupted_detection_trips_the_spread_flag() {
        let scene = build_panel_scene(4, 3.0, 0.3).unwrap();
        let registry = MarkerRegistry::from_scene(&scene);
        let cam = wide_view(&scene);
        let mut detections = detect_markers(&scene, &cam, 0.0, 0.0, 7);
        assert!(detections.len() >= 2);
        let (id, pose) = detections[0];
        detections[0] = (
            id,
            FramedPose::new(
                pose.target,
                pose.source,
                pose.position + Vector3::new(0.5, 0.0, 0.0),
                pose.orientation,
            ),
        );
        let est = infer_robot_pose(&detections, &registry, &camera_extrinsics()).unwrap();
        assert!(!est.consistent);
        assert!(est.position_spread > 0.2);
    }

    #[test]
    fn unknown_ids_are_skipped_not_fatal() {
        let scene = build_panel_scene(4, 3.0, 0.3).unwrap();
        let registry = MarkerRegistry::from_scene(&scene);
        let (_, cam) = camera_pose(&scene, 0.0);
        let mut detections = detect_markers(&scene, &cam, 0.0, 0.0, 7);
        let fake = detections[0].1;
        detections.push((999, fake));
        let est = infer_robot_pose(&detections, &registry, &camera_extrinsics()).unwrap();
        assert_eq!(est.used, detections.len() - 1);
        let only_fake = vec![(999u32, fake)];
        assert!(matches!(
            infer_robot_pose(&only_fake, &registry, &camera_extrinsics()),
            Err(MarkerError::NoDetections)
        ));
    }

    #[test]
    fn panel_tracker_freezes_on_consistent_samples() {
        let scene = build_panel_scene(6, 3.0, 0.3).unwrap();
        let mut tracker = PanelPoseTracker::new(PanelTrackerParams::default());
        let mut rng = rng::chacha(12, 0);
        let truth = scene.panel_pose;
        for k in 0..20 {
            let jitter = Vector3::new(
                rng.random_range(-0.01..0.01),
                rng.random_range(-0.01..0.01),
                rng.random_range(-0.01..0.01),
            );
            let sample = FramedPose::new(
                truth.target,
                truth.source,
                truth.position + jitter,
                truth.orientation,
            );
            let fixed = tracker.push(sample).cloned();
            if k < 9 {
                assert!(fixed.is_none(), "froze too early at {k}");
            } else {
                let fixed = fixed.expect("should be fixed from the 10th sample");
                assert!((fixed.position - truth.position).norm() < 0.02);
            }
        }
        assert!(tracker.fixed().is_some());
    }

    #[test]
    fn panel_tracker_rejects_scattered_samples() {
        let scene = build_panel_scene(6, 3.0, 0.3).unwrap();
        let mut tracker = PanelPoseTracker::new(PanelTrackerParams::default());
        let truth = scene.panel_pose;
        for k in 0..15 {
            let sample = FramedPose::new(
                truth.target,
                truth.source,
                truth.position + Vector3::new(0.2 * (k % 2) as f64, 0.0, 0.0),
                truth.orientation,
            );
            assert!(tracker.push(sample).is_none(), "must not freeze on spread");
        }
    }
}
