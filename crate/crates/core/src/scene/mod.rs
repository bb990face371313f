//! Synthetic ground truth: a boxed panel with cylindrical corner
//! fairings, fiducial markers on the two textured sides, a persistent
//! landmark pool for feature tracking, and analytic ray casting against
//! all surfaces.
//!
//! Panel frame: z up, origin at the footprint center at the panel base.
//! Side 0 faces +x, side 1 faces +y, side 2 faces -x, side 3 faces -y.
//! Sides 0 and 1 are densely textured and carry the markers, side 2 is
//! nearly bare, side 3 sits in between.

mod sensors;
mod trajectory;

pub use sensors::{
    detect_markers, render_depth, render_image_proxy, DepthFrame, LabeledPoint, PointLabel,
};
pub use trajectory::{generate_trajectory, TrajectorySample};

use crate::geometry::{FrameId, FramedPose};
use crate::rng;
use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use thiserror::Error;

/// Depth image width in rays. Portrait aspect: the full panel height
/// must fit the vertical field of view at survey standoff.
pub const DEPTH_WIDTH: usize = 60;
/// Depth image height in rays.
pub const DEPTH_HEIGHT: usize = 80;
/// Inspection camera width in pixels. Landscape, unlike the depth
/// sensor; markers, landmarks, and image proxies live here.
pub const IMAGE_WIDTH: usize = 80;
/// Inspection camera height in pixels.
pub const IMAGE_HEIGHT: usize = 60;
/// Horizontal field of view, shared by both cameras.
pub const FOV_X_RAD: f64 = 60.0 * std::f64::consts::PI / 180.0;
/// Marker visibility limit on incidence angle.
pub const MAX_INCIDENCE_RAD: f64 = 75.0 * std::f64::consts::PI / 180.0;
/// Background intensity of open water in image proxies.
pub const WATER_INTENSITY: f64 = 0.06;

/// Panel height above its base plane.
pub const PANEL_HEIGHT: f64 = 2.0;
/// Texture densities of sides 0 through 3.
pub const SIDE_TEXTURE_DENSITY: [f64; 4] = [1.0, 0.8, 0.1, 0.5];
/// Landmark pool size of a fully textured side.
pub const LANDMARKS_PER_FULL_SIDE: f64 = 120.0;

/// Focal length of the depth sensor, in pixels.
pub fn focal_px() -> f64 {
    (DEPTH_WIDTH as f64 / 2.0) / (FOV_X_RAD / 2.0).tan()
}

/// Focal length of the inspection camera, in pixels.
pub fn image_focal_px() -> f64 {
    (IMAGE_WIDTH as f64 / 2.0) / (FOV_X_RAD / 2.0).tan()
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{what} must be positive, got {value}")]
    BadDimension { what: &'static str, value: f64 },
    #[error("{what} must lie in [0, 1], got {value}")]
    BadFraction { what: &'static str, value: f64 },
    #[error("corner radius {radius} must be below half the side length {half}")]
    CornerTooLarge { radius: f64, half: f64 },
}

/// One planar panel face, a rectangle in the panel frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanelSide {
    /// Outward unit normal.
    pub normal: Vector3<f64>,
    /// Horizontal in-surface direction, z_panel x normal.
    pub tangent: Vector3<f64>,
    /// Rectangle center at mid height.
    pub center: Vector3<f64>,
    /// Tangential half extent.
    pub half_width: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub texture_density: f64,
}

/// Quarter-cylinder fairing joining two adjacent sides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanelCorner {
    pub center_xy: Vector2<f64>,
    pub radius: f64,
    /// Azimuth span of outward surface normals, radians.
    pub angle_range: (f64, f64),
    pub z_min: f64,
    pub z_max: f64,
    pub texture_density: f64,
}

/// Fiducial marker mounted on a panel face. The marker frame has z along
/// the face outward normal, x along the face tangent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerSpec {
    pub id: u32,
    /// Panel <- Marker.
    pub pose_in_panel: FramedPose,
    pub edge: f64,
}

/// Trackable surface point with a stable identity across frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub id: u32,
    /// Panel-frame position.
    pub position: Vector3<f64>,
    pub side: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceId {
    Side(usize),
    Corner(usize),
}

/// Footprint region a position is closest to; drives facing
/// classification on the circling trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Facing {
    Side(usize),
    Corner(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct RayHit {
    /// Distance along the unit ray.
    pub t: f64,
    /// Panel-frame intersection point.
    pub point: Vector3<f64>,
    /// Outward unit normal at the hit.
    pub normal: Vector3<f64>,
    pub surface: SurfaceId,
    pub texture_density: f64,
    /// Surface-local coordinates for stable texture lookup.
    pub tex_uv: (f64, f64),
}

/// Synthetic depth-generator characteristics. `reference` is an ideal
/// range camera; `accurate_sparse` trades coverage for precision and
/// loses further coverage on weak texture; `complete_smooth` covers
/// nearly everything but blurs depth edges and grows comet artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthProfileKind {
    Reference,
    AccurateSparse,
    CompleteSmooth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthProfile {
    pub name: DepthProfileKind,
    /// Gaussian noise along the ray, meters.
    pub depth_noise_sigma: f64,
    /// Fraction of surface rays that return a point.
    pub coverage: f64,
    /// Fraction of depth-boundary points displaced into comet artifacts.
    pub comet_rate: f64,
    /// Depth blending half-range across edges, meters.
    pub boundary_smoothing: f64,
}

impl DepthProfile {
    pub fn reference() -> Self {
        Self {
            name: DepthProfileKind::Reference,
            depth_noise_sigma: 0.0,
            coverage: 1.0,
            comet_rate: 0.0,
            boundary_smoothing: 0.0,
        }
    }

    pub fn accurate_sparse() -> Self {
        Self {
            name: DepthProfileKind::AccurateSparse,
            depth_noise_sigma: 0.008,
            coverage: 0.58,
            comet_rate: 0.02,
            boundary_smoothing: 0.0,
        }
    }

    pub fn complete_smooth() -> Self {
        Self {
            name: DepthProfileKind::CompleteSmooth,
            depth_noise_sigma: 0.020,
            coverage: 0.94,
            comet_rate: 0.08,
            boundary_smoothing: 0.030,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for (what, value) in [
            ("coverage", self.coverage),
            ("comet_rate", self.comet_rate),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SceneError::BadFraction { what, value });
            }
        }
        if self.depth_noise_sigma < 0.0 || !self.depth_noise_sigma.is_finite() {
            return Err(SceneError::BadDimension {
                what: "depth_noise_sigma",
                value: self.depth_noise_sigma,
            });
        }
        Ok(())
    }
}

/// Grayscale frame with a feature-count side channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageProxy {
    pub width: usize,
    pub height: usize,
    /// Row-major intensities in [0, 1].
    pub intensities: Vec<f64>,
    pub trackable_feature_count: usize,
    pub timestamp: f64,
}

impl ImageProxy {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.intensities[row * self.width + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub sides: Vec<PanelSide>,
    pub corners: Vec<PanelCorner>,
    pub markers: Vec<MarkerSpec>,
    pub landmarks: Vec<Landmark>,
    /// Odom <- Panel ground truth.
    pub panel_pose: FramedPose,
    pub side_length: f64,
    pub corner_radius: f64,
    pub height: f64,
    pub texture_seed: u64,
}

const SALT_POSE: u64 = 0x50;
const SALT_LANDMARKS: u64 = 0x51;
const SALT_TEXTURE: u64 = 0x52;

/// Deterministic scene for a given seed: fixed panel geometry, a
/// seed-derived upright panel pose in the odometry frame, and a
/// seed-derived landmark pool.
pub fn build_panel_scene(
    seed: u64,
    side_length: f64,
    corner_radius: f64,
) -> Result<Scene, SceneError> {
    if !(side_length > 0.0) {
        return Err(SceneError::BadDimension {
            what: "side_length",
            value: side_length,
        });
    }
    if !(corner_radius >= 0.0) || !corner_radius.is_finite() {
        return Err(SceneError::BadDimension {
            what: "corner_radius",
            value: corner_radius,
        });
    }
    let h = side_length / 2.0;
    if corner_radius >= h {
        return Err(SceneError::CornerTooLarge {
            radius: corner_radius,
            half: h,
        });
    }
    let s = h - corner_radius;
    let height = PANEL_HEIGHT;
    let z_axis = Vector3::z();

    let normals = [Vector3::x(), Vector3::y(), -Vector3::x(), -Vector3::y()];
    let sides: Vec<PanelSide> = normals
        .iter()
        .enumerate()
        .map(|(i, n)| PanelSide {
            normal: *n,
            tangent: z_axis.cross(n),
            center: n * h + Vector3::new(0.0, 0.0, height / 2.0),
            half_width: s,
            z_min: 0.0,
            z_max: height,
            texture_density: SIDE_TEXTURE_DENSITY[i],
        })
        .collect();

    // Corner k fairs side k into side k + 1.
    let quarter = std::f64::consts::FRAC_PI_2;
    let corner_xy = [
        Vector2::new(s, s),
        Vector2::new(-s, s),
        Vector2::new(-s, -s),
        Vector2::new(s, -s),
    ];
    let corners: Vec<PanelCorner> = corner_xy
        .iter()
        .enumerate()
        .map(|(k, xy)| PanelCorner {
            center_xy: *xy,
            radius: corner_radius,
            angle_range: (k as f64 * quarter, (k + 1) as f64 * quarter),
            z_min: 0.0,
            z_max: height,
            texture_density: (SIDE_TEXTURE_DENSITY[k] + SIDE_TEXTURE_DENSITY[(k + 1) % 4]) / 2.0,
        })
        .collect();

    // Three markers per textured side, spread along the tangent at mid
    // height. Side 2 carries none.
    let mut markers = Vec::new();
    let marker_u = [-0.8 * s, 0.0, 0.8 * s];
    for (side_idx, first_id) in [(0usize, 1u32), (1usize, 4u32)] {
        let side = &sides[side_idx];
        for (k, &u) in marker_u.iter().enumerate() {
            let position = side.center + side.tangent * u;
            let rot = Matrix3::from_columns(&[
                side.tangent,
                side.normal.cross(&side.tangent),
                side.normal,
            ]);
            markers.push(MarkerSpec {
                id: first_id + k as u32,
                pose_in_panel: FramedPose::new(
                    FrameId::Panel,
                    FrameId::Marker(first_id + k as u32),
                    position,
                    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot)),
                ),
                edge: 0.15,
            });
        }
    }

    let mut lm_rng = rng::chacha(seed, SALT_LANDMARKS);
    let mut landmarks = Vec::new();
    for (side_idx, side) in sides.iter().enumerate() {
        let count = (side.texture_density * LANDMARKS_PER_FULL_SIDE).round() as usize;
        let margin = 0.05;
        for k in 0..count {
            let u = lm_rng.random_range(-(s - margin)..(s - margin));
            let z = lm_rng.random_range(margin..(height - margin));
            landmarks.push(Landmark {
                id: (side_idx as u32) * 1000 + k as u32,
                position: side.center + side.tangent * u
                    + Vector3::new(0.0, 0.0, z - height / 2.0),
                side: side_idx,
            });
        }
    }

    // Upright pose: yaw plus translation only, so the panel stays
    // gravity-aligned and the constant-depth trajectory remains valid.
    let mut pose_rng = rng::chacha(seed, SALT_POSE);
    let yaw = pose_rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let panel_pose = FramedPose::new(
        FrameId::Odom,
        FrameId::Panel,
        Vector3::new(
            pose_rng.random_range(-2.0..2.0),
            pose_rng.random_range(-2.0..2.0),
            pose_rng.random_range(-1.0..1.0),
        ),
        UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
    );

    Ok(Scene {
        sides,
        corners,
        markers,
        landmarks,
        panel_pose,
        side_length,
        corner_radius,
        height,
        texture_seed: rng::derive(seed, SALT_TEXTURE),
    })
}

/// Camera mount on the robot: camera z looks along robot +x, camera x
/// points along robot -y, camera y along robot -z, optical center 10 cm
/// ahead of the body origin.
pub fn camera_extrinsics() -> FramedPose {
    let rot = Matrix3::from_columns(&[
        Vector3::new(0.0, -1.0, 0.0),
        Vector3::new(0.0, 0.0, -1.0),
        Vector3::new(1.0, 0.0, 0.0),
    ]);
    FramedPose::new(
        FrameId::Robot,
        FrameId::Camera,
        Vector3::new(0.1, 0.0, 0.0),
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot)),
    )
}

/// Camera pose (Odom <- Camera) at `position` looking at `target`, both
/// in the panel frame; camera y is kept pointing down.
pub fn look_at_camera_pose(
    scene: &Scene,
    position_panel: Vector3<f64>,
    target_panel: Vector3<f64>,
) -> FramedPose {
    let z = (target_panel - position_panel).normalize();
    let x = z.cross(&Vector3::z()).normalize();
    let y = z.cross(&x).normalize();
    let rot = Matrix3::from_columns(&[x, y, z]);
    let cam_in_panel = FramedPose::new(
        FrameId::Panel,
        FrameId::Camera,
        position_panel,
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot)),
    );
    scene
        .panel_pose
        .compose(&cam_in_panel)
        .expect("panel pose composes with panel-frame camera pose")
}

impl Scene {
    fn half_extent(&self) -> f64 {
        self.side_length / 2.0
    }

    fn straight_half(&self) -> f64 {
        self.half_extent() - self.corner_radius
    }

    /// Nearest intersection of a panel-frame ray with any panel surface.
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<RayHit> {
        const T_MIN: f64 = 1e-6;
        let mut best: Option<RayHit> = None;
        let mut consider = |hit: RayHit| {
            if best.as_ref().map_or(true, |b| hit.t < b.t) {
                best = Some(hit);
            }
        };

        for (i, side) in self.sides.iter().enumerate() {
            let denom = side.normal.dot(dir);
            if denom.abs() < 1e-12 {
                continue;
            }
            let d = side.normal.dot(&side.center);
            let t = (d - side.normal.dot(origin)) / denom;
            if t <= T_MIN {
                continue;
            }
            let p = origin + dir * t;
            let u = side.tangent.dot(&(p - side.center));
            if u.abs() > side.half_width || p.z < side.z_min || p.z > side.z_max {
                continue;
            }
            consider(RayHit {
                t,
                point: p,
                normal: side.normal,
                surface: SurfaceId::Side(i),
                texture_density: side.texture_density,
                tex_uv: (u, p.z),
            });
        }

        for (i, corner) in self.corners.iter().enumerate() {
            if corner.radius <= 0.0 {
                continue;
            }
            let oc = Vector2::new(origin.x, origin.y) - corner.center_xy;
            let dxy = Vector2::new(dir.x, dir.y);
            let a = dxy.norm_squared();
            if a < 1e-18 {
                continue;
            }
            let b = 2.0 * oc.dot(&dxy);
            let c = oc.norm_squared() - corner.radius * corner.radius;
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                continue;
            }
            let sq = disc.sqrt();
            for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                if t <= T_MIN {
                    continue;
                }
                let p = origin + dir * t;
                if p.z < corner.z_min || p.z > corner.z_max {
                    continue;
                }
                let radial = Vector2::new(p.x, p.y) - corner.center_xy;
                let phi = radial.y.atan2(radial.x);
                let phi = if phi < 0.0 {
                    phi + 2.0 * std::f64::consts::PI
                } else {
                    phi
                };
                if phi < corner.angle_range.0 - 1e-9 || phi > corner.angle_range.1 + 1e-9 {
                    continue;
                }
                let normal = Vector3::new(radial.x, radial.y, 0.0).normalize();
                consider(RayHit {
                    t,
                    point: p,
                    normal,
                    surface: SurfaceId::Corner(i),
                    texture_density: corner.texture_density,
                    tex_uv: (corner.radius * (phi - corner.angle_range.0), p.z),
                });
            }
        }
        best
    }

    /// Distance from a panel-frame point to the nearest panel surface.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        let mut best = f64::INFINITY;
        for side in &self.sides {
            let q = p - side.center;
            let u = side.tangent.dot(&q).clamp(-side.half_width, side.half_width);
            let z = p.z.clamp(side.z_min, side.z_max);
            let nearest =
                side.center + side.tangent * u + Vector3::new(0.0, 0.0, z - side.center.z);
            best = best.min((p - nearest).norm());
        }
        for corner in &self.corners {
            if corner.radius <= 0.0 {
                continue;
            }
            let radial = Vector2::new(p.x, p.y) - corner.center_xy;
            let phi = radial.y.atan2(radial.x);
            let phi = if phi < 0.0 {
                phi + 2.0 * std::f64::consts::PI
            } else {
                phi
            };
            let phi = phi.clamp(corner.angle_range.0, corner.angle_range.1);
            let z = p.z.clamp(corner.z_min, corner.z_max);
            let nearest = Vector3::new(
                corner.center_xy.x + corner.radius * phi.cos(),
                corner.center_xy.y + corner.radius * phi.sin(),
                z,
            );
            best = best.min((p - nearest).norm());
        }
        best
    }

    /// Unsigned distance from a panel-frame xy position to the rounded
    /// square outline the panel is built on.
    pub fn footprint_distance(&self, xy: &Vector2<f64>) -> f64 {
        let s = self.straight_half();
        let q = Vector2::new(xy.x.abs() - s, xy.y.abs() - s);
        let outside = Vector2::new(q.x.max(0.0), q.y.max(0.0)).norm();
        let inside = q.x.max(q.y).min(0.0);
        (outside + inside - self.corner_radius).abs()
    }

    /// Footprint region nearest to a panel-frame xy position.
    pub fn facing(&self, xy: &Vector2<f64>) -> Facing {
        let s = self.straight_half();
        if xy.x.abs() > s && xy.y.abs() > s {
            return Facing::Corner(match (xy.x > 0.0, xy.y > 0.0) {
                (true, true) => 0,
                (false, true) => 1,
                (false, false) => 2,
                (true, false) => 3,
            });
        }
        if xy.x.abs() >= xy.y.abs() {
            if xy.x > 0.0 {
                Facing::Side(0)
            } else {
                Facing::Side(2)
            }
        } else if xy.y > 0.0 {
            Facing::Side(1)
        } else {
            Facing::Side(3)
        }
    }

    /// Landmarks visible from a camera pose (Odom <- Camera): inside the
    /// frustum, within the incidence limit of their side, and not
    /// occluded by other panel surfaces. Returns (id, camera-frame
    /// position) sorted by id.
    pub fn visible_landmarks(&self, cam_pose: &FramedPose) -> Vec<(u32, Vector3<f64>)> {
        let cam_in_panel = self
            .panel_pose
            .inverse()
            .compose(cam_pose)
            .expect("camera pose is odom-framed");
        let panel_from_cam = cam_in_panel;
        let cam_from_panel = cam_in_panel.inverse();
        let tan_x = (FOV_X_RAD / 2.0).tan();
        let tan_y = tan_x * (IMAGE_HEIGHT as f64) / (IMAGE_WIDTH as f64);
        let cos_limit = MAX_INCIDENCE_RAD.cos();
        let origin_panel = panel_from_cam.position;

        let mut out = Vec::new();
        for lm in &self.landmarks {
            let p_cam = cam_from_panel.transform_point(&lm.position);
            if p_cam.z < 0.2 {
                continue;
            }
            if (p_cam.x / p_cam.z).abs() > tan_x || (p_cam.y / p_cam.z).abs() > tan_y {
                continue;
            }
            let to_cam = origin_panel - lm.position;
            let dist = to_cam.norm();
            if dist < 1e-9 {
                continue;
            }
            let n = self.sides[lm.side].normal;
            if n.dot(&(to_cam / dist)) < cos_limit {
                continue;
            }
            match self.raycast(&origin_panel, &(-to_cam / dist)) {
                Some(hit) if hit.t < dist - 0.02 => continue,
                _ => {}
            }
            out.push((lm.id, p_cam));
        }
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scene_matches_construction_contract() {
        let scene = build_panel_scene(0, 3.0, 0.3).unwrap();
        assert_eq!(scene.sides.len(), 4);
        assert_eq!(scene.corners.len(), 4);
        assert!((scene.sides[2].texture_density - 0.1).abs() < 1e-15);
        assert_eq!(scene.markers.len(), 6);
        assert!(scene.markers.iter().all(|m| {
            let p = m.pose_in_panel.position;
            scene.surface_distance(&p) < 1e-9
        }));
    }

    #[test]
    fn adjacent_side_normals_are_orthogonal() {
        for seed in [0, 1, 42] {
            let scene = build_panel_scene(seed, 3.0, 0.3).unwrap();
            for k in 0..4 {
                let a = scene.sides[k].normal;
                let b = scene.sides[(k + 1) % 4].normal;
                assert!(a.dot(&b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn same_seed_rebuilds_identical_scene() {
        let a = build_panel_scene(7, 3.0, 0.3).unwrap();
        let b = build_panel_scene(7, 3.0, 0.3).unwrap();
        assert_eq!(a, b);
        let c = build_panel_scene(8, 3.0, 0.3).unwrap();
        assert_ne!(a.panel_pose, c.panel_pose);
    }

    #[test]
    fn bad_dimensions_are_rejected() {
        assert!(matches!(
            build_panel_scene(0, -1.0, 0.3),
            Err(SceneError::BadDimension { .. })
        ));
        assert!(matches!(
            build_panel_scene(0, 3.0, 2.0),
            Err(SceneError::CornerTooLarge { .. })
        ));
    }

    #[test]
    fn raycast_hits_sides_and_corners() {
        let scene = build_panel_scene(0, 3.0, 0.3).unwrap();
        // Straight at side 0 from outside.
        let hit = scene
            .raycast(&Vector3::new(4.0, 0.0, 1.0), &Vector3::new(-1.0, 0.0, 0.0))
            .unwrap();
        assert_eq!(hit.surface, SurfaceId::Side(0));
        assert!((hit.t - 2.5).abs() < 1e-12);
        assert!((hit.point - Vector3::new(1.5, 0.0, 1.0)).norm() < 1e-12);
        // Diagonally at corner 0.
        let dir = Vector3::new(-1.0, -1.0, 0.0).normalize();
        let hit = scene.raycast(&Vector3::new(4.0, 4.0, 1.0), &dir).unwrap();
        assert_eq!(hit.surface, SurfaceId::Corner(0));
        let radial = Vector2::new(hit.point.x, hit.point.y) - scene.corners[0].center_xy;
        assert!((radial.norm() - 0.3).abs() < 1e-9);
        // Away from everything.
        assert!(scene
            .raycast(&Vector3::new(4.0, 0.0, 1.0), &Vector3::new(1.0, 0.0, 0.0))
            .is_none());
    }

    #[test]
    fn footprint_distance_is_constant_on_offset_path() {
        let scene = build_panel_scene(3, 3.0, 0.3).unwrap();
        let s = scene.straight_half();
        let standoff = 1.5;
        // Mid side, corner arc, open side.
        let arc_r = 0.3 + standoff;
        let samples = [
            Vector2::new(1.5 + standoff, 0.0),
            Vector2::new(s + arc_r * 0.6_f64.cos(), s + arc_r * 0.6_f64.sin()),
            Vector2::new(0.0, -(1.5 + standoff)),
        ];
        for p in samples {
            assert!((scene.footprint_distance(&p) - standoff).abs() < 1e-12);
        }
    }

    #[test]
    fn facing_classification_covers_the_path() {
        let scene = build_panel_scene(3, 3.0, 0.3).unwrap();
        assert_eq!(scene.facing(&Vector2::new(3.0, 0.0)), Facing::Side(0));
        assert_eq!(scene.facing(&Vector2::new(0.0, 3.0)), Facing::Side(1));
        assert_eq!(scene.facing(&Vector2::new(-3.0, 0.0)), Facing::Side(2));
        assert_eq!(scene.facing(&Vector2::new(0.0, -3.0)), Facing::Side(3));
        assert_eq!(scene.facing(&Vector2::new(3.0, 3.0)), Facing::Corner(0));
        assert_eq!(scene.facing(&Vector2::new(-3.0, 3.0)), Facing::Corner(1));
        assert_eq!(scene.facing(&Vector2::new(-3.0, -3.0)), Facing::Corner(2));
        assert_eq!(scene.facing(&Vector2::new(3.0, -3.0)), Facing::Corner(3));
    }

    #[test]
    fn visible_landmarks_respect_side_and_occlusion() {
        let scene = build_panel_scene(0, 3.0, 0.3).unwrap();
        let h = scene.height / 2.0;
        let front = look_at_camera_pose(
            &scene,
            Vector3::new(3.0, 0.0, h),
            Vector3::new(1.5, 0.0, h),
        );
        let seen = scene.visible_landmarks(&front);
        assert!(!seen.is_empty());
        // All visible landmarks belong to side 0 from this viewpoint.
        assert!(seen.iter().all(|(id, _)| *id < 1000));
        // Looking away from the panel sees nothing.
        let away = look_at_camera_pose(
            &scene,
            Vector3::new(3.0, 0.0, h),
            Vector3::new(6.0, 0.0, h),
        );
        assert!(scene.visible_landmarks(&away).is_empty());
    }
}
