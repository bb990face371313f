//! Synthetic sensing against the panel scene: labeled depth clouds with
//! dropout, edge smoothing, and comet-tail artifacts; a grayscale image
//! proxy driven by surface texture; and noisy fiducial marker poses.
//!
//! Every generator is a pure function of (scene, pose, profile, seed),
//! so a frame can be re-rendered lazily and two consumers of the same
//! event stream observe bit-identical data.

use super::{
    DepthProfile, DepthProfileKind, ImageProxy, Scene, SurfaceId, DEPTH_HEIGHT, DEPTH_WIDTH,
    FOV_X_RAD, IMAGE_HEIGHT, IMAGE_WIDTH, MAX_INCIDENCE_RAD, WATER_INTENSITY,
};
use crate::geometry::FramedPose;
use crate::rng;
use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

/// Depth jump that marks a boundary pixel, meters.
const GAP_THRESHOLD: f64 = 0.15;
/// Assumed depth jump when the neighbor ray missed entirely.
const DEFAULT_GAP: f64 = 1.0;
/// Comet displacement range as a fraction of the local gap.
const COMET_SPAN: (f64, f64) = (0.2, 0.5);

const SALT_DEPTH: u64 = 0x10;
const SALT_IMAGE: u64 = 0x11;
const SALT_MARKERS: u64 = 0x12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointLabel {
    /// Honest surface return, noise only.
    Surface,
    /// Boundary artifact displaced along the ray into the depth gap.
    Comet,
    /// Ray that returned nothing; the true hit is kept for accounting.
    Dropout,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    /// Camera-frame point as the sensor reports it.
    pub point: Vector3<f64>,
    pub label: PointLabel,
    /// Distance along the ray to the true surface.
    pub true_depth: f64,
    /// Distance along the ray as measured.
    pub depth: f64,
    pub pixel: (usize, usize),
    /// True when the pixel sits on a depth discontinuity.
    pub boundary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub points: Vec<LabeledPoint>,
    pub width: usize,
    pub height: usize,
    /// Rays that intersected scene geometry.
    pub surface_rays: usize,
}

impl DepthFrame {
    /// Points the sensor actually delivers: surface returns and comets.
    pub fn cloud(&self) -> Vec<Vector3<f64>> {
        self.points
            .iter()
            .filter(|p| p.label != PointLabel::Dropout)
            .map(|p| p.point)
            .collect()
    }

    /// Returned fraction of rays that had geometry to hit.
    pub fn coverage(&self) -> f64 {
        if self.surface_rays == 0 {
            return 0.0;
        }
        let returned = self
            .points
            .iter()
            .filter(|p| p.label != PointLabel::Dropout)
            .count();
        returned as f64 / self.surface_rays as f64
    }
}

/// Unit ray through depth pixel (row, col) in the camera frame: z
/// forward, x right, y down.
fn pixel_ray(row: usize, col: usize) -> Vector3<f64> {
    let f = super::focal_px();
    let x = (col as f64 + 0.5 - DEPTH_WIDTH as f64 / 2.0) / f;
    let y = (row as f64 + 0.5 - DEPTH_HEIGHT as f64 / 2.0) / f;
    Vector3::new(x, y, 1.0).normalize()
}

/// Unit ray through an inspection-camera pixel.
fn image_pixel_ray(row: usize, col: usize) -> Vector3<f64> {
    let f = super::image_focal_px();
    let x = (col as f64 + 0.5 - IMAGE_WIDTH as f64 / 2.0) / f;
    let y = (row as f64 + 0.5 - IMAGE_HEIGHT as f64 / 2.0) / f;
    Vector3::new(x, y, 1.0).normalize()
}

/// Simulated depth frame from a camera pose (Odom <- Camera).
pub fn render_depth(
    scene: &Scene,
    cam_pose: &FramedPose,
    profile: &DepthProfile,
    seed: u64,
) -> DepthFrame {
    profile.validate().expect("depth profile is valid");
    let cam_in_panel = scene
        .panel_pose
        .inverse()
        .compose(cam_pose)
        .expect("camera pose is odom-framed");
    let origin = cam_in_panel.position;

    // True intersections first; artifacts need the full depth buffer.
    let mut depth_buf = vec![None::<(f64, f64)>; DEPTH_WIDTH * DEPTH_HEIGHT];
    let mut ray_buf = vec![Vector3::zeros(); DEPTH_WIDTH * DEPTH_HEIGHT];
    for row in 0..DEPTH_HEIGHT {
        for col in 0..DEPTH_WIDTH {
            let idx = row * DEPTH_WIDTH + col;
            let dir_cam = pixel_ray(row, col);
            ray_buf[idx] = dir_cam;
            let dir_panel = cam_in_panel.rotate(&dir_cam);
            if let Some(hit) = scene.raycast(&origin, &dir_panel) {
                depth_buf[idx] = Some((hit.t, hit.texture_density));
            }
        }
    }

    // Boundary pass: largest depth jump to a 4-neighbor, signed toward
    // the far side of the edge.
    let mut gaps = vec![None::<f64>; depth_buf.len()];
    for row in 0..DEPTH_HEIGHT {
        for col in 0..DEPTH_WIDTH {
            let idx = row * DEPTH_WIDTH + col;
            let Some((t, _)) = depth_buf[idx] else {
                continue;
            };
            let mut signed: Option<f64> = None;
            let mut consider = |g: f64| {
                if signed.map_or(true, |s| g.abs() > s.abs()) {
                    signed = Some(g);
                }
            };
            if row > 0 {
                neighbor_gap(&depth_buf, idx - DEPTH_WIDTH, t, &mut consider);
            }
            if row + 1 < DEPTH_HEIGHT {
                neighbor_gap(&depth_buf, idx + DEPTH_WIDTH, t, &mut consider);
            }
            if col > 0 {
                neighbor_gap(&depth_buf, idx - 1, t, &mut consider);
            }
            if col + 1 < DEPTH_WIDTH {
                neighbor_gap(&depth_buf, idx + 1, t, &mut consider);
            }
            if let Some(g) = signed {
                if g.abs() > GAP_THRESHOLD {
                    gaps[idx] = Some(g.clamp(-DEFAULT_GAP, DEFAULT_GAP));
                }
            }
        }
    }

    // Edge smoothing blends boundary depths toward the local mean.
    let mut smoothed: Vec<Option<f64>> = depth_buf.iter().map(|d| d.map(|(t, _)| t)).collect();
    if profile.boundary_smoothing > 0.0 {
        for row in 0..DEPTH_HEIGHT {
            for col in 0..DEPTH_WIDTH {
                let idx = row * DEPTH_WIDTH + col;
                let (Some((t, _)), Some(_)) = (depth_buf[idx], gaps[idx]) else {
                    continue;
                };
                let mut sum = 0.0;
                let mut n = 0.0;
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let r = row as i64 + dr;
                        let c = col as i64 + dc;
                        if r < 0 || c < 0 || r >= DEPTH_HEIGHT as i64 || c >= DEPTH_WIDTH as i64 {
                            continue;
                        }
                        if let Some((tn, _)) = depth_buf[r as usize * DEPTH_WIDTH + c as usize] {
                            sum += tn;
                            n += 1.0;
                        }
                    }
                }
                let mean = sum / n;
                let shift =
                    (mean - t).clamp(-profile.boundary_smoothing, profile.boundary_smoothing);
                smoothed[idx] = Some(t + shift);
            }
        }
    }

    let mut draw = rng::chacha(seed, SALT_DEPTH);
    let mut points = Vec::new();
    let mut surface_rays = 0;
    for row in 0..DEPTH_HEIGHT {
        for col in 0..DEPTH_WIDTH {
            let idx = row * DEPTH_WIDTH + col;
            let Some((t_true, density)) = depth_buf[idx] else {
                continue;
            };
            surface_rays += 1;
            let dir_cam = ray_buf[idx];
            let boundary = gaps[idx].is_some();

            let keep_p = match profile.name {
                DepthProfileKind::AccurateSparse => profile.coverage * density,
                _ => profile.coverage,
            };
            if draw.random::<f64>() >= keep_p {
                points.push(LabeledPoint {
                    point: dir_cam * t_true,
                    label: PointLabel::Dropout,
                    true_depth: t_true,
                    depth: t_true,
                    pixel: (row, col),
                    boundary,
                });
                continue;
            }

            let base = smoothed[idx].unwrap();
            let (label, mut depth) = match gaps[idx] {
                Some(gap) if draw.random::<f64>() < profile.comet_rate => {
                    let span = draw.random_range(COMET_SPAN.0..COMET_SPAN.1);
                    (PointLabel::Comet, base + span * gap)
                }
                _ => (PointLabel::Surface, base),
            };
            let noise: f64 = draw.sample(StandardNormal);
            depth += profile.depth_noise_sigma * noise;
            points.push(LabeledPoint {
                point: dir_cam * depth,
                label,
                true_depth: t_true,
                depth,
                pixel: (row, col),
                boundary,
            });
        }
    }

    DepthFrame {
        points,
        width: DEPTH_WIDTH,
        height: DEPTH_HEIGHT,
        surface_rays,
    }
}

fn neighbor_gap(
    depth_buf: &[Option<(f64, f64)>],
    nb_idx: usize,
    t: f64,
    consider: &mut impl FnMut(f64),
) {
    match depth_buf[nb_idx] {
        Some((tn, _)) => consider(tn - t),
        None => consider(DEFAULT_GAP),
    }
}

/// Stable texture value in [0, 1) for a quantized surface cell.
fn texture_value(texture_seed: u64, surface: SurfaceId, uv: (f64, f64)) -> f64 {
    const CELL: f64 = 0.02;
    let sid = match surface {
        SurfaceId::Side(i) => i as u64,
        SurfaceId::Corner(i) => 16 + i as u64,
    };
    let iu = (uv.0 / CELL).floor() as i64 as u64;
    let iv = (uv.1 / CELL).floor() as i64 as u64;
    let mixed = rng::derive(rng::derive2(texture_seed, sid, iu), iv);
    (mixed >> 11) as f64 / (1u64 << 53) as f64
}

/// Simulated grayscale frame from a camera pose (Odom <- Camera).
/// Intensity is headlight shading modulated by surface texture whose
/// contrast scales with the side's texture density.
pub fn render_image_proxy(
    scene: &Scene,
    cam_pose: &FramedPose,
    timestamp: f64,
    seed: u64,
) -> ImageProxy {
    let cam_in_panel = scene
        .panel_pose
        .inverse()
        .compose(cam_pose)
        .expect("camera pose is odom-framed");
    let origin = cam_in_panel.position;
    let mut noise = rng::chacha(seed, SALT_IMAGE);

    let mut intensities = Vec::with_capacity(IMAGE_WIDTH * IMAGE_HEIGHT);
    for row in 0..IMAGE_HEIGHT {
        for col in 0..IMAGE_WIDTH {
            let dir_panel = cam_in_panel.rotate(&image_pixel_ray(row, col));
            let base = match scene.raycast(&origin, &dir_panel) {
                Some(hit) => {
                    let shade = dir_panel.dot(&hit.normal).abs();
                    let tex = texture_value(scene.texture_seed, hit.surface, hit.tex_uv);
                    shade * (0.5 + 0.5 * hit.texture_density * (2.0 * tex - 1.0))
                }
                None => WATER_INTENSITY,
            };
            let n: f64 = noise.sample(StandardNormal);
            intensities.push((base + 0.005 * n).clamp(0.0, 1.0));
        }
    }

    ImageProxy {
        width: IMAGE_WIDTH,
        height: IMAGE_HEIGHT,
        intensities,
        trackable_feature_count: scene.visible_landmarks(cam_pose).len(),
        timestamp,
    }
}

/// Noisy fiducial detections from a camera pose (Odom <- Camera).
/// Returns (id, Camera <- Marker) sorted by id. Noise grows linearly
/// with incidence: the stated sigmas hold head on and double at 45
/// degrees off the marker normal.
pub fn detect_markers(
    scene: &Scene,
    cam_pose: &FramedPose,
    sigma_pos: f64,
    sigma_rot: f64,
    seed: u64,
) -> Vec<(u32, FramedPose)> {
    let cam_from_panel = cam_pose
        .inverse()
        .compose(&scene.panel_pose)
        .expect("camera pose is odom-framed");
    let cam_in_panel = cam_from_panel.inverse();
    let tan_x = (FOV_X_RAD / 2.0).tan();
    let tan_y = tan_x * (IMAGE_HEIGHT as f64) / (IMAGE_WIDTH as f64);
    let mut draw = rng::chacha(seed, SALT_MARKERS);

    let mut out = Vec::new();
    for marker in &scene.markers {
        let exact = cam_from_panel
            .compose(&marker.pose_in_panel)
            .expect("marker pose is panel-framed");
        let c = exact.position;
        if c.z < 0.2 {
            continue;
        }
        if (c.x / c.z).abs() > tan_x || (c.y / c.z).abs() > tan_y {
            continue;
        }
        let dist = c.norm();
        let marker_z = exact.orientation * Vector3::z();
        let cos_inc = marker_z.dot(&(-c / dist));
        if cos_inc < MAX_INCIDENCE_RAD.cos() {
            continue;
        }
        let origin_panel = cam_in_panel.position;
        let target = marker.pose_in_panel.position;
        let to_marker = target - origin_panel;
        let range = to_marker.norm();
        if let Some(hit) = scene.raycast(&origin_panel, &(to_marker / range)) {
            if hit.t < range - 0.02 {
                continue;
            }
        }

        let incidence = cos_inc.clamp(-1.0, 1.0).acos();
        let scale = 1.0 + incidence / (45.0_f64.to_radians());
        let np: [f64; 3] = std::array::from_fn(|_| draw.sample(StandardNormal));
        let nr: [f64; 3] = std::array::from_fn(|_| draw.sample(StandardNormal));
        let position = c + scale * sigma_pos * Vector3::new(np[0], np[1], np[2]);
        let orientation = exact.orientation
            * UnitQuaternion::from_scaled_axis(
                scale * sigma_rot * Vector3::new(nr[0], nr[1], nr[2]),
            );
        out.push((
            marker.id,
            FramedPose::new(exact.target, exact.source, position, orientation),
        ));
    }
    out.sort_by_key(|(id, _)| *id);
    out
}
