//! Feature-track odometry against the persistent landmark pool.
//! Frames carry identified camera-frame points; motion between two
//! frames comes from id matching, RANSAC over minimal sets, and a
//! weighted alignment refit over the consensus set. A small keyframe
//! store supports relocalizing after tracking gaps.

use crate::geometry::{FrameId, FramedPose};
use crate::registration::{estimate_rotation, RegistrationError};
use crate::rng;
use crate::scene::Scene;
use nalgebra::{Matrix3, Matrix6, UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("only {0} id matches, motion needs at least {1}")]
    TooFewMatches(usize, usize),
    #[error("consensus too small: {0} inliers")]
    TooFewInliers(usize),
    #[error("matched points are degenerate")]
    Degenerate,
    #[error("no keyframe shares enough features")]
    NoKeyframeOverlap,
    #[error(transparent)]
    Registration(#[from] RegistrationError),
}

/// Identified camera-frame feature points of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub t: f64,
    /// (landmark id, camera-frame position), id ascending, ids unique.
    pub observations: Vec<(u32, Vector3<f64>)>,
    /// Image quality the frame was tracked at, for keyframe gating.
    pub quality: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureParams {
    pub max_features: usize,
    pub ransac_iterations: usize,
    pub inlier_threshold: f64,
    pub min_matches: usize,
    pub min_inliers: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            max_features: 80,
            ransac_iterations: 100,
            inlier_threshold: 0.05,
            min_matches: 5,
            min_inliers: 4,
        }
    }
}

/// Samples the landmarks visible from a camera pose into a feature
/// frame. Outliers are made by cyclically rotating the positions of a
/// seeded subset, which keeps them self-consistent and id-stable, the
/// way a repeated misassociation would look.
pub fn make_feature_frame(
    scene: &Scene,
    cam_pose: &FramedPose,
    t: f64,
    quality: f64,
    noise_sigma: f64,
    outlier_rate: f64,
    max_features: usize,
    seed: u64,
) -> FeatureFrame {
    let mut draw = rng::chacha(seed, 0x1F);
    let mut visible = scene.visible_landmarks(cam_pose);
    if visible.len() > max_features {
        visible.shuffle(&mut draw);
        visible.truncate(max_features);
        visible.sort_by_key(|(id, _)| *id);
    }
    let mut observations: Vec<(u32, Vector3<f64>)> = visible
        .into_iter()
        .map(|(id, p)| {
            let n = Vector3::new(
                draw.sample::<f64, _>(StandardNormal),
                draw.sample::<f64, _>(StandardNormal),
                draw.sample::<f64, _>(StandardNormal),
            );
            (id, p + n * noise_sigma)
        })
        .collect();

    let k = (outlier_rate * observations.len() as f64).floor() as usize;
    if k >= 2 {
        let mut indices: Vec<usize> = (0..observations.len()).collect();
        indices.shuffle(&mut draw);
        indices.truncate(k);
        indices.sort_unstable();
        let first = observations[indices[0]].1;
        for w in 0..k - 1 {
            observations[indices[w]].1 = observations[indices[w + 1]].1;
        }
        observations[indices[k - 1]].1 = first;
    }

    FeatureFrame {
        t,
        observations,
        quality,
    }
}

/// Relative camera motion with its uncertainty.
#[derive(Debug, Clone)]
pub struct FeatureDelta {
    /// Camera_prev <- Camera_curr.
    pub delta: FramedPose,
    /// Covariance over (translation, rotation tangent), 6x6.
    pub covariance: Matrix6<f64>,
    pub inliers: usize,
    pub mean_residual: f64,
}

/// Rigid alignment p_prev = R p_curr + t over index pairs.
fn fit_pairs(
    pairs: &[(Vector3<f64>, Vector3<f64>)],
) -> Result<(UnitQuaternion<f64>, Vector3<f64>), FeatureError> {
    let n = pairs.len() as f64;
    let c_prev = pairs.iter().fold(Vector3::zeros(), |a, p| a + p.0) / n;
    let c_curr = pairs.iter().fold(Vector3::zeros(), |a, p| a + p.1) / n;
    let mut dirs = Vec::with_capacity(pairs.len());
    for (pp, pc) in pairs {
        let a = pp - c_prev;
        let b = pc - c_curr;
        let w = a.norm() * b.norm();
        if w > 1e-12 {
            dirs.push((a.normalize(), b.normalize(), w));
        }
    }
    if dirs.len() < 2 {
        return Err(FeatureError::Degenerate);
    }
    let est = estimate_rotation(&dirs)?;
    if est.observable_dof < 3 {
        return Err(FeatureError::Degenerate);
    }
    let rot = est.rotation;
    Ok((rot, c_prev - rot * c_curr))
}

/// Estimates Camera_prev <- Camera_curr from two feature frames.
/// Matching is by landmark id; RANSAC minimal sets reject outliers and
/// the consensus set is refit. The covariance is the Gauss-Newton
/// approximation at the refit, scaled by the residual variance.
pub fn estimate_motion(
    prev: &FeatureFrame,
    curr: &FeatureFrame,
    params: &FeatureParams,
    seed: u64,
) -> Result<FeatureDelta, FeatureError> {
    let mut pairs: Vec<(Vector3<f64>, Vector3<f64>)> = Vec::new();
    {
        let mut i = 0;
        let mut j = 0;
        while i < prev.observations.len() && j < curr.observations.len() {
            let (id_p, pp) = prev.observations[i];
            let (id_c, pc) = curr.observations[j];
            match id_p.cmp(&id_c) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    pairs.push((pp, pc));
                    i += 1;
                    j += 1;
                }
            }
        }
    }
    if pairs.len() < params.min_matches {
        return Err(FeatureError::TooFewMatches(pairs.len(), params.min_matches));
    }

    let mut draw = rng::chacha(seed, 0x2F);
    let mut best_inliers: Vec<usize> = Vec::new();
    for _ in 0..params.ransac_iterations {
        let mut picks = [0usize; 3];
        for p in picks.iter_mut() {
            *p = draw.random_range(0..pairs.len());
        }
        if picks[0] == picks[1] || picks[1] == picks[2] || picks[0] == picks[2] {
            continue;
        }
        let minimal = [pairs[picks[0]], pairs[picks[1]], pairs[picks[2]]];
        let Ok((rot, t)) = fit_pairs(&minimal) else {
            continue;
        };
        let inliers: Vec<usize> = pairs
            .iter()
            .enumerate()
            .filter(|(_, (pp, pc))| (pp - (rot * pc + t)).norm() < params.inlier_threshold)
            .map(|(k, _)| k)
            .collect();
        if inliers.len() > best_inliers.len() {
            best_inliers = inliers;
        }
    }
    if best_inliers.len() < params.min_inliers {
        return Err(FeatureError::TooFewInliers(best_inliers.len()));
    }

    // Refit on the consensus, then re-screen once: the minimal-set fit
    // can admit borderline points the better fit rejects.
    let mut consensus: Vec<(Vector3<f64>, Vector3<f64>)> =
        best_inliers.iter().map(|&k| pairs[k]).collect();
    let (rot, t) = fit_pairs(&consensus)?;
    consensus.retain(|(pp, pc)| (pp - (rot * pc + t)).norm() < params.inlier_threshold);
    if consensus.len() < params.min_inliers {
        return Err(FeatureError::TooFewInliers(consensus.len()));
    }
    let (rot, t) = fit_pairs(&consensus)?;

    let mut jtj = Matrix6::zeros();
    let mut ss = 0.0;
    let mut abs_sum = 0.0;
    for (pp, pc) in &consensus {
        let r = pp - (rot * pc + t);
        ss += r.norm_squared();
        abs_sum += r.norm();
        // Residual jacobian wrt (dt, dtheta) with R Exp(dtheta).
        let rot_block = rot.to_rotation_matrix().matrix() * skew(pc);
        let mut j_i = nalgebra::Matrix3x6::zeros();
        j_i.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(-Matrix3::identity()));
        j_i.fixed_view_mut::<3, 3>(0, 3).copy_from(&rot_block);
        jtj += j_i.transpose() * j_i;
    }
    let dof = (3 * consensus.len()) as f64 - 6.0;
    let sigma2 = if dof > 0.0 { ss / dof } else { ss.max(1e-12) };
    let covariance = jtj
        .try_inverse()
        .ok_or(FeatureError::Degenerate)?
        .scale(sigma2.max(1e-12));

    Ok(FeatureDelta {
        delta: FramedPose::new(FrameId::Camera, FrameId::Camera, t, rot),
        covariance: 0.5 * (covariance + covariance.transpose()),
        inliers: consensus.len(),
        mean_residual: abs_sum / consensus.len() as f64,
    })
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Robot pose and tracked frame retained for relocalization.
#[derive(Debug, Clone)]
pub struct Keyframe {
    /// Odom <- Robot at capture time.
    pub pose: FramedPose,
    pub frame: FeatureFrame,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframePolicy {
    pub min_translation: f64,
    pub min_rotation: f64,
    /// Frames below this quality never become keyframes.
    pub quality_floor: f64,
    pub capacity: usize,
}

impl Default for KeyframePolicy {
    fn default() -> Self {
        Self {
            min_translation: 0.5,
            min_rotation: 15.0_f64.to_radians(),
            quality_floor: 0.3,
            capacity: 100,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct KeyframeStore {
    frames: VecDeque<Keyframe>,
}

impl KeyframeStore {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Keyframe> {
        self.frames.iter()
    }

    /// Inserts when the robot moved on from the last keyframe and the
    /// frame is worth keeping. Returns whether it was inserted.
    pub fn maybe_insert(
        &mut self,
        pose: &FramedPose,
        frame: &FeatureFrame,
        policy: &KeyframePolicy,
    ) -> bool {
        if frame.quality < policy.quality_floor {
            return false;
        }
        if let Some(last) = self.frames.back() {
            let dp = (pose.position - last.pose.position).norm();
            let dq = (last.pose.orientation.inverse() * pose.orientation)
                .scaled_axis()
                .norm();
            if dp <= policy.min_translation && dq <= policy.min_rotation {
                return false;
            }
        }
        if self.frames.len() == policy.capacity {
            self.frames.pop_front();
        }
        self.frames.push_back(Keyframe {
            pose: *pose,
            frame: frame.clone(),
        });
        true
    }
}

fn shared_ids(a: &FeatureFrame, b: &FeatureFrame) -> usize {
    let mut i = 0;
    let mut j = 0;
    let mut shared = 0;
    while i < a.observations.len() && j < b.observations.len() {
        match a.observations[i].0.cmp(&b.observations[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                shared += 1;
                i += 1;
                j += 1;
            }
        }
    }
    shared
}

/// Re-acquires an absolute robot pose from the best-overlapping
/// keyframe. `extrinsics` is Robot <- Camera. Returns the pose, the
/// camera delta used, and the keyframe index.
pub fn relocalize(
    store: &KeyframeStore,
    curr: &FeatureFrame,
    extrinsics: &FramedPose,
    params: &FeatureParams,
    seed: u64,
) -> Result<(FramedPose, FeatureDelta, usize), FeatureError> {
    let mut best: Option<(usize, usize)> = None;
    for (idx, kf) in store.frames.iter().enumerate() {
        let shared = shared_ids(&kf.frame, curr);
        if shared >= params.min_matches && best.map_or(true, |(_, s)| shared >= s) {
            best = Some((idx, shared));
        }
    }
    let Some((idx, _)) = best else {
        return Err(FeatureError::NoKeyframeOverlap);
    };
    let kf = &store.frames[idx];
    let motion = estimate_motion(&kf.frame, curr, params, seed)?;
    let pose = kf
        .pose
        .compose(extrinsics)
        .expect("keyframe pose composes with extrinsics")
        .compose(&motion.delta)
        .expect("camera delta chains")
        .compose(&extrinsics.inverse())
        .expect("extrinsics inverse chains");
    Ok((pose, motion, idx))
}
