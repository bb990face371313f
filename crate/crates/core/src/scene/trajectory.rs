//! Circling survey path: the panel footprint outline offset outward by a
//! fixed standoff, traversed counterclockwise at constant speed. The
//! robot keeps its body x axis pointed at the panel and its z axis up,
//! so depth stays constant and yaw is the only rotating degree of
//! freedom.

use super::{Scene, SceneError};
use crate::geometry::{FrameId, FramedPose};
use nalgebra::{UnitQuaternion, Vector2, Vector3};

/// One timestamped ground-truth state. The body twist is what an ideal
/// DVL and gyro would measure.
#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub t: f64,
    /// Odom <- Robot.
    pub pose: FramedPose,
    /// Body-frame linear velocity.
    pub linear: Vector3<f64>,
    /// Body-frame angular velocity.
    pub angular: Vector3<f64>,
}

struct PathPoint {
    pos: Vector2<f64>,
    inward: Vector2<f64>,
    on_arc: bool,
}

/// Position and inward direction at arclength `u` along the offset
/// outline. `s` is the straight half length, `face` the face distance
/// from center, `arc_r` the offset corner radius.
fn path_point(s: f64, face: f64, arc_r: f64, u: f64) -> PathPoint {
    use std::f64::consts::{FRAC_PI_2, PI};
    let quarter = arc_r * FRAC_PI_2;
    let arc = |center: Vector2<f64>, phi0: f64, along: f64| {
        let phi = phi0 + along / arc_r;
        let radial = Vector2::new(phi.cos(), phi.sin());
        PathPoint {
            pos: center + radial * arc_r,
            inward: -radial,
            on_arc: true,
        }
    };
    let straight = |pos: Vector2<f64>, inward: Vector2<f64>| PathPoint {
        pos,
        inward,
        on_arc: false,
    };

    let mut v = u;
    // First half face of side 0, from the open-side midline upward.
    if v < s {
        return straight(Vector2::new(face, v), Vector2::new(-1.0, 0.0));
    }
    v -= s;
    if v < quarter {
        return arc(Vector2::new(s, s), 0.0, v);
    }
    v -= quarter;
    if v < 2.0 * s {
        return straight(Vector2::new(s - v, face), Vector2::new(0.0, -1.0));
    }
    v -= 2.0 * s;
    if v < quarter {
        return arc(Vector2::new(-s, s), FRAC_PI_2, v);
    }
    v -= quarter;
    if v < 2.0 * s {
        return straight(Vector2::new(-face, s - v), Vector2::new(1.0, 0.0));
    }
    v -= 2.0 * s;
    if v < quarter {
        return arc(Vector2::new(-s, -s), PI, v);
    }
    v -= quarter;
    if v < 2.0 * s {
        return straight(Vector2::new(-s + v, -face), Vector2::new(0.0, 1.0));
    }
    v -= 2.0 * s;
    if v < quarter {
        return arc(Vector2::new(s, -s), PI + FRAC_PI_2, v);
    }
    v -= quarter;
    straight(Vector2::new(face, -s + v), Vector2::new(-1.0, 0.0))
}

/// Ground-truth survey trajectory around the panel.
///
/// `angular_rate` is the mean angular progress around the panel center,
/// so one revolution takes 2 pi / angular_rate seconds regardless of the
/// footprint size. `rate` is the sample rate in Hz.
pub fn generate_trajectory(
    scene: &Scene,
    standoff: f64,
    angular_rate: f64,
    duration: f64,
    rate: f64,
) -> Result<Vec<TrajectorySample>, SceneError> {
    if !(standoff > 0.0) {
        return Err(SceneError::BadDimension {
            what: "standoff",
            value: standoff,
        });
    }
    if !(rate > 0.0) {
        return Err(SceneError::BadDimension {
            what: "rate",
            value: rate,
        });
    }
    if !(duration >= 0.0) || !(angular_rate >= 0.0) {
        return Err(SceneError::BadDimension {
            what: "duration and angular_rate",
            value: duration.min(angular_rate),
        });
    }

    let s = scene.straight_half();
    let face = scene.half_extent() + standoff;
    let arc_r = scene.corner_radius + standoff;
    let perimeter = 8.0 * s + 2.0 * std::f64::consts::PI * arc_r;
    let speed = angular_rate * perimeter / (2.0 * std::f64::consts::PI);
    let z = scene.height / 2.0;

    let n = (duration * rate).round() as usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / rate;
        let u = (speed * t).rem_euclid(perimeter.max(1e-12));
        let pp = path_point(s, face, arc_r, u);
        let yaw = pp.inward.y.atan2(pp.inward.x);
        let pose_in_panel = FramedPose::new(
            FrameId::Panel,
            FrameId::Robot,
            Vector3::new(pp.pos.x, pp.pos.y, z),
            UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
        );
        let pose = scene
            .panel_pose
            .compose(&pose_in_panel)
            .expect("panel pose composes with panel-frame robot pose");
        let angular = if pp.on_arc {
            Vector3::new(0.0, 0.0, speed / arc_r)
        } else {
            Vector3::zeros()
        };
        out.push(TrajectorySample {
            t,
            pose,
            linear: Vector3::new(0.0, -speed, 0.0),
            angular,
        });
    }
    Ok(out)
}
