//! Error-state Kalman fusion of dead-reckoning with marker poses,
//! plane-derived relative rotations, and feature-odometry deltas.
//!
//! The nominal state carries position, orientation, and the latched
//! body twist; the 9-dof error state is (dp odom, dtheta right
//! tangent, dv body). Relative measurements reference the filter's
//! own pose at their start time through a fixed-lag history, which
//! also supports rollback-and-replay for late events inside the
//! horizon. Every update runs in Joseph form and logs its normalized
//! innovation squared.

use crate::geometry::{geodesic_distance, FrameId, FramedPose, GeometryError, PoseWithCovariance};
use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SMatrix, UnitQuaternion, Vector3};
use std::collections::VecDeque;
use thiserror::Error;

pub type Matrix9 = SMatrix<f64, 9, 9>;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("negative time step {0}")]
    TimeOrder(f64),
    #[error("measurement covariance is not positive semidefinite")]
    BadCovariance,
    #[error("no stored pose at t={0}")]
    MissingHistory(f64),
    #[error("config invalid: {0}")]
    BadConfig(String),
    #[error("autocorrelation needs at least 3 states, got {0}")]
    TooShort(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Nominal filter state with its error-state covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    /// Odom-frame position.
    pub position: Vector3<f64>,
    /// Odom <- Robot.
    pub orientation: UnitQuaternion<f64>,
    /// Body-frame linear velocity latched from the last twist.
    pub velocity: Vector3<f64>,
    /// Body-frame angular velocity latched from the last twist.
    pub turn_rate: Vector3<f64>,
    /// Error covariance over (dp, dtheta, dv).
    pub covariance: Matrix9,
    pub timestamp: f64,
}

impl FilterState {
    pub fn at_rest(t: f64, pose: &FramedPose, position_var: f64, rotation_var: f64) -> Self {
        let mut covariance = Matrix9::zeros();
        for k in 0..3 {
            covariance[(k, k)] = position_var;
            covariance[(3 + k, 3 + k)] = rotation_var;
            covariance[(6 + k, 6 + k)] = 1e-6;
        }
        Self {
            position: pose.position,
            orientation: pose.orientation,
            velocity: Vector3::zeros(),
            turn_rate: Vector3::zeros(),
            covariance,
            timestamp: t,
        }
    }

    pub fn pose(&self) -> FramedPose {
        FramedPose::new(
            FrameId::Odom,
            FrameId::Robot,
            self.position,
            self.orientation,
        )
    }

    /// Smallest covariance eigenvalue, for PSD checks.
    pub fn min_covariance_eigenvalue(&self) -> f64 {
        self.covariance
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::MAX, f64::min)
    }
}

/// Body twist with its (linear, angular) covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct TwistMeasurement {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
    pub covariance: Matrix6<f64>,
}

/// Relative orientation over [t_prev, t] in the robot frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneRotationMeasurement {
    pub t_prev: f64,
    /// Robot(t_prev) <- Robot(t).
    pub rotation: UnitQuaternion<f64>,
    /// Right-tangent covariance; unobservable directions inflated.
    pub covariance: Matrix3<f64>,
}

/// Relative pose over [t_prev, t] in the robot frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDeltaMeasurement {
    pub t_prev: f64,
    /// Robot(t_prev) <- Robot(t).
    pub delta: FramedPose,
    /// Covariance over (translation, rotation tangent).
    pub covariance: Matrix6<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeasurementPayload {
    DeadReckonTwist(TwistMeasurement),
    /// Absolute Odom <- Robot pose observation.
    MarkerPose(PoseWithCovariance),
    PlaneRotation(PlaneRotationMeasurement),
    FeatureDelta(FeatureDeltaMeasurement),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementEvent {
    pub timestamp: f64,
    pub payload: MeasurementPayload,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Position random-walk density, m^2/s.
    pub q_position: f64,
    /// Orientation random-walk density, rad^2/s.
    pub q_rotation: f64,
    /// Velocity random-walk density, m^2/s^3.
    pub q_velocity: f64,
    /// Fixed-lag history span, s.
    pub history_horizon: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            q_position: 1e-4,
            q_rotation: 1e-4,
            q_velocity: 1e-3,
            history_horizon: 5.0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        for (name, v) in [
            ("q_position", self.q_position),
            ("q_rotation", self.q_rotation),
            ("q_velocity", self.q_velocity),
            ("history_horizon", self.history_horizon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FusionError::BadConfig(format!("{name} = {v}")));
            }
        }
        Ok(())
    }
}

/// Normalized innovation squared of one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NisRecord {
    pub timestamp: f64,
    pub nis: f64,
    pub dof: usize,
}

/// What became of an ingested event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    Applied,
    /// Older than the history horizon.
    DroppedLate,
    /// Relative measurement whose start pose is not in history.
    DroppedGap,
}

#[derive(Debug, Clone)]
struct AppliedEvent {
    event: MeasurementEvent,
    state_after: FilterState,
    nis: Option<NisRecord>,
}

/// The filter. Events arrive through `ingest`; late events inside the
/// horizon trigger rollback-and-replay, older ones are dropped and
/// counted.
#[derive(Debug, Clone)]
pub struct Fusion {
    config: FusionConfig,
    state: FilterState,
    base: FilterState,
    applied: VecDeque<AppliedEvent>,
    archived_nis: Vec<NisRecord>,
    dropped_late: usize,
    dropped_gaps: usize,
}

impl Fusion {
    pub fn new(config: FusionConfig, initial: FilterState) -> Result<Self, FusionError> {
        config.validate()?;
        Ok(Self {
            config,
            base: initial.clone(),
            state: initial,
            applied: VecDeque::new(),
            archived_nis: Vec::new(),
            dropped_late: 0,
            dropped_gaps: 0,
        })
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn dropped_late(&self) -> usize {
        self.dropped_late
    }

    pub fn dropped_gaps(&self) -> usize {
        self.dropped_gaps
    }

    pub fn nis_records(&self) -> Vec<NisRecord> {
        let mut all = self.archived_nis.clone();
        all.extend(self.applied.iter().filter_map(|a| a.nis));
        all
    }

    /// Feeds one event. Time gaps are bridged by constant-twist
    /// prediction; late events are replayed in timestamp order.
    pub fn ingest(&mut self, event: MeasurementEvent) -> Result<IngestOutcome, FusionError> {
        if event.timestamp < self.state.timestamp - 1e-9 {
            return self.ingest_late(event);
        }
        let nis = match self.apply_now(&event) {
            Ok(nis) => nis,
            Err(FusionError::MissingHistory(_)) => {
                self.dropped_gaps += 1;
                return Ok(IngestOutcome::DroppedGap);
            }
            Err(e) => return Err(e),
        };
        self.applied.push_back(AppliedEvent {
            event,
            state_after: self.state.clone(),
            nis,
        });
        self.evict_expired();
        Ok(IngestOutcome::Applied)
    }

    fn ingest_late(&mut self, event: MeasurementEvent) -> Result<IngestOutcome, FusionError> {
        if event.timestamp < self.base.timestamp
            || event.timestamp < self.state.timestamp - self.config.history_horizon
        {
            self.dropped_late += 1;
            return Ok(IngestOutcome::DroppedLate);
        }
        // Insert after every event at or before its timestamp, then
        // recompute from the preceding stored state.
        let pos = self
            .applied
            .iter()
            .position(|a| a.event.timestamp > event.timestamp + 1e-9)
            .unwrap_or(self.applied.len());
        let mut tail: Vec<MeasurementEvent> = self
            .applied
            .drain(pos..)
            .map(|a| a.event)
            .collect();
        tail.insert(0, event);
        self.state = match self.applied.back() {
            Some(a) => a.state_after.clone(),
            None => self.base.clone(),
        };
        let mut outcome = IngestOutcome::Applied;
        for (k, ev) in tail.into_iter().enumerate() {
            match self.ingest(ev)? {
                IngestOutcome::Applied => {}
                other if k == 0 => outcome = other,
                _ => {}
            }
        }
        Ok(outcome)
    }

    fn apply_now(&mut self, event: &MeasurementEvent) -> Result<Option<NisRecord>, FusionError> {
        let dt = event.timestamp - self.state.timestamp;
        if dt > 0.0 {
            let held = TwistMeasurement {
                linear: self.state.velocity,
                angular: self.state.turn_rate,
                covariance: Matrix6::zeros(),
            };
            self.predict(&held, dt)?;
        }
        match &event.payload {
            MeasurementPayload::DeadReckonTwist(twist) => {
                self.latch_twist(twist);
                Ok(None)
            }
            MeasurementPayload::MarkerPose(m) => {
                let nis = self.update_pose(m)?;
                Ok(Some(NisRecord {
                    timestamp: event.timestamp,
                    nis,
                    dof: 6,
                }))
            }
            MeasurementPayload::PlaneRotation(r) => {
                let nis = self.update_rotation(r)?;
                Ok(Some(NisRecord {
                    timestamp: event.timestamp,
                    nis,
                    dof: 3,
                }))
            }
            MeasurementPayload::FeatureDelta(d) => {
                let nis = self.update_delta(d)?;
                Ok(Some(NisRecord {
                    timestamp: event.timestamp,
                    nis,
                    dof: 6,
                }))
            }
        }
    }

    fn evict_expired(&mut self) {
        let cutoff = self.state.timestamp - self.config.history_horizon;
        while let Some(front) = self.applied.front() {
            if front.event.timestamp >= cutoff {
                break;
            }
            let expired = self.applied.pop_front().expect("front exists");
            if let Some(nis) = expired.nis {
                self.archived_nis.push(nis);
            }
            self.base = expired.state_after;
        }
    }

    /// Constant-twist propagation over dt with process noise. The
    /// twist covariance enters as additional per-step noise, so a
    /// noiseless twist grows the covariance by exactly Q*dt.
    pub fn predict(&mut self, twist: &TwistMeasurement, dt: f64) -> Result<(), FusionError> {
        if dt < 0.0 {
            return Err(FusionError::TimeOrder(dt));
        }
        if dt == 0.0 {
            return Ok(());
        }
        let rot = self.state.orientation.to_rotation_matrix();
        let r = rot.matrix();
        let step = UnitQuaternion::from_scaled_axis(twist.angular * dt);

        let mut f = Matrix9::identity();
        f.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(-r * skew(&twist.linear) * dt));
        f.fixed_view_mut::<3, 3>(0, 6).copy_from(&(r * dt));
        f.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&step.to_rotation_matrix().matrix().transpose());

        let mut q = Matrix9::zeros();
        let lin_cov = twist.covariance.fixed_view::<3, 3>(0, 0).into_owned();
        let ang_cov = twist.covariance.fixed_view::<3, 3>(3, 3).into_owned();
        let qp = Matrix3::identity() * (self.config.q_position * dt)
            + r * lin_cov * r.transpose() * (dt * dt);
        let qr = Matrix3::identity() * (self.config.q_rotation * dt) + ang_cov * (dt * dt);
        q.fixed_view_mut::<3, 3>(0, 0).copy_from(&qp);
        q.fixed_view_mut::<3, 3>(3, 3).copy_from(&qr);
        q.fixed_view_mut::<3, 3>(6, 6)
            .copy_from(&(Matrix3::identity() * (self.config.q_velocity * dt)));

        self.state.position += r * twist.linear * dt;
        self.state.orientation = self.state.orientation * step;
        self.state.velocity = twist.linear;
        self.state.turn_rate = twist.angular;
        self.state.covariance = f * self.state.covariance * f.transpose() + q;
        symmetrize(&mut self.state.covariance);
        self.state.timestamp += dt;
        Ok(())
    }

    fn latch_twist(&mut self, twist: &TwistMeasurement) {
        self.state.velocity = twist.linear;
        self.state.turn_rate = twist.angular;
    }

    /// Absolute 6-dof pose observation.
    pub fn update_pose(&mut self, m: &PoseWithCovariance) -> Result<f64, FusionError> {
        check_psd(&DMatrix::from_iterator(
            6,
            6,
            m.covariance.iter().cloned(),
        ))?;
        let mut h = DMatrix::zeros(6, 9);
        h.view_mut((0, 0), (3, 3)).fill_with_identity();
        h.view_mut((3, 3), (3, 3)).fill_with_identity();
        let dp = m.pose.position - self.state.position;
        let dq = (self.state.orientation.inverse() * m.pose.orientation).scaled_axis();
        let mut nu = DVector::zeros(6);
        nu.rows_mut(0, 3).copy_from(&dp);
        nu.rows_mut(3, 3).copy_from(&dq);
        let r = DMatrix::from_iterator(6, 6, m.covariance.iter().cloned());
        self.kalman_step(&h, &nu, &r)
    }

    /// Relative-orientation observation against the stored pose at
    /// the measurement's start time.
    pub fn update_rotation(&mut self, r: &PlaneRotationMeasurement) -> Result<f64, FusionError> {
        check_psd(&DMatrix::from_iterator(
            3,
            3,
            r.covariance.iter().cloned(),
        ))?;
        let prev = self.pose_at(r.t_prev)?;
        let predicted = prev.orientation.inverse() * self.state.orientation;
        let nu_vec = (predicted.inverse() * r.rotation).scaled_axis();
        let mut h = DMatrix::zeros(3, 9);
        h.view_mut((0, 3), (3, 3)).fill_with_identity();
        let nu = DVector::from_iterator(3, nu_vec.iter().cloned());
        let rm = DMatrix::from_iterator(3, 3, r.covariance.iter().cloned());
        self.kalman_step(&h, &nu, &rm)
    }

    /// Relative-pose observation against the stored pose at the
    /// measurement's start time.
    pub fn update_delta(&mut self, d: &FeatureDeltaMeasurement) -> Result<f64, FusionError> {
        check_psd(&DMatrix::from_iterator(
            6,
            6,
            d.covariance.iter().cloned(),
        ))?;
        let prev = self.pose_at(d.t_prev)?;
        let r_prev_t = prev.orientation.to_rotation_matrix().matrix().transpose();
        let predicted_p = r_prev_t * (self.state.position - prev.position);
        let predicted_q = prev.orientation.inverse() * self.state.orientation;
        let mut nu = DVector::zeros(6);
        nu.rows_mut(0, 3)
            .copy_from(&(d.delta.position - predicted_p));
        nu.rows_mut(3, 3)
            .copy_from(&(predicted_q.inverse() * d.delta.orientation).scaled_axis());
        let mut h = DMatrix::zeros(6, 9);
        h.view_mut((0, 0), (3, 3)).copy_from(&r_prev_t);
        h.view_mut((3, 3), (3, 3)).fill_with_identity();
        let rm = DMatrix::from_iterator(6, 6, d.covariance.iter().cloned());
        self.kalman_step(&h, &nu, &rm)
    }

    /// Filter pose at a past event time, newest match wins.
    fn pose_at(&self, t: f64) -> Result<FramedPose, FusionError> {
        if (self.state.timestamp - t).abs() <= 1e-6 {
            return Ok(self.state.pose());
        }
        for a in self.applied.iter().rev() {
            if (a.state_after.timestamp - t).abs() <= 1e-6 {
                return Ok(a.state_after.pose());
            }
        }
        if (self.base.timestamp - t).abs() <= 1e-6 {
            return Ok(self.base.pose());
        }
        Err(FusionError::MissingHistory(t))
    }

    fn kalman_step(
        &mut self,
        h: &DMatrix<f64>,
        nu: &DVector<f64>,
        r: &DMatrix<f64>,
    ) -> Result<f64, FusionError> {
        let p = DMatrix::from_iterator(9, 9, self.state.covariance.iter().cloned());
        let s = h * &p * h.transpose() + r;
        let s_inv = s
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .or_else(|| s.try_inverse())
            .ok_or(FusionError::BadCovariance)?;
        let nis = (nu.transpose() * &s_inv * nu)[(0, 0)];
        let k = &p * h.transpose() * &s_inv;
        let dx = &k * nu;

        self.state.position += Vector3::new(dx[0], dx[1], dx[2]);
        self.state.orientation = self.state.orientation
            * UnitQuaternion::from_scaled_axis(Vector3::new(dx[3], dx[4], dx[5]));
        self.state.velocity += Vector3::new(dx[6], dx[7], dx[8]);

        let i_kh = DMatrix::identity(9, 9) - &k * h;
        let joseph = &i_kh * &p * i_kh.transpose() + &k * r * k.transpose();
        for row in 0..9 {
            for col in 0..9 {
                self.state.covariance[(row, col)] = joseph[(row, col)];
            }
        }
        symmetrize(&mut self.state.covariance);
        debug_assert!(
            self.state.min_covariance_eigenvalue() >= -1e-10,
            "covariance lost positive semidefiniteness"
        );
        Ok(nis)
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn symmetrize(m: &mut Matrix9) {
    *m = (*m + m.transpose()) * 0.5;
}

fn check_psd(m: &DMatrix<f64>) -> Result<(), FusionError> {
    if (m - m.transpose()).abs().max() > 1e-9 * (1.0 + m.abs().max()) {
        return Err(FusionError::BadCovariance);
    }
    let min = m
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::MAX, f64::min);
    if min < -1e-9 * (1.0 + m.trace().abs()) {
        return Err(FusionError::BadCovariance);
    }
    Ok(())
}

/// Position and orientation error between two same-frame poses.
pub fn pose_error(est: &FramedPose, gt: &FramedPose) -> Result<(f64, f64), FusionError> {
    if est.target != gt.target || est.source != gt.source {
        return Err(GeometryError::FrameExpected {
            expected: gt.target,
            found: est.target,
        }
        .into());
    }
    Ok((
        (est.position - gt.position).norm(),
        geodesic_distance(&est.orientation, &gt.orientation),
    ))
}

fn pearson_lag_one(series: &[f64]) -> Option<f64> {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let denom: f64 = series.iter().map(|x| (x - mean) * (x - mean)).sum();
    let scale: f64 = series.iter().map(|x| x * x).sum::<f64>() / n;
    if denom <= 1e-12 * (1.0 + scale) * n {
        return None;
    }
    let numer: f64 = series
        .windows(2)
        .map(|w| (w[0] - mean) * (w[1] - mean))
        .sum();
    Some(numer / denom)
}

/// Trajectory smoothness: mean of the per-channel lag-one Pearson
/// autocorrelations over x, y, z, and unwrapped heading. Constant
/// channels are excluded; an entirely constant trajectory scores 1.
pub fn lag_one_autocorrelation(traj: &[FilterState]) -> Result<f64, FusionError> {
    if traj.len() < 3 {
        return Err(FusionError::TooShort(traj.len()));
    }
    let mut channels: Vec<Vec<f64>> = vec![Vec::with_capacity(traj.len()); 4];
    let mut prev_yaw = 0.0;
    for (k, s) in traj.iter().enumerate() {
        channels[0].push(s.position.x);
        channels[1].push(s.position.y);
        channels[2].push(s.position.z);
        let mut yaw = s.orientation.euler_angles().2;
        if k > 0 {
            while yaw - prev_yaw > std::f64::consts::PI {
                yaw -= 2.0 * std::f64::consts::PI;
            }
            while yaw - prev_yaw < -std::f64::consts::PI {
                yaw += 2.0 * std::f64::consts::PI;
            }
        }
        prev_yaw = yaw;
        channels[3].push(yaw);
    }
    let scores: Vec<f64> = channels
        .iter()
        .filter_map(|c| pearson_lag_one(c))
        .collect();
    if scores.is_empty() {
        return Ok(1.0);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Aggregate evaluation of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub position_errors: Vec<f64>,
    pub orientation_errors: Vec<f64>,
    pub mean_position_error: f64,
    pub std_position_error: f64,
    pub mean_orientation_error: f64,
    pub std_orientation_error: f64,
    pub m_a: f64,
    pub marker_updates: usize,
    pub feature_updates: usize,
    pub plane_updates: usize,
    pub dropped_events: usize,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MetricsReport {
    pub fn from_errors(
        position_errors: Vec<f64>,
        orientation_errors: Vec<f64>,
        m_a: f64,
    ) -> Self {
        let (mp, sp) = mean_std(&position_errors);
        let (mo, so) = mean_std(&orientation_errors);
        Self {
            position_errors,
            orientation_errors,
            mean_position_error: mp,
            std_position_error: sp,
            mean_orientation_error: mo,
            std_orientation_error: so,
            m_a,
            marker_updates: 0,
            feature_updates: 0,
            plane_updates: 0,
            dropped_events: 0,
        }
    }
}
