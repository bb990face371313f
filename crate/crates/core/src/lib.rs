//! Two-stage panel-relative localization. Stage one builds a probabilistic
//! voxel map of the workspace while the vehicle localizes from fiducial
//! markers. Stage two filters stereo-style point clouds through that map,
//! extracts planes by region growing, registers rotation between plane
//! sets, runs feature odometry on textured views, gates both behind an
//! image-quality score, and fuses everything with marker poses and
//! dead-reckoning in an error-state EKF.

pub mod features;
pub mod fusion;
pub mod geometry;
pub mod iqa;
pub mod kdtree;
pub mod rng;
pub mod scene;
pub mod marker_odom;
pub mod pipeline;
pub mod planes;
pub mod registration;
pub mod report;
pub mod voxel;

pub use geometry::{FrameId, FramedPose, GeometryError, PoseWithCovariance};
pub use kdtree::KdTree;
