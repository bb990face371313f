//! TOML experiment configuration. Sections mirror the library's
//! parameter structs field for field; omitted fields take the library
//! defaults, unknown fields are rejected.

use panelnav::fusion::FusionConfig;
use panelnav::iqa::{AverageMode, GateConfig};
use panelnav::pipeline::{
    FusionRunParams, NoiseConfig, PlaneEvalParams, ScenarioConfig, StageOneParams,
};
use panelnav::scene::DepthProfileKind;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    Reference,
    AccurateSparse,
    CompleteSmooth,
}

impl From<ProfileName> for DepthProfileKind {
    fn from(name: ProfileName) -> Self {
        match name {
            ProfileName::Reference => DepthProfileKind::Reference,
            ProfileName::AccurateSparse => DepthProfileKind::AccurateSparse,
            ProfileName::CompleteSmooth => DepthProfileKind::CompleteSmooth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AveragingName {
    FourTerm,
    TwoTerm,
}

impl From<AveragingName> for AverageMode {
    fn from(name: AveragingName) -> Self {
        match name {
            AveragingName::FourTerm => AverageMode::FourTerm,
            AveragingName::TwoTerm => AverageMode::TwoTerm,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub scene_seed: u64,
    pub run_seed: u64,
    pub side_length: f64,
    pub corner_radius: f64,
    pub standoff: f64,
    pub angular_rate: f64,
    pub duration: f64,
    pub sensor_rate: f64,
    pub depth_profile: ProfileName,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let d = ScenarioConfig::default();
        Self {
            scene_seed: d.scene_seed,
            run_seed: d.run_seed,
            side_length: d.side_length,
            corner_radius: d.corner_radius,
            standoff: d.standoff,
            angular_rate: d.angular_rate,
            duration: d.duration,
            sensor_rate: d.sensor_rate,
            depth_profile: ProfileName::CompleteSmooth,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub twist_linear_sigma: f64,
    pub twist_angular_sigma: f64,
    pub gyro_yaw_bias: f64,
    pub marker_position_sigma: f64,
    pub marker_rotation_sigma: f64,
    pub feature_sigma: f64,
    pub feature_outlier_rate: f64,
    pub quality_noise_gain: f64,
    pub feature_drift_sigma: f64,
    pub feature_drift_rot_sigma: f64,
    pub marker_outage_rate: f64,
    pub marker_outage_mean_s: f64,
    pub marker_outage_grace_s: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let d = NoiseConfig::default();
        Self {
            twist_linear_sigma: d.twist_linear_sigma,
            twist_angular_sigma: d.twist_angular_sigma,
            gyro_yaw_bias: d.gyro_yaw_bias,
            marker_position_sigma: d.marker_position_sigma,
            marker_rotation_sigma: d.marker_rotation_sigma,
            feature_sigma: d.feature_sigma,
            feature_outlier_rate: d.feature_outlier_rate,
            quality_noise_gain: d.quality_noise_gain,
            feature_drift_sigma: d.feature_drift_sigma,
            feature_drift_rot_sigma: d.feature_drift_rot_sigma,
            marker_outage_rate: d.marker_outage_rate,
            marker_outage_mean_s: d.marker_outage_mean_s,
            marker_outage_grace_s: d.marker_outage_grace_s,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateSection {
    pub threshold: f64,
    pub max_features: usize,
    pub averaging: AveragingName,
    pub hysteresis: f64,
}

impl Default for GateSection {
    fn default() -> Self {
        let d = GateConfig::default();
        Self {
            threshold: d.threshold,
            max_features: d.max_features,
            averaging: AveragingName::FourTerm,
            hysteresis: d.hysteresis,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub q_position: f64,
    pub q_rotation: f64,
    pub q_velocity: f64,
    pub history_horizon: f64,
    pub plane_rot_var_scale: f64,
    pub use_map_filter: bool,
}

impl Default for FusionSection {
    fn default() -> Self {
        let f = FusionConfig::default();
        let r = FusionRunParams::default();
        Self {
            q_position: f.q_position,
            q_rotation: f.q_rotation,
            q_velocity: f.q_velocity,
            history_horizon: f.history_horizon,
            plane_rot_var_scale: r.plane_rot_var_scale,
            use_map_filter: r.use_map_filter,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub out_dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSection,
    pub noise: NoiseSection,
    pub gate: GateSection,
    pub fusion: FusionSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            scene_seed: self.scenario.scene_seed,
            run_seed: self.scenario.run_seed,
            side_length: self.scenario.side_length,
            corner_radius: self.scenario.corner_radius,
            standoff: self.scenario.standoff,
            angular_rate: self.scenario.angular_rate,
            duration: self.scenario.duration,
            sensor_rate: self.scenario.sensor_rate,
            noise: NoiseConfig {
                twist_linear_sigma: self.noise.twist_linear_sigma,
                twist_angular_sigma: self.noise.twist_angular_sigma,
                gyro_yaw_bias: self.noise.gyro_yaw_bias,
                marker_position_sigma: self.noise.marker_position_sigma,
                marker_rotation_sigma: self.noise.marker_rotation_sigma,
                feature_sigma: self.noise.feature_sigma,
                feature_outlier_rate: self.noise.feature_outlier_rate,
                quality_noise_gain: self.noise.quality_noise_gain,
                feature_drift_sigma: self.noise.feature_drift_sigma,
                feature_drift_rot_sigma: self.noise.feature_drift_rot_sigma,
                marker_outage_rate: self.noise.marker_outage_rate,
                marker_outage_mean_s: self.noise.marker_outage_mean_s,
                marker_outage_grace_s: self.noise.marker_outage_grace_s,
            },
            depth_profile: self.scenario.depth_profile.into(),
        }
    }

    pub fn gate_config(&self) -> GateConfig {
        GateConfig {
            threshold: self.gate.threshold,
            max_features: self.gate.max_features,
            averaging: self.gate.averaging.into(),
            hysteresis: self.gate.hysteresis,
        }
    }

    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            q_position: self.fusion.q_position,
            q_rotation: self.fusion.q_rotation,
            q_velocity: self.fusion.q_velocity,
            history_horizon: self.fusion.history_horizon,
        }
    }

    pub fn stage1_params(&self) -> StageOneParams {
        StageOneParams {
            fusion: self.fusion_config(),
            ..StageOneParams::default()
        }
    }

    pub fn fusion_run_params(&self) -> FusionRunParams {
        FusionRunParams {
            fusion: self.fusion_config(),
            gate: self.gate_config(),
            plane_rot_var_scale: self.fusion.plane_rot_var_scale,
            use_map_filter: self.fusion.use_map_filter,
            ..FusionRunParams::default()
        }
    }

    pub fn plane_eval_params(&self) -> PlaneEvalParams {
        PlaneEvalParams::default()
    }
}
