//! No-reference image quality scoring and the modality gate.
//! Three contrast components (Minkowski 1, 2, and infinity deviations)
//! are each normalized by their value on a full-contrast checkerboard
//! of the same dimensions, so 1 means checkerboard-grade contrast and
//! 0 means a flat image. Combined with the normalized tracked-feature
//! count they gate which visual odometry runs on a frame. Marker
//! detections are never gated.

use crate::scene::ImageProxy;
use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IqaError {
    #[error("image has no pixels")]
    EmptyImage,
    #[error("gate config invalid: {0}")]
    BadConfig(String),
}

/// Which visual odometry handles a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    FeatureVO,
    PlaneVO,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Modality::FeatureVO => write!(f, "feature"),
            Modality::PlaneVO => write!(f, "plane"),
        }
    }
}

/// How the components combine into the frame average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AverageMode {
    /// Mean of the three contrast components and the feature score.
    #[default]
    FourTerm,
    /// Contrast components pre-averaged, then meaned with features.
    TwoTerm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateConfig {
    pub threshold: f64,
    pub max_features: usize,
    pub averaging: AverageMode,
    /// Half-width of the switching dead band; 0 disables hysteresis.
    pub hysteresis: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            threshold: 0.45,
            max_features: 80,
            averaging: AverageMode::FourTerm,
            hysteresis: 0.0,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<(), IqaError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(IqaError::BadConfig(format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        if self.max_features == 0 {
            return Err(IqaError::BadConfig("max_features is zero".into()));
        }
        if !(self.hysteresis >= 0.0 && self.hysteresis < self.threshold) {
            return Err(IqaError::BadConfig(format!(
                "hysteresis band {} invalid",
                self.hysteresis
            )));
        }
        Ok(())
    }
}

/// Frame quality record: contrast triple, feature score, average.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IqaScore {
    pub mdm: Vector3<f64>,
    pub feature_norm: f64,
    pub average: f64,
    pub timestamp: f64,
}

fn deviations(pixels: &[f64]) -> (f64, f64) {
    let n = pixels.len() as f64;
    let mean = pixels.iter().sum::<f64>() / n;
    let mut abs = 0.0;
    let mut sq = 0.0;
    for &p in pixels {
        abs += (p - mean).abs();
        sq += (p - mean) * (p - mean);
    }
    (abs / n, (sq / n).sqrt())
}

fn max_block_range(pixels: &[f64], width: usize, height: usize) -> f64 {
    if width < 3 || height < 3 {
        let max = pixels.iter().cloned().fold(f64::MIN, f64::max);
        let min = pixels.iter().cloned().fold(f64::MAX, f64::min);
        return max - min;
    }
    let mut best = 0.0_f64;
    for r0 in 0..height - 2 {
        for c0 in 0..width - 2 {
            let mut lo = f64::MAX;
            let mut hi = f64::MIN;
            for r in r0..r0 + 3 {
                for c in c0..c0 + 3 {
                    let p = pixels[r * width + c];
                    lo = lo.min(p);
                    hi = hi.max(p);
                }
            }
            best = best.max(hi - lo);
        }
    }
    best
}

fn checkerboard(width: usize, height: usize) -> Vec<f64> {
    (0..height)
        .flat_map(|r| (0..width).map(move |c| ((r + c) % 2) as f64))
        .collect()
}

/// Contrast-distortion triple in [0,1]^3, 1 meaning full contrast:
/// mean absolute deviation, rms deviation, and the largest 3x3 local
/// range, each divided by its value on a checkerboard of the same
/// dimensions and clamped.
pub fn mdm_score(img: &ImageProxy) -> Result<Vector3<f64>, IqaError> {
    if img.width == 0 || img.height == 0 || img.intensities.is_empty() {
        return Err(IqaError::EmptyImage);
    }
    let checker = checkerboard(img.width, img.height);
    let (abs_ref, rms_ref) = deviations(&checker);
    let range_ref = max_block_range(&checker, img.width, img.height);
    let (abs, rms) = deviations(&img.intensities);
    let range = max_block_range(&img.intensities, img.width, img.height);
    let norm = |value: f64, reference: f64| {
        if reference <= 0.0 {
            0.0
        } else {
            (value / reference).clamp(0.0, 1.0)
        }
    };
    Ok(Vector3::new(
        norm(abs, abs_ref),
        norm(rms, rms_ref),
        norm(range, range_ref),
    ))
}

/// Tracked-feature count against the configured maximum, clamped.
pub fn feature_score(tracked: usize, cfg: &GateConfig) -> f64 {
    (tracked as f64 / cfg.max_features as f64).min(1.0)
}

/// Combines the components into the frame average.
pub fn aggregate(mdm: Vector3<f64>, feature_norm: f64, t: f64, mode: AverageMode) -> IqaScore {
    let average = match mode {
        AverageMode::FourTerm => (mdm.x + mdm.y + mdm.z + feature_norm) / 4.0,
        AverageMode::TwoTerm => ((mdm.x + mdm.y + mdm.z) / 3.0 + feature_norm) / 2.0,
    };
    IqaScore {
        mdm,
        feature_norm,
        average,
        timestamp: t,
    }
}

/// Threshold rule: feature odometry whenever the average reaches the
/// threshold, plane odometry otherwise.
pub fn select_modality(score: &IqaScore, cfg: &GateConfig) -> Modality {
    if score.average >= cfg.threshold {
        Modality::FeatureVO
    } else {
        Modality::PlaneVO
    }
}

/// Stateful gate. With a zero band it reproduces `select_modality`;
/// otherwise switching requires leaving the dead band around the
/// threshold, which stops frame-to-frame chatter.
#[derive(Debug, Clone)]
pub struct Gate {
    cfg: GateConfig,
    last: Option<Modality>,
}

impl Gate {
    pub fn new(cfg: GateConfig) -> Result<Self, IqaError> {
        cfg.validate()?;
        Ok(Self { cfg, last: None })
    }

    pub fn config(&self) -> &GateConfig {
        &self.cfg
    }

    pub fn decide(&mut self, score: &IqaScore) -> Modality {
        let plain = select_modality(score, &self.cfg);
        let choice = match (self.last, self.cfg.hysteresis) {
            (None, _) => plain,
            (Some(prev), band) if band > 0.0 => {
                if prev == Modality::PlaneVO && score.average >= self.cfg.threshold + band {
                    Modality::FeatureVO
                } else if prev == Modality::FeatureVO && score.average < self.cfg.threshold - band {
                    Modality::PlaneVO
                } else {
                    prev
                }
            }
            _ => plain,
        };
        self.last = Some(choice);
        choice
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn proxy(width: usize, height: usize, intensities: Vec<f64>) -> ImageProxy {
        ImageProxy {
            width,
            height,
            intensities,
            trackable_feature_count: 0,
            timestamp: 0.0,
        }
    }

    #[test]
    fn empty_image_is_rejected() {
        assert!(matches!(
            mdm_score(&proxy(0, 0, vec![])),
            Err(IqaError::EmptyImage)
        ));
    }

    #[test]
    fn constant_image_scores_zero() {
        let m = mdm_score(&proxy(16, 12, vec![0.5; 16 * 12])).unwrap();
        assert_eq!(m, Vector3::zeros());
        // Means of non-representable constants leave rounding residue.
        let m = mdm_score(&proxy(16, 12, vec![0.7; 16 * 12])).unwrap();
        assert!(m.norm() < 1e-12);
    }

    #[test]
    fn checkerboard_is_the_normalization_anchor() {
        let img = proxy(16, 12, checkerboard(16, 12));
        let m = mdm_score(&img).unwrap();
        assert!((m - Vector3::new(1.0, 1.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn contrast_compression_never_raises_any_component() {
        let mut draw = rng::chacha(77, 0xA1);
        for _ in 0..100 {
            let w = 9 + draw.random_range(0..8);
            let h = 7 + draw.random_range(0..8);
            let base: Vec<f64> = (0..w * h).map(|_| draw.random_range(0.0..1.0)).collect();
            let squeezed: Vec<f64> = base.iter().map(|&p| 0.5 + 0.5 * (p - 0.5)).collect();
            let mb = mdm_score(&proxy(w, h, base)).unwrap();
            let ma = mdm_score(&proxy(w, h, squeezed)).unwrap();
            for k in 0..3 {
                assert!(ma[k] <= mb[k] + 1e-12, "component {k}: {} > {}", ma[k], mb[k]);
            }
        }
    }

    #[test]
    fn feature_score_clamps_at_the_maximum() {
        let cfg = GateConfig::default();
        assert_eq!(feature_score(0, &cfg), 0.0);
        assert_eq!(feature_score(cfg.max_features, &cfg), 1.0);
        assert_eq!(feature_score(2 * cfg.max_features, &cfg), 1.0);
        assert!((feature_score(20, &cfg) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn four_term_average_is_the_component_mean() {
        let s = aggregate(Vector3::new(1.0, 1.0, 1.0), 1.0, 0.0, AverageMode::FourTerm);
        assert_eq!(s.average, 1.0);
        let s = aggregate(Vector3::zeros(), 0.0, 0.0, AverageMode::FourTerm);
        assert_eq!(s.average, 0.0);
        let s = aggregate(Vector3::new(0.4, 0.6, 0.5), 0.5, 2.5, AverageMode::FourTerm);
        assert!((s.average - 0.5).abs() < 1e-12);
        assert_eq!(s.timestamp, 2.5);
        let mean = (s.mdm.x + s.mdm.y + s.mdm.z + s.feature_norm) / 4.0;
        assert!((s.average - mean).abs() < 1e-12);
    }

    #[test]
    fn two_term_average_pre_averages_the_contrast_triple() {
        let s = aggregate(Vector3::new(0.3, 0.6, 0.9), 0.2, 0.0, AverageMode::TwoTerm);
        assert!((s.average - (0.6 + 0.2) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_rule_is_monotone_with_ties_to_features() {
        let cfg = GateConfig::default();
        let at = |avg: f64| IqaScore {
            mdm: Vector3::zeros(),
            feature_norm: 0.0,
            average: avg,
            timestamp: 0.0,
        };
        assert_eq!(select_modality(&at(0.9), &cfg), Modality::FeatureVO);
        assert_eq!(select_modality(&at(0.1), &cfg), Modality::PlaneVO);
        assert_eq!(select_modality(&at(cfg.threshold), &cfg), Modality::FeatureVO);
        let mut prev = Modality::PlaneVO;
        for step in 0..=100 {
            let m = select_modality(&at(step as f64 / 100.0), &cfg);
            assert!(!(prev == Modality::FeatureVO && m == Modality::PlaneVO));
            prev = m;
        }
    }

    #[test]
    fn hysteresis_suppresses_chatter_inside_the_band() {
        let at = |avg: f64| IqaScore {
            mdm: Vector3::zeros(),
            feature_norm: 0.0,
            average: avg,
            timestamp: 0.0,
        };
        let wobble = [0.46, 0.44, 0.46, 0.44, 0.46, 0.44];

        let mut plain = Gate::new(GateConfig::default()).unwrap();
        let switches = wobble
            .windows(2)
            .filter(|w| plain.decide(&at(w[0])) != plain.decide(&at(w[1])))
            .count();
        assert!(switches > 0, "zero band must chatter on this input");

        let mut banded = Gate::new(GateConfig {
            hysteresis: 0.03,
            ..GateConfig::default()
        })
        .unwrap();
        let first = banded.decide(&at(wobble[0]));
        for &avg in &wobble[1..] {
            assert_eq!(banded.decide(&at(avg)), first);
        }
        // Leaving the band does switch.
        assert_eq!(banded.decide(&at(0.2)), Modality::PlaneVO);
        assert_eq!(banded.decide(&at(0.7)), Modality::FeatureVO);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        for cfg in [
            GateConfig {
                threshold: 0.0,
                ..GateConfig::default()
            },
            GateConfig {
                threshold: 1.0,
                ..GateConfig::default()
            },
            GateConfig {
                max_features: 0,
                ..GateConfig::default()
            },
            GateConfig {
                hysteresis: -0.01,
                ..GateConfig::default()
            },
            GateConfig {
                hysteresis: 0.5,
                ..GateConfig::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
        assert!(GateConfig::default().validate().is_ok());
    }

    #[test]
    fn textured_side_outscores_the_bare_side() {
        use crate::geometry::FrameId;
        use crate::scene::{build_panel_scene, look_at_camera_pose, render_image_proxy};

        let scene = build_panel_scene(3, 3.0, 0.3).unwrap();
        let cfg = GateConfig::default();
        let mean_score = |side: usize| {
            let normal = scene.sides[side].normal;
            let center = scene.sides[side].center;
            let mut sum = 0.0;
            let mut n = 0;
            for k in 0..10 {
                let along = scene.sides[side].tangent * (k as f64 - 4.5) * 0.2;
                let eye = center + normal * 1.5 + along;
                let cam = look_at_camera_pose(&scene, eye, center + along);
                assert_eq!(cam.target, FrameId::Odom);
                let img = render_image_proxy(&scene, &cam, k as f64, 100 + k as u64);
                let mdm = mdm_score(&img).unwrap();
                let feat = feature_score(img.trackable_feature_count, &cfg);
                sum += aggregate(mdm, feat, 0.0, AverageMode::FourTerm).average;
                n += 1;
            }
            sum / n as f64
        };
        let rich = mean_score(0);
        let bare = mean_score(2);
        assert!(
            rich > cfg.threshold && bare < cfg.threshold,
            "rich {rich} bare {bare} must straddle the gate"
        );
        assert!(rich > bare + 0.15, "rich {rich} vs bare {bare}");
    }
}
