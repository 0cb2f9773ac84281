//! Experiment configuration: a flat TOML document where every field has a
//! default matching the standard operating point (4,096 voters, 1,024
//! triples, threshold 0.4 px, 4 stick keypoints, 64 px loss crop, r = 16
//! on 256x256 images).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use kdfield::field::LossConfig;
use kdfield::geom::CameraIntrinsics;
use kdfield::metrics::EvalThresholds;
use kdfield::synth::{NoiseModel, SceneConfig, StickObject, SynthError};
use kdfield::voting::VotingConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("unknown sweep axis {0:?} (expected num_keypoints, theta, num_hypotheses, sigma_t, sigma_px, or occluder_radius)")]
    UnknownAxis(String),
}

/// One experiment run over a set of synthetic stick scenes.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Number of scenes to generate and evaluate.
    pub scenes: usize,
    /// Master seed; scene i derives its stream from `master_seed XOR i`.
    pub master_seed: u64,

    pub image_width: u32,
    pub image_height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Fixed object translation (meters); rotations vary per scene.
    pub translation: [f64; 3],

    pub stick_length: f64,
    pub stick_radius: f64,
    pub num_keypoints: usize,

    /// Std-dev of the predictor noise on the parameterized distance; also
    /// the range-proportional angular noise (radians) of the direction
    /// baseline.
    pub sigma_t: f64,
    /// Pixel-precision floor of the predictor noise (pixels).
    pub sigma_px: f64,
    /// Per-element angular noise of the direction baseline (radians).
    pub sigma_dir: f64,
    /// Spatially correlated predictor error: sub-pixel keypoint jitter per
    /// field (pixels). Shared by both representations.
    pub sigma_kp: f64,
    /// Probability that a field is regressed around a grossly wrong
    /// location. This is what keeps simulated accuracy off the ceiling,
    /// independent of occlusion.
    pub kp_failure_rate: f64,
    /// Probability that a field element is replaced by a uniform outlier.
    pub outlier_fraction: f64,
    /// Keypoint occluder radius in pixels. When unset, each scene uses 5%
    /// of its projected stick length.
    pub occluder_radius: Option<f64>,

    pub num_voters: usize,
    /// Voter triples per keypoint; the hypothesis budget is three per triple.
    pub num_triples: usize,
    /// Voting inlier threshold in pixels.
    pub theta: f64,

    /// Log-ratio parameterization constant; unset picks the image-size
    /// default (16 px at 256x256).
    pub r: Option<f64>,
    /// Smooth-L1 switch threshold.
    pub e: f64,
    /// Loss crop radius in pixels.
    pub crop_radius: f64,

    pub add_fraction: f64,
    pub proj_pixels: f64,
    pub toy_proj_pixels: f64,
    pub auc_max: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenes: 3000,
            master_seed: 20210901,
            image_width: 256,
            image_height: 256,
            fx: 280.0,
            fy: 280.0,
            cx: 128.0,
            cy: 128.0,
            translation: [0.0, 0.0, 1.0],
            stick_length: 0.5,
            stick_radius: 0.01,
            num_keypoints: 4,
            sigma_t: 0.002,
            sigma_px: 0.05,
            sigma_dir: 0.02,
            sigma_kp: 0.3,
            kp_failure_rate: 0.015,
            outlier_fraction: 0.0,
            occluder_radius: None,
            num_voters: 4096,
            num_triples: 1024,
            theta: 0.4,
            r: None,
            e: 1.0,
            crop_radius: 64.0,
            add_fraction: 0.1,
            proj_pixels: 5.0,
            toy_proj_pixels: 1.0,
            auc_max: 0.10,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.scenes == 0 {
            return Err(ConfigError::Invalid("scenes must be at least 1".into()));
        }
        if self.num_keypoints < 2 {
            return Err(ConfigError::Invalid(
                "num_keypoints must be at least 2".into(),
            ));
        }
        if self.theta <= 0.0 {
            return Err(ConfigError::Invalid("theta must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(ConfigError::Invalid(
                "outlier_fraction must lie in [0, 1)".into(),
            ));
        }
        if self.sigma_t < 0.0 {
            return Err(ConfigError::Invalid("sigma_t must be non-negative".into()));
        }
        if self.sigma_px < 0.0 {
            return Err(ConfigError::Invalid("sigma_px must be non-negative".into()));
        }
        if self.sigma_kp < 0.0 {
            return Err(ConfigError::Invalid("sigma_kp must be non-negative".into()));
        }
        if self.sigma_dir < 0.0 {
            return Err(ConfigError::Invalid(
                "sigma_dir must be non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.kp_failure_rate) {
            return Err(ConfigError::Invalid(
                "kp_failure_rate must lie in [0, 1)".into(),
            ));
        }
        // Construct the derived pieces once so structural errors surface at
        // load time rather than mid-run.
        self.scene_config()?;
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics<f64>, ConfigError> {
        CameraIntrinsics::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.image_width,
            self.image_height,
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn scene_config(&self) -> Result<SceneConfig<f64>, ConfigError> {
        Ok(SceneConfig {
            intrinsics: self.intrinsics()?,
            translation: Vector3::new(self.translation[0], self.translation[1], self.translation[2]),
            stick: StickObject::new(self.stick_length, self.stick_radius, self.num_keypoints)?,
        })
    }

    pub fn voting_config(&self) -> VotingConfig<f64> {
        VotingConfig {
            num_voters: self.num_voters,
            num_triples: self.num_triples,
            inlier_threshold: self.theta,
            seed: self.master_seed,
        }
    }

    pub fn loss_config(&self) -> LossConfig<f64> {
        let mut loss = LossConfig::default_for_image(self.image_width, self.image_height);
        if let Some(r) = self.r {
            loss.r = r;
        }
        loss.e = self.e;
        loss.crop_radius = Some(self.crop_radius);
        loss
    }

    pub fn noise_model(&self) -> Result<NoiseModel<f64>, ConfigError> {
        Ok(NoiseModel::new(
            self.sigma_t,
            self.outlier_fraction,
            self.occluder_radius.unwrap_or(0.0),
        )?
        .with_pixel_noise(self.sigma_px)?
        .with_direction_noise(self.sigma_dir)?
        .with_keypoint_jitter(self.sigma_kp, self.kp_failure_rate)?)
    }

    pub fn thresholds(&self) -> EvalThresholds<f64> {
        EvalThresholds {
            add_fraction: self.add_fraction,
            proj_pixels: self.proj_pixels,
            toy_proj_pixels: self.toy_proj_pixels,
            auc_max: self.auc_max,
        }
    }
}

/// Sweepable parameter axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NumKeypoints,
    Theta,
    NumHypotheses,
    SigmaT,
    SigmaPx,
    SigmaDir,
    SigmaKp,
    KpFailureRate,
    OccluderRadius,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::NumKeypoints => "num_keypoints",
            SweepAxis::Theta => "theta",
            SweepAxis::NumHypotheses => "num_hypotheses",
            SweepAxis::SigmaT => "sigma_t",
            SweepAxis::SigmaPx => "sigma_px",
            SweepAxis::SigmaDir => "sigma_dir",
            SweepAxis::SigmaKp => "sigma_kp",
            SweepAxis::KpFailureRate => "kp_failure_rate",
            SweepAxis::OccluderRadius => "occluder_radius",
        }
    }

    /// Returns a copy of `base` with this axis set to `value`.
    pub fn apply(&self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig, ConfigError> {
        let mut config = base.clone();
        match self {
            SweepAxis::NumKeypoints => {
                if value.fract() != 0.0 || value < 2.0 {
                    return Err(ConfigError::Invalid(format!(
                        "num_keypoints sweep value {value} must be an integer >= 2"
                    )));
                }
                config.num_keypoints = value as usize;
            }
            SweepAxis::Theta => {
                if value <= 0.0 {
                    return Err(ConfigError::Invalid(format!(
                        "theta sweep value {value} must be positive"
                    )));
                }
                config.theta = value;
            }
            SweepAxis::NumHypotheses => {
                if value.fract() != 0.0 || value < 3.0 || (value as usize) % 3 != 0 {
                    return Err(ConfigError::Invalid(format!(
                        "num_hypotheses sweep value {value} must be a positive multiple of 3"
                    )));
                }
                config.num_triples = value as usize / 3;
            }
            SweepAxis::SigmaT => {
                if value < 0.0 {
                    return Err(ConfigError::Invalid(format!(
                        "sigma_t sweep value {value} must be non-negative"
                    )));
                }
                config.sigma_t = value;
            }
            SweepAxis::SigmaPx => {
                if value < 0.0 {
                    return Err(ConfigError::Invalid(format!(
                        "sigma_px sweep value {value} must be non-negative"
                    )));
                }
                config.sigma_px = value;
            }
            SweepAxis::SigmaDir => {
                if value < 0.0 {
                    return Err(ConfigError::Invalid(format!(
                        "sigma_dir sweep value {value} must be non-negative"
                    )));
                }
                config.sigma_dir = value;
            }
            SweepAxis::SigmaKp => {
                if value < 0.0 {
                    return Err(ConfigError::Invalid(format!(
                        "sigma_kp sweep value {value} must be non-negative"
                    )));
                }
                config.sigma_kp = value;
            }
            SweepAxis::KpFailureRate => {
                if !(0.0..1.0).contains(&value) {
                    return Err(ConfigError::Invalid(format!(
                        "kp_failure_rate sweep value {value} must lie in [0, 1)"
                    )));
                }
                config.kp_failure_rate = value;
            }
            SweepAxis::OccluderRadius => {
                if value < 0.0 {
                    return Err(ConfigError::Invalid(format!(
                        "occluder_radius sweep value {value} must be non-negative"
                    )));
                }
                config.occluder_radius = Some(value);
            }
        }
        config.validate()?;
        Ok(config)
    }
}

impl FromStr for SweepAxis {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "num_keypoints" => Ok(SweepAxis::NumKeypoints),
            "theta" => Ok(SweepAxis::Theta),
            "num_hypotheses" => Ok(SweepAxis::NumHypotheses),
            "sigma_t" => Ok(SweepAxis::SigmaT),
            "sigma_px" => Ok(SweepAxis::SigmaPx),
            "sigma_dir" => Ok(SweepAxis::SigmaDir),
            "sigma_kp" => Ok(SweepAxis::SigmaKp),
            "kp_failure_rate" => Ok(SweepAxis::KpFailureRate),
            "occluder_radius" => Ok(SweepAxis::OccluderRadius),
            other => Err(ConfigError::UnknownAxis(other.to_string())),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
