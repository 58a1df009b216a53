//! Run configuration read from TOML.
//!
//! Threshold keys carry their conventional symbol names (`delta_theta`,
//! `N1_kf`, ...). Angles are written in degrees in the file and converted
//! to radians when building the module parameter structs. Unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::line2d::{MatchParams, MergeParams};
use crate::map::KeyframeThresholds;
use crate::optimizer::{HuberKernel, LmConfig};
use crate::synthetic::{NoiseModel, SceneConfig};
use crate::triangulation::TriangulationParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineConfig {
    /// Maximum angle between merged segments, degrees.
    pub delta_theta: f64,
    /// Maximum midpoint-to-line distance for merging, pixels.
    pub delta_d: f64,
    /// Maximum endpoint gap for non-overlapping segments, pixels.
    pub delta_ep: f64,
    /// Segments shorter than this after merging are dropped, pixels.
    pub min_length: f64,
    #[serde(rename = "delta_S")]
    pub delta_s: f64,
    #[serde(rename = "delta_N")]
    pub delta_n: usize,
    pub assoc_max_dist: f64,
}

impl Default for LineConfig {
    fn default() -> Self {
        let m = MergeParams::default();
        let p = MatchParams::default();
        Self {
            delta_theta: 3.0,
            delta_d: m.max_midpoint_dist,
            delta_ep: m.max_endpoint_gap,
            min_length: m.min_length,
            delta_s: p.min_score,
            delta_n: p.min_shared_points,
            assoc_max_dist: p.assoc_max_dist,
        }
    }
}

impl LineConfig {
    pub fn merge_params(&self) -> MergeParams {
        MergeParams {
            max_angle: self.delta_theta.to_radians(),
            max_midpoint_dist: self.delta_d,
            max_endpoint_gap: self.delta_ep,
            min_length: self.min_length,
        }
    }

    pub fn match_params(&self) -> MatchParams {
        MatchParams { min_score: self.delta_s, min_shared_points: self.delta_n, assoc_max_dist: self.assoc_max_dist }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct KeyframeConfig {
    pub delta_d_kf: f64,
    /// Degrees.
    pub delta_theta_kf: f64,
    pub N1_kf: usize,
    pub N2_kf: usize,
    pub N_kf_go: usize,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        let t = KeyframeThresholds::default();
        Self {
            delta_d_kf: t.min_distance,
            delta_theta_kf: 15.0,
            N1_kf: t.low_track,
            N2_kf: t.critical_track,
            N_kf_go: t.window,
        }
    }
}

impl KeyframeConfig {
    pub fn thresholds(&self) -> KeyframeThresholds {
        KeyframeThresholds {
            min_distance: self.delta_d_kf,
            min_angle: self.delta_theta_kf.to_radians(),
            low_track: self.N1_kf,
            critical_track: self.N2_kf,
            window: self.N_kf_go,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriangulationConfig {
    /// Smallest angle between back-projected planes, degrees.
    pub min_plane_angle: f64,
}

impl Default for TriangulationConfig {
    fn default() -> Self {
        Self { min_plane_angle: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub initial_lambda: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    pub huber_delta: f64,
    pub point_sigma: f64,
    pub line_sigma: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let c = LmConfig::default();
        Self {
            initial_lambda: c.initial_lambda,
            lambda_up: c.lambda_up,
            lambda_down: c.lambda_down,
            max_iterations: c.max_iterations,
            relative_tolerance: c.relative_tolerance,
            huber_delta: c.kernel.delta,
            point_sigma: c.point_sigma,
            line_sigma: c.line_sigma,
        }
    }
}

impl OptimizerConfig {
    pub fn lm(&self) -> LmConfig {
        LmConfig {
            initial_lambda: self.initial_lambda,
            lambda_up: self.lambda_up,
            lambda_down: self.lambda_down,
            max_iterations: self.max_iterations,
            relative_tolerance: self.relative_tolerance,
            kernel: HuberKernel { delta: self.huber_delta },
            point_sigma: self.point_sigma,
            line_sigma: self.line_sigma,
        }
    }
}

/// Where frames come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    /// Generate a scene from `[scene]`, or load one exported earlier.
    Synthetic {
        #[serde(default)]
        scene_file: Option<PathBuf>,
    },
    /// Precomputed features, one JSON object per line; see
    /// [`crate::pipeline::FeatureFileSource`].
    Features {
        path: PathBuf,
        #[serde(default)]
        ground_truth: Option<PathBuf>,
    },
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig::Synthetic { scene_file: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub use_lines: bool,
    /// Capacity of the frontend → backend frame queue.
    pub queue_capacity: usize,
    /// Run the full map audit after every frame.
    pub audit_map: bool,
    pub output_dir: Option<PathBuf>,
    pub source: SourceConfig,
    pub line: LineConfig,
    pub keyframe: KeyframeConfig,
    pub triangulation: TriangulationConfig,
    pub optimizer: OptimizerConfig,
    pub noise: NoiseModel,
    pub scene: SceneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            use_lines: true,
            queue_capacity: 4,
            audit_map: false,
            output_dir: None,
            source: SourceConfig::default(),
            line: LineConfig::default(),
            keyframe: KeyframeConfig::default(),
            triangulation: TriangulationConfig::default(),
            optimizer: OptimizerConfig::default(),
            noise: NoiseModel::default(),
            scene: SceneConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut cfg.source {
            SourceConfig::Synthetic { scene_file } => scene_file.iter_mut().for_each(fix),
            SourceConfig::Features { path, ground_truth } => {
                fix(path);
                ground_truth.iter_mut().for_each(fix);
            }
        }
        if let Some(dir) = &mut cfg.output_dir {
            fix(dir);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.line.merge_params().validate()?;
        self.line.match_params().validate()?;
        self.keyframe.thresholds().validate()?;
        self.optimizer.lm().validate()?;
        self.noise.validate()?;
        self.scene.validate()?;
        if !(self.triangulation.min_plane_angle > 0.0 && self.triangulation.min_plane_angle < 90.0) {
            return Err(Error::InvalidParameter("min_plane_angle must lie in (0, 90) degrees".into()));
        }
        if self.queue_capacity == 0 {
            return Err(Error::InvalidParameter("queue_capacity must be positive".into()));
        }
        Ok(())
    }

    pub fn triangulation_params(&self) -> TriangulationParams {
        TriangulationParams { min_plane_angle: self.triangulation.min_plane_angle.to_radians() }
    }
}
