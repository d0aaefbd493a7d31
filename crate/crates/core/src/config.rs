//! The run-config file: one JSON document with a block per pipeline stage.
//! Unknown keys are rejected; omitted keys take the desk defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::loss::LossConfig;
use crate::net::{NetConfig, OptimConfig};
use crate::pose::{FitOptions, Template3D};
use crate::synth::SynthConfig;
use crate::train::{Balancing, LossRefresh, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingBlock {
    pub epochs: usize,
    pub eval_every: usize,
    pub loss_refresh: LossRefresh,
    pub range_total: u64,
    pub dedup: bool,
    pub init_output_bias: bool,
    pub record_wall_time: bool,
}

impl Default for TrainingBlock {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: 60,
            eval_every: 10,
            loss_refresh: t.loss_refresh,
            range_total: t.range_total,
            dedup: t.dedup,
            init_output_bias: t.init_output_bias,
            record_wall_time: t.record_wall_time,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseBlock {
    /// Weak-perspective focal length; `null` fits orthographically.
    pub focal_px: Option<f64>,
    /// Template CSV (`idx,x,y,z`); `null` uses the built-in one for the landmark count.
    pub template: Option<PathBuf>,
    /// With predictions, landmarks whose validity signal exceeds this get zero weight.
    pub max_validity_px: Option<f64>,
    pub fit: FitOptions,
}

impl Default for PoseBlock {
    fn default() -> Self {
        Self { focal_px: Some(600.0), template: None, max_validity_px: None, fit: FitOptions::default() }
    }
}

impl PoseBlock {
    pub fn template(&self, landmark_count: usize) -> Result<Template3D> {
        let t = match &self.template {
            Some(p) => Template3D::load_csv(p)?,
            None => Template3D::for_count(landmark_count)?,
        };
        if t.len() != landmark_count {
            return Err(Error::ShapeMismatch(format!("template has {} points, landmarks have {landmark_count}", t.len())));
        }
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthBlock,
    pub net: NetConfig,
    pub optim: OptimConfig,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub balancing: Balancing,
    pub training: TrainingBlock,
    pub eval: EvalConfig,
    pub pose: PoseBlock,
}

/// `SynthConfig` without the seed, which comes from the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthBlock {
    pub train_common: usize,
    pub train_challenging: usize,
    pub test_common: usize,
    pub test_challenging: usize,
    pub landmark_count: usize,
    pub image_size: usize,
    pub common_pose: crate::synth::PoseRange,
    pub challenging_pose: crate::synth::PoseRange,
    pub jitter_sigma_px: f64,
    pub scale_range: (f64, f64),
    pub center_jitter: f64,
    pub focal_px: f64,
    pub style: crate::synth::RenderStyle,
}

impl Default for SynthBlock {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            train_common: s.train_common,
            train_challenging: s.train_challenging,
            test_common: s.test_common,
            test_challenging: s.test_challenging,
            landmark_count: s.landmark_count,
            image_size: s.image_size,
            common_pose: s.common_pose,
            challenging_pose: s.challenging_pose,
            jitter_sigma_px: s.jitter_sigma_px,
            scale_range: s.scale_range,
            center_jitter: s.center_jitter,
            focal_px: s.focal_px,
            style: s.style,
        }
    }
}

impl Default for RunConfig {
    /// The desk configuration: 2000 training images of 32x32 with five
    /// landmarks, a stride-2 stem, and augmentation ranges sized for the
    /// small input.
    fn default() -> Self {
        let lr = 1e-2;
        Self {
            synth: SynthBlock::default(),
            net: NetConfig { stem_stride: 2, ..NetConfig::default() },
            optim: OptimConfig { learning_rate: lr, schedule: vec![(0, lr), (40, lr * 0.1)], ..OptimConfig::default() },
            loss: LossConfig::default(),
            augment: AugmentConfig {
                noise_max_frac: 0.1,
                shift_max_frac: 0.1,
                scale_range: (0.9, 1.1),
                blur_prob: 0.3,
                blur_sigma: (0.5, 1.0),
                occlude_prob: 0.3,
                occlude_max_area_frac: 0.2,
                contrast_range: (-40.0, 40.0),
                ..AugmentConfig::default()
            },
            balancing: Balancing::LossProportional,
            training: TrainingBlock::default(),
            eval: EvalConfig::default(),
            pose: PoseBlock::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every block and the cross-block sizes.
    pub fn validate(&self) -> Result<()> {
        let schema = |e: Error| match e {
            Error::InvalidArgument(m) => Error::Schema(m),
            other => other,
        };
        self.synth_config(0).validate().map_err(schema)?;
        self.train_config(0).validate().map_err(schema)?;
        if self.net.landmark_count != self.synth.landmark_count {
            return Err(Error::Schema(format!(
                "net.landmark_count {} differs from synth.landmark_count {}",
                self.net.landmark_count, self.synth.landmark_count
            )));
        }
        if self.pose.focal_px.is_some_and(|f| !(f > 0.0)) {
            return Err(Error::Schema("pose.focal_px must be positive".into()));
        }
        Ok(())
    }

    pub fn synth_config(&self, seed: u64) -> SynthConfig {
        let s = &self.synth;
        SynthConfig {
            train_common: s.train_common,
            train_challenging: s.train_challenging,
            test_common: s.test_common,
            test_challenging: s.test_challenging,
            landmark_count: s.landmark_count,
            image_size: s.image_size,
            common_pose: s.common_pose,
            challenging_pose: s.challenging_pose,
            jitter_sigma_px: s.jitter_sigma_px,
            scale_range: s.scale_range,
            center_jitter: s.center_jitter,
            focal_px: s.focal_px,
            style: s.style,
            seed,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            epochs: t.epochs,
            seed,
            net: self.net.clone(),
            optim: self.optim.clone(),
            loss: self.loss,
            augment: self.augment.clone(),
            balancing: self.balancing,
            eval_every: t.eval_every,
            eval: self.eval.clone(),
            loss_refresh: t.loss_refresh,
            range_total: t.range_total,
            dedup: t.dedup,
            init_output_bias: t.init_output_bias,
            record_wall_time: t.record_wall_time,
            trace_sampling: false,
        }
    }
}
