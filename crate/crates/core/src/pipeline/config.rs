use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::geometry::{CameraRig, GroundPlaneParams};
use crate::matcher::MatcherConfig;
use crate::scene::SceneConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub scene: u64,
    pub matcher_init: u64,
    pub detector_init: u64,
    /// Sample order, flips, ground-plane RANSAC and point subsampling.
    pub sampling: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            scene: 0,
            matcher_init: 1,
            detector_init: 2,
            sampling: 3,
        }
    }
}

impl Seeds {
    pub fn offset(self, by: u64) -> Self {
        Self {
            scene: self.scene.wrapping_add(by),
            matcher_init: self.matcher_init.wrapping_add(by),
            detector_init: self.detector_init.wrapping_add(by),
            sampling: self.sampling.wrapping_add(by),
        }
    }
}

/// The three independent ablation switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub split_depth: bool,
    pub pc_loss: bool,
    pub confidence_feature: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            split_depth: true,
            pc_loss: true,
            confidence_feature: true,
        }
    }
}

impl AblationFlags {
    pub const ROWS: [AblationFlags; 4] = [
        AblationFlags::new(false, false, false),
        AblationFlags::new(true, false, false),
        AblationFlags::new(true, true, false),
        AblationFlags::new(true, true, true),
    ];

    pub const fn new(split_depth: bool, pc_loss: bool, confidence_feature: bool) -> Self {
        Self {
            split_depth,
            pc_loss,
            confidence_feature,
        }
    }

    /// `---`, `✓--` and so on.
    pub fn pattern(&self) -> String {
        [self.split_depth, self.pc_loss, self.confidence_feature]
            .iter()
            .map(|&f| if f { '✓' } else { '-' })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_val: usize,
    /// Read a KITTI-layout directory instead of generating scenes.
    pub kitti_root: Option<PathBuf>,
    pub train_split: Option<PathBuf>,
    pub val_split: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_val: 40,
            kitti_root: None,
            train_split: None,
            val_split: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Depth metrics cover foreground pixels deeper than this, meters.
    pub min_fg_depth: f64,
    pub bin_width: f64,
    pub iou_thresholds: Vec<f64>,
    /// Ablation AP is read at this IoU, moderate difficulty, 40 recall positions.
    pub ablation_iou: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            min_fg_depth: 20.0,
            bin_width: 0.05,
            iou_thresholds: vec![0.7, 0.5],
            ablation_iou: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub seeds: Seeds,
    pub flags: AblationFlags,
    pub scene: SceneConfig,
    pub rig: CameraRig,
    pub dataset: DatasetConfig,
    pub matcher: MatcherConfig,
    pub detector: DetectorConfig,
    pub detector_ped_cyc: DetectorConfig,
    pub train_ped_cyc: bool,
    pub ground: GroundPlaneParams,
    /// Far/near boundary of the stratified subsampling, meters.
    pub depth_threshold: f64,
    /// Rider dilation for cyclist mask merging, pixels at a 128-pixel image
    /// height; [`PipelineConfig::cyclist_radius`] rescales it.
    pub cyclist_dilation: usize,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    /// The desk-scale benchmark: 64x128 images, f = 100 px, b = 1 m,
    /// 200 training and 40 validation scenes, 2048 detector points.
    fn default() -> Self {
        let scene = SceneConfig {
            image_size: (64, 128),
            ..SceneConfig::default()
        };
        let detector = DetectorConfig {
            n_input_points: 2048,
            ..DetectorConfig::default()
        };
        let detector_ped_cyc = DetectorConfig {
            n_input_points: 2048,
            ..DetectorConfig::pedestrian_cyclist()
        };
        Self {
            output_dir: PathBuf::from("out"),
            seeds: Seeds::default(),
            flags: AblationFlags::default(),
            scene,
            rig: CameraRig {
                c_u: 63.5,
                c_v: 31.5,
                f_u: 100.0,
                f_v: 100.0,
                baseline: 1.0,
            },
            dataset: DatasetConfig::default(),
            matcher: MatcherConfig {
                initial_disparity: 1.0,
                ..MatcherConfig::default()
            },
            detector,
            detector_ped_cyc,
            train_ped_cyc: true,
            ground: GroundPlaneParams::default(),
            depth_threshold: 20.0,
            cyclist_dilation: 5,
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn rig(&self) -> CameraRig {
        self.rig
    }

    /// Cyclist dilation radius for images `height` pixels tall, at least 1.
    pub fn cyclist_radius(&self, height: usize) -> usize {
        ((self.cyclist_dilation * height) as f64 / 128.0).round().max(1.0) as usize
    }

    /// Matcher settings with the ablation flags applied.
    pub fn matcher_config(&self) -> MatcherConfig {
        MatcherConfig {
            split: self.flags.split_depth,
            pc_loss: self.flags.pc_loss,
            ..self.matcher.clone()
        }
    }

    pub fn car_detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            use_confidence_channel: self.flags.confidence_feature,
            ..self.detector.clone()
        }
    }

    pub fn ped_cyc_detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            use_confidence_channel: self.flags.confidence_feature,
            ..self.detector_ped_cyc.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.kitti_root.is_none() {
            self.scene.validate(&self.rig())?;
            if self.dataset.n_train == 0 || self.dataset.n_val == 0 {
                return Err(Error::Config("dataset needs at least one training and one validation scene".into()));
            }
        }
        for p in [&self.dataset.kitti_root, &self.dataset.train_split, &self.dataset.val_split]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(Error::Config(format!("path {} does not exist", p.display())));
            }
        }
        self.matcher_config().validate()?;
        self.car_detector_config().validate()?;
        self.ped_cyc_detector_config().validate()?;
        if !(self.depth_threshold > 0.0) {
            return Err(Error::Config("depth_threshold must be positive".into()));
        }
        if !(self.eval.bin_width > 0.0 && self.eval.bin_width <= 1.0) {
            return Err(Error::Config(format!("bin_width {} outside (0, 1]", self.eval.bin_width)));
        }
        if !self.eval.iou_thresholds.contains(&self.eval.ablation_iou) {
            return Err(Error::Config(format!("ablation_iou {} is not among eval.iou_thresholds", self.eval.ablation_iou)));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("cannot parse config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_toml(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_is_a_fixed_point() {
        let mut cfg = PipelineConfig::default();
        cfg.matcher.weights.lambda_f = 0.1 + 0.2;
        cfg.flags.pc_loss = false;
        cfg.rig.baseline = 0.7;
        let once = cfg.to_toml().unwrap();
        let parsed = PipelineConfig::from_toml(&once).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(parsed.to_toml().unwrap(), once);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = PipelineConfig::from_toml("[flags]\nsplit_depth = false\n").unwrap();
        assert!(!cfg.flags.split_depth && cfg.flags.pc_loss);
        assert!(!cfg.matcher_config().split);
        assert_eq!(cfg.detector.n_input_points, 2048);
    }

    #[test]
    fn validation_names_the_problem() {
        let mut cfg = PipelineConfig::default();
        cfg.dataset.kitti_root = Some(PathBuf::from("/definitely/not/here"));
        assert!(cfg.validate().unwrap_err().to_string().contains("/definitely/not/here"));
        let mut cfg = PipelineConfig::default();
        cfg.detector.nms_iou = 2.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("nms_iou"));
    }

    #[test]
    fn ablation_rows() {
        let p: Vec<String> = AblationFlags::ROWS.iter().map(|f| f.pattern()).collect();
        assert_eq!(p, ["---", "✓--", "✓✓-", "✓✓✓"]);
    }
}
