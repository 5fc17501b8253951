//! Small two-stage point-based 3D detector.
//!
//! Stage one groups points around a BEV anchor grid, encodes each
//! (point, anchor) pair with a shared MLP, max-pools per anchor and predicts
//! objectness plus a box per class. Stage two pools the points inside each
//! proposal in the proposal's own frame and predicts a score correction and
//! a box residual. Points carry an optional fourth channel, the matcher
//! confidence.

mod net;
mod train;

pub use net::{nms_bev, nms_indices, PointDetector, Proposal};
pub use train::{train_detector, write_detector_curve_csv, DetectorCurveRow, DetectorScene};

use serde::{Deserialize, Serialize};

use crate::boxes::ObjectClass;
use crate::error::{Error, Result};
use crate::geometry::ConfidencePointCloud;
use crate::nn::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Feed the confidence as a fourth point channel.
    pub use_confidence_channel: bool,
    pub n_input_points: usize,
    /// Proposals kept after stage one.
    pub proposal_count: usize,
    /// Final BEV non-maximum suppression threshold.
    pub nms_iou: f64,
    pub score_threshold: f64,
    pub classes: Vec<ObjectClass>,
    /// BEV anchor grid pitch, meters.
    pub anchor_spacing: f64,
    /// Points within this BEV distance of an anchor belong to its group.
    pub group_radius: f64,
    pub min_group_points: usize,
    /// Reference bottom height of anchors (camera y, meters).
    pub anchor_y: f64,
    /// Anchors within this BEV distance of a box center are positives.
    pub positive_radius: f64,
    /// Anchors farther than this from every box center are negatives.
    pub negative_radius: f64,
    /// Stage-two pooling grows each proposal by this much on every face.
    pub refine_margin: f64,
    pub rpn_steps: usize,
    pub rcnn_steps: usize,
    pub learning_rate: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            use_confidence_channel: true,
            n_input_points: 16384,
            proposal_count: 32,
            nms_iou: 0.1,
            score_threshold: 0.2,
            classes: vec![ObjectClass::Car],
            anchor_spacing: 1.0,
            group_radius: 2.5,
            min_group_points: 4,
            anchor_y: 1.65,
            positive_radius: 0.75,
            negative_radius: 1.5,
            refine_margin: 0.5,
            rpn_steps: 600,
            rcnn_steps: 400,
            learning_rate: 2e-3,
        }
    }
}

impl DetectorConfig {
    /// Defaults for the pedestrian and cyclist model: smaller groups.
    pub fn pedestrian_cyclist() -> Self {
        Self {
            classes: vec![ObjectClass::Pedestrian, ObjectClass::Cyclist],
            group_radius: 1.5,
            ..Self::default()
        }
    }

    pub fn input_channels(&self) -> usize {
        if self.use_confidence_channel {
            4
        } else {
            3
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("nms_iou", self.nms_iou), ("score_threshold", self.score_threshold)] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Config(format!("detector {name} {x} outside [0, 1]")));
            }
        }
        if self.classes.is_empty() {
            return Err(Error::Config("detector needs at least one class".into()));
        }
        if self.n_input_points == 0 || self.n_input_points % 2 != 0 {
            return Err(Error::Config(format!("n_input_points {} must be even and positive", self.n_input_points)));
        }
        if self.proposal_count == 0 {
            return Err(Error::Config("proposal_count must be positive".into()));
        }
        if !(self.anchor_spacing > 0.0 && self.group_radius > 0.0 && self.positive_radius > 0.0) {
            return Err(Error::Config("anchor_spacing, group_radius and positive_radius must be positive".into()));
        }
        if !(self.negative_radius >= self.positive_radius) {
            return Err(Error::Config("negative_radius must be at least positive_radius".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("detector learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Per-point features `[N, 4]` (x, y, z, sigma) or `[N, 3]` without the
/// confidence channel.
pub fn encode_points(cloud: &ConfidencePointCloud, config: &DetectorConfig) -> Result<Tensor> {
    if cloud.is_empty() {
        return Err(Error::Empty("detector input cloud has no points".into()));
    }
    let c = config.input_channels();
    let data = cloud.points.iter().flat_map(|p| p[..c].iter().copied()).collect();
    Ok(Tensor::new(vec![cloud.len(), c], data))
}
