use serde::{Deserialize, Serialize};

use crate::boxes::{wrap_angle, Box3D};
use crate::error::{Error, Result};
use crate::geometry::CameraRig;
use crate::grid::{Grid, Image, Map, Mask};
use crate::scene::SyntheticSample;

/// One stereo frame as the pipeline consumes it, whatever its source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub left: Image,
    pub right: Image,
    pub rig: CameraRig,
    /// Left-view disparity, 0 where undefined.
    pub disparity: Option<Map>,
    /// Right-view disparity, needed for exact flip augmentation.
    pub right_disparity: Option<Map>,
    pub labels: Option<Vec<Box3D>>,
    pub fg_mask: Option<Mask>,
    pub right_fg_mask: Option<Mask>,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.left.height()
    }

    pub fn width(&self) -> usize {
        self.left.width()
    }

    pub fn validate(&self) -> Result<()> {
        self.left.check_same_shape(&self.right, "right image")?;
        if let Some(d) = &self.disparity {
            self.left.check_same_shape(d, "disparity")?;
        }
        if let Some(d) = &self.right_disparity {
            self.left.check_same_shape(d, "right disparity")?;
        }
        if let Some(m) = &self.fg_mask {
            self.left.check_same_shape(m, "foreground mask")?;
        }
        if let Some(m) = &self.right_fg_mask {
            self.left.check_same_shape(m, "right foreground mask")?;
        }
        self.rig.validate()?;
        let (h, w) = (self.height() as f64, self.width() as f64);
        if !(0.0..=w).contains(&self.rig.c_u) || !(0.0..=h).contains(&self.rig.c_v) {
            return Err(Error::Config(format!(
                "principal point ({}, {}) outside the {}x{} image",
                self.rig.c_u, self.rig.c_v, h, w
            )));
        }
        Ok(())
    }

    pub fn bg_mask(&self) -> Option<Mask> {
        self.fg_mask.as_ref().map(Mask::not)
    }

    /// Swaps the views and mirrors both, so the mirrored right camera becomes
    /// the new left camera.
    ///
    /// Maps and masks are mirrored in position. Box x becomes `b - x` (the
    /// negated x in the new camera frame) and yaw is negated. Without a
    /// right-view disparity or mask the mirrored left-view one stands in.
    pub fn flipped(&self) -> Sample {
        let w = self.width();
        let b = self.rig.baseline;
        let right_disparity = self.right_disparity.as_ref().or(self.disparity.as_ref());
        let right_mask = self.right_fg_mask.as_ref().or(self.fg_mask.as_ref());
        Sample {
            left: self.right.mirrored(),
            right: self.left.mirrored(),
            rig: self.rig.mirrored(w),
            disparity: right_disparity.map(Grid::mirrored),
            right_disparity: self.disparity.as_ref().map(Grid::mirrored),
            labels: self.labels.as_ref().map(|ls| ls.iter().map(|bx| flip_box(bx, b, w)).collect()),
            fg_mask: right_mask.map(Grid::mirrored),
            right_fg_mask: self.fg_mask.as_ref().map(Grid::mirrored),
        }
    }
}

fn flip_box(bx: &Box3D, baseline: f64, width: usize) -> Box3D {
    let mut out = *bx;
    out.center[0] = baseline - bx.center[0];
    out.yaw = wrap_angle(-bx.yaw);
    let [l, t, r, btm] = bx.attrs.bbox;
    let w = width as f64;
    out.attrs.bbox = [w - r, t, w - l, btm];
    if bx.attrs.alpha > -10.0 {
        out.attrs.alpha = out.observation_angle();
    }
    out
}

impl From<&SyntheticSample> for Sample {
    fn from(s: &SyntheticSample) -> Self {
        Sample {
            left: s.left_image.clone(),
            right: s.right_image.clone(),
            rig: s.rig,
            disparity: Some(s.gt_disparity.clone()),
            right_disparity: Some(s.right_disparity.clone()),
            labels: Some(s.gt_boxes.clone()),
            fg_mask: Some(s.fg_mask.clone()),
            right_fg_mask: Some(s.right_fg_mask.clone()),
        }
    }
}
