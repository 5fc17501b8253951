//! Stereo projection model, confidence point clouds, ground-plane fitting,
//! background filtering and depth-stratified subsampling.

mod cloud;
mod plane;
mod sampling;

pub use cloud::{cloud_from_maps, filter_background, ConfidencePointCloud};
pub use plane::{fit_ground_plane, GroundPlaneParams, PlaneModel};
pub use sampling::{subsample_cloud, SubsampleParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectified stereo rig: principal point, focal lengths (px) and baseline (m).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub c_u: f64,
    pub c_v: f64,
    pub f_u: f64,
    pub f_v: f64,
    pub baseline: f64,
}

impl CameraRig {
    pub fn new(c_u: f64, c_v: f64, f_u: f64, f_v: f64, baseline: f64) -> Result<Self> {
        let rig = Self {
            c_u,
            c_v,
            f_u,
            f_v,
            baseline,
        };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !(ok(self.f_u) && ok(self.f_v) && ok(self.baseline)) {
            return Err(Error::Config(format!(
                "camera rig needs f_u, f_v, baseline > 0 (got {}, {}, {})",
                self.f_u, self.f_v, self.baseline
            )));
        }
        if !(self.c_u.is_finite() && self.c_v.is_finite()) {
            return Err(Error::Config("camera rig principal point must be finite".into()));
        }
        Ok(())
    }

    /// `f_u * b`: disparity times depth.
    #[inline]
    pub fn focal_baseline(&self) -> f64 {
        self.f_u * self.baseline
    }

    /// Depth of a disparity, `f_u * b / d`.
    #[inline]
    pub fn depth(&self, d: f64) -> f64 {
        self.focal_baseline() / d
    }

    /// Rig of the left-right mirrored images (principal point reflected).
    pub fn mirrored(&self, width: usize) -> Self {
        Self {
            c_u: (width - 1) as f64 - self.c_u,
            ..*self
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.c_u, self.c_v, self.f_u, self.f_v, self.baseline]
    }
}

/// Back-projects pixel `(u, v)` with disparity `d`:
/// `z = f_u b / d`, `x = (u - c_u) z / f_u`, `y = (v - c_v) z / f_v`.
pub fn disparity_to_point(u: f64, v: f64, d: f64, rig: &CameraRig) -> Result<[f64; 3]> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::InvalidDisparity(d));
    }
    let z = rig.depth(d);
    Ok([(u - rig.c_u) * z / rig.f_u, (v - rig.c_v) * z / rig.f_v, z])
}

/// Inverse of [`disparity_to_point`]: `(u, v, d)` of a camera-frame point.
pub fn point_to_pixel(p: [f64; 3], rig: &CameraRig) -> (f64, f64, f64) {
    let [x, y, z] = p;
    (
        x * rig.f_u / z + rig.c_u,
        y * rig.f_v / z + rig.c_v,
        rig.focal_baseline() / z,
    )
}
