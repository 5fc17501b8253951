//! Oriented 3D boxes in the KITTI camera convention.
//!
//! `center` is the bottom-face center, y points down, so a box spans
//! `[center.y - h, center.y]` vertically. `yaw` rotates about the camera y
//! axis; the box length runs along the local x axis.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Cyclist,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [ObjectClass::Car, ObjectClass::Pedestrian, ObjectClass::Cyclist];

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Car => "Car",
            ObjectClass::Pedestrian => "Pedestrian",
            ObjectClass::Cyclist => "Cyclist",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "Car" | "car" => Ok(ObjectClass::Car),
            "Pedestrian" | "pedestrian" => Ok(ObjectClass::Pedestrian),
            "Cyclist" | "cyclist" => Ok(ObjectClass::Cyclist),
            other => Err(format!("unknown class `{other}`")),
        }
    }
}

/// Image-space label attributes. Occlusion follows KITTI: 0 fully visible,
/// 1 partly occluded, 2 largely occluded, 3 unknown.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageAttributes {
    pub truncation: f64,
    pub occlusion: u8,
    pub alpha: f64,
    /// `[left, top, right, bottom]` in pixels.
    pub bbox: [f64; 4],
}

impl Default for ImageAttributes {
    fn default() -> Self {
        Self {
            truncation: 0.0,
            occlusion: 3,
            alpha: -10.0,
            bbox: [0.0; 4],
        }
    }
}

impl ImageAttributes {
    pub fn bbox_height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: [f64; 3],
    /// `(h, w, l)` in meters.
    pub size: [f64; 3],
    pub yaw: f64,
    pub class: ObjectClass,
    pub score: f64,
    pub attrs: ImageAttributes,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64, class: ObjectClass, score: f64) -> Result<Self> {
        let b = Self {
            center,
            size,
            yaw: wrap_angle(yaw),
            class,
            score,
            attrs: ImageAttributes::default(),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.size.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::DegenerateBox(format!("size {:?}", self.size)));
        }
        if !self.center.iter().all(|c| c.is_finite()) || !(self.yaw > -PI && self.yaw <= PI) {
            return Err(Error::DegenerateBox(format!("center {:?} yaw {}", self.center, self.yaw)));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::DegenerateBox(format!("score {} outside [0, 1]", self.score)));
        }
        Ok(())
    }

    pub fn h(&self) -> f64 {
        self.size[0]
    }

    pub fn w(&self) -> f64 {
        self.size[1]
    }

    pub fn l(&self) -> f64 {
        self.size[2]
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    /// `(y_min, y_max)`.
    pub fn y_range(&self) -> (f64, f64) {
        (self.center[1] - self.h(), self.center[1])
    }

    /// Geometric center (the bottom center raised by h/2).
    pub fn middle(&self) -> [f64; 3] {
        [self.center[0], self.center[1] - 0.5 * self.h(), self.center[2]]
    }

    /// Local box coordinates `(along length, along height from bottom, along width)`.
    pub fn to_local(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.center[0];
        let dz = p[2] - self.center[2];
        [c * dx - s * dz, self.center[1] - p[1], s * dx + c * dz]
    }

    pub fn from_local(&self, q: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [
            self.center[0] + c * q[0] + s * q[2],
            self.center[1] - q[1],
            self.center[2] - s * q[0] + c * q[2],
        ]
    }

    /// Bird's-eye footprint corners `(x, z)`, counter-clockwise in the x-z plane.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (hl, hw) = (0.5 * self.l(), 0.5 * self.w());
        [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]].map(|[a, b]| {
            let p = self.from_local([a, 0.0, b]);
            [p[0], p[2]]
        })
    }

    /// All eight corners, bottom face first.
    pub fn corners(&self) -> [[f64; 3]; 8] {
        let (hl, hw, h) = (0.5 * self.l(), 0.5 * self.w(), self.h());
        let mut out = [[0.0; 3]; 8];
        let mut i = 0;
        for y in [0.0, h] {
            for [a, b] in [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]] {
                out[i] = self.from_local([a, y, b]);
                i += 1;
            }
        }
        out
    }

    /// Point containment with the box grown by `margin` on every face.
    pub fn contains(&self, p: [f64; 3], margin: f64) -> bool {
        let q = self.to_local(p);
        q[0].abs() <= 0.5 * self.l() + margin
            && q[2].abs() <= 0.5 * self.w() + margin
            && q[1] >= -margin
            && q[1] <= self.h() + margin
    }

    /// Observation angle `alpha = yaw - atan2(x, z)`, wrapped.
    pub fn observation_angle(&self) -> f64 {
        wrap_angle(self.yaw - self.center[0].atan2(self.center[2]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_maps_minus_pi_to_pi() {
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(0.0), 0.0);
    }

    #[test]
    fn rejects_degenerate() {
        assert!(Box3D::new([0.0; 3], [1.0, 0.0, 1.0], 0.0, ObjectClass::Car, 1.0).is_err());
        assert!(Box3D::new([0.0; 3], [1.0, 1.0, 1.0], 0.0, ObjectClass::Car, 1.5).is_err());
    }

    #[test]
    fn zero_yaw_corners_are_axis_aligned() {
        let b = Box3D::new([1.0, 1.5, 10.0], [1.5, 2.0, 4.0], 0.0, ObjectClass::Car, 1.0).unwrap();
        let c = b.bev_corners();
        assert_eq!(c[0], [3.0, 11.0]);
        assert_eq!(c[2], [-1.0, 9.0]);
        assert!(b.contains([2.9, 1.0, 10.9], 0.0));
        assert!(!b.contains([1.0, 1.6, 10.0], 0.0));
        assert!(b.contains([1.0, 1.509, 10.0], 0.01));
        assert_eq!(b.y_range(), (0.0, 1.5));
    }

    #[test]
    fn quarter_turn_swaps_extent() {
        // yaw = pi/2: length axis maps to -z
        let b = Box3D::new([0.0, 0.0, 10.0], [1.0, 1.0, 4.0], PI / 2.0, ObjectClass::Car, 1.0).unwrap();
        assert!(b.contains([0.0, -0.5, 8.1], 0.0));
        assert!(!b.contains([1.9, -0.5, 10.0], 0.0));
    }

    proptest! {
        #[test]
        fn local_round_trip(x in -20.0..20.0f64, y in -2.0..3.0f64, z in 1.0..50.0f64, yaw in -3.1..3.1f64,
                            px in -20.0..20.0f64, py in -2.0..3.0f64, pz in 1.0..50.0f64) {
            let b = Box3D::new([x, y, z], [1.5, 1.6, 3.9], yaw, ObjectClass::Car, 0.5).unwrap();
            let p = [px, py, pz];
            let q = b.from_local(b.to_local(p));
            for i in 0..3 {
                prop_assert!((q[i] - p[i]).abs() < 1e-9);
            }
        }
    }
}
