use serde::{Deserialize, Serialize};

use super::{disparity_to_point, CameraRig, PlaneModel};
use crate::error::{Error, Result};
use crate::grid::{Map, Mask};

/// Points `(x, y, z, sigma)` in the left camera frame, each tagged with the
/// `(u, v)` pixel it was back-projected from.
///
/// Invariants: `z > 0` and `sigma` in `[0, 1]` for every row.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfidencePointCloud {
    pub points: Vec<[f64; 4]>,
    pub source_pixels: Vec<(usize, usize)>,
}

impl ConfidencePointCloud {
    pub fn new(points: Vec<[f64; 4]>, source_pixels: Vec<(usize, usize)>) -> Result<Self> {
        if points.len() != source_pixels.len() {
            return Err(Error::Shape(format!(
                "{} points vs {} source pixels",
                points.len(),
                source_pixels.len()
            )));
        }
        for p in &points {
            if !(p[2] > 0.0) || !(0.0..=1.0).contains(&p[3]) {
                return Err(Error::Shape(format!("point {p:?} violates z > 0 / sigma in [0, 1]")));
            }
        }
        Ok(Self {
            points,
            source_pixels,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn xyz(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| [p[0], p[1], p[2]]).collect()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            source_pixels: indices.iter().map(|&i| self.source_pixels[i]).collect(),
        }
    }

    pub fn push(&mut self, point: [f64; 4], pixel: (usize, usize)) {
        self.points.push(point);
        self.source_pixels.push(pixel);
    }
}

/// One row per kept pixel with a finite positive disparity, in row-major
/// pixel order. Invalid disparities are dropped, never clamped.
pub fn cloud_from_maps(
    disparity: &Map,
    confidence: &Map,
    keep: &Mask,
    rig: &CameraRig,
) -> Result<ConfidencePointCloud> {
    disparity.check_same_shape(confidence, "cloud_from_maps confidence")?;
    disparity.check_same_shape(keep, "cloud_from_maps keep mask")?;
    let mut cloud = ConfidencePointCloud::default();
    for v in 0..disparity.height() {
        for u in 0..disparity.width() {
            if !*keep.get(v, u) {
                continue;
            }
            let Ok(p) = disparity_to_point(u as f64, v as f64, *disparity.get(v, u), rig) else {
                continue;
            };
            let sigma = *confidence.get(v, u);
            if !(0.0..=1.0).contains(&sigma) {
                return Err(Error::Shape(format!("confidence {sigma} at ({u}, {v}) outside [0, 1]")));
            }
            cloud.push([p[0], p[1], p[2], sigma], (u, v));
        }
    }
    Ok(cloud)
}

/// Keeps foreground rows plus rows within `plane.inlier_tolerance` of the
/// plane, preserving order.
pub fn filter_background(
    cloud: &ConfidencePointCloud,
    fg_rows: &[bool],
    plane: &PlaneModel,
) -> Result<ConfidencePointCloud> {
    if fg_rows.len() != cloud.len() {
        return Err(Error::Shape(format!(
            "{} foreground flags for {} points",
            fg_rows.len(),
            cloud.len()
        )));
    }
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| {
            let p = cloud.points[i];
            fg_rows[i] || plane.distance([p[0], p[1], p[2]]) <= plane.inlier_tolerance
        })
        .collect();
    Ok(cloud.select(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rig() -> CameraRig {
        CameraRig::new(3.5, 2.5, 50.0, 50.0, 0.5).unwrap()
    }

    #[test]
    fn all_false_mask_gives_empty_cloud() {
        let d = Map::filled(6, 8, 5.0);
        let c = Map::filled(6, 8, 0.5);
        let cloud = cloud_from_maps(&d, &c, &Mask::filled(6, 8, false), &rig()).unwrap();
        assert!(cloud.is_empty());
    }

    #[test]
    fn constant_disparity_gives_constant_depth() {
        let d = Map::filled(6, 8, 5.0);
        let c = Map::filled(6, 8, 0.25);
        let cloud = cloud_from_maps(&d, &c, &Mask::filled(6, 8, true), &rig()).unwrap();
        assert_eq!(cloud.len(), 48);
        assert!(cloud.points.iter().all(|p| p[2] == 50.0 * 0.5 / 5.0 && p[3] == 0.25));
        assert_eq!(cloud.source_pixels[9], (1, 1));
    }

    #[test]
    fn invalid_disparities_are_dropped() {
        let mut d = Map::filled(2, 2, 5.0);
        d.set(0, 0, 0.0);
        d.set(0, 1, f64::NAN);
        d.set(1, 0, -2.0);
        let c = Map::filled(2, 2, 1.0);
        let cloud = cloud_from_maps(&d, &c, &Mask::filled(2, 2, true), &rig()).unwrap();
        assert_eq!(cloud.source_pixels, vec![(1, 1)]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let d = Map::filled(2, 2, 5.0);
        let c = Map::filled(2, 3, 1.0);
        assert!(cloud_from_maps(&d, &c, &Mask::filled(2, 2, true), &rig()).is_err());
    }

    fn ground() -> PlaneModel {
        PlaneModel::new([0.0, -1.0, 0.0], 1.5, 0.05).unwrap()
    }

    #[test]
    fn filter_rules() {
        let cloud = ConfidencePointCloud::new(
            vec![
                [0.0, 1.5, 5.0, 0.9],  // on the plane
                [0.0, 1.0, 5.0, 0.9],  // 0.5 m above: 10x tolerance
                [0.0, 0.2, 9.0, 0.1],  // foreground
                [1.0, 1.52, 7.0, 0.3], // within tolerance
            ],
            vec![(0, 0), (1, 0), (2, 0), (3, 0)],
        )
        .unwrap();
        let out = filter_background(&cloud, &[false, false, true, false], &ground()).unwrap();
        assert_eq!(out.source_pixels, vec![(0, 0), (2, 0), (3, 0)]);
        let all = filter_background(&cloud, &[true; 4], &ground()).unwrap();
        assert_eq!(all, cloud);
        assert!(filter_background(&cloud, &[true; 3], &ground()).is_err());
    }
}
