use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Plane `normal . p + offset = 0` with a unit normal, oriented so the normal
/// points up in camera coordinates (`normal.y <= 0`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneModel {
    pub normal: [f64; 3],
    pub offset: f64,
    pub inlier_tolerance: f64,
}

impl PlaneModel {
    pub fn new(normal: [f64; 3], offset: f64, inlier_tolerance: f64) -> Result<Self> {
        let n = Vector3::from(normal);
        let len = n.norm();
        if !(len.is_finite() && len > 0.0) || !offset.is_finite() {
            return Err(Error::NoPlane(format!("invalid plane normal {normal:?} / offset {offset}")));
        }
        let mut n = n / len;
        let mut offset = offset / len;
        if n.y > 0.0 || (n.y == 0.0 && (n.z > 0.0 || (n.z == 0.0 && n.x < 0.0))) {
            n = -n;
            offset = -offset;
        }
        Ok(Self {
            normal: [n.x, n.y, n.z],
            offset,
            inlier_tolerance,
        })
    }

    #[inline]
    pub fn signed_distance(&self, p: [f64; 3]) -> f64 {
        self.normal[0] * p[0] + self.normal[1] * p[1] + self.normal[2] * p[2] + self.offset
    }

    #[inline]
    pub fn distance(&self, p: [f64; 3]) -> f64 {
        self.signed_distance(p).abs()
    }

    pub fn is_inlier(&self, p: [f64; 3]) -> bool {
        self.distance(p) <= self.inlier_tolerance
    }

    /// Angle in radians between the two plane normals.
    pub fn normal_angle(&self, other: &PlaneModel) -> f64 {
        let a = Vector3::from(self.normal);
        let b = Vector3::from(other.normal);
        a.dot(&b).clamp(-1.0, 1.0).acos()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundPlaneParams {
    pub iterations: usize,
    pub inlier_tolerance: f64,
}

impl Default for GroundPlaneParams {
    fn default() -> Self {
        Self {
            iterations: 500,
            inlier_tolerance: 0.05,
        }
    }
}

/// RANSAC over 3-point hypotheses followed by a total-least-squares refit on
/// the consensus set.
pub fn fit_ground_plane(points: &[[f64; 3]], params: &GroundPlaneParams, seed: u64) -> Result<PlaneModel> {
    if points.len() < 3 {
        return Err(Error::NoPlane(format!("{} points, need at least 3", points.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, PlaneModel)> = None;
    for _ in 0..params.iterations {
        let idx = sample(&mut rng, points.len(), 3);
        let [a, b, c] = [0, 1, 2].map(|i| Vector3::from(points[idx.index(i)]));
        let n = (b - a).cross(&(c - a));
        let scale = (b - a).norm() * (c - a).norm();
        if !(n.norm() > 1e-9 * scale) {
            continue;
        }
        let Ok(model) = PlaneModel::new([n.x, n.y, n.z], -n.dot(&a), params.inlier_tolerance) else {
            continue;
        };
        let count = points.iter().filter(|p| model.is_inlier(**p)).count();
        if best.map_or(true, |(c, _)| count > c) {
            best = Some((count, model));
        }
    }
    let (_, model) = best.ok_or_else(|| Error::NoPlane("every 3-point hypothesis was degenerate".into()))?;
    let inliers: Vec<Vector3<f64>> = points
        .iter()
        .filter(|p| model.is_inlier(**p))
        .map(|p| Vector3::from(*p))
        .collect();
    refine(&inliers, params.inlier_tolerance)
}

fn refine(inliers: &[Vector3<f64>], tolerance: f64) -> Result<PlaneModel> {
    if inliers.len() < 3 {
        return Err(Error::NoPlane(format!("{} inliers", inliers.len())));
    }
    let centroid = inliers.iter().sum::<Vector3<f64>>() / inliers.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in inliers {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let (mid, top) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(top > 0.0) || mid <= 1e-12 * top {
        return Err(Error::NoPlane("inliers are collinear".into()));
    }
    let n = eig.eigenvectors.column(order[0]).into_owned();
    PlaneModel::new([n.x, n.y, n.z], -n.dot(&centroid), tolerance)
}
