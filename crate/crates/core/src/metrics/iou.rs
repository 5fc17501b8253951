//! Rotated bird's-eye and 3D IoU by convex polygon clipping.

use crate::boxes::Box3D;
use crate::error::{Error, Result};

const EPS: f64 = 1e-12;

type Pt = [f64; 2];

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area (positive for counter-clockwise polygons).
pub fn polygon_area(poly: &[Pt]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        s += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * s
}

/// Clips `subject` against every edge of the convex counter-clockwise `clip`.
pub fn clip_convex(subject: &[Pt], clip: &[Pt]) -> Vec<Pt> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let dp = cross(a, b, p);
            let dq = cross(a, b, q);
            let p_in = dp >= -EPS;
            let q_in = dq >= -EPS;
            if p_in {
                out.push(p);
            }
            if p_in != q_in {
                let denom = dp - dq;
                if denom.abs() > EPS {
                    let t = dp / denom;
                    out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
                }
            }
        }
    }
    out
}

fn check(b: &Box3D) -> Result<()> {
    b.validate()?;
    if !(b.l() * b.w() > 0.0) {
        return Err(Error::DegenerateBox("zero footprint".into()));
    }
    Ok(())
}

fn same_footprint(a: &Box3D, b: &Box3D) -> bool {
    a.center[0] == b.center[0] && a.center[2] == b.center[2] && a.w() == b.w() && a.l() == b.l() && a.yaw == b.yaw
}

/// Footprint intersection area.
pub fn bev_intersection(a: &Box3D, b: &Box3D) -> f64 {
    if same_footprint(a, b) {
        return a.l() * a.w();
    }
    // footprints whose bounding circles are apart cannot overlap
    let (dx, dz) = (a.center[0] - b.center[0], a.center[2] - b.center[2]);
    let reach = 0.5 * (a.l().hypot(a.w()) + b.l().hypot(b.w()));
    if dx * dx + dz * dz > reach * reach {
        return 0.0;
    }
    polygon_area(&clip_convex(&a.bev_corners(), &b.bev_corners())).max(0.0)
}

pub fn rotated_iou_bev(a: &Box3D, b: &Box3D) -> Result<f64> {
    check(a)?;
    check(b)?;
    if same_footprint(a, b) {
        return Ok(1.0);
    }
    let inter = bev_intersection(a, b);
    let union = a.l() * a.w() + b.l() * b.w() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

pub fn iou_3d(a: &Box3D, b: &Box3D) -> Result<f64> {
    check(a)?;
    check(b)?;
    let (a0, a1) = a.y_range();
    let (b0, b1) = b.y_range();
    if same_footprint(a, b) && a0 == b0 && a1 == b1 {
        return Ok(1.0);
    }
    let dy = (a1.min(b1) - a0.max(b0)).max(0.0);
    let inter = bev_intersection(a, b) * dy;
    let union = a.volume() + b.volume() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}
