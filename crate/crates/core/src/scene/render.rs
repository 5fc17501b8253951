//! Ray casting against a ground plane, textured objects and a sky at
//! infinity. Both cameras look down +z; the right one sits at `(b, 0, 0)`.

use serde::{Deserialize, Serialize};

use super::noise::fractal3;
use crate::boxes::Box3D;
use crate::geometry::CameraRig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Cuboid,
    /// Vertical cylinder inscribed in the box footprint (radius `w / 2`).
    Cylinder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub bx: Box3D,
    pub shape: Shape,
    pub color: [f64; 3],
    pub texture_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Surface {
    Sky,
    Ground,
    Object(usize),
}

#[derive(Clone, Copy, Debug)]
pub struct Hit {
    pub surface: Surface,
    /// Camera-frame hit point of the left camera frame (meaningless for sky).
    pub point: [f64; 3],
    /// z of the hit point; infinite for sky.
    pub depth: f64,
    normal: [f64; 3],
    dir: [f64; 3],
}

const LIGHT: [f64; 3] = [0.267_261_241_912_424_4, -0.801_783_725_737_273_2, -0.534_522_483_824_848_8];
const GROUND_FREQ: f64 = 1.1;
const OBJECT_FREQ: f64 = 2.3;
const SKY_FREQ: f64 = 9.0;
const T_MIN: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub objects: Vec<SceneObject>,
    pub ground_height: f64,
    pub texture_seed: u64,
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Direction of the ray through pixel `(u, v)`, scaled so its z is 1.
pub fn pixel_ray(rig: &CameraRig, u: f64, v: f64) -> [f64; 3] {
    [(u - rig.c_u) / rig.f_u, (v - rig.c_v) / rig.f_v, 1.0]
}

/// Local-frame ray parameter and local normal of the first entry into `obj`.
fn intersect_object(obj: &SceneObject, origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, [f64; 3])> {
    let b = &obj.bx;
    let o = b.to_local(origin);
    let (s, c) = b.yaw.sin_cos();
    let d = [c * dir[0] - s * dir[2], -dir[1], s * dir[0] + c * dir[2]];
    let (hl, hw, h) = (0.5 * b.l(), 0.5 * b.w(), b.h());
    match obj.shape {
        Shape::Cuboid => {
            let lo = [-hl, 0.0, -hw];
            let hi = [hl, h, hw];
            let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut axis = 0;
            let mut sign = 0.0;
            for i in 0..3 {
                if d[i].abs() < 1e-15 {
                    if o[i] < lo[i] || o[i] > hi[i] {
                        return None;
                    }
                    continue;
                }
                let (mut a, mut bb) = ((lo[i] - o[i]) / d[i], (hi[i] - o[i]) / d[i]);
                if a > bb {
                    std::mem::swap(&mut a, &mut bb);
                }
                if a > t0 {
                    t0 = a;
                    axis = i;
                    sign = -d[i].signum();
                }
                t1 = t1.min(bb);
            }
            if t0 > t1 || t0 <= T_MIN {
                return None;
            }
            let mut n = [0.0; 3];
            n[axis] = sign;
            Some((t0, n))
        }
        Shape::Cylinder => {
            let r = hw;
            let mut best: Option<(f64, [f64; 3])> = None;
            let qa = d[0] * d[0] + d[2] * d[2];
            if qa > 1e-18 {
                let qb = 2.0 * (o[0] * d[0] + o[2] * d[2]);
                let qc = o[0] * o[0] + o[2] * o[2] - r * r;
                let disc = qb * qb - 4.0 * qa * qc;
                if disc >= 0.0 {
                    let t = (-qb - disc.sqrt()) / (2.0 * qa);
                    let y = o[1] + t * d[1];
                    if t > T_MIN && (0.0..=h).contains(&y) {
                        let px = o[0] + t * d[0];
                        let pz = o[2] + t * d[2];
                        best = Some((t, [px / r, 0.0, pz / r]));
                    }
                }
            }
            if d[1].abs() > 1e-15 {
                let t = (h - o[1]) / d[1];
                let (px, pz) = (o[0] + t * d[0], o[2] + t * d[2]);
                if t > T_MIN && px * px + pz * pz <= r * r && best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, [0.0, 1.0, 0.0]));
                }
            }
            best
        }
    }
}

fn local_to_world_dir(b: &Box3D, n: [f64; 3]) -> [f64; 3] {
    let (s, c) = b.yaw.sin_cos();
    [c * n[0] + s * n[2], -n[1], -s * n[0] + c * n[2]]
}

impl World {
    /// Nearest surface along `origin + t * dir`. With `only`, every other
    /// object (and the ground) is ignored.
    pub fn cast(&self, origin: [f64; 3], dir: [f64; 3], only: Option<usize>) -> Hit {
        let mut best_t = f64::INFINITY;
        let mut surface = Surface::Sky;
        let mut normal = [0.0; 3];
        if only.is_none() && dir[1] > 0.0 {
            let t = (self.ground_height - origin[1]) / dir[1];
            if t > T_MIN {
                best_t = t;
                surface = Surface::Ground;
                normal = [0.0, -1.0, 0.0];
            }
        }
        for (i, obj) in self.objects.iter().enumerate() {
            if only.is_some_and(|k| k != i) {
                continue;
            }
            if let Some((t, n)) = intersect_object(obj, origin, dir) {
                if t < best_t {
                    best_t = t;
                    surface = Surface::Object(i);
                    normal = local_to_world_dir(&obj.bx, n);
                }
            }
        }
        let point = [origin[0] + best_t * dir[0], origin[1] + best_t * dir[1], origin[2] + best_t * dir[2]];
        Hit {
            surface,
            point,
            depth: if surface == Surface::Sky { f64::INFINITY } else { point[2] },
            normal,
            dir,
        }
    }

    pub fn shade(&self, hit: &Hit) -> [f64; 3] {
        let (albedo, tex) = match hit.surface {
            Surface::Sky => {
                let d = hit.dir;
                let n = fractal3(self.texture_seed ^ 0x5157, [d[0] * SKY_FREQ, d[1] * SKY_FREQ, 0.0], 1.0);
                return [0.5 + 0.2 * n, 0.6 + 0.2 * n, 0.75 + 0.2 * n];
            }
            Surface::Ground => {
                let p = hit.point;
                ([0.55, 0.5, 0.45], fractal3(self.texture_seed, [p[0], 0.0, p[2]], GROUND_FREQ))
            }
            Surface::Object(i) => {
                let obj = &self.objects[i];
                let q = obj.bx.to_local(hit.point);
                (obj.color, fractal3(obj.texture_seed, q, OBJECT_FREQ))
            }
        };
        let lambert = 0.45 + 0.55 * dot(hit.normal, LIGHT).max(0.0);
        let k = lambert * (0.25 + 0.75 * tex);
        albedo.map(|a| (a * k).clamp(0.0, 1.0))
    }

    /// Hit and color seen by the left (`right = false`) or right camera at a
    /// possibly fractional pixel.
    pub fn render(&self, rig: &CameraRig, u: f64, v: f64, right: bool) -> (Hit, [f64; 3]) {
        let origin = if right { [rig.baseline, 0.0, 0.0] } else { [0.0; 3] };
        let hit = self.cast(origin, pixel_ray(rig, u, v), None);
        let color = self.shade(&hit);
        (hit, color)
    }
}
