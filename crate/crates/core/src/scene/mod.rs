//! Deterministic synthetic stereo scenes with exact ground truth.

mod noise;
mod render;

pub use noise::{fractal3, value3};
pub use render::{pixel_ray, Hit, SceneObject, Shape, Surface, World};

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::{Box3D, ImageAttributes, ObjectClass};
use crate::error::{Error, Result};
use crate::geometry::{point_to_pixel, CameraRig};
use crate::grid::{Grid, Image, Map, Mask};
use crate::metrics::bev_intersection;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// `(height, width)` in pixels.
    pub image_size: (usize, usize),
    pub n_objects: usize,
    /// Multipliers on the per-class reference dimensions.
    pub object_size_range: (f64, f64),
    /// Range of object bottom-center depths, meters.
    pub depth_range: (f64, f64),
    /// Camera height above the ground plane, meters.
    pub ground_height: f64,
    pub texture_seed: u64,
    /// Relative frequencies of car, pedestrian and cyclist.
    pub class_mix: [f64; 3],
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_size: (128, 256),
            n_objects: 4,
            object_size_range: (0.9, 1.1),
            depth_range: (6.0, 45.0),
            ground_height: 1.65,
            texture_seed: 0,
            class_mix: [0.6, 0.2, 0.2],
        }
    }
}

/// Reference `(h, w, l)` per class.
pub fn reference_size(class: ObjectClass) -> [f64; 3] {
    match class {
        ObjectClass::Car => [1.52, 1.63, 3.88],
        ObjectClass::Pedestrian => [1.76, 0.66, 0.66],
        ObjectClass::Cyclist => [1.74, 0.6, 1.76],
    }
}

pub fn shape_of(class: ObjectClass) -> Shape {
    match class {
        ObjectClass::Pedestrian => Shape::Cylinder,
        ObjectClass::Car | ObjectClass::Cyclist => Shape::Cuboid,
    }
}

impl SceneConfig {
    /// Centered principal point, `f = 200 * W / 256`, `b = 0.5`.
    pub fn default_rig(&self) -> CameraRig {
        let (h, w) = self.image_size;
        let f = 200.0 * w as f64 / 256.0;
        CameraRig {
            c_u: (w as f64 - 1.0) / 2.0,
            c_v: (h as f64 - 1.0) / 2.0,
            f_u: f,
            f_v: f,
            baseline: 0.5,
        }
    }

    pub fn validate(&self, rig: &CameraRig) -> Result<()> {
        rig.validate()?;
        let (h, w) = self.image_size;
        if h == 0 || w == 0 {
            return Err(Error::Config(format!("image_size {h}x{w} must be non-empty")));
        }
        let (zmin, zmax) = self.depth_range;
        if !(zmin > 0.0 && zmax > zmin && zmax.is_finite()) {
            return Err(Error::Config(format!("depth_range ({zmin}, {zmax}) must satisfy 0 < min < max")));
        }
        let max_disp = rig.focal_baseline() / zmin;
        if max_disp >= w as f64 / 4.0 {
            return Err(Error::Config(format!(
                "depth_range minimum {zmin} m gives disparity {max_disp:.3} px, not below image width / 4 = {}",
                w as f64 / 4.0
            )));
        }
        let (smin, smax) = self.object_size_range;
        if !(smin > 0.0 && smax >= smin && smax.is_finite()) {
            return Err(Error::Config(format!("object_size_range ({smin}, {smax}) must satisfy 0 < min <= max")));
        }
        if !(self.ground_height > 0.0 && self.ground_height.is_finite()) {
            return Err(Error::Config(format!("ground_height {} must be > 0", self.ground_height)));
        }
        if self.class_mix.iter().any(|p| !(*p >= 0.0)) || !(self.class_mix.iter().sum::<f64>() > 0.0) {
            return Err(Error::Config(format!("class_mix {:?} must be non-negative with a positive sum", self.class_mix)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub rig: CameraRig,
    pub left_image: Image,
    pub right_image: Image,
    /// Left-view disparity; 0 where the ray escapes to the sky.
    pub gt_disparity: Map,
    /// Right-view disparity, indexed by right-image pixels.
    pub right_disparity: Map,
    /// Left-view depth; infinite for sky.
    pub gt_depth: Map,
    pub fg_mask: Mask,
    pub bg_mask: Mask,
    /// Foreground as seen from the right camera.
    pub right_fg_mask: Mask,
    /// Pixels whose surface point is also seen by the right camera.
    pub valid_mask: Mask,
    /// Index into `gt_boxes` per pixel, `-1` for background.
    pub instance_map: Grid<i32>,
    pub gt_boxes: Vec<Box3D>,
    /// Exact surface points of foreground pixels, row-major pixel order.
    pub gt_fg_cloud: Vec<[f64; 3]>,
    pub world: World,
}

/// Object placement with a fixed class, footprint position and yaw; used by
/// [`generate_scene`] and directly by tests that need a controlled layout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub class: ObjectClass,
    /// Bottom-center `(x, z)`; the object stands on the ground.
    pub position: [f64; 2],
    pub size: [f64; 3],
    pub yaw: f64,
    pub color: [f64; 3],
    pub texture_seed: u64,
}

fn random_color(rng: &mut impl Rng) -> [f64; 3] {
    let base = [rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0)];
    let m = base.iter().cloned().fold(0.0, f64::max);
    base.map(|c| c / m * 0.95)
}

fn sample_specs(config: &SceneConfig, rig: &CameraRig, rng: &mut ChaCha8Rng) -> Vec<ObjectSpec> {
    let (_, w) = config.image_size;
    let total: f64 = config.class_mix.iter().sum();
    let mut specs: Vec<ObjectSpec> = Vec::new();
    let mut boxes: Vec<Box3D> = Vec::new();
    for _ in 0..config.n_objects {
        for _attempt in 0..200 {
            let r = rng.gen::<f64>() * total;
            let class = if r < config.class_mix[0] {
                ObjectClass::Car
            } else if r < config.class_mix[0] + config.class_mix[1] {
                ObjectClass::Pedestrian
            } else {
                ObjectClass::Cyclist
            };
            let scale = rng.gen_range(config.object_size_range.0..=config.object_size_range.1);
            let size = reference_size(class).map(|s| s * scale);
            let z = rng.gen_range(config.depth_range.0..config.depth_range.1);
            let u = rng.gen_range(0.05 * w as f64..0.95 * w as f64);
            let x = (u - rig.c_u) * z / rig.f_u;
            let yaw = PI - rng.gen::<f64>() * 2.0 * PI;
            let color = random_color(rng);
            let texture_seed = rng.gen();
            let Ok(bx) = Box3D::new([x, config.ground_height, z], size, yaw, class, 1.0) else {
                continue;
            };
            if bx.corners().iter().any(|c| c[2] < 1.0) {
                continue;
            }
            let mut grown = bx;
            grown.size[1] += 0.6;
            grown.size[2] += 0.6;
            if boxes.iter().any(|b| bev_intersection(&grown, b) > 0.0) {
                continue;
            }
            boxes.push(bx);
            specs.push(ObjectSpec {
                class,
                position: [x, z],
                size,
                yaw: bx.yaw,
                color,
                texture_seed,
            });
            break;
        }
    }
    specs
}

/// Generates a random scene from `(config, rig, seed)`.
pub fn generate_scene(config: &SceneConfig, rig: &CameraRig, seed: u64) -> Result<SyntheticSample> {
    config.validate(rig)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = sample_specs(config, rig, &mut rng);
    if specs.len() < config.n_objects {
        log::debug!("placed {} of {} objects (seed {seed})", specs.len(), config.n_objects);
    }
    render_scene(config, rig, &specs)
}

/// Renders a scene with an explicit object layout.
pub fn render_scene(config: &SceneConfig, rig: &CameraRig, specs: &[ObjectSpec]) -> Result<SyntheticSample> {
    config.validate(rig)?;
    let (h, w) = config.image_size;
    let objects: Vec<SceneObject> = specs
        .iter()
        .map(|s| {
            Ok(SceneObject {
                bx: Box3D::new([s.position[0], config.ground_height, s.position[1]], s.size, s.yaw, s.class, 1.0)?,
                shape: shape_of(s.class),
                color: s.color,
                texture_seed: s.texture_seed,
            })
        })
        .collect::<Result<_>>()?;
    let world = World {
        objects,
        ground_height: config.ground_height,
        texture_seed: config.texture_seed,
    };
    let fb = rig.focal_baseline();

    let mut left = Image::filled(h, w, [0.0; 3]);
    let mut right = Image::filled(h, w, [0.0; 3]);
    let mut disp = Map::filled(h, w, 0.0);
    let mut rdisp = Map::filled(h, w, 0.0);
    let mut depth = Map::filled(h, w, f64::INFINITY);
    let mut valid = Mask::filled(h, w, false);
    let mut right_object_of = Grid::filled(h, w, -1i32);
    let mut object_of = Grid::filled(h, w, -1i32);
    let mut hits = Vec::with_capacity(h * w);
    for v in 0..h {
        for u in 0..w {
            let (hit, color) = world.render(rig, u as f64, v as f64, false);
            left.set(v, u, color);
            depth.set(v, u, hit.depth);
            disp.set(v, u, fb / hit.depth);
            if let Surface::Object(i) = hit.surface {
                object_of.set(v, u, i as i32);
            }
            let (rhit, rcolor) = world.render(rig, u as f64, v as f64, true);
            right.set(v, u, rcolor);
            rdisp.set(v, u, fb / rhit.depth);
            if let Surface::Object(i) = rhit.surface {
                right_object_of.set(v, u, i as i32);
            }
            hits.push(hit);
        }
    }
    for v in 0..h {
        for u in 0..w {
            let hit = &hits[v * w + u];
            let ur = u as f64 - *disp.get(v, u);
            if ur < 0.0 || ur > (w - 1) as f64 {
                continue;
            }
            let (rhit, _) = world.render(rig, ur, v as f64, true);
            let same = rhit.surface == hit.surface
                && (hit.surface == Surface::Sky
                    || (0..3).all(|k| (rhit.point[k] - hit.point[k]).abs() <= 1e-6 * hit.depth.max(1.0)));
            valid.set(v, u, same);
        }
    }

    // Image-space attributes; objects nobody can see are dropped.
    let mut gt_boxes = Vec::new();
    let mut remap = vec![-1i32; world.objects.len()];
    for (i, obj) in world.objects.iter().enumerate() {
        let visible = object_of.data().iter().filter(|&&k| k == i as i32).count();
        if visible == 0 {
            continue;
        }
        let proj: Vec<(f64, f64)> = obj
            .bx
            .corners()
            .iter()
            .map(|c| {
                let (pu, pv, _) = point_to_pixel(*c, rig);
                (pu, pv)
            })
            .collect();
        let (u0, u1) = proj.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.0), a.1.max(p.0)));
        let (v0, v1) = proj.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.1), a.1.max(p.1)));
        let full = (u1 - u0) * (v1 - v0);
        let clipped = (u1.min(w as f64 - 1.0) - u0.max(0.0)).max(0.0) * (v1.min(h as f64 - 1.0) - v0.max(0.0)).max(0.0);
        let truncation = if full > 0.0 { (1.0 - clipped / full).clamp(0.0, 1.0) } else { 0.0 };

        let (cu0, cu1) = (u0.floor().max(0.0) as usize, (u1.ceil().max(0.0) as usize).min(w - 1));
        let (cv0, cv1) = (v0.floor().max(0.0) as usize, (v1.ceil().max(0.0) as usize).min(h - 1));
        let mut alone = 0usize;
        let mut bb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for v in cv0..=cv1 {
            for u in cu0..=cu1 {
                let hit = world.cast([0.0; 3], pixel_ray(rig, u as f64, v as f64), Some(i));
                if hit.surface == Surface::Object(i) {
                    alone += 1;
                    bb = [bb[0].min(u as f64), bb[1].min(v as f64), bb[2].max(u as f64 + 1.0), bb[3].max(v as f64 + 1.0)];
                }
            }
        }
        let frac = visible as f64 / alone.max(visible) as f64;
        let occlusion = if frac > 0.9 {
            0
        } else if frac > 0.5 {
            1
        } else {
            2
        };
        let mut bx = obj.bx;
        bx.attrs = ImageAttributes {
            truncation,
            occlusion,
            alpha: bx.observation_angle(),
            bbox: bb,
        };
        remap[i] = gt_boxes.len() as i32;
        gt_boxes.push(bx);
    }
    let instance_map = object_of.map(|&k| if k < 0 { -1 } else { remap[k as usize] });
    let fg_mask = instance_map.map(|&k| k >= 0);
    let bg_mask = fg_mask.not();
    let right_fg_mask = right_object_of.map(|&k| k >= 0 && remap[k as usize] >= 0);
    let gt_fg_cloud = hits
        .iter()
        .filter(|h| matches!(h.surface, Surface::Object(_)))
        .map(|h| h.point)
        .collect();

    Ok(SyntheticSample {
        rig: *rig,
        left_image: left,
        right_image: right,
        gt_disparity: disp,
        right_disparity: rdisp,
        gt_depth: depth,
        fg_mask,
        bg_mask,
        right_fg_mask,
        valid_mask: valid,
        instance_map,
        gt_boxes,
        gt_fg_cloud,
        world,
    })
}

/// Disjoint, exhaustive, seeded partition. `round(n * ratio)` items go to the
/// training side; both sides keep their input order.
pub fn split_train_val<T>(samples: Vec<T>, ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    if samples.is_empty() {
        return Err(Error::Empty("nothing to split".into()));
    }
    let n = samples.len();
    let n_train = (n as f64 * ratio).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_train = vec![false; n];
    for &i in &idx[..n_train] {
        is_train[i] = true;
    }
    let (mut train, mut val) = (Vec::with_capacity(n_train), Vec::with_capacity(n - n_train));
    for (s, t) in samples.into_iter().zip(is_train) {
        if t {
            train.push(s);
        } else {
            val.push(s);
        }
    }
    Ok((train, val))
}
