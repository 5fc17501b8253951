use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::PipelineConfig;
use super::masks::fg_mask_from_disparity;
use crate::boxes::{Box3D, ObjectClass};
use crate::error::{Error, Result};
use crate::geometry::{cloud_from_maps, CameraRig, filter_background, fit_ground_plane, subsample_cloud, ConfidencePointCloud, SubsampleParams};
use crate::grid::{Map, Mask};
use crate::kitti::{list_frames, read_sample, read_split_file, write_sample};
use crate::matcher::{MatcherOutput, StereoMatcher};
use crate::metrics::{assign_difficulty, DifficultyThresholds, GroundTruth};
use crate::sample::Sample;
use crate::scene::{generate_scene, split_train_val};

/// Ground candidates must lie below the camera and nearer than this.
const GROUND_MAX_DEPTH: f64 = 40.0;

/// Per-scene generator seeds derived from the base scene seed.
pub fn scene_seeds(base: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    (0..n).map(|_| rng.gen()).collect()
}

/// Generates `n_train + n_val` scenes and splits them with the scene seed.
pub fn synthetic_dataset(cfg: &PipelineConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let rig = cfg.rig();
    let total = cfg.dataset.n_train + cfg.dataset.n_val;
    let samples = scene_seeds(cfg.seeds.scene, total)
        .into_iter()
        .map(|s| generate_scene(&cfg.scene, &rig, s).map(|sc| Sample::from(&sc)))
        .collect::<Result<Vec<_>>>()?;
    split_train_val(samples, cfg.dataset.n_train as f64 / total as f64, cfg.seeds.scene)
}

/// Surface points sit on the label faces, so containment needs some slack.
const LABEL_MARGIN: f64 = 0.1;

/// Foreground pixels covered by a label of `class`, or `None` when the
/// sample has no labels, disparity or foreground mask.
pub fn class_mask(s: &Sample, class: ObjectClass) -> Option<Mask> {
    let (d, labels, fg) = (s.disparity.as_ref()?, s.labels.as_ref()?, s.fg_mask.as_ref()?);
    let picked: Vec<Box3D> = labels.iter().filter(|b| b.class == class).copied().collect();
    let m = fg_mask_from_disparity(d, &picked, &s.rig, LABEL_MARGIN);
    Some(Mask::from_fn(m.height(), m.width(), |v, u| *m.get(v, u) && *fg.get(v, u)))
}

/// Fills in a missing foreground mask from the labels and disparity.
pub fn ensure_fg_mask(mut s: Sample) -> Result<Sample> {
    if s.fg_mask.is_none() {
        match (&s.disparity, &s.labels) {
            (Some(d), Some(l)) => s.fg_mask = Some(fg_mask_from_disparity(d, l, &s.rig, LABEL_MARGIN)),
            _ => return Err(Error::Empty("sample has no foreground mask and no labels to derive one".into())),
        }
    }
    Ok(s)
}

fn read_frames(root: &Path, indices: &[usize]) -> Result<Vec<Sample>> {
    indices.iter().map(|&i| read_sample(root, i).and_then(ensure_fg_mask)).collect()
}

/// Reads a KITTI-layout directory. Split files select the frames; without
/// them every frame is read and split with the scene seed.
pub fn kitti_dataset(cfg: &PipelineConfig, root: &Path) -> Result<(Vec<Sample>, Vec<Sample>)> {
    match (&cfg.dataset.train_split, &cfg.dataset.val_split) {
        (Some(t), Some(v)) => Ok((read_frames(root, &read_split_file(t)?)?, read_frames(root, &read_split_file(v)?)?)),
        (None, None) => {
            let frames = list_frames(root)?;
            let n = frames.len();
            if n < 2 {
                return Err(Error::Empty(format!("{} holds {n} frames, need at least 2", root.display())));
            }
            let (t, v) = split_train_val(frames, cfg.dataset.n_train as f64 / (cfg.dataset.n_train + cfg.dataset.n_val) as f64, cfg.seeds.scene)?;
            Ok((read_frames(root, &t)?, read_frames(root, &v)?))
        }
        _ => Err(Error::Config("give both train_split and val_split, or neither".into())),
    }
}

pub fn load_dataset(cfg: &PipelineConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let (train, val) = match &cfg.dataset.kitti_root {
        Some(root) => kitti_dataset(cfg, root)?,
        None => synthetic_dataset(cfg)?,
    };
    if train.is_empty() || val.is_empty() {
        return Err(Error::Empty(format!("dataset split has {} training and {} validation frames", train.len(), val.len())));
    }
    Ok((train, val))
}

/// Writes the synthetic dataset in KITTI layout with `train.txt` and
/// `val.txt` split files. Training frames come first.
pub fn write_synthetic_dataset(cfg: &PipelineConfig, root: &Path) -> Result<usize> {
    let (train, val) = synthetic_dataset(cfg)?;
    let mut lists = [String::new(), String::new()];
    for (i, s) in train.iter().chain(&val).enumerate() {
        write_sample(root, i, s)?;
        lists[usize::from(i >= train.len())].push_str(&format!("{i:06}\n"));
    }
    for (name, body) in ["train.txt", "val.txt"].iter().zip(&lists) {
        let p = root.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(train.len() + val.len())
}

/// Labels with difficulty buckets scaled to the image height.
pub fn ground_truths(s: &Sample) -> Vec<GroundTruth> {
    let t = DifficultyThresholds::for_image_height(s.height());
    s.labels
        .iter()
        .flatten()
        .map(|b| {
            let a = b.attrs;
            GroundTruth {
                bx: *b,
                difficulty: assign_difficulty(a.bbox[3] - a.bbox[1], a.occlusion, a.truncation, &t),
            }
        })
        .collect()
}

/// Detector input from a matcher output: back-project every pixel, fit the
/// ground on near background points below the camera, drop background off
/// the ground plane, then subsample. If no ground plane is found only the
/// foreground survives.
pub fn cloud_from_estimate(
    disparity: &Map,
    confidence: &Map,
    fg: &Mask,
    cfg: &PipelineConfig,
    n_points: usize,
    rig: &CameraRig,
    seed: u64,
) -> Result<ConfidencePointCloud> {
    let all = Mask::filled(fg.height(), fg.width(), true);
    let cloud = cloud_from_maps(disparity, confidence, &all, rig)?;
    let fg_rows: Vec<bool> = cloud.source_pixels.iter().map(|&(u, v)| *fg.get(v, u)).collect();
    let ground: Vec<[f64; 3]> = cloud
        .points
        .iter()
        .zip(&fg_rows)
        .filter(|(p, f)| !**f && p[1] > 0.0 && p[2] < GROUND_MAX_DEPTH)
        .map(|(p, _)| [p[0], p[1], p[2]])
        .collect();
    let kept = match fit_ground_plane(&ground, &cfg.ground, seed) {
        Ok(plane) => filter_background(&cloud, &fg_rows, &plane)?,
        Err(e) => {
            log::warn!("no ground plane ({e}); keeping foreground points only");
            let idx: Vec<usize> = (0..cloud.len()).filter(|&i| fg_rows[i]).collect();
            cloud.select(&idx)
        }
    };
    if kept.is_empty() {
        return Ok(kept);
    }
    let params = SubsampleParams {
        n_total: n_points,
        depth_threshold: cfg.depth_threshold,
    };
    subsample_cloud(&kept, &params, seed)
}

/// Runs the matcher on one sample and builds its detector input.
pub fn pseudo_cloud(
    matcher: &StereoMatcher,
    s: &Sample,
    cfg: &PipelineConfig,
    n_points: usize,
    seed: u64,
) -> Result<(MatcherOutput, ConfidencePointCloud)> {
    let fg = s
        .fg_mask
        .as_ref()
        .ok_or_else(|| Error::Empty("pseudo cloud needs a foreground mask".into()))?;
    let out = matcher.forward(&s.left, &s.right, fg)?;
    let cloud = cloud_from_estimate(&out.disparity, &out.confidence, fg, cfg, n_points, &s.rig, seed)?;
    Ok((out, cloud))
}
