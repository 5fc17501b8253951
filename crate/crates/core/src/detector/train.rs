use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{PointDetector, Proposal};
use super::{encode_points, DetectorConfig};
use crate::boxes::{wrap_angle, Box3D};
use crate::error::{Error, Result};
use crate::geometry::ConfidencePointCloud;
use crate::nn::{step_decay, Adam, ParamStore, Tensor};

/// One training scene: the detector input cloud and its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorScene {
    pub cloud: ConfidencePointCloud,
    pub boxes: Vec<Box3D>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorCurveRow {
    /// 1 for proposals, 2 for refinement.
    pub stage: u8,
    pub step: usize,
    pub loss: f64,
}

fn mirror_features(f: &Tensor) -> Tensor {
    let (n, c) = f.rc();
    let mut out = f.clone();
    for i in 0..n {
        out.data[i * c] = -out.data[i * c];
    }
    out
}

fn mirror_box(b: &Box3D) -> Box3D {
    let mut m = *b;
    m.center[0] = -b.center[0];
    m.yaw = wrap_angle(-b.yaw);
    m
}

fn jitter(b: &Box3D, rng: &mut ChaCha8Rng) -> Result<Proposal> {
    let mut j = *b;
    j.center[0] += rng.gen_range(-0.3..0.3);
    j.center[2] += rng.gen_range(-0.3..0.3);
    j.center[1] += rng.gen_range(-0.1..0.1);
    for s in &mut j.size {
        *s *= rng.gen_range(-0.1f64..0.1).exp();
    }
    j.yaw = wrap_angle(j.yaw + rng.gen_range(-0.2..0.2));
    j.score = 0.5;
    j.validate()?;
    Ok(Proposal { bx: j, logit: 0.0 })
}

struct Step<'a> {
    feats: &'a Tensor,
    boxes: &'a [Box3D],
    mirror: bool,
    index: usize,
}

fn apply(
    model: &mut PointDetector,
    adam: &mut Adam,
    result: Option<(f64, ParamStore)>,
    step: usize,
    total: usize,
    stage: u8,
    curve: &mut Vec<DetectorCurveRow>,
) -> Result<()> {
    let Some((loss, grads)) = result else {
        return Ok(());
    };
    if !loss.is_finite() {
        return Err(Error::Diverged { step, what: format!("detector stage-{stage} loss") });
    }
    adam.step(&mut model.params, &grads, step_decay(step, total));
    curve.push(DetectorCurveRow { stage, step, loss });
    Ok(())
}

/// Trains proposals first, then refinement on the trained proposals plus
/// jittered ground truth. Labels of classes the config does not handle are
/// dropped. Scenes are drawn in seeded shuffled order with random x-mirroring.
pub fn train_detector(
    config: DetectorConfig,
    scenes: &[DetectorScene],
    init_seed: u64,
    sampling_seed: u64,
) -> Result<(PointDetector, Vec<DetectorCurveRow>)> {
    if scenes.is_empty() {
        return Err(Error::Empty("no training scenes for the detector".into()));
    }
    let mut model = PointDetector::new(config, init_seed)?;
    let cfg = model.config.clone();
    let feats: Vec<Tensor> = scenes.iter().map(|s| encode_points(&s.cloud, &cfg)).collect::<Result<_>>()?;
    let boxes: Vec<Vec<Box3D>> = scenes
        .iter()
        .map(|s| s.boxes.iter().filter(|b| cfg.classes.contains(&b.class)).copied().collect())
        .collect();
    let mirrored: Vec<(Tensor, Vec<Box3D>)> = feats
        .iter()
        .zip(&boxes)
        .map(|(f, b)| (mirror_features(f), b.iter().map(mirror_box).collect()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sampling_seed);
    let mut order: Vec<usize> = Vec::new();
    let mut draw = |rng: &mut ChaCha8Rng| -> (usize, bool) {
        if order.is_empty() {
            order = (0..scenes.len()).collect();
            order.shuffle(rng);
        }
        (order.pop().expect("refilled"), rng.gen::<bool>())
    };
    let pick = |(i, mirror): (usize, bool)| Step {
        feats: if mirror { &mirrored[i].0 } else { &feats[i] },
        boxes: if mirror { &mirrored[i].1 } else { &boxes[i] },
        mirror,
        index: i,
    };

    let mut curve = Vec::new();
    let mut adam = Adam::new(&model.params, cfg.learning_rate);
    for step in 0..cfg.rpn_steps {
        let s = pick(draw(&mut rng));
        let result = model.rpn_gradient(s.feats, s.boxes)?;
        apply(&mut model, &mut adam, result, step, cfg.rpn_steps, 1, &mut curve)?;
    }

    let proposals: Vec<Vec<Proposal>> = feats.iter().map(|f| model.propose_regions(f)).collect::<Result<_>>()?;
    let mut adam = Adam::new(&model.params, cfg.learning_rate);
    for step in 0..cfg.rcnn_steps {
        let s = pick(draw(&mut rng));
        let mut cands: Vec<Proposal> = proposals[s.index]
            .iter()
            .map(|p| if s.mirror { Proposal { bx: mirror_box(&p.bx), logit: p.logit } } else { *p })
            .collect();
        for b in s.boxes {
            for _ in 0..2 {
                cands.push(jitter(b, &mut rng)?);
            }
        }
        let result = model.rcnn_gradient(s.feats, &cands, s.boxes)?;
        apply(&mut model, &mut adam, result, step, cfg.rcnn_steps, 2, &mut curve)?;
    }
    Ok((model, curve))
}

pub fn write_detector_curve_csv(path: &Path, rows: &[DetectorCurveRow]) -> Result<()> {
    let mut s = String::from("stage,step,loss\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.stage, r.step, r.loss));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
