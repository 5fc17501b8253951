use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{encode_points, DetectorConfig};
use crate::boxes::{wrap_angle, Box3D};
use crate::error::{Error, Result};
use crate::geometry::ConfidencePointCloud;
use crate::metrics::{iou_3d, rotated_iou_bev};
use crate::nn::kernels::sigmoid;
use crate::nn::params::he_normal;
use crate::nn::{Bound, ParamStore, Pick, Tape, Tensor, Var};
use crate::scene::reference_size;

const PAIR_WIDTHS: [usize; 2] = [16, 32];
const HEAD_WIDTH: usize = 32;
/// Per class: objectness (or score correction), 3 center, 3 size, yaw.
const OUT: usize = 8;
const PROPOSAL_NMS_IOU: f64 = 0.6;
const REG_BETA: f64 = 1.0 / 9.0;
const MAX_LOG_SCALE: f64 = 3.0;
pub(crate) const FG_IOU: f64 = 0.55;
pub(crate) const BG_IOU: f64 = 0.35;

/// A stage-one box with its raw objectness logit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Proposal {
    pub bx: Box3D,
    pub logit: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointDetector {
    pub config: DetectorConfig,
    pub params: ParamStore,
}

/// Variable-size point sets flattened into pair features with segment
/// offsets.
struct Pairs {
    features: Tensor,
    offsets: Vec<usize>,
}

pub(crate) struct Anchors {
    pub centers: Vec<[f64; 2]>,
    groups: Pairs,
}

/// Indices of `boxes` surviving greedy score-descending suppression, in the
/// order they were selected. Only boxes of the same class suppress each
/// other; equal scores go to the lower index.
pub fn nms_indices(boxes: &[Box3D], iou_threshold: f64) -> Result<Vec<usize>> {
    nms_top(boxes, iou_threshold, usize::MAX)
}

/// [`nms_indices`] stopped after `limit` survivors.
pub fn nms_top(boxes: &[Box3D], iou_threshold: f64, limit: usize) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].score.total_cmp(&boxes[a].score).then(a.cmp(&b)));
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep.len() >= limit {
            break;
        }
        let mut suppressed = false;
        for &k in &keep {
            if boxes[k].class == boxes[i].class && rotated_iou_bev(&boxes[k], &boxes[i])? > iou_threshold {
                suppressed = true;
                break;
            }
        }
        if !suppressed {
            keep.push(i);
        }
    }
    Ok(keep)
}

pub fn nms_bev(boxes: &[Box3D], iou_threshold: f64) -> Result<Vec<Box3D>> {
    Ok(nms_indices(boxes, iou_threshold)?.into_iter().map(|i| boxes[i]).collect())
}

fn dense(tape: &mut Tape, bound: &Bound, key: &str, x: Var) -> Var {
    let y = tape.matmul(x, bound.var(&format!("{key}.w")));
    tape.add_bias(y, bound.var(&format!("{key}.b")))
}

fn balanced_bce_weights(labels: &[(usize, bool)]) -> Vec<Pick> {
    let n_pos = labels.iter().filter(|l| l.1).count();
    let n_neg = labels.len() - n_pos;
    let (wp, wn) = match (n_pos, n_neg) {
        (0, n) => (0.0, 1.0 / n as f64),
        (p, 0) => (1.0 / p as f64, 0.0),
        (p, n) => (0.5 / p as f64, 0.5 / n as f64),
    };
    labels
        .iter()
        .map(|&(index, pos)| Pick {
            index,
            target: if pos { 1.0 } else { 0.0 },
            weight: if pos { wp } else { wn },
        })
        .collect()
}

impl PointDetector {
    /// He-initialized weights. The confidence row of each first layer starts
    /// at zero and the remaining rows do not depend on the flag, so models
    /// with and without the channel start from the same function.
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let out = OUT * config.classes.len();
        for stage in ["rpn", "rcnn"] {
            let mut w1 = he_normal(vec![4, PAIR_WIDTHS[0]], 4, 1.0, &mut rng);
            w1.data[3 * PAIR_WIDTHS[0]..].iter_mut().for_each(|x| *x = 0.0);
            if !config.use_confidence_channel {
                w1 = Tensor::new(vec![3, PAIR_WIDTHS[0]], w1.data[..3 * PAIR_WIDTHS[0]].to_vec());
            }
            let layers = [
                ("pair1", w1),
                ("pair2", he_normal(vec![PAIR_WIDTHS[0], PAIR_WIDTHS[1]], PAIR_WIDTHS[0], 1.0, &mut rng)),
                ("head1", he_normal(vec![PAIR_WIDTHS[1], HEAD_WIDTH], PAIR_WIDTHS[1], 1.0, &mut rng)),
                ("head2", he_normal(vec![HEAD_WIDTH, out], HEAD_WIDTH, 0.1, &mut rng)),
            ];
            for (name, w) in layers {
                let n = w.shape[1];
                params.insert(format!("{stage}.{name}.w"), w);
                params.insert(format!("{stage}.{name}.b"), Tensor::zeros(vec![n]));
            }
        }
        Ok(Self { config, params })
    }

    fn width(&self) -> usize {
        OUT * self.config.classes.len()
    }

    fn network(&self, tape: &mut Tape, bound: &Bound, stage: &str, pairs: &Pairs) -> Var {
        let x = tape.leaf(pairs.features.clone());
        let h = dense(tape, bound, &format!("{stage}.pair1"), x);
        let h = tape.relu(h);
        let h = dense(tape, bound, &format!("{stage}.pair2"), h);
        let h = tape.relu(h);
        let pooled = tape.segment_max(h, &pairs.offsets);
        let g = dense(tape, bound, &format!("{stage}.head1"), pooled);
        let g = tape.relu(g);
        dense(tape, bound, &format!("{stage}.head2"), g)
    }

    fn run(&self, stage: &str, pairs: &Pairs) -> Vec<f64> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let out = self.network(&mut tape, &bound, stage, pairs);
        tape.value(out).data.clone()
    }

    /// Anchors on the BEV grid with at least `min_group_points` points within
    /// `group_radius`, in grid order.
    pub(crate) fn anchors(&self, feats: &Tensor) -> Anchors {
        let cfg = &self.config;
        let (n, c) = feats.rc();
        let (s, r) = (cfg.anchor_spacing, cfg.group_radius);
        let mut cells: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            let (x, z) = (feats.data[i * c], feats.data[i * c + 2]);
            let (ix0, ix1) = (((x - r) / s).ceil() as i64, ((x + r) / s).floor() as i64);
            let (iz0, iz1) = (((z - r) / s).ceil() as i64, ((z + r) / s).floor() as i64);
            for ix in ix0..=ix1 {
                for iz in iz0..=iz1 {
                    let (dx, dz) = (x - ix as f64 * s, z - iz as f64 * s);
                    if dx * dx + dz * dz <= r * r {
                        cells.entry((ix, iz)).or_default().push(i);
                    }
                }
            }
        }
        let mut centers = Vec::new();
        let mut data = Vec::new();
        let mut offsets = vec![0];
        for ((ix, iz), rows) in cells {
            if rows.len() < cfg.min_group_points.max(1) {
                continue;
            }
            let (ax, az) = (ix as f64 * s, iz as f64 * s);
            for i in rows {
                let p = &feats.data[i * c..(i + 1) * c];
                data.extend_from_slice(&[(p[0] - ax) / r, p[1] - cfg.anchor_y, (p[2] - az) / r]);
                if c == 4 {
                    data.push(p[3]);
                }
            }
            centers.push([ax, az]);
            offsets.push(data.len() / c);
        }
        let rows = data.len() / c;
        Anchors {
            centers,
            groups: Pairs {
                features: Tensor::new(vec![rows, c], data),
                offsets,
            },
        }
    }

    /// Points inside each candidate grown by `refine_margin`, in the
    /// candidate's normalized local frame.
    fn candidate_pairs(&self, cands: &[Box3D], feats: &Tensor) -> Pairs {
        let (n, c) = feats.rc();
        let m = self.config.refine_margin;
        let mut data = Vec::new();
        let mut offsets = vec![0];
        for bx in cands {
            for i in 0..n {
                let p = &feats.data[i * c..(i + 1) * c];
                let xyz = [p[0], p[1], p[2]];
                if !bx.contains(xyz, m) {
                    continue;
                }
                let q = bx.to_local(xyz);
                data.extend_from_slice(&[q[0] / (0.5 * bx.l() + m), q[1] / bx.h() - 0.5, q[2] / (0.5 * bx.w() + m)]);
                if c == 4 {
                    data.push(p[3]);
                }
            }
            offsets.push(data.len() / c);
        }
        Pairs {
            features: Tensor::new(vec![data.len() / c, c], data),
            offsets,
        }
    }

    fn decode_anchor(&self, anchor: [f64; 2], ci: usize, o: &[f64]) -> Result<Proposal> {
        let class = self.config.classes[ci];
        let r = reference_size(class);
        let size = [0, 1, 2].map(|k| r[k] * o[4 + k].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp());
        let center = [anchor[0] + o[1], self.config.anchor_y + o[2], anchor[1] + o[3]];
        let bx = Box3D::new(center, size, wrap_angle(o[7]), class, sigmoid(o[0]))?;
        Ok(Proposal { bx, logit: o[0] })
    }

    /// Raw stage-one boxes for every active anchor and class, anchor-major.
    pub(crate) fn raw_proposals(&self, feats: &Tensor) -> Result<Vec<Proposal>> {
        let anchors = self.anchors(feats);
        if anchors.centers.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.run("rpn", &anchors.groups);
        let w = self.width();
        let mut props = Vec::new();
        for (a, &center) in anchors.centers.iter().enumerate() {
            for ci in 0..self.config.classes.len() {
                props.push(self.decode_anchor(center, ci, &out[a * w + OUT * ci..a * w + OUT * (ci + 1)])?);
            }
        }
        Ok(props)
    }

    /// Stage one: at most `proposal_count` boxes after per-class suppression.
    pub fn propose_regions(&self, feats: &Tensor) -> Result<Vec<Proposal>> {
        let props = self.raw_proposals(feats)?;
        let boxes: Vec<Box3D> = props.iter().map(|p| p.bx).collect();
        Ok(nms_top(&boxes, PROPOSAL_NMS_IOU, self.config.proposal_count)?
            .into_iter()
            .map(|i| props[i])
            .collect())
    }

    /// Stage two: residual refinement of each candidate in its own frame; the
    /// score is `sigmoid(proposal logit + correction)`.
    pub fn refine_boxes(&self, cands: &[Proposal], feats: &Tensor) -> Result<Vec<Box3D>> {
        if cands.is_empty() {
            return Ok(Vec::new());
        }
        let boxes: Vec<Box3D> = cands.iter().map(|p| p.bx).collect();
        let out = self.run("rcnn", &self.candidate_pairs(&boxes, feats));
        let w = self.width();
        cands
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let ci = self.class_index(&p.bx)?;
                let o = &out[j * w + OUT * ci..j * w + OUT * (ci + 1)];
                let b = p.bx;
                let center = b.from_local([o[1] * b.l(), o[2] * b.h(), o[3] * b.w()]);
                let size = [0, 1, 2].map(|k| b.size[k] * o[4 + k].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp());
                let mut out = Box3D::new(center, size, wrap_angle(b.yaw + o[7]), b.class, sigmoid(p.logit + o[0]))?;
                out.attrs = b.attrs;
                Ok(out)
            })
            .collect()
    }

    fn class_index(&self, b: &Box3D) -> Result<usize> {
        self.config
            .classes
            .iter()
            .position(|&c| c == b.class)
            .ok_or_else(|| Error::Config(format!("{} is not handled by this detector", b.class)))
    }

    /// Encode, propose, refine, suppress and threshold.
    pub fn detect(&self, cloud: &ConfidencePointCloud) -> Result<Vec<Box3D>> {
        let feats = encode_points(cloud, &self.config)?;
        self.detect_features(&feats)
    }

    pub fn detect_features(&self, feats: &Tensor) -> Result<Vec<Box3D>> {
        let props = self.propose_regions(feats)?;
        let refined = self.refine_boxes(&props, feats)?;
        Ok(nms_bev(&refined, self.config.nms_iou)?
            .into_iter()
            .filter(|b| b.score >= self.config.score_threshold)
            .collect())
    }

    /// Stage-one loss and its gradient, or `None` when no anchor is active.
    pub(crate) fn rpn_gradient(&self, feats: &Tensor, gts: &[Box3D]) -> Result<Option<(f64, ParamStore)>> {
        let anchors = self.anchors(feats);
        if anchors.centers.is_empty() {
            return Ok(None);
        }
        let cfg = &self.config;
        let w = self.width();
        let mut labels = Vec::new();
        let (mut reg, mut yaw) = (Vec::new(), Vec::new());
        for (a, &[ax, az]) in anchors.centers.iter().enumerate() {
            for (ci, &class) in cfg.classes.iter().enumerate() {
                let nearest = gts
                    .iter()
                    .filter(|g| g.class == class)
                    .map(|g| ((g.center[0] - ax).hypot(g.center[2] - az), g))
                    .min_by(|x, y| x.0.total_cmp(&y.0));
                let base = a * w + OUT * ci;
                match nearest {
                    Some((d, g)) if d <= cfg.positive_radius => {
                        labels.push((base, true));
                        let r = reference_size(class);
                        let t = [
                            g.center[0] - ax,
                            g.center[1] - cfg.anchor_y,
                            g.center[2] - az,
                            (g.size[0] / r[0]).ln(),
                            (g.size[1] / r[1]).ln(),
                            (g.size[2] / r[2]).ln(),
                        ];
                        reg.extend(t.iter().enumerate().map(|(k, &target)| (base + 1 + k, target)));
                        yaw.push((base + 7, g.yaw));
                    }
                    Some((d, _)) if d <= cfg.negative_radius => {}
                    _ => labels.push((base, false)),
                }
            }
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let out = self.network(&mut tape, &bound, "rpn", &anchors.groups);
        let loss = self.head_loss(&mut tape, out, &labels, &reg, &yaw);
        Ok(Some(self.finish(&tape, &bound, loss)))
    }

    fn head_loss(&self, tape: &mut Tape, x: Var, labels: &[(usize, bool)], reg: &[(usize, f64)], yaw: &[(usize, f64)]) -> Var {
        let bce = tape.pick_bce(x, balanced_bce_weights(labels));
        let mut terms = vec![(bce, 1.0)];
        if !yaw.is_empty() {
            let wgt = 1.0 / yaw.len() as f64;
            let picks = |v: &[(usize, f64)]| {
                v.iter()
                    .map(|&(index, target)| Pick { index, target, weight: wgt })
                    .collect::<Vec<_>>()
            };
            let r = tape.pick_smooth_l1(x, picks(reg), REG_BETA);
            let y = tape.pick_sin_diff(x, picks(yaw), REG_BETA);
            terms.push((r, 1.0));
            terms.push((y, 1.0));
        }
        tape.weighted_sum(&terms)
    }

    fn finish(&self, tape: &Tape, bound: &Bound, loss: Var) -> (f64, ParamStore) {
        let grads = tape.backward(loss);
        let mut g = self.params.zeros_like();
        g.accumulate(bound, &grads, 1.0);
        (tape.value(loss).item(), g)
    }

    /// Stage-two loss and gradient for fixed candidates.
    pub fn rcnn_gradient(&self, feats: &Tensor, cands: &[Proposal], gts: &[Box3D]) -> Result<Option<(f64, ParamStore)>> {
        if cands.is_empty() {
            return Ok(None);
        }
        let w = self.width();
        let boxes: Vec<Box3D> = cands.iter().map(|p| p.bx).collect();
        let mut logits = vec![0.0; cands.len() * w];
        let mut labels = Vec::new();
        let (mut reg, mut yaw) = (Vec::new(), Vec::new());
        for (j, p) in cands.iter().enumerate() {
            let ci = self.class_index(&p.bx)?;
            let base = j * w + OUT * ci;
            logits[base] = p.logit;
            let mut best: Option<(f64, &Box3D)> = None;
            for g in gts.iter().filter(|g| g.class == p.bx.class) {
                let iou = iou_3d(&p.bx, g)?;
                if best.map_or(true, |(b, _)| iou > b) {
                    best = Some((iou, g));
                }
            }
            match best {
                Some((iou, g)) if iou >= FG_IOU => {
                    labels.push((base, true));
                    let b = &p.bx;
                    let q = b.to_local(g.center);
                    let t = [
                        q[0] / b.l(),
                        q[1] / b.h(),
                        q[2] / b.w(),
                        (g.size[0] / b.size[0]).ln(),
                        (g.size[1] / b.size[1]).ln(),
                        (g.size[2] / b.size[2]).ln(),
                    ];
                    reg.extend(t.iter().enumerate().map(|(k, &target)| (base + 1 + k, target)));
                    yaw.push((base + 7, g.yaw - b.yaw));
                }
                Some((iou, _)) if iou >= BG_IOU => {}
                _ => labels.push((base, false)),
            }
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let out = self.network(&mut tape, &bound, "rcnn", &self.candidate_pairs(&boxes, feats));
        let prior = tape.leaf(Tensor::new(vec![cands.len(), w], logits));
        let x = tape.add(out, prior);
        let loss = self.head_loss(&mut tape, x, &labels, &reg, &yaw);
        Ok(Some(self.finish(&tape, &bound, loss)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut manifest = BTreeMap::new();
        manifest.insert("model".to_string(), serde_json::json!("point_detector"));
        manifest.insert(
            "config".to_string(),
            serde_json::to_value(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?,
        );
        self.params.save(path, &manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, manifest) = ParamStore::load(path)?;
        if manifest.get("model").and_then(|m| m.as_str()) != Some("point_detector") {
            return Err(Error::Checkpoint(format!("{} is not a detector checkpoint", path.display())));
        }
        let config: DetectorConfig = manifest
            .get("config")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("manifest has no config".into()))
            .and_then(|c| serde_json::from_value(c).map_err(|e| Error::Checkpoint(e.to_string())))?;
        let fresh = PointDetector::new(config.clone(), 0)?;
        if params.len() != fresh.params.len()
            || fresh.params.iter().any(|(k, t)| params.get(k).map(|p| &p.shape) != Some(&t.shape))
        {
            return Err(Error::Checkpoint("detector parameters do not match the manifest config".into()));
        }
        Ok(Self { config, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxes::ObjectClass;

    fn car(x: f64, z: f64, yaw: f64, score: f64) -> Box3D {
        Box3D::new([x, 1.65, z], [1.5, 1.6, 3.9], yaw, ObjectClass::Car, score).unwrap()
    }

    /// Points sampled on the visible faces of a box, plus sigma.
    fn box_cloud(b: &Box3D, n: usize) -> Vec<[f64; 4]> {
        (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                let q = [(t * 7.0).fract() - 0.5, (t * 3.0).fract(), (t * 11.0).fract() - 0.5];
                let p = b.from_local([q[0] * b.l(), q[1] * b.h(), q[2] * b.w()]);
                [p[0], p[1], p[2], 0.3 + 0.6 * (t * 5.0).fract()]
            })
            .collect()
    }

    fn cloud_of(points: Vec<[f64; 4]>) -> ConfidencePointCloud {
        let n = points.len();
        ConfidencePointCloud::new(points, (0..n).map(|i| (i, 0)).collect()).unwrap()
    }

    fn zeroed(mut d: PointDetector) -> PointDetector {
        for key in d.params.keys().cloned().collect::<Vec<_>>() {
            d.params.get_mut(&key).unwrap().data.iter_mut().for_each(|x| *x = 0.0);
        }
        d
    }

    #[test]
    fn nms_examples() {
        let a = car(0.0, 10.0, 0.0, 0.9);
        assert_eq!(nms_bev(&[a, a], 0.5).unwrap().len(), 1);
        let far = [car(0.0, 10.0, 0.0, 0.9), car(10.0, 10.0, 0.0, 0.8), car(-10.0, 20.0, 0.3, 0.7)];
        assert_eq!(nms_bev(&far, 0.1).unwrap().len(), 3);
        // equal scores: lower index wins
        let tie = [car(0.0, 10.0, 0.0, 0.5), car(0.2, 10.0, 0.0, 0.5)];
        assert_eq!(nms_indices(&tie, 0.3).unwrap(), vec![0]);
    }

    #[test]
    fn nms_matches_brute_force_greedy() {
        let boxes = [
            car(0.0, 10.0, 0.0, 0.9),
            car(0.8, 10.2, 0.1, 0.95),
            car(1.8, 10.0, 0.0, 0.6),
            car(3.6, 10.0, 0.0, 0.7),
            car(0.4, 12.5, 1.2, 0.8),
        ];
        for thr in [0.05, 0.2, 0.4, 0.6] {
            // oracle: repeatedly take the best remaining box, drop its overlaps
            let mut alive: Vec<usize> = (0..5).collect();
            let mut want = Vec::new();
            while !alive.is_empty() {
                let best = *alive
                    .iter()
                    .max_by(|&&a, &&b| boxes[a].score.partial_cmp(&boxes[b].score).unwrap().then(b.cmp(&a)))
                    .unwrap();
                want.push(best);
                alive.retain(|&j| j != best && rotated_iou_bev(&boxes[best], &boxes[j]).unwrap() <= thr);
            }
            assert_eq!(nms_indices(&boxes, thr).unwrap(), want, "threshold {thr}");
        }
    }

    #[test]
    fn zero_network_gives_uniform_anchor_boxes_and_identity_refinement() {
        let d = zeroed(PointDetector::new(DetectorConfig::default(), 1).unwrap());
        let gt = car(0.3, 12.2, 0.0, 1.0);
        let feats = encode_points(&cloud_of(box_cloud(&gt, 200)), &d.config).unwrap();
        let raw = d.raw_proposals(&feats).unwrap();
        assert!(!raw.is_empty());
        let anchors = d.anchors(&feats);
        for (p, a) in raw.iter().zip(&anchors.centers) {
            assert_eq!(p.bx.score, 0.5);
            assert_eq!(p.bx.center, [a[0], 1.65, a[1]]);
            assert_eq!(p.bx.size, reference_size(ObjectClass::Car));
        }
        let props = d.propose_regions(&feats).unwrap();
        let refined = d.refine_boxes(&props, &feats).unwrap();
        for (p, r) in props.iter().zip(&refined) {
            assert_eq!(p.bx.center, r.center);
            assert_eq!(p.bx.size, r.size);
            assert_eq!(p.bx.yaw, r.yaw);
            assert_eq!(p.bx.score, r.score);
        }
    }

    #[test]
    fn detection_ignores_point_order_and_unused_sigma() {
        let mut cfg = DetectorConfig::default();
        cfg.score_threshold = 0.0;
        let d = PointDetector::new(cfg.clone(), 2).unwrap();
        let pts = [box_cloud(&car(0.0, 12.0, 0.0, 1.0), 150), box_cloud(&car(4.0, 20.0, 0.5, 1.0), 100)].concat();
        let a = d.detect(&cloud_of(pts.clone())).unwrap();
        let mut rev = pts.clone();
        rev.reverse();
        assert_eq!(a, d.detect(&cloud_of(rev)).unwrap());
        assert!(!a.is_empty());
        assert!(a.iter().all(|b| b.validate().is_ok()));

        cfg.use_confidence_channel = false;
        let d = PointDetector::new(cfg, 2).unwrap();
        let mut other = pts.clone();
        other.iter_mut().for_each(|p| p[3] = 1.0 - p[3]);
        assert_eq!(d.detect(&cloud_of(pts)).unwrap(), d.detect(&cloud_of(other)).unwrap());
    }

    #[test]
    fn refinement_gradient_matches_finite_differences() {
        let d = PointDetector::new(DetectorConfig::default(), 3).unwrap();
        let gt = car(0.2, 12.0, 0.0, 1.0);
        let feats = encode_points(&cloud_of(box_cloud(&gt, 60)), &d.config).unwrap();
        let cands = vec![
            Proposal { bx: car(0.4, 12.3, 0.1, 0.6), logit: 0.4 },
            Proposal { bx: car(1.2, 13.0, -0.2, 0.4), logit: -0.2 },
            Proposal { bx: car(3.5, 12.0, 0.0, 0.3), logit: -1.0 },
        ];
        let (_, g) = d.rcnn_gradient(&feats, &cands, &[gt]).unwrap().unwrap();
        let h = 1e-6;
        for (key, t) in d.params.iter().filter(|(k, _)| k.starts_with("rcnn.")) {
            for i in 0..t.len() {
                let eval = |delta: f64| {
                    let mut p = d.clone();
                    p.params.get_mut(key).unwrap().data[i] += delta;
                    p.rcnn_gradient(&feats, &cands, &[gt]).unwrap().unwrap().0
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let analytic = g.expect(key).data[i];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5);
                assert!(rel < 1e-4, "{key}[{i}]: {analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let d = PointDetector::new(DetectorConfig::pedestrian_cyclist(), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        d.save(&path).unwrap();
        assert_eq!(PointDetector::load(&path).unwrap(), d);
    }

    #[test]
    fn sigma_row_starts_at_zero() {
        let with = PointDetector::new(DetectorConfig::default(), 5).unwrap();
        let without = PointDetector::new(
            DetectorConfig {
                use_confidence_channel: false,
                ..DetectorConfig::default()
            },
            5,
        )
        .unwrap();
        let w = with.params.expect("rpn.pair1.w");
        assert!(w.data[48..].iter().all(|&x| x == 0.0));
        assert_eq!(&w.data[..48], &without.params.expect("rpn.pair1.w").data[..]);
        assert_eq!(with.params.expect("rcnn.head2.w"), without.params.expect("rcnn.head2.w"));
    }
}
