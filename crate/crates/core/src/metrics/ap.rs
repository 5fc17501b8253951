//! Average precision with KITTI-style "don't care" handling.
//!
//! Matching and precision sampling are separate steps so that the 11- and
//! 40-point figures of one evaluation always come from the same matches.

use serde::{Deserialize, Serialize};

use super::difficulty::Difficulty;
use super::iou::{iou_3d, rotated_iou_bev};
use crate::boxes::{Box3D, ObjectClass};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bx: Box3D,
    pub difficulty: Difficulty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IouKind {
    Bev,
    ThreeD,
}

impl IouKind {
    pub fn iou(self, a: &Box3D, b: &Box3D) -> Result<f64> {
        match self {
            IouKind::Bev => rotated_iou_bev(a, b),
            IouKind::ThreeD => iou_3d(a, b),
        }
    }
}

/// Scored detections that count (true or false positives) and the number of
/// ground truths that can be recalled.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    pub scores: Vec<f64>,
    pub is_tp: Vec<bool>,
    pub n_gt: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct APReport {
    pub class: ObjectClass,
    pub difficulty: Difficulty,
    pub iou_threshold: f64,
    pub recall_positions: usize,
    pub ap_3d: f64,
    pub ap_bev: f64,
}

/// Greedy per-frame matching in descending score order. Each detection takes
/// the unmatched evaluated ground truth with the highest IoU at or above the
/// threshold; failing that it may absorb a ground truth of a harder
/// difficulty (then it is ignored), otherwise it is a false positive.
pub fn match_detections(
    detections: &[Vec<Box3D>],
    ground_truths: &[Vec<GroundTruth>],
    class: ObjectClass,
    difficulty: Difficulty,
    iou_threshold: f64,
    kind: IouKind,
) -> Result<Matching> {
    if detections.len() != ground_truths.len() {
        return Err(Error::Shape(format!(
            "{} detection frames vs {} ground-truth frames",
            detections.len(),
            ground_truths.len()
        )));
    }
    let mut m = Matching::default();
    for (dets, gts) in detections.iter().zip(ground_truths) {
        let gts: Vec<&GroundTruth> = gts.iter().filter(|g| g.bx.class == class).collect();
        let cares: Vec<bool> = gts.iter().map(|g| g.difficulty <= difficulty).collect();
        m.n_gt += cares.iter().filter(|c| **c).count();
        let mut order: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].class == class).collect();
        order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
        let mut taken = vec![false; gts.len()];
        for i in order {
            let mut best: [Option<(f64, usize)>; 2] = [None, None];
            for (j, g) in gts.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                let iou = kind.iou(&dets[i], &g.bx)?;
                if iou < iou_threshold {
                    continue;
                }
                let slot = &mut best[usize::from(!cares[j])];
                if slot.map_or(true, |(b, _)| iou > b) {
                    *slot = Some((iou, j));
                }
            }
            match best {
                [Some((_, j)), _] => {
                    taken[j] = true;
                    m.scores.push(dets[i].score);
                    m.is_tp.push(true);
                }
                [None, Some((_, j))] => taken[j] = true,
                [None, None] => {
                    m.scores.push(dets[i].score);
                    m.is_tp.push(false);
                }
            }
        }
    }
    Ok(m)
}

/// AP in percent from interpolated precision at `recall_positions` points:
/// `{0, 0.1, .., 1}` for 11, `{1/40, .., 1}` for 40.
pub fn interpolated_ap(m: &Matching, recall_positions: usize) -> Result<f64> {
    let ks: Vec<usize> = match recall_positions {
        11 => (0..=10).collect(),
        40 => (1..=40).collect(),
        r => return Err(Error::Config(format!("recall positions must be 11 or 40, got {r}"))),
    };
    let denom = if recall_positions == 11 { 10 } else { 40 };
    if m.n_gt == 0 || m.scores.is_empty() {
        return Ok(0.0);
    }
    let mut order: Vec<usize> = (0..m.scores.len()).collect();
    order.sort_by(|&a, &b| m.scores[b].total_cmp(&m.scores[a]).then(a.cmp(&b)));
    let mut tps = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let (mut tp, mut n) = (0usize, 0usize);
    for i in order {
        n += 1;
        tp += usize::from(m.is_tp[i]);
        tps.push(tp);
        precision.push(tp as f64 / n as f64);
    }
    // running max from the right gives the interpolated envelope
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    for k in &ks {
        // recall tp / n_gt >= k / denom, compared in integers
        if let Some(i) = tps.iter().position(|&t| t * denom >= k * m.n_gt) {
            sum += precision[i];
        }
    }
    Ok(100.0 * sum / ks.len() as f64)
}

/// Both sampling grids from one pair of matchings, `[R11, R40]`.
pub fn ap_reports(
    detections: &[Vec<Box3D>],
    ground_truths: &[Vec<GroundTruth>],
    class: ObjectClass,
    difficulty: Difficulty,
    iou_threshold: f64,
) -> Result<[APReport; 2]> {
    let m3 = match_detections(detections, ground_truths, class, difficulty, iou_threshold, IouKind::ThreeD)?;
    let mb = match_detections(detections, ground_truths, class, difficulty, iou_threshold, IouKind::Bev)?;
    let report = |r: usize| -> Result<APReport> {
        Ok(APReport {
            class,
            difficulty,
            iou_threshold,
            recall_positions: r,
            ap_3d: interpolated_ap(&m3, r)?,
            ap_bev: interpolated_ap(&mb, r)?,
        })
    };
    Ok([report(11)?, report(40)?])
}

pub fn average_precision(
    detections: &[Vec<Box3D>],
    ground_truths: &[Vec<GroundTruth>],
    class: ObjectClass,
    difficulty: Difficulty,
    iou_threshold: f64,
    recall_positions: usize,
) -> Result<APReport> {
    let [r11, r40] = ap_reports(detections, ground_truths, class, difficulty, iou_threshold)?;
    match recall_positions {
        11 => Ok(r11),
        40 => Ok(r40),
        r => Err(Error::Config(format!("recall positions must be 11 or 40, got {r}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn car(x: f64, score: f64) -> Box3D {
        Box3D::new([x, 1.6, 20.0], [1.5, 1.6, 4.0], 0.0, ObjectClass::Car, score).unwrap()
    }

    fn gt(x: f64, d: Difficulty) -> GroundTruth {
        GroundTruth { bx: car(x, 1.0), difficulty: d }
    }

    #[test]
    fn perfect_and_empty() {
        let gts = vec![vec![gt(0.0, Difficulty::Easy), gt(10.0, Difficulty::Easy)], vec![gt(-5.0, Difficulty::Easy)]];
        let dets: Vec<Vec<Box3D>> = gts.iter().map(|f| f.iter().map(|g| g.bx).collect()).collect();
        for r in [11, 40] {
            let rep = average_precision(&dets, &gts, ObjectClass::Car, Difficulty::Moderate, 0.7, r).unwrap();
            assert_eq!((rep.ap_3d, rep.ap_bev), (100.0, 100.0));
            let none = vec![vec![], vec![]];
            let rep = average_precision(&none, &gts, ObjectClass::Car, Difficulty::Moderate, 0.7, r).unwrap();
            assert_eq!(rep.ap_3d, 0.0);
        }
    }

    #[test]
    fn harder_ground_truth_absorbs_detection() {
        let gts = vec![vec![gt(0.0, Difficulty::Easy), gt(10.0, Difficulty::Hard)]];
        let dets = vec![vec![car(0.0, 0.9), car(10.0, 0.8)]];
        let m = match_detections(&dets, &gts, ObjectClass::Car, Difficulty::Easy, 0.7, IouKind::ThreeD).unwrap();
        assert_eq!(m.n_gt, 1);
        assert_eq!(m.is_tp, vec![true]);
        let m = match_detections(&dets, &gts, ObjectClass::Car, Difficulty::Hard, 0.7, IouKind::ThreeD).unwrap();
        assert_eq!(m.n_gt, 2);
        assert_eq!(m.is_tp, vec![true, true]);
    }

    #[test]
    fn staircase() {
        // ranks: TP, FP, TP with 2 gts -> precisions 1, 1/2, 2/3; recalls 1/2, 1/2, 1
        let m = Matching {
            scores: vec![0.9, 0.8, 0.7],
            is_tp: vec![true, false, true],
            n_gt: 2,
        };
        // R11: r in {0..0.5} -> 1 (6 points), r in {0.6..1} -> 2/3 (5 points)
        let r11 = interpolated_ap(&m, 11).unwrap();
        assert!((r11 - 100.0 * (6.0 + 5.0 * 2.0 / 3.0) / 11.0).abs() < 1e-12);
        // R40: k=1..20 -> 1, k=21..40 -> 2/3
        let r40 = interpolated_ap(&m, 40).unwrap();
        assert!((r40 - 100.0 * (20.0 + 20.0 * 2.0 / 3.0) / 40.0).abs() < 1e-12);
        assert!(interpolated_ap(&m, 12).is_err());
    }

    #[test]
    fn duplicate_detection_is_a_false_positive() {
        let gts = vec![vec![gt(0.0, Difficulty::Easy)]];
        let dets = vec![vec![car(0.0, 0.5), car(0.05, 0.9)]];
        let m = match_detections(&dets, &gts, ObjectClass::Car, Difficulty::Easy, 0.5, IouKind::Bev).unwrap();
        assert_eq!(m.scores, vec![0.9, 0.5]);
        assert_eq!(m.is_tp, vec![true, false]);
    }
}
