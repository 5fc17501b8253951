use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Map, Mask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMetricReport {
    pub abs_rel: f64,
    pub si_log: f64,
    pub pixel_count: usize,
    pub slice: String,
}

fn masked_pairs(pred: &Map, gt: &Map, mask: &Mask) -> Result<Vec<(f64, f64)>> {
    pred.check_same_shape(gt, "depth metric ground truth")?;
    pred.check_same_shape(mask, "depth metric mask")?;
    let pairs: Vec<(f64, f64)> = mask
        .data()
        .iter()
        .zip(pred.data().iter().zip(gt.data()))
        .filter(|(m, _)| **m)
        .map(|(_, (p, g))| (*p, *g))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Empty("depth metric mask selects no pixels".into()));
    }
    Ok(pairs)
}

/// Mean of `|pred - gt| / gt` over the mask.
pub fn abs_rel(pred: &Map, gt: &Map, mask: &Mask) -> Result<f64> {
    let pairs = masked_pairs(pred, gt, mask)?;
    let mut sum = 0.0;
    for &(p, g) in &pairs {
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::Domain(format!("ground-truth depth {g} in abs_rel mask")));
        }
        sum += (p - g).abs() / g;
    }
    Ok(sum / pairs.len() as f64)
}

/// Scale-invariant log RMSE: the standard deviation of `log pred - log gt`.
pub fn si_log(pred: &Map, gt: &Map, mask: &Mask) -> Result<f64> {
    let pairs = masked_pairs(pred, gt, mask)?;
    let mut e = Vec::with_capacity(pairs.len());
    for &(p, g) in &pairs {
        if !(p > 0.0 && g > 0.0 && p.is_finite() && g.is_finite()) {
            return Err(Error::Domain(format!("non-positive depth pair ({p}, {g}) in si_log mask")));
        }
        e.push((p / g).ln());
    }
    let n = e.len() as f64;
    let mean = e.iter().sum::<f64>() / n;
    // two-pass form of mean(e^2) - mean(e)^2
    let var = e.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok(var.max(0.0).sqrt())
}

pub fn depth_report(pred: &Map, gt: &Map, mask: &Mask, slice: &str) -> Result<DepthMetricReport> {
    Ok(DepthMetricReport {
        abs_rel: abs_rel(pred, gt, mask)?,
        si_log: si_log(pred, gt, mask)?,
        pixel_count: mask.count(),
        slice: slice.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let gt = Map::from_fn(4, 4, |v, u| 5.0 + (v * 4 + u) as f64);
        let m = Mask::filled(4, 4, true);
        assert_eq!(abs_rel(&gt, &gt, &m).unwrap(), 0.0);
        assert_eq!(si_log(&gt, &gt, &m).unwrap(), 0.0);
    }

    #[test]
    fn ten_percent_over() {
        let gt = Map::from_fn(4, 4, |v, u| 5.0 + (v * 4 + u) as f64);
        let pred = gt.map(|g| 1.1 * g);
        let m = Mask::filled(4, 4, true);
        assert!((abs_rel(&pred, &gt, &m).unwrap() - 0.1).abs() < 1e-12);
        assert!(si_log(&pred, &gt, &m).unwrap() < 1e-12);
    }

    #[test]
    fn empty_mask_and_bad_depth() {
        let gt = Map::filled(2, 2, 3.0);
        assert!(matches!(abs_rel(&gt, &gt, &Mask::filled(2, 2, false)), Err(Error::Empty(_))));
        let mut bad = gt.clone();
        bad.set(0, 0, 0.0);
        let m = Mask::filled(2, 2, true);
        assert!(si_log(&bad, &gt, &m).is_err());
        assert!(abs_rel(&gt, &bad, &m).is_err());
    }
}
