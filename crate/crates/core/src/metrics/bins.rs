use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Map, Mask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Quartiles of `|error|`; `None` when the bin is empty.
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBinTable {
    pub bin_width: f64,
    pub bins: Vec<ConfidenceBin>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + f * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Index of the bin holding confidence `c`; the top bin is closed at 1.
pub fn bin_index(c: f64, n_bins: usize) -> usize {
    ((c * n_bins as f64).floor() as usize).min(n_bins - 1)
}

pub fn confidence_error_bins(confidence: &Map, error: &Map, mask: &Mask, bin_width: f64) -> Result<ConfidenceBinTable> {
    confidence.check_same_shape(error, "confidence bins error map")?;
    confidence.check_same_shape(mask, "confidence bins mask")?;
    let n_bins = (1.0 / bin_width).round() as usize;
    if n_bins == 0 || ((n_bins as f64) * bin_width - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("bin width {bin_width} does not divide [0, 1]")));
    }
    if mask.count() == 0 {
        return Err(Error::Empty("confidence bins mask selects no pixels".into()));
    }
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    for ((c, e), m) in confidence.data().iter().zip(error.data()).zip(mask.data()) {
        if !*m {
            continue;
        }
        if !(0.0..=1.0).contains(c) {
            return Err(Error::Domain(format!("confidence {c} outside [0, 1]")));
        }
        buckets[bin_index(*c, n_bins)].push(e.abs());
    }
    let bins = buckets
        .into_iter()
        .enumerate()
        .map(|(i, mut v)| {
            v.sort_by(f64::total_cmp);
            let q = |p| (!v.is_empty()).then(|| quantile_sorted(&v, p));
            ConfidenceBin {
                lo: i as f64 / n_bins as f64,
                hi: (i + 1) as f64 / n_bins as f64,
                count: v.len(),
                q1: q(0.25),
                median: q(0.5),
                q3: q(0.75),
            }
        })
        .collect();
    Ok(ConfidenceBinTable { bin_width, bins })
}

impl ConfidenceBinTable {
    /// Medians of the `k` highest-confidence bins with at least `min_count`
    /// samples, lowest confidence first.
    pub fn top_medians(&self, k: usize, min_count: usize) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = self
            .bins
            .iter()
            .rev()
            .filter(|b| b.count >= min_count)
            .take(k)
            .map(|b| (b.lo, b.median.unwrap_or(f64::NAN)))
            .collect();
        out.reverse();
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lo,hi,count,q1,median,q3\n");
        let f = |x: Option<f64>| x.map_or_else(String::new, |v| v.to_string());
        for b in &self.bins {
            s.push_str(&format!("{},{},{},{},{},{}\n", b.lo, b.hi, b.count, f(b.q1), f(b.median), f(b.q3)));
        }
        s
    }
}
