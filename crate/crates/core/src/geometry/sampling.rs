use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ConfidencePointCloud;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsampleParams {
    pub n_total: usize,
    pub depth_threshold: f64,
}

impl Default for SubsampleParams {
    fn default() -> Self {
        Self {
            n_total: 16384,
            depth_threshold: 20.0,
        }
    }
}

/// Depth-stratified subsampling to exactly `n_total` rows.
///
/// Half of the output comes from points beyond `depth_threshold` when there
/// are enough of them. A short far stratum is taken whole and the near one
/// fills the rest; a short near stratum is taken whole and padded with
/// repeats of itself, so the far share stays at half. An empty stratum
/// leaves everything to the other. When the whole cloud has fewer than
/// `n_total` points every row appears at least once and the repeats are
/// drawn so the far stratum gets as close to half as it can.
pub fn subsample_cloud(
    cloud: &ConfidencePointCloud,
    params: &SubsampleParams,
    seed: u64,
) -> Result<ConfidencePointCloud> {
    let n = params.n_total;
    if n == 0 || n % 2 != 0 {
        return Err(Error::Config(format!("n_total must be even and positive, got {n}")));
    }
    if cloud.is_empty() {
        return Err(Error::Empty("cannot subsample an empty cloud".into()));
    }
    let (far, near): (Vec<usize>, Vec<usize>) =
        (0..cloud.len()).partition(|&i| cloud.points[i][2] > params.depth_threshold);
    let half = n / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(n);

    if cloud.len() >= n {
        let far_take = if near.is_empty() { n } else { half.min(far.len()) };
        let near_take = n - far_take;
        picked.extend(sample(&mut rng, far.len(), far_take).into_iter().map(|i| far[i]));
        if near_take <= near.len() {
            picked.extend(sample(&mut rng, near.len(), near_take).into_iter().map(|i| near[i]));
        } else {
            // short near stratum: all of it, then repeats
            picked.extend(near.iter().copied());
            picked.extend((near.len()..near_take).map(|_| near[rng.gen_range(0..near.len())]));
        }
    } else {
        picked.extend(0..cloud.len());
        let extra = n - cloud.len();
        let far_extra = if near.is_empty() {
            extra
        } else if far.is_empty() {
            0
        } else {
            extra.min(half.saturating_sub(far.len()))
        };
        picked.extend((0..far_extra).map(|_| far[rng.gen_range(0..far.len())]));
        picked.extend((far_extra..extra).map(|_| near[rng.gen_range(0..near.len())]));
    }
    picked.shuffle(&mut rng);
    Ok(cloud.select(&picked))
}
