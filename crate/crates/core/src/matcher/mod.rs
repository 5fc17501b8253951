//! Toy hierarchical match-density stereo network with separate foreground
//! and background density decoders.
//!
//! Levels are numbered from 1 (half resolution) to `L` (coarsest); every
//! per-level vector in this module stores the finest level first. Each
//! stream (foreground, background, or the single stream of the baseline)
//! runs its own coarse-to-fine refinement, so the foreground output never
//! depends on background decoder weights.

mod net;
mod ops;
mod train;

pub use net::{Bases, MatcherOutput, Prepared, StereoMatcher, Stream};
pub use ops::{
    build_cost_volume, density_to_residual, downsample_masks, extract_confidence, fuse_split_densities, kl_loss,
    level_disparity, point_cloud_loss, residual_support, residual_target, total_loss, DensityEmbedding,
    FeaturePyramid, LossWeights, MatchDensity, SplitMasks, KL_FLOOR,
};
pub use train::{train_matcher, write_curve_csv, CurveRow};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    /// Feature channels per level, finest first; its length is `L`.
    pub channels: Vec<usize>,
    /// Hypotheses are the integer offsets `-r..=r`, so `K = 2r + 1`.
    pub max_residual: usize,
    pub decoder_width: usize,
    pub embed_dim: usize,
    /// Starting disparity at the coarsest level, in that level's pixels.
    pub initial_disparity: f64,
    /// Fixed gain of the cost volume added straight onto the decoder logits.
    pub cost_skip: f64,
    /// Two decoders (foreground and background) instead of one.
    pub split: bool,
    pub pc_loss: bool,
    pub weights: LossWeights,
    /// Smooth-L1 transition of the point-cloud loss, meters.
    pub pc_beta: f64,
    /// Predicted disparities are clamped here before back-projection.
    pub min_disparity: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub flip_probability: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 24, 32],
            max_residual: 4,
            decoder_width: 16,
            embed_dim: 8,
            initial_disparity: 2.0,
            cost_skip: 4.0,
            split: true,
            pc_loss: true,
            weights: LossWeights::default(),
            pc_beta: 1.0,
            min_disparity: 0.5,
            steps: 300,
            batch_size: 1,
            learning_rate: 1e-3,
            flip_probability: 0.5,
        }
    }
}

impl MatcherConfig {
    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    pub fn hypotheses(&self) -> usize {
        2 * self.max_residual + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !self.cost_skip.is_finite() {
            return Err(Error::Config(format!("cost_skip {} must be finite", self.cost_skip)));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config(format!("matcher channels {:?} must be non-empty and positive", self.channels)));
        }
        if self.max_residual == 0 || self.decoder_width == 0 || self.embed_dim == 0 {
            return Err(Error::Config("max_residual, decoder_width and embed_dim must be positive".into()));
        }
        self.weights.validate()?;
        if !(self.pc_beta > 0.0) || !(self.min_disparity > 0.0) {
            return Err(Error::Config("pc_beta and min_disparity must be positive".into()));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config("batch_size and learning_rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::Config(format!("flip_probability {} outside [0, 1]", self.flip_probability)));
        }
        Ok(())
    }
}
