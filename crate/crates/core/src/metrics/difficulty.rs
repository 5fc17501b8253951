use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Difficulty::Easy),
            "moderate" => Ok(Difficulty::Moderate),
            "hard" => Ok(Difficulty::Hard),
            _ => Err(Error::UnknownDifficulty(s.to_string())),
        }
    }
}

/// Per-bucket limits, indexed easy/moderate/hard. The defaults are the KITTI
/// constants for 375-pixel-high images.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifficultyThresholds {
    pub min_height: [f64; 3],
    pub max_occlusion: [u8; 3],
    pub max_truncation: [f64; 3],
}

impl Default for DifficultyThresholds {
    fn default() -> Self {
        Self {
            min_height: [40.0, 25.0, 25.0],
            max_occlusion: [0, 1, 2],
            max_truncation: [0.15, 0.30, 0.50],
        }
    }
}

impl DifficultyThresholds {
    /// Height limits rescaled for an image of `image_height` rows.
    pub fn for_image_height(image_height: usize) -> Self {
        let mut t = Self::default();
        let s = image_height as f64 / 375.0;
        for h in &mut t.min_height {
            *h *= s;
        }
        t
    }
}

/// The easiest bucket whose limits the box meets; anything that misses all
/// three (including missing attributes, signalled by NaN) lands in `Hard`.
pub fn assign_difficulty(bbox_height: f64, occlusion: u8, truncation: f64, t: &DifficultyThresholds) -> Difficulty {
    for (i, d) in Difficulty::ALL.iter().enumerate() {
        if bbox_height >= t.min_height[i] && occlusion <= t.max_occlusion[i] && truncation <= t.max_truncation[i] {
            return *d;
        }
    }
    Difficulty::Hard
}
