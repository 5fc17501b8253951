//! Named parameter storage, Adam updates and the checkpoint container.
//!
//! Checkpoints are a single JSON document:
//!
//! ```text
//! {
//!   "format": "splitstereo-checkpoint",
//!   "version": 1,
//!   "manifest": { ...model-specific key/value pairs... },
//!   "arrays": { "<key>": { "shape": [..], "data": [..] }, ... }
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so save/load is lossless.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "splitstereo-checkpoint";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    arrays: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, t: Tensor) {
        self.arrays.insert(key.into(), t);
    }

    pub fn get(&self, key: &str) -> Option<&Tensor> {
        self.arrays.get(key)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut Tensor> {
        self.arrays.get_mut(key)
    }

    pub fn expect(&self, key: &str) -> &Tensor {
        self.arrays
            .get(key)
            .unwrap_or_else(|| panic!("missing parameter `{key}`"))
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.arrays.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.arrays.iter()
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.arrays.values().map(Tensor::len).sum()
    }

    /// Registers every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .arrays
            .iter()
            .map(|(k, t)| (k.clone(), tape.leaf(t.clone())))
            .collect();
        Bound { vars }
    }

    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            arrays: self
                .arrays
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape.clone())))
                .collect(),
        }
    }

    /// Accumulates `scale * grad` for every bound parameter that received a
    /// gradient.
    pub fn accumulate(&mut self, bound: &Bound, grads: &Gradients, scale: f64) {
        for (k, &v) in &bound.vars {
            if let (Some(g), Some(t)) = (grads.get(v), self.arrays.get_mut(k)) {
                for (a, b) in t.data.iter_mut().zip(g) {
                    *a += scale * b;
                }
            }
        }
    }

    pub fn save(&self, path: &Path, manifest: &BTreeMap<String, serde_json::Value>) -> Result<()> {
        let doc = CheckpointDoc {
            format: CHECKPOINT_FORMAT.to_string(),
            version: 1,
            manifest: manifest.clone(),
            arrays: self.arrays.clone(),
        };
        let text = serde_json::to_string(&doc).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(ParamStore, BTreeMap<String, serde_json::Value>)> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: CheckpointDoc =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format `{}`", doc.format)));
        }
        for (k, t) in &doc.arrays {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Checkpoint(format!("array `{k}` does not match its shape")));
            }
        }
        Ok((ParamStore { arrays: doc.arrays }, doc.manifest))
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    version: u32,
    manifest: BTreeMap<String, serde_json::Value>,
    arrays: BTreeMap<String, Tensor>,
}

/// Parameters registered on one tape.
pub struct Bound {
    pub vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, key: &str) -> Var {
        *self
            .vars
            .get(key)
            .unwrap_or_else(|| panic!("missing parameter `{key}`"))
    }
}

/// He-normal initialized tensor with `fan_in` inputs.
pub fn he_normal(shape: Vec<usize>, fan_in: usize, gain: f64, rng: &mut impl Rng) -> Tensor {
    let std = gain * (2.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape, data)
}

/// Adam with a piecewise-constant learning-rate multiplier.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: ParamStore,
    v: ParamStore,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore, lr_scale: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let lr = self.lr * lr_scale;
        for (k, g) in grads.iter() {
            let (Some(p), Some(m), Some(v)) = (params.arrays.get_mut(k), self.m.arrays.get_mut(k), self.v.arrays.get_mut(k))
            else {
                continue;
            };
            for i in 0..g.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Learning-rate multiplier that halves at 50%, 75% and 87.5% of training.
pub fn step_decay(step: usize, total: usize) -> f64 {
    let frac = step as f64 / total.max(1) as f64;
    let mut s = 1.0;
    for milestone in [0.5, 0.75, 0.875] {
        if frac >= milestone {
            s *= 0.5;
        }
    }
    s
}
