use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::StereoMatcher;
use super::MatcherConfig;
use crate::error::{Error, Result};
use crate::nn::{step_decay, Adam, ParamStore};
use crate::sample::Sample;

/// One optimizer step of the training curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub loss: f64,
    pub l_fg: f64,
    pub l_bg: f64,
    pub l_pc: f64,
    pub lr: f64,
}

/// Trains a matcher from scratch on samples with disparity and foreground
/// masks. `init_seed` fixes the weights, `sampling_seed` the sample order and
/// the flips.
pub fn train_matcher(
    config: MatcherConfig,
    data: &[Sample],
    init_seed: u64,
    sampling_seed: u64,
) -> Result<(StereoMatcher, Vec<CurveRow>)> {
    if data.is_empty() {
        return Err(Error::Empty("no training samples for the matcher".into()));
    }
    let mut model = StereoMatcher::new(config, init_seed)?;
    let cfg = model.config.clone();
    let mut adam = Adam::new(&model.params, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(sampling_seed);
    let mut order: Vec<usize> = Vec::new();
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut grads: Option<ParamStore> = None;
        let mut sums = [0.0; 4];
        for _ in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
            }
            let sample = &data[order.pop().expect("refilled above")];
            let prep = if rng.gen::<f64>() < cfg.flip_probability {
                model.prepare(&sample.flipped())?
            } else {
                model.prepare(sample)?
            };
            let (parts, g) = model.gradient(&prep, None).map_err(|e| match e {
                Error::NonFiniteComponent(what) => Error::Diverged { step, what: what.into() },
                other => other,
            })?;
            for (s, p) in sums.iter_mut().zip(parts) {
                *s += p / cfg.batch_size as f64;
            }
            match &mut grads {
                None => grads = Some(g),
                Some(acc) => {
                    for (key, t) in g.iter() {
                        let a = acc.get_mut(key).expect("same keys");
                        for (x, y) in a.data.iter_mut().zip(&t.data) {
                            *x += y;
                        }
                    }
                }
            }
        }
        let mut grads = grads.expect("batch_size >= 1");
        let scale = 1.0 / cfg.batch_size as f64;
        for key in grads.keys().cloned().collect::<Vec<_>>() {
            let t = grads.get_mut(&key).expect("listed key");
            for x in &mut t.data {
                *x *= scale;
            }
            if t.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::Diverged { step, what: format!("gradient of `{key}`") });
            }
        }
        let lr_scale = step_decay(step, cfg.steps);
        adam.step(&mut model.params, &grads, lr_scale);
        curve.push(CurveRow {
            step,
            loss: sums[0],
            l_fg: sums[1],
            l_bg: sums[2],
            l_pc: sums[3],
            lr: cfg.learning_rate * lr_scale,
        });
        if step % 50 == 0 {
            log::info!("matcher step {step}: loss {:.4}", sums[0]);
        }
    }
    Ok((model, curve))
}

pub fn write_curve_csv(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut s = String::from("step,loss,l_fg,l_bg,l_pc,lr\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{},{}\n", r.step, r.loss, r.l_fg, r.l_bg, r.l_pc, r.lr));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, SceneConfig};

    #[test]
    fn short_training_is_deterministic_and_reduces_loss() {
        let scene = SceneConfig {
            image_size: (32, 64),
            n_objects: 3,
            depth_range: (8.0, 30.0),
            ..SceneConfig::default()
        };
        let rig = crate::geometry::CameraRig::new(31.5, 15.5, 50.0, 50.0, 0.5).unwrap();
        let data: Vec<Sample> = (0..4).map(|s| Sample::from(&generate_scene(&scene, &rig, s).unwrap())).collect();
        let cfg = MatcherConfig {
            steps: 40,
            ..MatcherConfig::default()
        };
        let (a, curve) = train_matcher(cfg.clone(), &data, 1, 2).unwrap();
        let (b, _) = train_matcher(cfg, &data, 1, 2).unwrap();
        assert_eq!(a, b);
        let head: f64 = curve[..10].iter().map(|r| r.loss).sum();
        let tail: f64 = curve[30..].iter().map(|r| r.loss).sum();
        assert!(tail < head, "loss did not drop: {head} -> {tail}");
        assert_eq!(curve[39].lr, 1e-3 * 0.125);
    }
}
