use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ops::{
    downsample_masks, extract_confidence, fuse_split_densities, level_disparity, residual_support, residual_target,
    total_loss, DensityEmbedding, FeaturePyramid, MatchDensity, SplitMasks,
};
use super::MatcherConfig;
use crate::error::{Error, Result};
use crate::geometry::disparity_to_point;
use crate::grid::{Image, Map, Mask};
use crate::nn::params::he_normal;
use crate::nn::{kernels, Bound, CloudTarget, Gradients, ParamStore, Tape, Tensor, Var};
use crate::sample::Sample;

const SLOPE: f64 = 0.1;
const NORM_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Fg,
    Bg,
    /// The only stream of the single-decoder baseline.
    Single,
}

impl Stream {
    pub fn key(self) -> &'static str {
        match self {
            Stream::Fg => "fg",
            Stream::Bg => "bg",
            Stream::Single => "single",
        }
    }
}

/// Base (pre-residual) estimates per stream and level, finest level first,
/// each in that level's pixels. Passing them back into the loss freezes the
/// coarse-to-fine chain, which makes the loss a smooth function of the
/// parameters for gradient checking.
#[derive(Clone, Debug, PartialEq)]
pub struct Bases(pub Vec<Vec<Vec<f64>>>);

#[derive(Clone, Debug)]
pub struct MatcherOutput {
    /// Full-resolution disparity.
    pub disparity: Map,
    /// Full-resolution confidence in `[0, 1]`.
    pub confidence: Map,
    /// Fused density per level.
    pub densities: Vec<MatchDensity>,
    /// Per stream, per level.
    pub stream_densities: Vec<Vec<MatchDensity>>,
    pub masks: SplitMasks,
    pub bases: Bases,
}

/// Loss inputs precomputed from one sample.
#[derive(Clone, Debug)]
pub struct Prepared {
    left: Tensor,
    right: Tensor,
    masks: SplitMasks,
    level_gt: Vec<(Map, Mask)>,
    cloud: CloudTarget,
}

struct StreamGraph {
    logits: Vec<Var>,
    p: Vec<Var>,
    base: Vec<Vec<f64>>,
    full: Var,
}

struct LossGraph {
    total: Var,
    fg: Var,
    bg: Var,
    pc: Option<Var>,
}

/// Matcher parameters plus the configuration that shapes them.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoMatcher {
    pub config: MatcherConfig,
    pub params: ParamStore,
}

pub(crate) fn image_tensor(img: &Image) -> Tensor {
    let (h, w) = img.shape();
    let hw = h * w;
    let mut data = vec![0.0; 3 * hw];
    for (q, px) in img.data().iter().enumerate() {
        for c in 0..3 {
            data[c * hw + q] = px[c] - 0.5;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

fn map_of(t: &Tensor) -> Map {
    let (_, h, w) = t.chw();
    Map::from_vec(h, w, t.data[..h * w].to_vec()).expect("single-channel tensor")
}

fn upsample_values(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    kernels::upsample2(x, 1, h, w).into_iter().map(|d| 2.0 * d).collect()
}

impl StereoMatcher {
    /// Fresh He-initialized parameters. Both split decoders start from the
    /// same values.
    pub fn new(config: MatcherConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut in_c = 3;
        for (li, &c) in config.channels.iter().enumerate() {
            let l = li + 1;
            params.insert(format!("backbone.{l}.a.w"), he_normal(vec![c, in_c, 3, 3], in_c * 9, 1.0, &mut rng));
            params.insert(format!("backbone.{l}.a.b"), Tensor::zeros(vec![c]));
            params.insert(format!("backbone.{l}.b.w"), he_normal(vec![c, c, 3, 3], c * 9, 1.0, &mut rng));
            params.insert(format!("backbone.{l}.b.b"), Tensor::zeros(vec![c]));
            in_c = c;
        }
        let (k, ce, hid) = (config.hypotheses(), config.embed_dim, config.decoder_width);
        let mut template = Vec::new();
        for (li, &c) in config.channels.iter().enumerate() {
            let l = li + 1;
            let inp = c + k + ce;
            for (j, (o, i, gain)) in [(hid, inp, 1.0), (hid, hid, 1.0), (k + ce, hid, 0.1)].into_iter().enumerate() {
                template.push((format!("{l}.{j}.w"), he_normal(vec![o, i, 3, 3], i * 9, gain, &mut rng)));
                template.push((format!("{l}.{j}.b"), Tensor::zeros(vec![o])));
            }
        }
        let m = Self { config, params };
        let mut params = m.params.clone();
        for s in m.streams() {
            for (key, t) in &template {
                params.insert(format!("decoder.{}.{key}", s.key()), t.clone());
            }
        }
        Ok(Self { params, ..m })
    }

    pub fn streams(&self) -> Vec<Stream> {
        if self.config.split {
            vec![Stream::Fg, Stream::Bg]
        } else {
            vec![Stream::Single]
        }
    }

    fn check_input(&self, left: &Image, right: &Image) -> Result<()> {
        left.check_same_shape(right, "right image")?;
        let (h, w) = left.shape();
        let f = 1usize << self.config.levels();
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::Shape(format!("{h}x{w} image is not divisible by 2^{}", self.config.levels())));
        }
        Ok(())
    }

    fn backbone(&self, tape: &mut Tape, bound: &Bound, img: Var) -> Vec<Var> {
        let mut x = img;
        let mut out = Vec::new();
        for l in 1..=self.config.levels() {
            let a = tape.conv2d(x, bound.var(&format!("backbone.{l}.a.w")), bound.var(&format!("backbone.{l}.a.b")));
            let a = tape.leaky_relu(a, SLOPE);
            let p = tape.avg_pool2(a);
            let b = tape.conv2d(p, bound.var(&format!("backbone.{l}.b.w")), bound.var(&format!("backbone.{l}.b.b")));
            x = tape.leaky_relu(b, SLOPE);
            out.push(tape.l2_normalize(x, NORM_EPS));
        }
        out
    }

    fn decode(&self, tape: &mut Tape, bound: &Bound, stream: Stream, l: usize, input: [Var; 3]) -> (Var, Var) {
        let k = self.config.hypotheses();
        let key = |j: usize, p: &str| format!("decoder.{}.{l}.{j}.{p}", stream.key());
        let mut x = tape.concat(&input);
        for j in 0..3 {
            x = tape.conv2d(x, bound.var(&key(j, "w")), bound.var(&key(j, "b")));
            if j < 2 {
                x = tape.leaky_relu(x, SLOPE);
            }
        }
        let mut logits = tape.slice_channels(x, 0, k);
        if self.config.cost_skip != 0.0 {
            let skip = tape.scale(input[1], self.config.cost_skip);
            logits = tape.add(logits, skip);
        }
        let emb = tape.slice_channels(x, k, self.config.embed_dim);
        (logits, emb)
    }

    fn stream_graph(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        stream: Stream,
        fl: &[Var],
        fr: &[Var],
        frozen: Option<&[Vec<f64>]>,
    ) -> StreamGraph {
        let levels = self.config.levels();
        let offsets = residual_support(self.config.max_residual);
        let (mut logits, mut ps, mut bases) = (Vec::new(), Vec::new(), Vec::new());
        let (_, hc, wc) = tape.value(fl[levels - 1]).chw();
        let mut base = vec![self.config.initial_disparity; hc * wc];
        let mut emb: Option<Var> = None;
        let mut d = None;
        for li in (0..levels).rev() {
            let (_, h, w) = tape.value(fl[li]).chw();
            if let Some(f) = frozen {
                base = f[li].clone();
            }
            let cost = tape.correlation(fl[li], fr[li], base.clone(), offsets.clone());
            let e_up = match emb {
                Some(e) => tape.upsample2(e),
                None => tape.leaf(Tensor::zeros(vec![self.config.embed_dim, h, w])),
            };
            let (lg, e) = self.decode(tape, bound, stream, li + 1, [fl[li], cost, e_up]);
            let p = tape.softmax(lg);
            let res = tape.expectation(p, offsets.clone());
            let b = tape.leaf(Tensor::new(vec![1, h, w], base.clone()));
            let dl = tape.add(res, b);
            logits.push(lg);
            ps.push(p);
            bases.push(std::mem::take(&mut base));
            if li > 0 {
                base = upsample_values(&tape.value(dl).data, h, w);
            }
            emb = Some(e);
            d = Some(dl);
        }
        logits.reverse();
        ps.reverse();
        bases.reverse();
        let up = tape.upsample2(d.expect("at least one level"));
        let full = tape.scale(up, 2.0);
        StreamGraph {
            logits,
            p: ps,
            base: bases,
            full,
        }
    }

    fn build(&self, tape: &mut Tape, left: &Tensor, right: &Tensor, frozen: Option<&Bases>) -> (Bound, Vec<StreamGraph>) {
        let bound = self.params.bind(tape);
        let l = tape.leaf(left.clone());
        let r = tape.leaf(right.clone());
        let fl = self.backbone(tape, &bound, l);
        let fr = self.backbone(tape, &bound, r);
        let graphs = self
            .streams()
            .into_iter()
            .enumerate()
            .map(|(si, s)| self.stream_graph(tape, &bound, s, &fl, &fr, frozen.map(|b| &b.0[si][..])))
            .collect();
        (bound, graphs)
    }

    /// Unit-normalized feature pyramid of both views.
    pub fn extract_pyramid(&self, left: &Image, right: &Image) -> Result<FeaturePyramid> {
        self.check_input(left, right)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let l = tape.leaf(image_tensor(left));
        let r = tape.leaf(image_tensor(right));
        let fl = self.backbone(&mut tape, &bound, l);
        let fr = self.backbone(&mut tape, &bound, r);
        Ok(FeaturePyramid {
            left: fl.iter().map(|&v| tape.value(v).clone()).collect(),
            right: fr.iter().map(|&v| tape.value(v).clone()).collect(),
        })
    }

    /// Runs one decoder on explicit inputs. `e_prev` must already be at this
    /// level's resolution; `None` stands for the zero embedding of the
    /// coarsest level.
    pub fn decode_density(
        &self,
        stream: Stream,
        level: usize,
        features: &Tensor,
        cost: &Tensor,
        e_prev: Option<&DensityEmbedding>,
    ) -> Result<(MatchDensity, DensityEmbedding)> {
        if !self.streams().contains(&stream) || level == 0 || level > self.config.levels() {
            return Err(Error::Config(format!("no {} decoder at level {level}", stream.key())));
        }
        let (_, h, w) = features.chw();
        let zeros = Tensor::zeros(vec![self.config.embed_dim, h, w]);
        let e = e_prev.map(|e| &e.e).unwrap_or(&zeros);
        if cost.chw() != (self.config.hypotheses(), h, w) || e.chw() != (self.config.embed_dim, h, w) {
            return Err(Error::Shape(format!("cost {:?} / embedding {:?} at a {h}x{w} level", cost.shape, e.shape)));
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let inputs = [tape.leaf(features.clone()), tape.leaf(cost.clone()), tape.leaf(e.clone())];
        let (logits, emb) = self.decode(&mut tape, &bound, stream, level, inputs);
        let p = tape.softmax(logits);
        let density = MatchDensity::new(tape.value(p).clone(), residual_support(self.config.max_residual))?;
        Ok((density, DensityEmbedding { e: tape.value(emb).clone() }))
    }

    /// Disparity and confidence for a stereo pair, given its full-resolution
    /// foreground mask.
    pub fn forward(&self, left: &Image, right: &Image, fg: &Mask) -> Result<MatcherOutput> {
        self.check_input(left, right)?;
        left.check_same_shape(fg, "foreground mask")?;
        let masks = downsample_masks(fg, self.config.levels())?;
        let mut tape = Tape::new();
        let (_, graphs) = self.build(&mut tape, &image_tensor(left), &image_tensor(right), None);
        let support = residual_support(self.config.max_residual);
        let stream_densities = graphs
            .iter()
            .map(|g| g.p.iter().map(|&p| MatchDensity::new(tape.value(p).clone(), support.clone())).collect())
            .collect::<Result<Vec<Vec<_>>>>()?;
        let (densities, disparity) = if self.config.split {
            let fused = (0..self.config.levels())
                .map(|li| fuse_split_densities(&stream_densities[0][li], &stream_densities[1][li], &masks.fg[li], &masks.bg[li]))
                .collect::<Result<Vec<_>>>()?;
            let (dfg, dbg) = (map_of(tape.value(graphs[0].full)), map_of(tape.value(graphs[1].full)));
            let disp = Map::from_fn(fg.height(), fg.width(), |v, u| if *fg.get(v, u) { *dfg.get(v, u) } else { *dbg.get(v, u) });
            (fused, disp)
        } else {
            (stream_densities[0].clone(), map_of(tape.value(graphs[0].full)))
        };
        let conf = extract_confidence(&densities[0]);
        let confidence = Map::from_fn(fg.height(), fg.width(), |v, u| *conf.get(v / 2, u / 2));
        Ok(MatcherOutput {
            disparity,
            confidence,
            densities,
            stream_densities,
            masks,
            bases: Bases(graphs.into_iter().map(|g| g.base).collect()),
        })
    }

    /// Builds the loss inputs of a sample with disparity and foreground mask.
    /// Pixels with disparity `<= 0` carry no supervision.
    pub fn prepare(&self, sample: &Sample) -> Result<Prepared> {
        sample.validate()?;
        self.check_input(&sample.left, &sample.right)?;
        let gt = sample.disparity.as_ref().ok_or_else(|| Error::Config("training sample has no disparity".into()))?;
        let fg = sample.fg_mask.as_ref().ok_or_else(|| Error::Config("training sample has no foreground mask".into()))?;
        let valid = gt.map(|&d| d > 0.0 && d.is_finite());
        let masks = downsample_masks(fg, self.config.levels())?;
        let level_gt = (0..self.config.levels())
            .map(|li| level_disparity(gt, &valid, fg, &masks.fg[li], li + 1))
            .collect();
        let (mut pixels, mut points) = (Vec::new(), Vec::new());
        for v in 0..gt.height() {
            for u in 0..gt.width() {
                if *fg.get(v, u) && *valid.get(v, u) {
                    pixels.push((v, u));
                    points.push(disparity_to_point(u as f64, v as f64, *gt.get(v, u), &sample.rig)?);
                }
            }
        }
        Ok(Prepared {
            left: image_tensor(&sample.left),
            right: image_tensor(&sample.right),
            masks,
            level_gt,
            cloud: CloudTarget {
                pixels,
                points,
                rig: sample.rig.as_array(),
                beta: self.config.pc_beta,
                min_disparity: self.config.min_disparity,
            },
        })
    }

    fn loss_graph(&self, tape: &mut Tape, prep: &Prepared, frozen: Option<&Bases>) -> (Bound, Vec<StreamGraph>, LossGraph) {
        let (bound, graphs) = self.build(tape, &prep.left, &prep.right, frozen);
        let r = self.config.max_residual;
        let mut kls = Vec::new();
        for (g, s) in graphs.iter().zip(self.streams()) {
            let mut terms = Vec::new();
            for (li, (gt, ok)) in prep.level_gt.iter().enumerate() {
                let resid: Vec<f64> = (0..gt.len())
                    .map(|q| if ok.data()[q] { gt.data()[q] - g.base[li][q] } else { 0.0 })
                    .collect();
                let mask = (0..gt.len())
                    .map(|q| {
                        ok.data()[q]
                            && match s {
                                Stream::Fg => prep.masks.fg[li].data()[q],
                                Stream::Bg => prep.masks.bg[li].data()[q],
                                Stream::Single => true,
                            }
                    })
                    .collect();
                terms.push((tape.kl_logits(g.logits[li], residual_target(&resid, r), mask), 1.0));
            }
            kls.push(tape.weighted_sum(&terms));
        }
        let pc = self.config.pc_loss.then(|| tape.cloud_loss(graphs[0].full, prep.cloud.clone()));
        let w = self.config.weights;
        let (fg, bg) = if self.config.split { (kls[0], kls[1]) } else { (kls[0], kls[0]) };
        let mut terms = if self.config.split {
            vec![(fg, w.lambda_f), (bg, 1.0 - w.lambda_f)]
        } else {
            vec![(fg, 1.0)]
        };
        if let Some(pc) = pc {
            terms.push((pc, w.alpha));
        }
        let total = tape.weighted_sum(&terms);
        (bound, graphs, LossGraph { total, fg, bg, pc })
    }

    fn components(&self, tape: &Tape, lg: &LossGraph) -> Result<[f64; 4]> {
        let (l_fg, l_bg) = (tape.value(lg.fg).item(), tape.value(lg.bg).item());
        let l_pc = lg.pc.map(|v| tape.value(v).item()).unwrap_or(0.0);
        let mut w = self.config.weights;
        if !self.config.pc_loss {
            w.alpha = 0.0;
        }
        let total = total_loss(l_fg, l_bg, l_pc, &w)?;
        Ok([total, l_fg, l_bg, l_pc])
    }

    /// `[total, L_fg, L_bg, L_pc]`. For the single-decoder baseline both KL
    /// slots hold the one stream's KL over all pixels.
    pub fn loss(&self, prep: &Prepared, frozen: Option<&Bases>) -> Result<[f64; 4]> {
        let mut tape = Tape::new();
        let (_, _, lg) = self.loss_graph(&mut tape, prep, frozen);
        self.components(&tape, &lg)
    }

    /// Loss components and the gradient of the total with respect to every
    /// parameter. Bases are treated as constants.
    pub fn gradient(&self, prep: &Prepared, frozen: Option<&Bases>) -> Result<([f64; 4], ParamStore)> {
        let mut tape = Tape::new();
        let (bound, _, lg) = self.loss_graph(&mut tape, prep, frozen);
        let parts = self.components(&tape, &lg)?;
        let grads: Gradients = tape.backward(lg.total);
        let mut g = self.params.zeros_like();
        g.accumulate(&bound, &grads, 1.0);
        Ok((parts, g))
    }

    /// The bases the unfrozen chain produces for `prep`.
    pub fn bases(&self, prep: &Prepared) -> Bases {
        let mut tape = Tape::new();
        let (_, graphs) = self.build(&mut tape, &prep.left, &prep.right, None);
        Bases(graphs.into_iter().map(|g| g.base).collect())
    }

    /// Parameters with every convolution kernel mirrored left-right.
    pub fn mirrored(&self) -> StereoMatcher {
        let mut out = self.clone();
        for key in self.params.keys() {
            let t = self.params.expect(key);
            if t.shape.len() == 4 {
                let (o, c, kh, kw) = (t.shape[0], t.shape[1], t.shape[2], t.shape[3]);
                let m = Tensor::new(vec![o * c, kh, kw], t.data.clone()).mirrored_w();
                out.params.insert(key.clone(), Tensor::new(t.shape.clone(), m.data));
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut manifest = BTreeMap::new();
        manifest.insert("model".to_string(), serde_json::json!("stereo_matcher"));
        manifest.insert("levels".to_string(), serde_json::json!(self.config.levels()));
        manifest.insert("channels".to_string(), serde_json::json!(self.config.channels));
        manifest.insert("hypotheses".to_string(), serde_json::json!(self.config.hypotheses()));
        manifest.insert("split".to_string(), serde_json::json!(self.config.split));
        manifest.insert(
            "config".to_string(),
            serde_json::to_value(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?,
        );
        self.params.save(path, &manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, manifest) = ParamStore::load(path)?;
        if manifest.get("model").and_then(|m| m.as_str()) != Some("stereo_matcher") {
            return Err(Error::Checkpoint(format!("{} is not a stereo matcher checkpoint", path.display())));
        }
        let config: MatcherConfig = manifest
            .get("config")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("manifest has no config".into()))
            .and_then(|c| serde_json::from_value(c).map_err(|e| Error::Checkpoint(e.to_string())))?;
        let fresh = StereoMatcher::new(config.clone(), 0)?;
        for (key, t) in fresh.params.iter() {
            match params.get(key) {
                Some(p) if p.shape == t.shape => {}
                _ => return Err(Error::Checkpoint(format!("parameter `{key}` missing or misshapen"))),
            }
        }
        if params.len() != fresh.params.len() {
            return Err(Error::Checkpoint("unexpected extra parameters".into()));
        }
        Ok(Self { config, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraRig;
    use crate::grid::Grid;

    fn tiny_config(split: bool) -> MatcherConfig {
        MatcherConfig {
            channels: vec![4, 5, 6],
            max_residual: 2,
            decoder_width: 4,
            embed_dim: 3,
            initial_disparity: 0.5,
            split,
            ..MatcherConfig::default()
        }
    }

    fn tiny_sample(h: usize, w: usize) -> Sample {
        let tex = |v: usize, u: usize| {
            let x = u as f64 * 0.9 + v as f64 * 0.37;
            [0.5 + 0.4 * x.sin(), 0.5 + 0.3 * (1.7 * x).cos(), 0.5 + 0.2 * (0.3 * x + v as f64).sin()]
        };
        let disp = Map::from_fn(h, w, |v, u| if (2..6).contains(&v) && (4..10).contains(&u) { 3.0 } else { 1.0 + 0.1 * v as f64 });
        let left = Image::from_fn(h, w, |v, u| tex(v, u));
        let right = Image::from_fn(h, w, |v, u| tex(v, (u + 2).min(w - 1)));
        let fg = Mask::from_fn(h, w, |v, u| (2..6).contains(&v) && (4..10).contains(&u));
        Sample {
            left,
            right,
            rig: CameraRig::new((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, 10.0, 10.0, 0.5).unwrap(),
            disparity: Some(disp),
            right_disparity: None,
            labels: None,
            fg_mask: Some(fg),
            right_fg_mask: None,
        }
    }

    #[test]
    fn untrained_outputs_are_normalized() {
        for split in [true, false] {
            let m = StereoMatcher::new(tiny_config(split), 1).unwrap();
            let s = tiny_sample(16, 32);
            let out = m.forward(&s.left, &s.right, s.fg_mask.as_ref().unwrap()).unwrap();
            assert_eq!(out.densities.len(), 3);
            assert_eq!(out.densities[2].p.chw(), (5, 2, 4));
            assert!(out.confidence.data().iter().all(|c| (0.0..=1.0).contains(c)));
            assert!(out.disparity.data().iter().all(|d| d.is_finite()));
        }
    }

    #[test]
    fn split_decoders_start_identical() {
        let m = StereoMatcher::new(tiny_config(true), 3).unwrap();
        for key in m.params.keys().filter(|k| k.starts_with("decoder.fg.")) {
            assert_eq!(m.params.expect(key), m.params.expect(&key.replace(".fg.", ".bg.")));
        }
        let s = tiny_sample(16, 32);
        let out = m.forward(&s.left, &s.right, s.fg_mask.as_ref().unwrap()).unwrap();
        assert_eq!(out.stream_densities[0], out.stream_densities[1]);
    }

    #[test]
    fn background_weights_cannot_reach_foreground() {
        let m = StereoMatcher::new(tiny_config(true), 4).unwrap();
        let mut p = m.clone();
        for key in m.params.keys().filter(|k| k.starts_with("decoder.bg.")) {
            for x in &mut p.params.get_mut(key).unwrap().data {
                *x += 0.3;
            }
        }
        let s = tiny_sample(16, 32);
        let fg = s.fg_mask.as_ref().unwrap();
        let a = m.forward(&s.left, &s.right, fg).unwrap();
        let b = p.forward(&s.left, &s.right, fg).unwrap();
        for li in 0..3 {
            let f = &a.masks.fg[li];
            for v in 0..f.height() {
                for u in 0..f.width() {
                    if *f.get(v, u) {
                        assert_eq!(a.densities[li].at(v, u), b.densities[li].at(v, u));
                    }
                }
            }
        }
        assert_eq!(a.stream_densities[0], b.stream_densities[0]);
        assert_ne!(a.stream_densities[1], b.stream_densities[1]);
    }

    #[test]
    fn backbone_is_mirror_equivariant() {
        let m = StereoMatcher::new(tiny_config(true), 5).unwrap();
        let s = tiny_sample(16, 32);
        let a = m.extract_pyramid(&s.left, &s.right).unwrap();
        let b = m.mirrored().extract_pyramid(&s.left.mirrored(), &s.right.mirrored()).unwrap();
        for li in 0..3 {
            let want = a.left[li].mirrored_w();
            for (x, y) in want.data.iter().zip(&b.left[li].data) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let same = m.extract_pyramid(&s.left, &s.left).unwrap();
        assert_eq!(same.left, same.right);
    }

    fn check_gradient(config: MatcherConfig) {
        let m = StereoMatcher::new(config, 7).unwrap();
        let s = tiny_sample(8, 16);
        let prep = m.prepare(&s).unwrap();
        let frozen = m.bases(&prep);
        let (_, g) = m.gradient(&prep, Some(&frozen)).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (key, t) in m.params.iter() {
            for i in 0..t.len() {
                let eval = |delta: f64| {
                    let mut p = m.clone();
                    p.params.get_mut(key).unwrap().data[i] += delta;
                    p.loss(&prep, Some(&frozen)).unwrap()[0]
                };
                // Richardson step removes the h^2 term of the central difference
                let central = |h: f64| (eval(h) - eval(-h)) / (2.0 * h);
                let numeric = (4.0 * central(h / 2.0) - central(h)) / 3.0;
                let analytic = g.expect(key).data[i];
                let rel = (analytic - numeric).abs() / (analytic.abs().max(numeric.abs()).max(1e-5));
                worst = worst.max(rel);
                assert!(rel < 1e-4, "{key}[{i}]: analytic {analytic} numeric {numeric}");
            }
        }
        assert!(worst < 1e-4);
    }

    #[test]
    fn split_loss_gradient_matches_finite_differences() {
        check_gradient(tiny_config(true));
    }

    #[test]
    fn baseline_loss_gradient_matches_finite_differences() {
        check_gradient(MatcherConfig {
            pc_loss: false,
            ..tiny_config(false)
        });
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = StereoMatcher::new(tiny_config(true), 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        assert_eq!(StereoMatcher::load(&path).unwrap(), m);
    }

    #[test]
    fn rejects_indivisible_images() {
        let m = StereoMatcher::new(tiny_config(true), 1).unwrap();
        let img: Image = Grid::filled(12, 32, [0.5; 3]);
        assert!(matches!(m.extract_pyramid(&img, &img), Err(Error::Shape(_))));
    }
}
