use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{AblationFlags, PipelineConfig};
use super::data::{class_mask, cloud_from_estimate, ground_truths, load_dataset};
use super::report;
use crate::boxes::{Box3D, ObjectClass};
use crate::detector::{train_detector, write_detector_curve_csv, DetectorCurveRow, DetectorScene, PointDetector};
use crate::error::{Error, Result};
use crate::geometry::ConfidencePointCloud;
use crate::grid::{Map, Mask};
use crate::matcher::{train_matcher, write_curve_csv, CurveRow, StereoMatcher};
use crate::metrics::{ap_reports, confidence_error_bins, depth_report, APReport, ConfidenceBinTable, DepthMetricReport, Difficulty, GroundTruth};
use crate::sample::Sample;

/// Validation clouds draw their subsampling seeds from a range disjoint from
/// the training ones.
const EVAL_SEED_OFFSET: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Models {
    pub matcher: StereoMatcher,
    pub car: PointDetector,
    pub ped_cyc: Option<PointDetector>,
}

impl Models {
    fn detectors(&self) -> impl Iterator<Item = &PointDetector> {
        std::iter::once(&self.car).chain(self.ped_cyc.as_ref())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointPaths {
    pub matcher: PathBuf,
    pub car: PathBuf,
    pub ped_cyc: PathBuf,
}

impl CheckpointPaths {
    pub fn under(output_dir: &Path) -> Self {
        let dir = output_dir.join("checkpoints");
        Self {
            matcher: dir.join("matcher.json"),
            car: dir.join("detector_car.json"),
            ped_cyc: dir.join("detector_ped_cyc.json"),
        }
    }

    pub fn save(&self, m: &Models) -> Result<()> {
        m.matcher.save(&self.matcher)?;
        m.car.save(&self.car)?;
        if let Some(d) = &m.ped_cyc {
            d.save(&self.ped_cyc)?;
        }
        Ok(())
    }

    /// The pedestrian/cyclist model is optional; the other two are not.
    pub fn load(&self) -> Result<Models> {
        Ok(Models {
            matcher: StereoMatcher::load(&self.matcher)?,
            car: PointDetector::load(&self.car)?,
            ped_cyc: if self.ped_cyc.exists() { Some(PointDetector::load(&self.ped_cyc)?) } else { None },
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainCurves {
    pub matcher: Vec<CurveRow>,
    pub car: Vec<DetectorCurveRow>,
    pub ped_cyc: Option<Vec<DetectorCurveRow>>,
}

fn cloud_seed(base: u64, frame: usize) -> u64 {
    base.wrapping_add(frame as u64)
}

/// Detector training scenes from the matcher's estimates on `data`.
/// Frames whose cloud comes out empty are skipped.
pub fn detector_scenes(cfg: &PipelineConfig, matcher: &StereoMatcher, data: &[Sample], n_points: usize) -> Result<Vec<DetectorScene>> {
    let mut out = Vec::with_capacity(data.len());
    for (i, s) in data.iter().enumerate() {
        let fg = s.fg_mask.as_ref().ok_or_else(|| Error::Empty(format!("training frame {i} has no foreground mask")))?;
        let est = matcher.forward(&s.left, &s.right, fg)?;
        let cloud = cloud_from_estimate(&est.disparity, &est.confidence, fg, cfg, n_points, &s.rig, cloud_seed(cfg.seeds.sampling, i))?;
        if cloud.is_empty() {
            log::warn!("training frame {i} produced no points");
            continue;
        }
        out.push(DetectorScene {
            cloud,
            boxes: s.labels.clone().unwrap_or_default(),
        });
    }
    Ok(out)
}

fn train_one_detector(
    cfg: &PipelineConfig,
    dcfg: crate::detector::DetectorConfig,
    matcher: &StereoMatcher,
    data: &[Sample],
) -> Result<(PointDetector, Vec<DetectorCurveRow>)> {
    let scenes = detector_scenes(cfg, matcher, data, dcfg.n_input_points)?;
    train_detector(dcfg, &scenes, cfg.seeds.detector_init, cfg.seeds.sampling)
}

/// Trains the detectors on top of a trained matcher.
pub fn train_detectors(cfg: &PipelineConfig, matcher: &StereoMatcher, data: &[Sample]) -> Result<(PointDetector, Option<PointDetector>, Vec<DetectorCurveRow>, Option<Vec<DetectorCurveRow>>)> {
    log::info!("training car detector");
    let (car, car_curve) = train_one_detector(cfg, cfg.car_detector_config(), matcher, data)?;
    if !cfg.train_ped_cyc {
        return Ok((car, None, car_curve, None));
    }
    log::info!("training pedestrian/cyclist detector");
    let (pc, pc_curve) = train_one_detector(cfg, cfg.ped_cyc_detector_config(), matcher, data)?;
    Ok((car, Some(pc), car_curve, Some(pc_curve)))
}

/// Matcher first, then the detectors on its clouds.
pub fn train_models(cfg: &PipelineConfig, data: &[Sample]) -> Result<(Models, TrainCurves)> {
    log::info!("training matcher on {} frames", data.len());
    let (matcher, m_curve) = train_matcher(cfg.matcher_config(), data, cfg.seeds.matcher_init, cfg.seeds.sampling)?;
    let (car, ped_cyc, car_curve, pc_curve) = train_detectors(cfg, &matcher, data)?;
    Ok((
        Models { matcher, car, ped_cyc },
        TrainCurves {
            matcher: m_curve,
            car: car_curve,
            ped_cyc: pc_curve,
        },
    ))
}

fn write_curves(dir: &Path, c: &TrainCurves) -> Result<Vec<PathBuf>> {
    let mut paths = vec![dir.join("matcher.csv"), dir.join("detector_car.csv")];
    write_curve_csv(&paths[0], &c.matcher)?;
    write_detector_curve_csv(&paths[1], &c.car)?;
    if let Some(pc) = &c.ped_cyc {
        let p = dir.join("detector_ped_cyc.csv");
        write_detector_curve_csv(&p, pc)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Loads the dataset, trains everything and writes checkpoints, loss curves
/// and the effective config under the output directory. Returns the written
/// paths.
pub fn train_pipeline(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let (train, _) = load_dataset(cfg)?;
    let (models, curves) = train_models(cfg, &train)?;
    let ck = CheckpointPaths::under(&cfg.output_dir);
    ck.save(&models)?;
    let mut paths = vec![ck.matcher, ck.car];
    if models.ped_cyc.is_some() {
        paths.push(ck.ped_cyc);
    }
    paths.extend(write_curves(&cfg.output_dir.join("curves"), &curves)?);
    let config_path = cfg.output_dir.join("config.toml");
    cfg.save(&config_path)?;
    paths.push(config_path);
    Ok(paths)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Foreground pixels beyond the configured depth; `None` when the split
    /// has no such pixel.
    pub depth: Option<DepthMetricReport>,
    pub bins: ConfidenceBinTable,
    pub ap: Vec<APReport>,
    pub detections: Vec<Vec<Box3D>>,
}

impl EvalReport {
    pub fn ap(&self, class: ObjectClass, difficulty: Difficulty, iou: f64, recall_positions: usize) -> Option<&APReport> {
        self.ap.iter().find(|r| {
            r.class == class && r.difficulty == difficulty && r.iou_threshold == iou && r.recall_positions == recall_positions
        })
    }
}

/// Depth and confidence statistics of one matcher on labelled frames. The
/// confidence bins cover car pixels only.
#[derive(Clone, Debug, PartialEq)]
pub struct MatcherEval {
    pub depth: Option<DepthMetricReport>,
    pub bins: ConfidenceBinTable,
}

/// Whether left pixel `(v, u)` with true disparity `d` is visible in the
/// right image: its match lies inside the image and, when the right-view
/// disparity is known, agrees with it to within a pixel.
pub fn has_correspondence(s: &Sample, v: usize, u: usize, d: f64) -> bool {
    let ur = (u as f64 - d).round();
    if ur < 0.0 {
        return false;
    }
    match &s.right_disparity {
        Some(rd) => (rd.get(v, ur as usize) - d).abs() <= 1.0,
        None => true,
    }
}

#[derive(Default)]
struct Pool {
    pred_depth: Vec<f64>,
    gt_depth: Vec<f64>,
    conf: Vec<f64>,
    err: Vec<f64>,
}

impl Pool {
    fn add(&mut self, cfg: &PipelineConfig, s: &Sample, disparity: &Map, confidence: &Map) -> Result<()> {
        let gt = s.disparity.as_ref().ok_or_else(|| Error::Empty("evaluation frame has no disparity".into()))?;
        let fg = s.fg_mask.as_ref().ok_or_else(|| Error::Empty("evaluation frame has no foreground mask".into()))?;
        let cars = class_mask(s, ObjectClass::Car).ok_or_else(|| Error::Empty("evaluation frame has no labels".into()))?;
        let fb = s.rig.focal_baseline();
        let floor = cfg.matcher.min_disparity;
        let w = gt.width();
        for i in 0..gt.len() {
            let g = gt.data()[i];
            if !(g > 0.0) {
                continue;
            }
            let p = disparity.data()[i];
            if cars.data()[i] && has_correspondence(s, i / w, i % w, g) {
                self.conf.push(confidence.data()[i]);
                self.err.push((p - g).abs());
            }
            let z = fb / g;
            if fg.data()[i] && z > cfg.eval.min_fg_depth {
                self.gt_depth.push(z);
                self.pred_depth.push(fb / p.max(floor));
            }
        }
        Ok(())
    }

    fn finish(self, cfg: &PipelineConfig) -> Result<MatcherEval> {
        let row = |v: Vec<f64>| Map::from_vec(1, v.len(), v);
        let depth = if self.gt_depth.is_empty() {
            log::warn!("no foreground pixels beyond {} m; depth metrics skipped", cfg.eval.min_fg_depth);
            None
        } else {
            let n = self.gt_depth.len();
            let slice = format!("fg>{}m", cfg.eval.min_fg_depth);
            Some(depth_report(&row(self.pred_depth)?, &row(self.gt_depth)?, &Mask::filled(1, n, true), &slice)?)
        };
        let n = self.err.len();
        if n == 0 {
            return Err(Error::Empty("no car pixel with ground-truth disparity".into()));
        }
        let bins = confidence_error_bins(&row(self.conf)?, &row(self.err)?, &Mask::filled(1, n, true), cfg.eval.bin_width)?;
        Ok(MatcherEval { depth, bins })
    }
}

/// Depth metrics and confidence bins without running any detector.
pub fn evaluate_matcher(cfg: &PipelineConfig, matcher: &StereoMatcher, val: &[Sample]) -> Result<MatcherEval> {
    let mut pool = Pool::default();
    for s in val {
        let fg = s.fg_mask.as_ref().ok_or_else(|| Error::Empty("evaluation frame has no foreground mask".into()))?;
        let est = matcher.forward(&s.left, &s.right, fg)?;
        pool.add(cfg, s, &est.disparity, &est.confidence)?;
    }
    pool.finish(cfg)
}

fn detect(model: &PointDetector, cloud: &ConfidencePointCloud) -> Result<Vec<Box3D>> {
    if cloud.is_empty() {
        return Ok(Vec::new());
    }
    model.detect(cloud)
}

/// Scores per-frame disparity/confidence estimates and detections against
/// the validation labels. AP is reported for `classes`.
pub fn score_frames(
    cfg: &PipelineConfig,
    val: &[Sample],
    estimates: &[(Map, Map)],
    detections: Vec<Vec<Box3D>>,
    classes: &[ObjectClass],
) -> Result<EvalReport> {
    if val.is_empty() {
        return Err(Error::Empty("no validation frames".into()));
    }
    if estimates.len() != val.len() || detections.len() != val.len() {
        return Err(Error::Shape(format!(
            "{} frames, {} estimates, {} detection lists",
            val.len(),
            estimates.len(),
            detections.len()
        )));
    }
    let mut pool = Pool::default();
    for (s, (d, c)) in val.iter().zip(estimates) {
        pool.add(cfg, s, d, c)?;
    }
    let gts: Vec<Vec<GroundTruth>> = val.iter().map(ground_truths).collect();
    let mut ap = Vec::new();
    for &class in classes {
        for &iou in &cfg.eval.iou_thresholds {
            for d in Difficulty::ALL {
                ap.extend(ap_reports(&detections, &gts, class, d, iou)?);
            }
        }
    }
    let m = pool.finish(cfg)?;
    Ok(EvalReport {
        depth: m.depth,
        bins: m.bins,
        ap,
        detections,
    })
}

/// Runs every model on the validation frames and scores the result.
pub fn evaluate_models(cfg: &PipelineConfig, models: &Models, val: &[Sample]) -> Result<EvalReport> {
    let mut estimates = Vec::with_capacity(val.len());
    let mut detections = Vec::with_capacity(val.len());
    for (i, s) in val.iter().enumerate() {
        let fg = s.fg_mask.as_ref().ok_or_else(|| Error::Empty(format!("validation frame {i} has no foreground mask")))?;
        let est = models.matcher.forward(&s.left, &s.right, fg)?;
        let seed = cloud_seed(cfg.seeds.sampling.wrapping_add(EVAL_SEED_OFFSET), i);
        let mut dets = Vec::new();
        for model in models.detectors() {
            let cloud = cloud_from_estimate(&est.disparity, &est.confidence, fg, cfg, model.config.n_input_points, &s.rig, seed)?;
            dets.extend(detect(model, &cloud)?);
        }
        detections.push(dets);
        estimates.push((est.disparity, est.confidence));
    }
    let classes: Vec<ObjectClass> = models.detectors().flat_map(|m| m.config.classes.iter().copied()).collect();
    score_frames(cfg, val, &estimates, detections, &classes)
}

/// Loads the checkpoints from the output directory, evaluates on the
/// validation split and writes the reports. Returns the written paths.
pub fn evaluate_pipeline(cfg: &PipelineConfig) -> Result<(EvalReport, Vec<PathBuf>)> {
    cfg.validate()?;
    let models = CheckpointPaths::under(&cfg.output_dir).load()?;
    if models.matcher.config.split != cfg.flags.split_depth || models.car.config.use_confidence_channel != cfg.flags.confidence_feature {
        log::warn!("checkpoint flags differ from the config; evaluating the checkpoints as trained");
    }
    let (_, val) = load_dataset(cfg)?;
    let rep = evaluate_models(cfg, &models, &val)?;
    let paths = report::write_eval_report(&cfg.output_dir.join("eval"), &rep)?;
    Ok((rep, paths))
}

/// Confidence bins (and depth metrics) of the trained matcher only.
pub fn confidence_bins_pipeline(cfg: &PipelineConfig) -> Result<(MatcherEval, Vec<PathBuf>)> {
    cfg.validate()?;
    let matcher = StereoMatcher::load(&CheckpointPaths::under(&cfg.output_dir).matcher)?;
    let (_, val) = load_dataset(cfg)?;
    let m = evaluate_matcher(cfg, &matcher, &val)?;
    let dir = cfg.output_dir.join("bins");
    let paths = report::write_bins(&dir, &m.bins)?;
    Ok((m, paths))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationMeasure {
    pub abs_rel: Option<f64>,
    pub si_log: Option<f64>,
    pub ap_3d: f64,
    pub ap_bev: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub flags: AblationFlags,
    pub runs: Vec<AblationMeasure>,
}

impl AblationRow {
    pub fn mean(&self) -> AblationMeasure {
        let n = self.runs.len() as f64;
        let avg = |f: &dyn Fn(&AblationMeasure) -> Option<f64>| -> Option<f64> {
            let v: Option<Vec<f64>> = self.runs.iter().map(f).collect();
            v.map(|v| v.iter().sum::<f64>() / n)
        };
        AblationMeasure {
            abs_rel: avg(&|m| m.abs_rel),
            si_log: avg(&|m| m.si_log),
            ap_3d: avg(&|m| Some(m.ap_3d)).unwrap_or(0.0),
            ap_bev: avg(&|m| Some(m.ap_bev)).unwrap_or(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub iou: f64,
    pub rows: Vec<AblationRow>,
}

fn flag_tag(f: &AblationFlags) -> String {
    format!("split{}_pc{}_conf{}", u8::from(f.split_depth), u8::from(f.pc_loss), u8::from(f.confidence_feature))
}

/// Trains and evaluates the four ablation rows for `repeats` seed offsets.
///
/// Rows that differ in matcher flags train their own matcher; the last row
/// shares the matcher of the third because they differ only in the detector
/// input. Depth columns are left empty for that row. Only the car detector is
/// trained. Everything is written under `output_dir/ablation`.
pub fn run_ablation(cfg: &PipelineConfig, repeats: usize) -> Result<(AblationTable, Vec<PathBuf>)> {
    cfg.validate()?;
    if repeats == 0 {
        return Err(Error::Config("ablation needs at least one repeat".into()));
    }
    let root = cfg.output_dir.join("ablation");
    let mut rows: Vec<AblationRow> = AblationFlags::ROWS.iter().map(|&flags| AblationRow { flags, runs: Vec::new() }).collect();
    let mut paths = Vec::new();
    for r in 0..repeats {
        let mut rcfg = cfg.clone();
        rcfg.seeds = cfg.seeds.offset(r as u64);
        rcfg.train_ped_cyc = false;
        let (train, val) = load_dataset(&rcfg)?;
        let rep_dir = root.join(format!("repeat{r}"));
        let mut matchers: Vec<((bool, bool), StereoMatcher)> = Vec::new();
        for (k, flags) in AblationFlags::ROWS.iter().enumerate() {
            let mut fcfg = rcfg.clone();
            fcfg.flags = *flags;
            let key = (flags.split_depth, flags.pc_loss);
            let tag = flag_tag(flags);
            log::info!("ablation repeat {r} row {} ({})", k + 1, flags.pattern());
            let matcher = match matchers.iter().find(|(m, _)| *m == key) {
                Some((_, m)) => m.clone(),
                None => {
                    let (m, curve) = train_matcher(fcfg.matcher_config(), &train, fcfg.seeds.matcher_init, fcfg.seeds.sampling)?;
                    let ck = rep_dir.join(format!("matcher_{tag}.json"));
                    m.save(&ck)?;
                    let cp = rep_dir.join(format!("matcher_{tag}.csv"));
                    write_curve_csv(&cp, &curve)?;
                    paths.extend([ck, cp]);
                    matchers.push((key, m.clone()));
                    m
                }
            };
            let (car, curve) = train_one_detector(&fcfg, fcfg.car_detector_config(), &matcher, &train)?;
            let ck = rep_dir.join(format!("detector_{tag}.json"));
            car.save(&ck)?;
            let cp = rep_dir.join(format!("detector_{tag}.csv"));
            write_detector_curve_csv(&cp, &curve)?;
            paths.extend([ck, cp]);
            let models = Models {
                matcher,
                car,
                ped_cyc: None,
            };
            let rep = evaluate_models(&fcfg, &models, &val)?;
            let ap = rep
                .ap(ObjectClass::Car, Difficulty::Moderate, cfg.eval.ablation_iou, 40)
                .ok_or_else(|| Error::Config(format!("ablation_iou {} is not among eval.iou_thresholds", cfg.eval.ablation_iou)))?;
            let reuses_depth = AblationFlags::ROWS[..k].iter().any(|f| (f.split_depth, f.pc_loss) == key);
            rows[k].runs.push(AblationMeasure {
                abs_rel: if reuses_depth { None } else { rep.depth.as_ref().map(|d| d.abs_rel) },
                si_log: if reuses_depth { None } else { rep.depth.as_ref().map(|d| d.si_log) },
                ap_3d: ap.ap_3d,
                ap_bev: ap.ap_bev,
            });
        }
    }
    let table = AblationTable {
        iou: cfg.eval.ablation_iou,
        rows,
    };
    paths.extend(report::write_ablation(&root, &table)?);
    Ok((table, paths))
}

/// Creates `dir` if needed.
pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
