use splitstereo::boxes::ObjectClass;
use splitstereo::grid::Map;
use splitstereo::matcher::train_matcher;
use splitstereo::metrics::Difficulty;
use splitstereo::pipeline::{score_frames, synthetic_dataset, PipelineConfig};

#[test]
fn oracle_inputs_score_perfectly() {
    let mut cfg = PipelineConfig::default();
    cfg.dataset.n_train = 1;
    cfg.dataset.n_val = 6;
    let (_, val) = synthetic_dataset(&cfg).unwrap();
    let estimates: Vec<(Map, Map)> = val
        .iter()
        .map(|s| {
            let d = s.disparity.clone().unwrap();
            let ones = Map::from_fn(d.height(), d.width(), |_, _| 1.0);
            (d, ones)
        })
        .collect();
    let detections = val.iter().map(|s| s.labels.clone().unwrap()).collect();
    let rep = score_frames(&cfg, &val, &estimates, detections, &ObjectClass::ALL).unwrap();
    let depth = rep.depth.as_ref().expect("foreground beyond the depth cut");
    assert!(depth.pixel_count > 0);
    assert_eq!(depth.abs_rel, 0.0);
    assert_eq!(depth.si_log, 0.0);
    for &iou in &cfg.eval.iou_thresholds {
        for r in [11, 40] {
            let ap = rep.ap(ObjectClass::Car, Difficulty::Moderate, iou, r).unwrap();
            assert_eq!((ap.ap_3d, ap.ap_bev), (100.0, 100.0), "IoU {iou} R{r}");
        }
    }
}

#[test]
fn default_matcher_loss_drops_within_100_steps() {
    let cfg = PipelineConfig::default();
    let (train, _) = synthetic_dataset(&cfg).unwrap();
    let mut mc = cfg.matcher_config();
    mc.steps = 101;
    let (_, curve) = train_matcher(mc, &train, cfg.seeds.matcher_init, cfg.seeds.sampling).unwrap();
    assert!(curve[100].loss < curve[0].loss, "step 0 {} vs step 100 {}", curve[0].loss, curve[100].loss);
}
