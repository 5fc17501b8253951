//! End-to-end orchestration: datasets, training, evaluation, ablation and
//! the report files they leave under the output directory.

mod config;
mod data;
mod masks;
mod report;
mod run;

pub use config::{AblationFlags, DatasetConfig, EvalConfig, PipelineConfig, Seeds};
pub use data::{
    class_mask, cloud_from_estimate, ensure_fg_mask, ground_truths, kitti_dataset, load_dataset, pseudo_cloud, scene_seeds,
    synthetic_dataset, write_synthetic_dataset,
};
pub use masks::{close_3x3, cyclist_masks, dilate_disk, fg_mask_from_disparity, merge_cyclist_masks, project_labels_to_fg_mask};
pub use report::{ablation_csv, ablation_table, ap_csv, ap_table, plot_bins, write_ablation, write_bins, write_eval_report};
pub use run::{
    confidence_bins_pipeline, detector_scenes, evaluate_matcher, evaluate_models, evaluate_pipeline, has_correspondence, run_ablation, score_frames,
    train_detectors, train_models, train_pipeline, AblationMeasure, AblationRow, AblationTable, CheckpointPaths,
    EvalReport, MatcherEval, Models, TrainCurves,
};

use crate::sample::Sample;

/// Horizontal flip augmentation; see [`Sample::flipped`].
pub fn augment_flip(s: &Sample) -> Sample {
    s.flipped()
}
