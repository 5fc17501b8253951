//! Depth errors, rotated IoU, average precision, difficulty buckets and the
//! confidence-versus-error table.

mod ap;
mod bins;
mod depth;
mod difficulty;
mod iou;

pub use ap::{ap_reports, average_precision, interpolated_ap, match_detections, APReport, GroundTruth, IouKind, Matching};
pub use bins::{bin_index, confidence_error_bins, quantile_sorted, ConfidenceBin, ConfidenceBinTable};
pub use depth::{abs_rel, depth_report, si_log, DepthMetricReport};
pub use difficulty::{assign_difficulty, Difficulty, DifficultyThresholds};
pub use iou::{bev_intersection, clip_convex, iou_3d, polygon_area, rotated_iou_bev};
