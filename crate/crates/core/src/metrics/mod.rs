//! Overlap and surface-distance metrics for label masks, and cohort reports.

mod cohort;
mod overlap;
mod report;
mod surface;

use thiserror::Error;

pub use cohort::{evaluate_cohort, CaseMetrics, CohortMetrics, LabelMetrics, LABELS};
pub use overlap::{dice, dice_binary, dsc_agg, foreground_dice, OverlapCounts};
pub use report::{cohort_json, cohort_text, cohort_tsv, render_aligned};
pub use surface::{
    boundary_voxels, distance_transform_sq, hd, hd95, msd, percentile, surface_distances, EmptySide, SurfaceDistances,
};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("case {case}: prediction dims {pred:?} differ from reference {gt:?}")]
    Dims { case: String, pred: [usize; 3], gt: [usize; 3] },
    #[error("{pred} predictions for {gt} reference cases")]
    CaseCount { pred: usize, gt: usize },
}
