//! Evaluation engine and batch orchestrator for zero-shot colony detection
//! and box-prompted segmentation on agar-plate images.

pub mod detection;
pub mod error;
pub mod evaluate;
pub mod geometry;
pub mod ingest;
pub mod pipeline;
pub mod reporting;
pub mod segmentation;
#[cfg(feature = "stub-server")]
pub mod stub;

pub use detection::{
    average_precision, class_average_precisions, match_image, mean_average_precision, pr_curve,
    ClassAp, ClassId, Detection, GroundTruthBox, MatchResult, MatchedPair, PrPoint, RankedOutcome,
    DEFAULT_IOU_THRESHOLD,
};
pub use error::{Error, ErrorClass, Result};
pub use evaluate::{
    evaluate_detection, evaluate_segmentation, ground_truth_boxes, DetectionEvaluation,
    SegmentationEvaluation,
};
pub use geometry::{
    box_iou, box_to_mask, mask_bbox, mask_dice, mask_intersect, mask_union, BoundingBox, ImageDims,
    InstanceMask,
};
pub use ingest::{DatasetManifest, ImagePredictions, ImageRecord, PredictionSet};
pub use pipeline::{run_pipeline, PipelineConfig, ProviderDescriptor, RunOutcome};
pub use reporting::{emit_report, render_overlay, MetricsReport, OverlaySpec, ReportFormat};
pub use segmentation::{
    image_dice, image_dice_at_detection, summarize_segmentation, DatasetSegSummary,
    SegmentationEval,
};
