//! Dataset-level evaluation of a prediction set against a manifest.
//!
//! Only images present in the prediction set are scored; images the
//! pipeline failed on are listed as unscored rather than counted as misses.

use serde::{Deserialize, Serialize};

use crate::detection::{
    class_average_precisions, match_image, mean_average_precision, validate_iou_threshold, ClassAp,
    ImageEvalInput, MatchResult,
};
use crate::error::{Error, Result};
use crate::geometry::{mask_bbox, mask_components, BoundingBox};
use crate::ingest::{DatasetManifest, ImagePredictions, PredictionSet};
use crate::segmentation::{
    evaluate_image, summarize_segmentation, DatasetSegSummary, SegmentationEval,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDetectionEval {
    pub image_id: String,
    pub matches: MatchResult,
    pub num_predictions: usize,
    pub num_ground_truths: usize,
}

impl ImageDetectionEval {
    pub fn tp(&self) -> usize {
        self.matches.pairs.len()
    }

    pub fn fp(&self) -> usize {
        self.matches.false_positives.len()
    }

    pub fn fn_(&self) -> usize {
        self.matches.false_negatives.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionEvaluation {
    pub iou_threshold: f64,
    pub per_class: Vec<ClassAp>,
    pub map: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub per_image: Vec<ImageDetectionEval>,
    pub unscored_images: Vec<String>,
}

impl DetectionEvaluation {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn scored<'a>(
    manifest: &'a DatasetManifest,
    preds: &'a PredictionSet,
) -> (Vec<(&'a str, &'a ImagePredictions)>, Vec<String>) {
    let mut present = Vec::new();
    let mut missing = Vec::new();
    for rec in &manifest.images {
        match preds.images.get(&rec.id) {
            Some(p) => present.push((rec.id.as_str(), p)),
            None => missing.push(rec.id.clone()),
        }
    }
    (present, missing)
}

/// Class-agnostic matching per image plus per-class AP and mAP.
pub fn evaluate_detection(
    manifest: &DatasetManifest,
    preds: &PredictionSet,
    iou_threshold: f64,
) -> Result<DetectionEvaluation> {
    validate_iou_threshold(iou_threshold)?;
    if !manifest.has_boxes() {
        return Err(Error::GroundTruthType(format!(
            "dataset '{}' has no box ground truth; detection metrics need boxes",
            manifest.name
        )));
    }
    preds.validate(manifest)?;
    let (present, unscored_images) = scored(manifest, preds);

    let mut per_image = Vec::with_capacity(present.len());
    let mut inputs = Vec::with_capacity(present.len());
    for &(id, p) in &present {
        let gts = manifest.boxes_for(id);
        per_image.push(ImageDetectionEval {
            image_id: id.to_string(),
            matches: match_image(&p.detections, gts, iou_threshold)?,
            num_predictions: p.detections.len(),
            num_ground_truths: gts.len(),
        });
        inputs.push(ImageEvalInput {
            predictions: &p.detections,
            ground_truths: gts,
        });
    }
    let per_class = class_average_precisions(&inputs, iou_threshold)?;
    let map = mean_average_precision(&per_class)?;
    Ok(DetectionEvaluation {
        iou_threshold,
        map,
        tp: per_image.iter().map(ImageDetectionEval::tp).sum(),
        fp: per_image.iter().map(ImageDetectionEval::fp).sum(),
        fn_: per_image.iter().map(ImageDetectionEval::fn_).sum(),
        per_class,
        per_image,
        unscored_images,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationEvaluation {
    pub summary: DatasetSegSummary,
    pub per_image: Vec<SegmentationEval>,
    pub unscored_images: Vec<String>,
}

/// Dice and Dice@detection for every scored image with a ground-truth mask.
pub fn evaluate_segmentation(
    manifest: &DatasetManifest,
    preds: &PredictionSet,
) -> Result<SegmentationEvaluation> {
    let Some(gt_masks) = &manifest.gt_masks else {
        return Err(Error::GroundTruthType(format!(
            "dataset '{}' has no mask ground truth; segmentation metrics need masks",
            manifest.name
        )));
    };
    preds.validate(manifest)?;
    let (present, unscored_images) = scored(manifest, preds);

    let mut per_image = Vec::with_capacity(present.len());
    for (id, p) in present {
        let Some(gt) = gt_masks.get(id) else { continue };
        let masks = p.masks.as_deref().ok_or_else(|| {
            Error::Validation(format!("predictions for image '{id}' carry no masks"))
        })?;
        let boxes: Vec<BoundingBox> = p.boxes().copied().collect();
        per_image.push(evaluate_image(id, masks, &boxes, &gt.mask)?);
    }
    Ok(SegmentationEvaluation {
        summary: summarize_segmentation(&per_image)?,
        per_image,
        unscored_images,
    })
}

/// Box ground truth for one image: annotated boxes, or the bounding boxes of
/// the connected components of its mask when the dataset has masks only.
pub fn ground_truth_boxes(manifest: &DatasetManifest, image_id: &str) -> Vec<BoundingBox> {
    if manifest.has_boxes() {
        return manifest
            .boxes_for(image_id)
            .iter()
            .map(|g| g.bbox)
            .collect();
    }
    manifest
        .mask_for(image_id)
        .map(|m| mask_components(m).iter().filter_map(mask_bbox).collect())
        .unwrap_or_default()
}
