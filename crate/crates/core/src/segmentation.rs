//! Dataset-level Dice and Dice restricted to the detected region.
//!
//! Instance masks are fused by union before scoring, since the reference
//! annotation is a single foreground mask per image. The detected region is
//! the union of the predicted boxes, rasterized by the pixel-center rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    box_to_mask, dice_from_counts, mask_intersect, mask_union, BoundingBox, InstanceMask,
};

/// Dice between the union of predicted instances and the ground truth.
pub fn image_dice(pred_masks: &[InstanceMask], gt_mask: &InstanceMask) -> Result<f64> {
    let tally = PixelTally::measure(pred_masks, gt_mask)?;
    Ok(tally.dice())
}

/// Dice inside the region covered by `pred_boxes`; `None` when the region is
/// empty.
pub fn image_dice_at_detection(
    pred_masks: &[InstanceMask],
    pred_boxes: &[BoundingBox],
    gt_mask: &InstanceMask,
) -> Result<Option<f64>> {
    let eval = evaluate_image("", pred_masks, pred_boxes, gt_mask)?;
    Ok(eval.dice_at_detection)
}

/// Pixel counts behind one Dice value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelTally {
    pub intersection: u64,
    pub pred: u64,
    pub gt: u64,
}

impl PixelTally {
    fn measure(pred_masks: &[InstanceMask], gt_mask: &InstanceMask) -> Result<Self> {
        let pred = mask_union(gt_mask.dims(), pred_masks)?;
        Ok(Self {
            intersection: pred.intersection_count(gt_mask)?,
            pred: pred.foreground_count(),
            gt: gt_mask.foreground_count(),
        })
    }

    pub fn dice(&self) -> f64 {
        dice_from_counts(self.intersection, self.pred, self.gt)
    }
}

impl std::ops::AddAssign for PixelTally {
    fn add_assign(&mut self, rhs: Self) {
        self.intersection += rhs.intersection;
        self.pred += rhs.pred;
        self.gt += rhs.gt;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationEval {
    pub image_id: String,
    pub dice: Option<f64>,
    pub dice_at_detection: Option<f64>,
    pub detected_region_pixels: u64,
    pub gt_pixels: u64,
    pub pred_pixels: u64,
    /// Whole-frame tallies.
    pub full: PixelTally,
    /// Tallies restricted to the detected region.
    pub detected: PixelTally,
}

/// Scores one image: plain Dice plus Dice inside the detected region.
pub fn evaluate_image(
    image_id: &str,
    pred_masks: &[InstanceMask],
    pred_boxes: &[BoundingBox],
    gt_mask: &InstanceMask,
) -> Result<SegmentationEval> {
    let dims = gt_mask.dims();
    let pred_union = mask_union(dims, pred_masks)?;
    let full = PixelTally {
        intersection: pred_union.intersection_count(gt_mask)?,
        pred: pred_union.foreground_count(),
        gt: gt_mask.foreground_count(),
    };

    let box_masks: Vec<InstanceMask> = pred_boxes.iter().map(|b| box_to_mask(b, dims)).collect();
    let region = mask_union(dims, &box_masks)?;
    let region_pixels = region.foreground_count();
    let (detected, dice_at_detection) = if region_pixels == 0 {
        (PixelTally::default(), None)
    } else {
        let pred_in = mask_intersect(&pred_union, &region)?;
        let gt_in = mask_intersect(gt_mask, &region)?;
        let t = PixelTally {
            intersection: pred_in.intersection_count(&gt_in)?,
            pred: pred_in.foreground_count(),
            gt: gt_in.foreground_count(),
        };
        (t, Some(t.dice()))
    };

    Ok(SegmentationEval {
        image_id: image_id.to_string(),
        dice: Some(full.dice()),
        dice_at_detection,
        detected_region_pixels: region_pixels,
        gt_pixels: full.gt,
        pred_pixels: full.pred,
        full,
        detected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSegSummary {
    pub micro_dice: f64,
    pub macro_dice: f64,
    pub micro_dice_at_detection: f64,
    pub macro_dice_at_detection: f64,
    pub images_evaluated: usize,
    pub images_skipped: usize,
}

/// Micro (pixel-pooled) and macro (per-image mean) aggregates. Images whose
/// detected region is empty are skipped for Dice@detection and counted.
pub fn summarize_segmentation(per_image: &[SegmentationEval]) -> Result<DatasetSegSummary> {
    let evaluated: Vec<&SegmentationEval> = per_image
        .iter()
        .filter(|e| e.dice_at_detection.is_some())
        .collect();
    if evaluated.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "no image of {} has a non-empty detected region",
            per_image.len()
        )));
    }

    let mut full = PixelTally::default();
    let mut detected = PixelTally::default();
    for e in per_image {
        full += e.full;
        detected += e.detected;
    }

    Ok(DatasetSegSummary {
        micro_dice: full.dice(),
        macro_dice: mean(per_image.iter().filter_map(|e| e.dice)),
        micro_dice_at_detection: detected.dice(),
        macro_dice_at_detection: mean(evaluated.iter().filter_map(|e| e.dice_at_detection)),
        images_evaluated: evaluated.len(),
        images_skipped: per_image.len() - evaluated.len(),
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
