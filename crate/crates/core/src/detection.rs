//! Detection protocol: confidence-ordered greedy IoU matching, precision /
//! recall curves, all-points average precision and mAP over classes.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Default IoU threshold for a prediction to count as a match.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.2;

/// Dataset category identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// One detector output: a box, its confidence and the phrase it grounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(rename = "score")]
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrase: Option<String>,
}

impl Detection {
    pub fn new(bbox: BoundingBox, confidence: f64) -> Result<Self> {
        check_confidence(confidence)?;
        Ok(Self {
            bbox,
            confidence,
            phrase: None,
        })
    }

    pub fn with_phrase(mut self, phrase: impl Into<String>) -> Self {
        self.phrase = Some(phrase.into());
        self
    }
}

pub(crate) fn check_confidence(confidence: f64) -> Result<()> {
    if confidence.is_finite() && (0.0..=1.0).contains(&confidence) {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "confidence {confidence} outside [0, 1]"
        )))
    }
}

impl AsRef<BoundingBox> for Detection {
    fn as_ref(&self) -> &BoundingBox {
        &self.bbox
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthBox {
    pub bbox: BoundingBox,
    pub class_id: ClassId,
}

impl AsRef<BoundingBox> for GroundTruthBox {
    fn as_ref(&self) -> &BoundingBox {
        &self.bbox
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub prediction: usize,
    pub ground_truth: usize,
    pub iou: f64,
}

/// Outcome of matching one image's predictions against its ground truths.
/// `pairs` are the true positives in the order they were claimed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
    pub iou_threshold: f64,
}

impl MatchResult {
    pub fn true_positive_count(&self) -> usize {
        self.pairs.len()
    }

    /// Per-prediction TP flag, indexed like the prediction list.
    pub fn prediction_flags(&self, num_predictions: usize) -> Vec<bool> {
        let mut flags = vec![false; num_predictions];
        for p in &self.pairs {
            flags[p.prediction] = true;
        }
        flags
    }

    pub fn is_matched_ground_truth(&self, gt_index: usize) -> bool {
        self.pairs.iter().any(|p| p.ground_truth == gt_index)
    }
}

pub fn validate_iou_threshold(iou_threshold: f64) -> Result<()> {
    if iou_threshold > 0.0 && iou_threshold <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "IoU threshold must lie in (0, 1], got {iou_threshold}"
        )))
    }
}

/// Prediction indices sorted by descending confidence; ties keep the lower
/// index first.
pub fn confidence_order(predictions: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| {
        predictions[b]
            .confidence
            .partial_cmp(&predictions[a].confidence)
            .unwrap_or(Ordering::Equal)
    });
    order
}

/// Greedy matching: predictions are visited by descending confidence and each
/// claims the unclaimed ground truth of highest IoU at or above the
/// threshold. Equal IoU goes to the lower ground-truth index.
pub fn match_image<G: AsRef<BoundingBox>>(
    predictions: &[Detection],
    ground_truths: &[G],
    iou_threshold: f64,
) -> Result<MatchResult> {
    validate_iou_threshold(iou_threshold)?;
    let mut claimed = vec![false; ground_truths.len()];
    let mut pairs = Vec::new();
    let mut false_positives = Vec::new();

    for pi in confidence_order(predictions) {
        let pbox = &predictions[pi].bbox;
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in ground_truths.iter().enumerate() {
            if claimed[gi] {
                continue;
            }
            let iou = pbox.iou(gt.as_ref());
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        match best {
            Some((gi, iou)) => {
                claimed[gi] = true;
                pairs.push(MatchedPair {
                    prediction: pi,
                    ground_truth: gi,
                    iou,
                });
            }
            None => false_positives.push(pi),
        }
    }
    false_positives.sort_unstable();
    let false_negatives = claimed
        .iter()
        .enumerate()
        .filter_map(|(i, &c)| (!c).then_some(i))
        .collect();

    Ok(MatchResult {
        pairs,
        false_positives,
        false_negatives,
        iou_threshold,
    })
}

/// A prediction's outcome in a ranked list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedOutcome {
    pub confidence: f64,
    pub is_true_positive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub confidence_cutoff: f64,
    pub precision: f64,
    pub recall: f64,
}

/// One precision/recall point per prediction of a list already sorted by
/// descending confidence.
pub fn pr_curve(ranked: &[RankedOutcome], total_ground_truths: usize) -> Result<Vec<PrPoint>> {
    if total_ground_truths == 0 {
        return Err(Error::UndefinedMetric(
            "precision/recall curve needs at least one ground truth".into(),
        ));
    }
    debug_assert!(ranked
        .windows(2)
        .all(|w| w[0].confidence >= w[1].confidence));
    let mut tp = 0usize;
    Ok(ranked
        .iter()
        .enumerate()
        .map(|(k, r)| {
            if r.is_true_positive {
                tp += 1;
            }
            PrPoint {
                confidence_cutoff: r.confidence,
                precision: tp as f64 / (k + 1) as f64,
                recall: tp as f64 / total_ground_truths as f64,
            }
        })
        .collect())
}

/// All-points average precision: the area under the monotone precision
/// envelope `p(r) = max { precision_k : recall_k >= r }`.
pub fn average_precision(points: &[PrPoint]) -> f64 {
    let mut envelope = vec![0.0f64; points.len()];
    let mut running = 0.0f64;
    for (k, p) in points.iter().enumerate().rev() {
        running = running.max(p.precision);
        envelope[k] = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in points.iter().zip(envelope) {
        ap += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    ap.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: ClassId,
    pub ap: f64,
    pub num_ground_truths: usize,
    pub num_predictions: usize,
}

/// Unweighted mean AP over classes with at least one ground truth.
pub fn mean_average_precision(per_class: &[ClassAp]) -> Result<f64> {
    let scored: Vec<f64> = per_class
        .iter()
        .filter(|c| c.num_ground_truths > 0)
        .map(|c| c.ap)
        .collect();
    if scored.is_empty() {
        return Err(Error::UndefinedMetric(
            "mAP needs at least one class with ground truths".into(),
        ));
    }
    Ok(scored.iter().sum::<f64>() / scored.len() as f64)
}

/// One image's class-agnostic predictions and labeled ground truths.
#[derive(Debug, Clone, Copy)]
pub struct ImageEvalInput<'a> {
    pub predictions: &'a [Detection],
    pub ground_truths: &'a [GroundTruthBox],
}

/// Per-class AP for a class-agnostic detector, scored as one binary task per
/// class: for class `c`, only images holding ground truths of `c` take part,
/// every prediction on them is a candidate for `c`, and the matches are
/// pooled across images before ranking. Classes without ground truths are
/// left out.
pub fn class_average_precisions(
    images: &[ImageEvalInput<'_>],
    iou_threshold: f64,
) -> Result<Vec<ClassAp>> {
    validate_iou_threshold(iou_threshold)?;
    let classes: BTreeSet<ClassId> = images
        .iter()
        .flat_map(|im| im.ground_truths.iter().map(|g| g.class_id))
        .collect();

    let mut out = Vec::with_capacity(classes.len());
    for class_id in classes {
        let mut pooled = Vec::new();
        let mut num_ground_truths = 0;
        for im in images {
            let gts: Vec<&BoundingBox> = im
                .ground_truths
                .iter()
                .filter(|g| g.class_id == class_id)
                .map(|g| &g.bbox)
                .collect();
            if gts.is_empty() {
                continue;
            }
            num_ground_truths += gts.len();
            let result = match_image(im.predictions, &gts, iou_threshold)?;
            let flags = result.prediction_flags(im.predictions.len());
            pooled.extend(
                im.predictions
                    .iter()
                    .zip(flags)
                    .map(|(p, tp)| RankedOutcome {
                        confidence: p.confidence,
                        is_true_positive: tp,
                    }),
            );
        }
        // stable: equal confidences stay in image order, then prediction order
        pooled.sort_by(|a, b| {
            b.confidence
                .partial_cmp(&a.confidence)
                .unwrap_or(Ordering::Equal)
        });
        let points = pr_curve(&pooled, num_ground_truths)?;
        out.push(ClassAp {
            class_id,
            ap: average_precision(&points),
            num_ground_truths,
            num_predictions: pooled.len(),
        });
    }
    Ok(out)
}
