//! Qualitative overlays and machine-readable metric reports.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize, Serializer};

use crate::detection::{ClassId, Detection, MatchResult};
use crate::error::{Error, Result};
use crate::evaluate::{DetectionEvaluation, SegmentationEvaluation};
use crate::geometry::{BoundingBox, ImageDims, InstanceMask};
use crate::segmentation::DatasetSegSummary;

pub const GREEN: [u8; 3] = [0, 200, 0];
pub const YELLOW: [u8; 3] = [230, 200, 0];
pub const RED: [u8; 3] = [220, 0, 0];

/// Percent opacity of mask fills.
pub const MASK_ALPHA: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlaySpec {
    /// Matched predictions and the ground truths they claim.
    pub matched_color: [u8; 3],
    pub unmatched_gt_color: [u8; 3],
    pub unmatched_pred_color: [u8; 3],
    pub stroke_width: u32,
    /// Print each prediction's confidence above its box.
    pub draw_labels: bool,
}

impl Default for OverlaySpec {
    fn default() -> Self {
        Self {
            matched_color: GREEN,
            unmatched_gt_color: YELLOW,
            unmatched_pred_color: RED,
            stroke_width: 2,
            draw_labels: false,
        }
    }
}

impl OverlaySpec {
    pub fn validate(&self) -> Result<()> {
        if self.stroke_width == 0 {
            return Err(Error::Config("stroke width must be at least 1".into()));
        }
        let c = [
            self.matched_color,
            self.unmatched_gt_color,
            self.unmatched_pred_color,
        ];
        if c[0] == c[1] || c[0] == c[2] || c[1] == c[2] {
            return Err(Error::Config("overlay colors must be distinct".into()));
        }
        Ok(())
    }
}

/// Draws `matches` over `image`: strokes along the inside of each box and,
/// when `pred_masks` is given, translucent fills in the prediction's color.
/// Later layers win: fills, then ground truths, then predictions.
pub fn render_overlay(
    image: &RgbImage,
    matches: &MatchResult,
    preds: &[Detection],
    gts: &[BoundingBox],
    pred_masks: Option<&[InstanceMask]>,
    spec: &OverlaySpec,
) -> Result<RgbImage> {
    spec.validate()?;
    let mut out = image.clone();
    let dims = ImageDims::new(out.width(), out.height())?;
    let flags = matches.prediction_flags(preds.len());
    let pred_color = |k: usize| {
        if flags[k] {
            spec.matched_color
        } else {
            spec.unmatched_pred_color
        }
    };

    if let Some(masks) = pred_masks {
        if masks.len() != preds.len() {
            return Err(Error::Validation(format!(
                "{} masks for {} predictions",
                masks.len(),
                preds.len()
            )));
        }
        for (k, m) in masks.iter().enumerate() {
            if m.dims() != dims {
                return Err(Error::InvalidGeometry(format!(
                    "mask {k} is {}x{}, image is {}x{}",
                    m.width(),
                    m.height(),
                    dims.width,
                    dims.height
                )));
            }
            fill_mask(&mut out, m, pred_color(k));
        }
    }
    for (g, bbox) in gts.iter().enumerate() {
        let color = if matches.is_matched_ground_truth(g) {
            spec.matched_color
        } else {
            spec.unmatched_gt_color
        };
        stroke_box(&mut out, bbox, dims, spec.stroke_width, color);
    }
    for (k, det) in preds.iter().enumerate() {
        stroke_box(&mut out, &det.bbox, dims, spec.stroke_width, pred_color(k));
        if spec.draw_labels {
            draw_label(&mut out, &det.bbox, dims, det.confidence, pred_color(k));
        }
    }
    Ok(out)
}

fn fill_mask(img: &mut RgbImage, mask: &InstanceMask, color: [u8; 3]) {
    let width = u64::from(mask.width());
    for (start, end) in mask.intervals() {
        for idx in start..end {
            let px = img.get_pixel_mut((idx % width) as u32, (idx / width) as u32);
            for (p, c) in px.0.iter_mut().zip(color) {
                let blended =
                    (u32::from(*p) * (100 - MASK_ALPHA) + u32::from(c) * MASK_ALPHA + 50) / 100;
                *p = blended as u8;
            }
        }
    }
}

fn stroke_box(img: &mut RgbImage, bbox: &BoundingBox, dims: ImageDims, width: u32, color: [u8; 3]) {
    let (xs, ys) = bbox.pixel_span(dims);
    if xs.is_empty() || ys.is_empty() {
        return;
    }
    for y in ys.clone() {
        for x in xs.clone() {
            let edge = x < xs.start + width
                || x + width >= xs.end
                || y < ys.start + width
                || y + width >= ys.end;
            if edge {
                img.put_pixel(x, y, Rgb(color));
            }
        }
    }
}

// 3x5 glyphs, one row per u8 (low three bits, leftmost pixel is bit 2).
const GLYPHS: [(char, [u8; 5]); 11] = [
    ('0', [7, 5, 5, 5, 7]),
    ('1', [2, 6, 2, 2, 7]),
    ('2', [7, 1, 7, 4, 7]),
    ('3', [7, 1, 7, 1, 7]),
    ('4', [5, 5, 7, 1, 1]),
    ('5', [7, 4, 7, 1, 7]),
    ('6', [7, 4, 7, 5, 7]),
    ('7', [7, 1, 1, 1, 1]),
    ('8', [7, 5, 7, 5, 7]),
    ('9', [7, 5, 7, 1, 7]),
    ('.', [0, 0, 0, 0, 2]),
];

fn draw_label(img: &mut RgbImage, bbox: &BoundingBox, dims: ImageDims, score: f64, color: [u8; 3]) {
    let text = format!("{score:.2}");
    let (xs, ys) = bbox.pixel_span(dims);
    let top = if ys.start >= 6 {
        ys.start - 6
    } else {
        ys.start
    };
    let mut x0 = xs.start;
    for ch in text.chars() {
        let Some((_, rows)) = GLYPHS.iter().find(|(c, _)| *c == ch) else {
            continue;
        };
        for (dy, row) in rows.iter().enumerate() {
            for dx in 0..3u32 {
                let (x, y) = (x0 + dx, top + dy as u32);
                if row & (4 >> dx) != 0 && x < dims.width && y < dims.height {
                    img.put_pixel(x, y, Rgb(color));
                }
            }
        }
        x0 += 4;
    }
}

/// Decodes a plate image to 8-bit RGB.
pub fn load_plate(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes an overlay as an RGB PNG.
pub fn save_overlay(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

fn round6(x: f64) -> f64 {
    let r = (x * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn ser6<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(round6(*x))
}

fn ser6_opt<S: Serializer>(x: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match x {
        Some(v) => s.serialize_some(&round6(*v)),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMetadata {
    pub dataset: String,
    pub provider_source: String,
    pub model_version: String,
    pub config_fingerprint: String,
    /// RFC 3339, supplied by the caller.
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassApRow {
    pub class_id: ClassId,
    pub name: String,
    #[serde(serialize_with = "ser6")]
    pub ap: f64,
    pub num_ground_truths: usize,
    pub num_predictions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSummary {
    #[serde(serialize_with = "ser6")]
    pub iou_threshold: f64,
    pub per_class: Vec<ClassApRow>,
    #[serde(serialize_with = "ser6")]
    pub map: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    #[serde(serialize_with = "ser6")]
    pub precision: f64,
    #[serde(serialize_with = "ser6")]
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationSummary {
    #[serde(serialize_with = "ser6")]
    pub micro_dice: f64,
    #[serde(serialize_with = "ser6")]
    pub macro_dice: f64,
    #[serde(serialize_with = "ser6")]
    pub micro_dice_at_detection: f64,
    #[serde(serialize_with = "ser6")]
    pub macro_dice_at_detection: f64,
    pub images_evaluated: usize,
    pub images_skipped: usize,
}

impl From<&DatasetSegSummary> for SegmentationSummary {
    fn from(s: &DatasetSegSummary) -> Self {
        Self {
            micro_dice: round6(s.micro_dice),
            macro_dice: round6(s.macro_dice),
            micro_dice_at_detection: round6(s.micro_dice_at_detection),
            macro_dice_at_detection: round6(s.macro_dice_at_detection),
            images_evaluated: s.images_evaluated,
            images_skipped: s.images_skipped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerImageRow {
    pub image_id: String,
    pub tp: Option<usize>,
    pub fp: Option<usize>,
    #[serde(rename = "fn")]
    pub fn_: Option<usize>,
    #[serde(serialize_with = "ser6_opt")]
    pub dice: Option<f64>,
    #[serde(serialize_with = "ser6_opt")]
    pub dice_at_detection: Option<f64>,
}

/// Everything a run measured. Numbers are held at six decimals so a report
/// survives a JSON round trip unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub metadata: RunMetadata,
    pub detection: Option<DetectionSummary>,
    pub segmentation: Option<SegmentationSummary>,
    pub per_image: Vec<PerImageRow>,
    /// Images without predictions (failed during the run).
    pub unscored_images: Vec<String>,
}

impl MetricsReport {
    pub fn build(
        metadata: RunMetadata,
        categories: &std::collections::BTreeMap<ClassId, String>,
        detection: Option<&DetectionEvaluation>,
        segmentation: Option<&SegmentationEvaluation>,
    ) -> Self {
        let mut rows: Vec<PerImageRow> = Vec::new();
        let mut unscored: Vec<String> = Vec::new();
        let row = |rows: &mut Vec<PerImageRow>, id: &str| -> usize {
            match rows.iter().position(|r| r.image_id == id) {
                Some(i) => i,
                None => {
                    rows.push(PerImageRow {
                        image_id: id.to_string(),
                        tp: None,
                        fp: None,
                        fn_: None,
                        dice: None,
                        dice_at_detection: None,
                    });
                    rows.len() - 1
                }
            }
        };
        let det = detection.map(|d| {
            for im in &d.per_image {
                let i = row(&mut rows, &im.image_id);
                rows[i].tp = Some(im.tp());
                rows[i].fp = Some(im.fp());
                rows[i].fn_ = Some(im.fn_());
            }
            unscored.extend(d.unscored_images.iter().cloned());
            DetectionSummary {
                iou_threshold: d.iou_threshold,
                per_class: d
                    .per_class
                    .iter()
                    .map(|c| ClassApRow {
                        class_id: c.class_id,
                        name: categories.get(&c.class_id).cloned().unwrap_or_default(),
                        ap: round6(c.ap),
                        num_ground_truths: c.num_ground_truths,
                        num_predictions: c.num_predictions,
                    })
                    .collect(),
                map: round6(d.map),
                tp: d.tp,
                fp: d.fp,
                fn_: d.fn_,
                precision: round6(d.precision()),
                recall: round6(d.recall()),
            }
        });
        let seg = segmentation.map(|s| {
            for im in &s.per_image {
                let i = row(&mut rows, &im.image_id);
                rows[i].dice = im.dice.map(round6);
                rows[i].dice_at_detection = im.dice_at_detection.map(round6);
            }
            unscored.extend(s.unscored_images.iter().cloned());
            SegmentationSummary::from(&s.summary)
        });
        unscored.sort();
        unscored.dedup();
        Self {
            metadata,
            detection: det,
            segmentation: seg,
            per_image: rows,
            unscored_images: unscored,
        }
    }

    /// Totals agree with per-image rows and mAP with the listed class APs.
    pub fn check_consistency(&self) -> Result<()> {
        let Some(d) = &self.detection else {
            return Ok(());
        };
        let sum = |f: fn(&PerImageRow) -> Option<usize>| -> usize {
            self.per_image.iter().filter_map(f).sum()
        };
        for (name, total, rows) in [
            ("tp", d.tp, sum(|r| r.tp)),
            ("fp", d.fp, sum(|r| r.fp)),
            ("fn", d.fn_, sum(|r| r.fn_)),
        ] {
            if total != rows {
                return Err(Error::Validation(format!(
                    "report {name} total {total} differs from per-image sum {rows}"
                )));
            }
        }
        let scored: Vec<f64> = d
            .per_class
            .iter()
            .filter(|c| c.num_ground_truths > 0)
            .map(|c| c.ap)
            .collect();
        if !scored.is_empty() {
            let mean = scored.iter().sum::<f64>() / scored.len() as f64;
            if (mean - d.map).abs() > 1e-6 {
                return Err(Error::Validation(format!(
                    "report mAP {} differs from mean class AP {mean}",
                    d.map
                )));
            }
        }
        Ok(())
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("report serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_json_bytes(bytes: &[u8]) -> serde_json::Result<Self> {
        serde_json::from_slice(bytes)
    }

    /// One row per image plus a final `ALL` row with totals and micro Dice.
    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let int = |v: Option<usize>| v.map(|n| n.to_string()).unwrap_or_default();
        let real = |v: Option<f64>| v.map(|x| format!("{:.6}", round6(x))).unwrap_or_default();
        w.write_record(["image_id", "tp", "fp", "fn", "dice", "dice_at_detection"])
            .expect("in-memory write");
        for r in &self.per_image {
            w.write_record([
                r.image_id.clone(),
                int(r.tp),
                int(r.fp),
                int(r.fn_),
                real(r.dice),
                real(r.dice_at_detection),
            ])
            .expect("in-memory write");
        }
        let d = self.detection.as_ref();
        let s = self.segmentation.as_ref();
        w.write_record([
            "ALL".to_string(),
            int(d.map(|d| d.tp)),
            int(d.map(|d| d.fp)),
            int(d.map(|d| d.fn_)),
            real(s.map(|s| s.micro_dice)),
            real(s.map(|s| s.micro_dice_at_detection)),
        ])
        .expect("in-memory write");
        w.into_inner().expect("in-memory flush")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Writes `metrics.json` and/or `metrics.csv` into `out_dir`.
pub fn emit_report(
    report: &MetricsReport,
    out_dir: &Path,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>> {
    report.check_consistency()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for f in formats {
        let (name, bytes) = match f {
            ReportFormat::Json => ("metrics.json", report.to_json_bytes()),
            ReportFormat::Csv => ("metrics.csv", report.to_csv_bytes()),
        };
        let path = out_dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
