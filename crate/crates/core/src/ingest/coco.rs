use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detection::{ClassId, GroundTruthBox};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, ImageDims, InstanceMask};

use super::manifest::{DatasetManifest, ImageRecord};
use super::masks::image_dims;
use super::predictions::PredictionSet;
use super::rle::CocoRle;
use super::ImportOptions;

#[derive(Debug, Serialize, Deserialize)]
pub struct CocoFile {
    pub images: Vec<CocoImage>,
    #[serde(default)]
    pub categories: Vec<CocoCategory>,
    #[serde(default)]
    pub annotations: Vec<CocoAnnotation>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: ClassId,
    pub name: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CocoAnnotation {
    #[serde(default)]
    pub id: Option<u64>,
    pub image_id: u64,
    pub category_id: ClassId,
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
    #[serde(default)]
    pub iscrowd: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRecord {
    /// Position in the source `annotations` array.
    pub index: usize,
    pub reason: String,
}

/// Bookkeeping for a box import: `imported + rejected.len()` equals the
/// number of source annotations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImportReport {
    pub source_records: usize,
    pub imported: usize,
    pub rejected: Vec<RejectedRecord>,
    /// Boxes that overshot the frame and were clipped.
    pub clipped: usize,
}

fn read_coco(path: &Path) -> Result<CocoFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Imports a COCO-style box annotation file. `[x, y, w, h]` boxes become
/// corner boxes; zero-area boxes are rejected and reported. Image files are
/// resolved under `image_root`.
pub fn import_coco_boxes(
    annotation_file: &Path,
    image_root: &Path,
    options: &ImportOptions,
) -> Result<(DatasetManifest, ImportReport)> {
    let coco = read_coco(annotation_file)?;

    let mut categories = BTreeMap::new();
    for c in coco.categories {
        if categories.insert(c.id, c.name).is_some() {
            return Err(Error::Validation(format!("duplicate category id {}", c.id)));
        }
    }

    let mut images = Vec::with_capacity(coco.images.len());
    let mut by_coco_id: HashMap<u64, usize> = HashMap::new();
    for im in &coco.images {
        let dims = ImageDims::new(im.width, im.height)?;
        let file = image_root.join(&im.file_name);
        if options.verify_images {
            let actual = image_dims(&file)?;
            if actual != dims {
                return Err(Error::InvalidGeometry(format!(
                    "{} is {}x{} but the annotation file says {}x{}",
                    file.display(),
                    actual.width,
                    actual.height,
                    dims.width,
                    dims.height
                )));
            }
        }
        if by_coco_id.insert(im.id, images.len()).is_some() {
            return Err(Error::Validation(format!("duplicate image id {}", im.id)));
        }
        images.push(ImageRecord {
            id: im.id.to_string(),
            file,
            dims,
            focus_class: None,
        });
    }

    let mut report = ImportReport {
        source_records: coco.annotations.len(),
        ..Default::default()
    };
    let mut boxes: BTreeMap<String, Vec<GroundTruthBox>> = BTreeMap::new();
    for (index, ann) in coco.annotations.iter().enumerate() {
        let &slot = by_coco_id.get(&ann.image_id).ok_or_else(|| {
            Error::ReferentialIntegrity(format!(
                "annotation #{index} refers to missing image {}",
                ann.image_id
            ))
        })?;
        if !categories.contains_key(&ann.category_id) {
            return Err(Error::ReferentialIntegrity(format!(
                "annotation #{index} refers to undeclared category {}",
                ann.category_id
            )));
        }
        let rec = &images[slot];
        let [x, y, w, h] = ann.bbox;
        let raw = match BoundingBox::from_xywh(x, y, w, h) {
            Ok(b) => Some(b),
            // slightly negative origins are clipped like any other overshoot
            Err(_) if w > 0.0 && h > 0.0 => {
                BoundingBox::clipped_from_corners([x, y, x + w, y + h], rec.dims)
            }
            Err(_) => None,
        };
        let Some(raw) = raw else {
            report.rejected.push(RejectedRecord {
                index,
                reason: format!("degenerate box {:?}", ann.bbox),
            });
            continue;
        };
        let bbox = if raw.fits_within(rec.dims) && raw.corners() == [x, y, x + w, y + h] {
            raw
        } else {
            match raw.clip_to(rec.dims) {
                Some(b) => {
                    report.clipped += 1;
                    b
                }
                None => {
                    report.rejected.push(RejectedRecord {
                        index,
                        reason: format!("box {:?} lies outside the image", ann.bbox),
                    });
                    continue;
                }
            }
        };
        report.imported += 1;
        boxes
            .entry(rec.id.clone())
            .or_default()
            .push(GroundTruthBox {
                bbox,
                class_id: ann.category_id,
            });
    }

    for rec in &mut images {
        let classes: Vec<ClassId> = boxes
            .get(&rec.id)
            .map(|b| b.iter().map(|g| g.class_id).collect())
            .unwrap_or_default();
        if let Some(&first) = classes.first() {
            if classes.iter().all(|&c| c == first) {
                rec.focus_class = Some(first);
            }
        }
    }

    let name = options.name.clone().unwrap_or_else(|| {
        annotation_file
            .file_stem()
            .map_or_else(|| "coco".into(), |s| s.to_string_lossy().into_owned())
    });
    let manifest = DatasetManifest {
        name,
        categories,
        images,
        gt_boxes: Some(boxes),
        gt_masks: None,
    };
    manifest.validate()?;
    Ok((manifest, report))
}

/// Instance masks stored as uncompressed RLE segmentations, keyed by image
/// id (as text) in annotation order.
pub fn read_coco_rle_masks(annotation_file: &Path) -> Result<BTreeMap<String, Vec<InstanceMask>>> {
    let coco = read_coco(annotation_file)?;
    let mut out: BTreeMap<String, Vec<InstanceMask>> = BTreeMap::new();
    for ann in coco.annotations {
        let Some(seg) = ann.segmentation else {
            continue;
        };
        if !seg.is_object() {
            continue;
        }
        let rle: CocoRle =
            serde_json::from_value(seg).map_err(|e| Error::json(annotation_file, e))?;
        out.entry(ann.image_id.to_string())
            .or_default()
            .push(rle.to_mask()?);
    }
    Ok(out)
}

/// Name of the category assigned to detections on images without a known
/// focal species.
pub const PREANNOTATION_CATEGORY: &str = "colony";

/// Writes predictions as a COCO annotation file for annotation tooling.
/// Boxes go back to `[x, y, w, h]`; masks become column-major uncompressed
/// RLE. Detections on images with a focal species take that category, the
/// rest a generic colony category.
pub fn export_preannotations(
    preds: &PredictionSet,
    manifest: &DatasetManifest,
    out: &Path,
) -> Result<()> {
    let coco = build_preannotations(preds, manifest)?;
    let mut bytes = serde_json::to_vec_pretty(&coco).expect("COCO file serializes");
    bytes.push(b'\n');
    fs::write(out, bytes).map_err(|e| Error::io(out, e))
}

pub fn build_preannotations(preds: &PredictionSet, manifest: &DatasetManifest) -> Result<CocoFile> {
    let generic_id = ClassId(manifest.categories.keys().last().map_or(1, |c| c.0 + 1));
    let mut categories: Vec<CocoCategory> = manifest
        .categories
        .iter()
        .map(|(&id, name)| CocoCategory {
            id,
            name: name.clone(),
        })
        .collect();
    let mut uses_generic = false;
    let mut images = Vec::new();
    let mut annotations = Vec::new();

    for (i, rec) in manifest.images.iter().enumerate() {
        let coco_id = rec.id.parse::<u64>().unwrap_or(i as u64 + 1);
        images.push(CocoImage {
            id: coco_id,
            file_name: rec.file.to_string_lossy().into_owned(),
            width: rec.dims.width,
            height: rec.dims.height,
        });
        let Some(entry) = preds.images.get(&rec.id) else {
            continue;
        };
        if entry
            .masks
            .as_ref()
            .is_some_and(|m| m.len() != entry.detections.len())
        {
            return Err(Error::Validation(format!(
                "image '{}': mask count differs from detection count",
                rec.id
            )));
        }
        let category_id = rec.focus_class.unwrap_or_else(|| {
            uses_generic = true;
            generic_id
        });
        for (k, det) in entry.detections.iter().enumerate() {
            let segmentation = entry
                .masks
                .as_ref()
                .map(|m| serde_json::to_value(CocoRle::from_mask(&m[k])).expect("RLE serializes"));
            annotations.push(CocoAnnotation {
                id: Some(annotations.len() as u64 + 1),
                image_id: coco_id,
                category_id,
                bbox: det.bbox.to_xywh(),
                area: Some(match &entry.masks {
                    Some(m) => m[k].foreground_count() as f64,
                    None => det.bbox.area(),
                }),
                iscrowd: 0,
                score: Some(det.confidence),
                segmentation,
            });
        }
    }
    if uses_generic {
        categories.push(CocoCategory {
            id: generic_id,
            name: PREANNOTATION_CATEGORY.into(),
        });
    }
    Ok(CocoFile {
        images,
        categories,
        annotations,
    })
}
