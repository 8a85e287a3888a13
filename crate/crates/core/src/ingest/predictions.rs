use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detection::{check_confidence, Detection};
use crate::error::{Error, Result};
use crate::geometry::InstanceMask;

use super::manifest::{DatasetManifest, ImageRecord};

/// Detector/segmenter settings a prediction set was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunParams {
    pub prompt: String,
    pub box_threshold: f64,
    pub text_threshold: f64,
    pub confidence_floor: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImagePredictions {
    pub detections: Vec<Detection>,
    /// Index-aligned with `detections` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<Vec<InstanceMask>>,
}

impl ImagePredictions {
    pub fn boxes(&self) -> impl Iterator<Item = &crate::geometry::BoundingBox> {
        self.detections.iter().map(|d| &d.bbox)
    }

    /// Checks confidences, frame bounds and mask alignment for one image.
    pub fn validate_for(&self, rec: &ImageRecord) -> Result<()> {
        let id = &rec.id;
        for (k, det) in self.detections.iter().enumerate() {
            check_confidence(det.confidence)
                .map_err(|e| Error::Validation(format!("image '{id}' detection {k}: {e}")))?;
            if !det.bbox.fits_within(rec.dims) {
                return Err(Error::Validation(format!(
                    "image '{id}' detection {k}: box {:?} exceeds {}x{}",
                    det.bbox.corners(),
                    rec.dims.width,
                    rec.dims.height
                )));
            }
        }
        if let Some(masks) = &self.masks {
            if masks.len() != self.detections.len() {
                return Err(Error::Validation(format!(
                    "image '{id}': {} masks for {} detections",
                    masks.len(),
                    self.detections.len()
                )));
            }
            if let Some(m) = masks.iter().find(|m| m.dims() != rec.dims) {
                return Err(Error::Validation(format!(
                    "image '{id}': mask is {}x{}, image is {}x{}",
                    m.width(),
                    m.height(),
                    rec.dims.width,
                    rec.dims.height
                )));
            }
        }
        Ok(())
    }

    /// Drops detections (and their masks) scored below `floor`.
    pub fn retain_confident(&mut self, floor: f64) {
        let keep: Vec<bool> = self
            .detections
            .iter()
            .map(|d| d.confidence >= floor)
            .collect();
        let mut it = keep.iter();
        self.detections.retain(|_| *it.next().unwrap());
        if let Some(masks) = &mut self.masks {
            let mut it = keep.iter();
            masks.retain(|_| *it.next().unwrap());
        }
    }
}

/// Persisted pipeline output. Image entries are keyed by image id and kept
/// sorted so serialization is deterministic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionSet {
    pub source: String,
    pub model_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<RunParams>,
    pub images: BTreeMap<String, ImagePredictions>,
}

impl PredictionSet {
    /// Checks the set against `manifest`: known images, confidences in
    /// [0, 1], boxes inside the frame, masks aligned and sized to the image.
    pub fn validate(&self, manifest: &DatasetManifest) -> Result<()> {
        for (id, entry) in &self.images {
            let rec = manifest.image(id).ok_or_else(|| {
                Error::ReferentialIntegrity(format!("predictions refer to unknown image '{id}'"))
            })?;
            entry.validate_for(rec)?;
        }
        Ok(())
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("prediction set serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads a prediction file without checking it against a dataset.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

/// Reads and validates a prediction file against `manifest`.
pub fn load_predictions(path: &Path, manifest: &DatasetManifest) -> Result<PredictionSet> {
    let set = PredictionSet::read(path)?;
    set.validate(manifest)?;
    Ok(set)
}
