//! Dataset and prediction import/export.
//!
//! Box datasets come in as COCO-style annotation files, mask datasets as a
//! folder of PNG rasters paired to images by file name. Both end up in a
//! [`DatasetManifest`], which round-trips through the manifest JSON dialect.

mod coco;
mod manifest;
mod masks;
mod predictions;
mod rle;

pub use coco::{
    build_preannotations, export_preannotations, import_coco_boxes, read_coco_rle_masks,
    CocoAnnotation, CocoCategory, CocoFile, CocoImage, ImportReport, RejectedRecord,
    PREANNOTATION_CATEGORY,
};
pub use manifest::{DatasetManifest, GroundTruthMask, ImageRecord};
pub use masks::{import_mask_folder, read_mask_png, write_mask_png, MaskImportReport};
pub use predictions::{load_predictions, ImagePredictions, PredictionSet, RunParams};
pub use rle::{CocoRle, RleJson, RleOrder};

#[derive(Debug, Clone)]
pub struct ImportOptions {
    /// Decode image headers and check them against the recorded dimensions.
    pub verify_images: bool,
    /// Dataset name; derived from the input path when unset.
    pub name: Option<String>,
}

impl Default for ImportOptions {
    fn default() -> Self {
        Self {
            verify_images: true,
            name: None,
        }
    }
}
