use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detection::{ClassId, GroundTruthBox};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, ImageDims, InstanceMask};

use super::masks::read_mask_png;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub file: PathBuf,
    pub dims: ImageDims,
    /// The plate's focal species, when known.
    pub focus_class: Option<ClassId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthMask {
    pub file: PathBuf,
    pub mask: InstanceMask,
}

/// Canonical in-memory dataset. `gt_boxes` and `gt_masks` are `None` when the
/// dataset carries no annotation of that type; at least one is present.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub categories: BTreeMap<ClassId, String>,
    pub images: Vec<ImageRecord>,
    pub gt_boxes: Option<BTreeMap<String, Vec<GroundTruthBox>>>,
    pub gt_masks: Option<BTreeMap<String, GroundTruthMask>>,
}

impl DatasetManifest {
    pub fn image(&self, id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|r| r.id == id)
    }

    pub fn has_boxes(&self) -> bool {
        self.gt_boxes.is_some()
    }

    pub fn has_masks(&self) -> bool {
        self.gt_masks.is_some()
    }

    pub fn boxes_for(&self, id: &str) -> &[GroundTruthBox] {
        self.gt_boxes
            .as_ref()
            .and_then(|m| m.get(id))
            .map_or(&[], Vec::as_slice)
    }

    pub fn mask_for(&self, id: &str) -> Option<&InstanceMask> {
        self.gt_masks.as_ref()?.get(id).map(|m| &m.mask)
    }

    pub fn total_boxes(&self) -> usize {
        self.gt_boxes
            .as_ref()
            .map_or(0, |m| m.values().map(Vec::len).sum())
    }

    pub fn validate(&self) -> Result<()> {
        if self.gt_boxes.is_none() && self.gt_masks.is_none() {
            return Err(Error::Validation(format!(
                "dataset '{}' has neither box nor mask ground truth",
                self.name
            )));
        }
        let mut ids = HashSet::new();
        for rec in &self.images {
            if !ids.insert(rec.id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate image id '{}'",
                    rec.id
                )));
            }
            if let Some(c) = rec.focus_class {
                self.check_class(c)?;
            }
        }
        for (id, boxes) in self.gt_boxes.iter().flatten() {
            let rec = self.require_image(id)?;
            for b in boxes {
                self.check_class(b.class_id)?;
                if !b.bbox.fits_within(rec.dims) {
                    return Err(Error::InvalidGeometry(format!(
                        "box {:?} of image '{id}' exceeds {}x{}",
                        b.bbox.corners(),
                        rec.dims.width,
                        rec.dims.height
                    )));
                }
            }
        }
        for (id, m) in self.gt_masks.iter().flatten() {
            let rec = self.require_image(id)?;
            if m.mask.dims() != rec.dims {
                return Err(Error::InvalidGeometry(format!(
                    "mask {} is {}x{} but image '{id}' is {}x{}",
                    m.file.display(),
                    m.mask.width(),
                    m.mask.height(),
                    rec.dims.width,
                    rec.dims.height
                )));
            }
        }
        Ok(())
    }

    fn require_image(&self, id: &str) -> Result<&ImageRecord> {
        self.image(id).ok_or_else(|| {
            Error::ReferentialIntegrity(format!("annotation refers to unknown image '{id}'"))
        })
    }

    fn check_class(&self, c: ClassId) -> Result<()> {
        if self.categories.contains_key(&c) {
            Ok(())
        } else {
            Err(Error::ReferentialIntegrity(format!(
                "undeclared category {c}"
            )))
        }
    }

    /// Reads a manifest file. Relative file paths resolve against the
    /// manifest's directory; mask rasters are decoded eagerly.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: ManifestJson = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        raw.into_manifest(base)
    }

    /// Writes the manifest as JSON. Paths under `path`'s directory are
    /// written relative to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let raw = ManifestJson::from_manifest(self, base);
        let mut bytes = serde_json::to_vec_pretty(&raw).expect("manifest serializes");
        bytes.push(b'\n');
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestJson {
    name: String,
    categories: Vec<CategoryJson>,
    images: Vec<ImageJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boxes: Option<BTreeMap<String, Vec<BoxJson>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    masks: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CategoryJson {
    id: ClassId,
    name: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageJson {
    id: String,
    file: String,
    width: u32,
    height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    focus_class: Option<ClassId>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxJson {
    bbox: [f64; 4],
    category_id: ClassId,
}

impl ManifestJson {
    fn into_manifest(self, base: &Path) -> Result<DatasetManifest> {
        let mut categories = BTreeMap::new();
        for c in self.categories {
            if categories.insert(c.id, c.name).is_some() {
                return Err(Error::Validation(format!("duplicate category id {}", c.id)));
            }
        }
        let images = self
            .images
            .into_iter()
            .map(|im| {
                Ok(ImageRecord {
                    dims: ImageDims::new(im.width, im.height)?,
                    file: base.join(im.file),
                    id: im.id,
                    focus_class: im.focus_class,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let gt_boxes = self
            .boxes
            .map(|boxes| {
                boxes
                    .into_iter()
                    .map(|(id, list)| {
                        let list = list
                            .into_iter()
                            .map(|b| {
                                let [x, y, w, h] = b.bbox;
                                Ok(GroundTruthBox {
                                    bbox: BoundingBox::from_xywh(x, y, w, h)?,
                                    class_id: b.category_id,
                                })
                            })
                            .collect::<Result<Vec<_>>>()?;
                        Ok((id, list))
                    })
                    .collect::<Result<BTreeMap<_, _>>>()
            })
            .transpose()?;
        let gt_masks = self
            .masks
            .map(|masks| {
                masks
                    .into_iter()
                    .map(|(id, file)| {
                        let file = base.join(file);
                        let mask = read_mask_png(&file)?;
                        Ok((id, GroundTruthMask { file, mask }))
                    })
                    .collect::<Result<BTreeMap<_, _>>>()
            })
            .transpose()?;
        let manifest = DatasetManifest {
            name: self.name,
            categories,
            images,
            gt_boxes,
            gt_masks,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    fn from_manifest(m: &DatasetManifest, base: &Path) -> Self {
        ManifestJson {
            name: m.name.clone(),
            categories: m
                .categories
                .iter()
                .map(|(&id, name)| CategoryJson {
                    id,
                    name: name.clone(),
                })
                .collect(),
            images: m
                .images
                .iter()
                .map(|r| ImageJson {
                    id: r.id.clone(),
                    file: relative_to(&r.file, base),
                    width: r.dims.width,
                    height: r.dims.height,
                    focus_class: r.focus_class,
                })
                .collect(),
            boxes: m.gt_boxes.as_ref().map(|boxes| {
                boxes
                    .iter()
                    .map(|(id, list)| {
                        let list = list
                            .iter()
                            .map(|b| BoxJson {
                                bbox: b.bbox.to_xywh(),
                                category_id: b.class_id,
                            })
                            .collect();
                        (id.clone(), list)
                    })
                    .collect()
            }),
            masks: m.gt_masks.as_ref().map(|masks| {
                masks
                    .iter()
                    .map(|(id, gm)| (id.clone(), relative_to(&gm.file, base)))
                    .collect()
            }),
        }
    }
}

pub(crate) fn relative_to(path: &Path, base: &Path) -> String {
    let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    let (p, b) = (abs(path), abs(base));
    match p.strip_prefix(&b) {
        Ok(rel) => rel.to_string_lossy().into_owned(),
        Err(_) => p.to_string_lossy().into_owned(),
    }
}
