use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use regex::Regex;

use crate::detection::ClassId;
use crate::error::{Error, Result};
use crate::geometry::{ImageDims, InstanceMask};

use super::manifest::{DatasetManifest, GroundTruthMask, ImageRecord};
use super::ImportOptions;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

/// Reads a mask raster; any non-zero color channel marks foreground.
pub fn read_mask_png(path: &Path) -> Result<InstanceMask> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgba = img.to_rgba16();
    let dims = ImageDims::new(rgba.width(), rgba.height())?;
    let raster: Vec<u8> = rgba
        .pixels()
        .map(|p| u8::from(p.0[..3].iter().any(|&c| c != 0)))
        .collect();
    InstanceMask::from_raster(dims, &raster)
}

/// Writes a mask as an 8-bit single-channel PNG (0 / 255).
pub fn write_mask_png(path: &Path, mask: &InstanceMask) -> Result<()> {
    let raster = mask.to_raster();
    let img = GrayImage::from_fn(mask.width(), mask.height(), |x, y| {
        Luma([raster[(y * mask.width() + x) as usize] * 255])
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn image_dims(path: &Path) -> Result<ImageDims> {
    let (w, h) = image::image_dimensions(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    ImageDims::new(w, h)
}

/// Files that did not end up in a mask-folder import.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaskImportReport {
    pub unpaired_images: Vec<PathBuf>,
    pub unpaired_masks: Vec<PathBuf>,
}

/// Pairs each image in `image_root` with the mask in `mask_root` whose file
/// name matches `pairing_rule`.
///
/// The rule must contain `{stem}` exactly once (the image file name without
/// extension) and may use `*` as a wildcard, e.g. `{stem}_mask.png` or
/// `{stem}.*`. An image matching several masks, or a mask claimed by several
/// images, is a configuration error.
pub fn import_mask_folder(
    mask_root: &Path,
    image_root: &Path,
    pairing_rule: &str,
    options: &ImportOptions,
) -> Result<(DatasetManifest, MaskImportReport)> {
    if pairing_rule.matches("{stem}").count() != 1 {
        return Err(Error::Config(format!(
            "pairing rule '{pairing_rule}' must contain {{stem}} exactly once"
        )));
    }
    let (prefix, suffix) = pairing_rule.split_once("{stem}").expect("checked above");
    let mask_files = list_files(mask_root, |_| true)?;
    let image_files = list_files(image_root, |p| {
        p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
    })?;

    let mut pairing: BTreeMap<PathBuf, PathBuf> = BTreeMap::new();
    let mut claimed_by: BTreeMap<PathBuf, PathBuf> = BTreeMap::new();
    for image in &image_files {
        let stem = file_stem(image);
        let pattern = format!(
            "^{}{}{}$",
            glob_to_regex(prefix),
            regex::escape(&stem),
            glob_to_regex(suffix)
        );
        let re = Regex::new(&pattern)
            .map_err(|e| Error::Config(format!("pairing rule '{pairing_rule}': {e}")))?;
        let hits: Vec<&PathBuf> = mask_files
            .iter()
            .filter(|m| *m != image && re.is_match(&file_name(m)))
            .collect();
        match hits.as_slice() {
            [] => {}
            [mask] => {
                if let Some(other) = claimed_by.insert((*mask).clone(), image.clone()) {
                    return Err(Error::Config(format!(
                        "ambiguous pairing: mask {} matches both {} and {}",
                        mask.display(),
                        other.display(),
                        image.display()
                    )));
                }
                pairing.insert(image.clone(), (*mask).clone());
            }
            many => {
                return Err(Error::Config(format!(
                    "ambiguous pairing: image {} matches {} masks ({})",
                    image.display(),
                    many.len(),
                    many.iter()
                        .map(|m| file_name(m))
                        .collect::<Vec<_>>()
                        .join(", ")
                )))
            }
        }
    }

    // when both roots coincide, every file is both an image and a mask
    // candidate; unpaired files are classified by whether the rule could
    // have produced their name from a different stem
    let shared = same_dir(mask_root, image_root);
    let shape = Regex::new(&format!(
        "^{}(.+){}$",
        glob_to_regex(prefix),
        glob_to_regex(suffix)
    ))
    .map_err(|e| Error::Config(format!("pairing rule '{pairing_rule}': {e}")))?;
    let looks_like_mask = |p: &Path| {
        shape
            .captures(&file_name(p))
            .is_some_and(|c| c[1] != file_stem(p))
    };
    let claimed: BTreeSet<&PathBuf> = claimed_by.keys().collect();
    pairing.retain(|image, _| !claimed.contains(image));
    let unpaired_images = image_files
        .iter()
        .filter(|p| !pairing.contains_key(*p) && !claimed.contains(p))
        .filter(|p| !(shared && looks_like_mask(p)))
        .cloned()
        .collect();
    let used: BTreeSet<&PathBuf> = pairing.values().collect();
    let report = MaskImportReport {
        unpaired_images,
        unpaired_masks: mask_files
            .iter()
            .filter(|m| !used.contains(m) && !pairing.contains_key(*m))
            .filter(|m| !shared || looks_like_mask(m))
            .cloned()
            .collect(),
    };

    let mut images = Vec::new();
    let mut masks = BTreeMap::new();
    for (image, mask_path) in pairing {
        let mask = read_mask_png(&mask_path)?;
        let dims = if options.verify_images {
            let dims = image_dims(&image)?;
            if dims != mask.dims() {
                return Err(Error::InvalidGeometry(format!(
                    "mask {} is {}x{} but image {} is {}x{}",
                    mask_path.display(),
                    mask.width(),
                    mask.height(),
                    image.display(),
                    dims.width,
                    dims.height
                )));
            }
            dims
        } else {
            mask.dims()
        };
        let id = file_stem(&image);
        images.push(ImageRecord {
            id: id.clone(),
            file: image,
            dims,
            focus_class: None,
        });
        masks.insert(
            id,
            GroundTruthMask {
                file: mask_path,
                mask,
            },
        );
    }

    let name = options.name.clone().unwrap_or_else(|| {
        mask_root
            .file_name()
            .map_or_else(|| "masks".into(), |n| n.to_string_lossy().into_owned())
    });
    let manifest = DatasetManifest {
        name,
        categories: BTreeMap::from([(ClassId(1), "colony".to_string())]),
        images,
        gt_boxes: None,
        gt_masks: Some(masks),
    };
    manifest.validate()?;
    Ok((manifest, report))
}

fn list_files(dir: &Path, keep: impl Fn(&Path) -> bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && keep(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(a), Ok(b)) => a == b,
        _ => a == b,
    }
}

fn glob_to_regex(glob: &str) -> String {
    glob.split('*')
        .map(regex::escape)
        .collect::<Vec<_>>()
        .join("[^/]*")
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned()
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    fn write_gray(path: &Path, w: u32, h: u32, pixels: &[(u32, u32, u8)]) {
        let mut img = GrayImage::new(w, h);
        for &(x, y, v) in pixels {
            img.put_pixel(x, y, Luma([v]));
        }
        img.save(path).unwrap();
    }

    fn write_rgb(path: &Path, w: u32, h: u32) {
        RgbImage::new(w, h).save(path).unwrap();
    }

    #[test]
    fn binarizes_nonzero_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        write_gray(&p, 4, 4, &[(0, 0, 1), (1, 2, 128), (3, 3, 255)]);
        let m = read_mask_png(&p).unwrap();
        assert_eq!(m.foreground_count(), 3);
        assert!(m.get(1, 2) && m.get(3, 3) && !m.get(2, 2));

        let out = dir.path().join("out.png");
        write_mask_png(&out, &m).unwrap();
        assert_eq!(read_mask_png(&out).unwrap(), m);
    }

    #[test]
    fn pairs_images_with_masks() {
        let dir = tempfile::tempdir().unwrap();
        let (imgs, masks) = (dir.path().join("img"), dir.path().join("mask"));
        fs::create_dir_all(&imgs).unwrap();
        fs::create_dir_all(&masks).unwrap();
        write_rgb(&imgs.join("p1.jpg"), 4, 4);
        write_rgb(&imgs.join("p2.png"), 4, 4);
        write_rgb(&imgs.join("lonely.png"), 4, 4);
        write_gray(&masks.join("p1_mask.png"), 4, 4, &[(0, 0, 255)]);
        write_gray(
            &masks.join("p2_mask.png"),
            4,
            4,
            &[(0, 0, 255), (1, 1, 255)],
        );
        write_gray(&masks.join("orphan_mask.png"), 4, 4, &[]);

        let (m, report) =
            import_mask_folder(&masks, &imgs, "{stem}_mask.png", &ImportOptions::default())
                .unwrap();
        assert_eq!(m.images.len(), 2);
        assert_eq!(m.mask_for("p1").unwrap().foreground_count(), 1);
        assert_eq!(m.mask_for("p2").unwrap().foreground_count(), 2);
        assert!(!m.has_boxes());
        assert_eq!(report.unpaired_images, vec![imgs.join("lonely.png")]);
        assert_eq!(report.unpaired_masks, vec![masks.join("orphan_mask.png")]);
    }

    #[test]
    fn shared_folder_does_not_treat_masks_as_images() {
        let dir = tempfile::tempdir().unwrap();
        write_rgb(&dir.path().join("p1.png"), 3, 3);
        write_gray(&dir.path().join("p1_mask.png"), 3, 3, &[(1, 1, 9)]);
        let (m, report) = import_mask_folder(
            dir.path(),
            dir.path(),
            "{stem}_mask.png",
            &ImportOptions::default(),
        )
        .unwrap();
        assert_eq!(m.images.len(), 1);
        assert_eq!(m.images[0].id, "p1");
        assert!(report.unpaired_images.is_empty() && report.unpaired_masks.is_empty());
    }

    #[test]
    fn dims_mismatch_names_both_files() {
        let dir = tempfile::tempdir().unwrap();
        let (imgs, masks) = (dir.path().join("img"), dir.path().join("mask"));
        fs::create_dir_all(&imgs).unwrap();
        fs::create_dir_all(&masks).unwrap();
        write_rgb(&imgs.join("big.png"), 200, 200);
        write_gray(&masks.join("big.png"), 100, 100, &[]);
        let err =
            import_mask_folder(&masks, &imgs, "{stem}.png", &ImportOptions::default()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::InvalidGeometry(_)));
        assert!(
            msg.contains("mask/big.png") && msg.contains("img/big.png"),
            "{msg}"
        );
    }

    #[test]
    fn ambiguous_or_malformed_rules() {
        let dir = tempfile::tempdir().unwrap();
        let (imgs, masks) = (dir.path().join("img"), dir.path().join("mask"));
        fs::create_dir_all(&imgs).unwrap();
        fs::create_dir_all(&masks).unwrap();
        write_rgb(&imgs.join("a.png"), 2, 2);
        write_gray(&masks.join("a.png"), 2, 2, &[]);
        write_gray(&masks.join("a.bmp"), 2, 2, &[]);
        let opts = ImportOptions::default();
        assert!(matches!(
            import_mask_folder(&masks, &imgs, "{stem}.*", &opts),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            import_mask_folder(&masks, &imgs, "mask.png", &opts),
            Err(Error::Config(_))
        ));
        assert!(import_mask_folder(&masks, &imgs, "{stem}.png", &opts).is_ok());
    }
}
