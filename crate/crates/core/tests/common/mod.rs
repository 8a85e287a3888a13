#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use colony_core::detection::{ClassId, GroundTruthBox};
use colony_core::geometry::{box_to_mask, mask_union, BoundingBox, ImageDims, InstanceMask};
use colony_core::ingest::{DatasetManifest, GroundTruthMask, ImageRecord};
use colony_core::pipeline::wire::WireDetection;
use colony_core::stub::{StubImage, StubScript};
use image::{Rgb, RgbImage};
use tempfile::TempDir;

pub const WIDTH: u32 = 64;
pub const HEIGHT: u32 = 48;

pub fn dims() -> ImageDims {
    ImageDims::new(WIDTH, HEIGHT).unwrap()
}

pub fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1).unwrap()
}

pub fn det(corners: [f64; 4], score: f64) -> WireDetection {
    WireDetection {
        bbox: corners,
        score,
        phrase: Some("bacterial colony".into()),
    }
}

/// A plate-like PNG whose bytes differ per `seed`.
pub fn plate_png(seed: u8) -> Vec<u8> {
    let img = RgbImage::from_fn(WIDTH, HEIGHT, |x, y| {
        let v = (x as u8).wrapping_mul(3) ^ (y as u8).wrapping_mul(5) ^ seed.wrapping_mul(17);
        Rgb([200u8.saturating_add(v % 40), 190, 170u8.wrapping_add(seed)])
    });
    let mut bytes = Vec::new();
    img.write_to(
        &mut std::io::Cursor::new(&mut bytes),
        image::ImageFormat::Png,
    )
    .unwrap();
    bytes
}

pub struct PlateSpec {
    pub id: &'static str,
    pub gt: Vec<(BoundingBox, u32)>,
    pub detections: Vec<WireDetection>,
}

/// Three plates with box and mask ground truth; the stub answers with
/// matches, a frame overshoot, a false positive and a sub-floor detection.
pub fn plates() -> Vec<PlateSpec> {
    vec![
        PlateSpec {
            id: "plate_a",
            gt: vec![
                (bx(4.0, 4.0, 20.0, 20.0), 1),
                (bx(30.0, 10.0, 50.0, 30.0), 1),
            ],
            detections: vec![
                det([4.0, 4.0, 20.0, 20.0], 0.9),
                det([31.0, 10.0, 50.0, 30.0], 0.8),
            ],
        },
        PlateSpec {
            id: "plate_b",
            gt: vec![
                (bx(10.0, 10.0, 30.0, 30.0), 1),
                (bx(40.0, 20.0, 60.0, 40.0), 2),
            ],
            detections: vec![
                det([-3.0, 8.0, 28.0, 30.0], 0.7),
                det([45.0, 0.0, 55.0, 8.0], 0.6),
            ],
        },
        PlateSpec {
            id: "plate_c",
            gt: vec![(bx(20.0, 20.0, 40.0, 40.0), 2)],
            detections: vec![
                det([20.0, 20.0, 40.0, 40.0], 0.95),
                det([0.0, 0.0, 5.0, 5.0], 0.1),
                det([50.0, 30.0, 60.0, 45.0], 0.5),
            ],
        },
    ]
}

pub struct Fixture {
    pub dir: TempDir,
    pub manifest: DatasetManifest,
    pub images: BTreeMap<String, Vec<u8>>,
}

impl Fixture {
    pub fn script(&self, faults: &[(&str, colony_core::stub::StubFault)]) -> StubScript {
        let mut script = StubScript::new();
        for p in plates() {
            let fault = faults
                .iter()
                .find(|(id, _)| *id == p.id)
                .map(|(_, f)| f.clone());
            script.image(
                &self.images[p.id],
                StubImage {
                    dims: dims(),
                    detections: p.detections,
                    fault,
                },
            );
        }
        script
    }

    pub fn path(&self, name: &str) -> std::path::PathBuf {
        self.dir.path().join(name)
    }
}

pub fn gt_mask(boxes: &[(BoundingBox, u32)]) -> InstanceMask {
    let parts: Vec<InstanceMask> = boxes.iter().map(|(b, _)| box_to_mask(b, dims())).collect();
    mask_union(dims(), &parts).unwrap()
}

pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut images = BTreeMap::new();
    let mut records = Vec::new();
    let mut gt_boxes = BTreeMap::new();
    let mut gt_masks = BTreeMap::new();
    for (k, p) in plates().into_iter().enumerate() {
        let bytes = plate_png(k as u8 + 1);
        let file = dir.path().join(format!("{}.png", p.id));
        std::fs::write(&file, &bytes).unwrap();
        images.insert(p.id.to_string(), bytes);
        records.push(ImageRecord {
            id: p.id.into(),
            file,
            dims: dims(),
            focus_class: None,
        });
        gt_boxes.insert(
            p.id.to_string(),
            p.gt.iter()
                .map(|(b, c)| GroundTruthBox {
                    bbox: *b,
                    class_id: ClassId(*c),
                })
                .collect(),
        );
        gt_masks.insert(
            p.id.to_string(),
            GroundTruthMask {
                file: dir.path().join(format!("{}_mask.png", p.id)),
                mask: gt_mask(&p.gt),
            },
        );
    }
    let manifest = DatasetManifest {
        name: "three-plates".into(),
        categories: BTreeMap::from([
            (ClassId(1), "E. coli".into()),
            (ClassId(2), "S. aureus".into()),
        ]),
        images: records,
        gt_boxes: Some(gt_boxes),
        gt_masks: Some(gt_masks),
    };
    manifest.validate().unwrap();
    Fixture {
        dir,
        manifest,
        images,
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) {
    std::fs::write(path, bytes).unwrap();
}
