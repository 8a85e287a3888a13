//! Synthetic inputs for the criterion benches.

use colony_core::{BoundingBox, Detection, ImageDims, InstanceMask};
use rand::Rng;

pub fn random_box(rng: &mut impl Rng, frame: f64, max_side: f64) -> BoundingBox {
    let w = rng.gen_range(1.0..max_side);
    let h = rng.gen_range(1.0..max_side);
    let x = rng.gen_range(0.0..frame - w);
    let y = rng.gen_range(0.0..frame - h);
    BoundingBox::new(x, y, x + w, y + h).expect("positive extent")
}

pub fn random_detections(rng: &mut impl Rng, n: usize, frame: f64) -> Vec<Detection> {
    (0..n)
        .map(|_| Detection::new(random_box(rng, frame, 40.0), rng.gen_range(0.0..=1.0)).unwrap())
        .collect()
}

/// Blob-like mask: a union of random filled boxes.
pub fn random_mask(rng: &mut impl Rng, dims: ImageDims, blobs: usize) -> InstanceMask {
    let masks: Vec<_> = (0..blobs)
        .map(|_| {
            let b = random_box(rng, f64::from(dims.width.min(dims.height)), 60.0);
            colony_core::box_to_mask(&b, dims)
        })
        .collect();
    colony_core::mask_union(dims, &masks).expect("shared dims")
}
