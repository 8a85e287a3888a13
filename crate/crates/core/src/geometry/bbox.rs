use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width and height of an image in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidGeometry(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if u64::from(width) * u64::from(height) > u64::from(u32::MAX) {
            return Err(Error::InvalidGeometry(format!(
                "image {width}x{height} exceeds the supported pixel count"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn pixel_count(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }

    pub fn full_frame(&self) -> BoundingBox {
        BoundingBox {
            x_min: 0.0,
            y_min: 0.0,
            x_max: f64::from(self.width),
            y_max: f64::from(self.height),
        }
    }
}

/// Axis-aligned box in continuous pixel coordinates, origin at the top-left
/// corner. Always has strictly positive area.
///
/// A pixel `(i, j)` is covered when its center `(i + 0.5, j + 0.5)` lies in
/// the half-open rectangle `[x_min, x_max) x [y_min, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let coords = [x_min, y_min, x_max, y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "non-finite box coordinates {coords:?}"
            )));
        }
        if coords.iter().any(|&c| c < 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "negative box coordinates {coords:?}"
            )));
        }
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::InvalidGeometry(format!("degenerate box {coords:?}")));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Builds a box from COCO `[x, y, width, height]`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.width(), self.height()]
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter == 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        (inter / union).clamp(0.0, 1.0)
    }

    pub fn fits_within(&self, dims: ImageDims) -> bool {
        self.x_max <= f64::from(dims.width) && self.y_max <= f64::from(dims.height)
    }

    /// Clips the box to the image rectangle. `None` when nothing of positive
    /// area remains.
    pub fn clip_to(&self, dims: ImageDims) -> Option<BoundingBox> {
        let (w, h) = (f64::from(dims.width), f64::from(dims.height));
        BoundingBox::new(
            self.x_min.clamp(0.0, w),
            self.y_min.clamp(0.0, h),
            self.x_max.clamp(0.0, w),
            self.y_max.clamp(0.0, h),
        )
        .ok()
    }

    /// Clips raw (possibly negative or out-of-frame) corner coordinates.
    pub fn clipped_from_corners(coords: [f64; 4], dims: ImageDims) -> Option<BoundingBox> {
        if coords.iter().any(|c| !c.is_finite()) {
            return None;
        }
        let (w, h) = (f64::from(dims.width), f64::from(dims.height));
        BoundingBox::new(
            coords[0].clamp(0.0, w),
            coords[1].clamp(0.0, h),
            coords[2].clamp(0.0, w),
            coords[3].clamp(0.0, h),
        )
        .ok()
    }

    /// Column and row index ranges of the covered pixels, clamped to the frame.
    pub fn pixel_span(&self, dims: ImageDims) -> (Range<u32>, Range<u32>) {
        (
            covered_indices(self.x_min, self.x_max, dims.width),
            covered_indices(self.y_min, self.y_max, dims.height),
        )
    }
}

// Indices i with lo <= i + 0.5 < hi, clamped to [0, limit).
fn covered_indices(lo: f64, hi: f64, limit: u32) -> Range<u32> {
    let limit_f = f64::from(limit);
    let start = (lo - 0.5).ceil().clamp(0.0, limit_f) as u32;
    let end = (hi - 0.5).ceil().clamp(0.0, limit_f) as u32;
    start..end.max(start)
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BoundingBox::new(c[0], c[1], c[2], c[3])
    }
}

impl AsRef<BoundingBox> for BoundingBox {
    fn as_ref(&self) -> &BoundingBox {
        self
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.corners()
    }
}

/// Intersection-over-union of two boxes, computed analytically.
pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.iou(b)
}
