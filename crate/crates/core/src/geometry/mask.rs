use std::collections::VecDeque;

use crate::error::{Error, Result};

use super::{BoundingBox, ImageDims};

/// Binary raster stored as row-major run lengths.
///
/// `runs` alternates background and foreground, starting with a (possibly
/// empty) background run. Every later run is non-zero and the runs sum to
/// `width * height`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InstanceMask {
    dims: ImageDims,
    runs: Vec<u32>,
}

impl InstanceMask {
    pub fn empty(dims: ImageDims) -> Self {
        Self {
            dims,
            runs: vec![dims.pixel_count() as u32],
        }
    }

    pub fn full(dims: ImageDims) -> Self {
        Self {
            dims,
            runs: vec![0, dims.pixel_count() as u32],
        }
    }

    /// Builds a mask from row-major run lengths. Zero-length runs past the
    /// first are folded away, so the stored form is always canonical.
    pub fn from_runs(dims: ImageDims, runs: &[u32]) -> Result<Self> {
        let total: u64 = runs.iter().map(|&r| u64::from(r)).sum();
        if total != dims.pixel_count() {
            return Err(Error::InvalidGeometry(format!(
                "run lengths sum to {total}, expected {} for {}x{}",
                dims.pixel_count(),
                dims.width,
                dims.height
            )));
        }
        let mut intervals = Vec::new();
        let mut pos = 0u64;
        for (i, &r) in runs.iter().enumerate() {
            let r = u64::from(r);
            if i % 2 == 1 && r > 0 {
                intervals.push((pos, pos + r));
            }
            pos += r;
        }
        Ok(Self::from_intervals(dims, intervals))
    }

    /// Encodes a row-major raster; any non-zero value is foreground.
    pub fn from_raster(dims: ImageDims, raster: &[u8]) -> Result<Self> {
        if raster.len() as u64 != dims.pixel_count() {
            return Err(Error::InvalidGeometry(format!(
                "raster has {} pixels, expected {}",
                raster.len(),
                dims.pixel_count()
            )));
        }
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &v in raster {
            let fg = v != 0;
            if fg != current {
                runs.push(len);
                len = 0;
                current = fg;
            }
            len += 1;
        }
        runs.push(len);
        Ok(Self { dims, runs })
    }

    /// Decodes into a row-major raster of 0/1 values.
    pub fn to_raster(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.dims.pixel_count() as usize];
        for (start, end) in self.intervals() {
            out[start as usize..end as usize].fill(1);
        }
        out
    }

    /// Builds a mask from sorted, non-overlapping half-open foreground
    /// intervals over row-major pixel indices. Adjacent intervals merge.
    pub(crate) fn from_intervals(
        dims: ImageDims,
        intervals: impl IntoIterator<Item = (u64, u64)>,
    ) -> Self {
        let mut runs = Vec::new();
        let mut cursor = 0u64;
        let mut open: Option<(u64, u64)> = None;
        let flush = |(s, e): (u64, u64), cursor: &mut u64, runs: &mut Vec<u32>| {
            runs.push((s - *cursor) as u32);
            runs.push((e - s) as u32);
            *cursor = e;
        };
        for (s, e) in intervals {
            if s >= e {
                continue;
            }
            open = match open {
                Some((os, oe)) if s <= oe => Some((os, oe.max(e))),
                Some(prev) => {
                    flush(prev, &mut cursor, &mut runs);
                    Some((s, e))
                }
                None => Some((s, e)),
            };
        }
        if let Some(prev) = open {
            flush(prev, &mut cursor, &mut runs);
        }
        let total = dims.pixel_count();
        if cursor < total || runs.is_empty() {
            runs.push((total - cursor) as u32);
        }
        Self { dims, runs }
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn width(&self) -> u32 {
        self.dims.width
    }

    pub fn height(&self) -> u32 {
        self.dims.height
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    /// Half-open foreground intervals over row-major pixel indices.
    pub fn intervals(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.runs.iter().enumerate().filter_map(move |(i, &r)| {
            let start = pos;
            pos += u64::from(r);
            (i % 2 == 1).then_some((start, pos))
        })
    }

    pub fn foreground_count(&self) -> u64 {
        self.runs
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&r| u64::from(r))
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.foreground_count() == 0
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        let idx = u64::from(y) * u64::from(self.dims.width) + u64::from(x);
        self.intervals().any(|(s, e)| s <= idx && idx < e)
    }

    /// Column-major (COCO) run lengths of the same raster.
    pub fn to_column_major_runs(&self) -> Vec<u32> {
        let (w, h) = (self.dims.width as usize, self.dims.height as usize);
        let raster = self.to_raster();
        let mut runs = Vec::new();
        let mut current = 0u8;
        let mut len = 0u32;
        for x in 0..w {
            for y in 0..h {
                let v = raster[y * w + x];
                if v != current {
                    runs.push(len);
                    len = 0;
                    current = v;
                }
                len += 1;
            }
        }
        runs.push(len);
        runs
    }

    /// Inverse of [`InstanceMask::to_column_major_runs`].
    pub fn from_column_major_runs(dims: ImageDims, runs: &[u32]) -> Result<Self> {
        let column_major = Self::from_runs(
            ImageDims {
                width: dims.height,
                height: dims.width,
            },
            runs,
        )?
        .to_raster();
        let (w, h) = (dims.width as usize, dims.height as usize);
        let mut row_major = vec![0u8; w * h];
        for x in 0..w {
            for y in 0..h {
                row_major[y * w + x] = column_major[x * h + y];
            }
        }
        Self::from_raster(dims, &row_major)
    }

    fn check_dims(&self, other: &InstanceMask) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::InvalidGeometry(format!(
                "mask dimensions differ: {}x{} vs {}x{}",
                self.dims.width, self.dims.height, other.dims.width, other.dims.height
            )));
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &InstanceMask) -> Result<u64> {
        self.check_dims(other)?;
        Ok(intersect_intervals(self.intervals(), other.intervals())
            .map(|(s, e)| e - s)
            .sum())
    }
}

fn intersect_intervals(
    a: impl Iterator<Item = (u64, u64)>,
    b: impl Iterator<Item = (u64, u64)>,
) -> impl Iterator<Item = (u64, u64)> {
    let mut a = a.peekable();
    let mut b = b.peekable();
    std::iter::from_fn(move || loop {
        let (&(as_, ae), &(bs, be)) = (a.peek()?, b.peek()?);
        let (s, e) = (as_.max(bs), ae.min(be));
        if ae <= be {
            a.next();
        } else {
            b.next();
        }
        if s < e {
            return Some((s, e));
        }
    })
}

fn union_intervals(
    a: impl Iterator<Item = (u64, u64)>,
    b: impl Iterator<Item = (u64, u64)>,
) -> Vec<(u64, u64)> {
    let mut out: Vec<(u64, u64)> = Vec::new();
    let mut a = a.peekable();
    let mut b = b.peekable();
    loop {
        let next = match (a.peek(), b.peek()) {
            (Some(&x), Some(&y)) => {
                if x.0 <= y.0 {
                    a.next();
                    x
                } else {
                    b.next();
                    y
                }
            }
            (Some(&x), None) => {
                a.next();
                x
            }
            (None, Some(&y)) => {
                b.next();
                y
            }
            (None, None) => break,
        };
        match out.last_mut() {
            Some(last) if next.0 <= last.1 => last.1 = last.1.max(next.1),
            _ => out.push(next),
        }
    }
    out
}

/// `2|A ∩ B| / (|A| + |B|)` from pixel counts; two empty masks score 1.0.
pub fn dice_from_counts(intersection: u64, a: u64, b: u64) -> f64 {
    if a + b == 0 {
        1.0
    } else {
        2.0 * intersection as f64 / (a + b) as f64
    }
}

/// Dice coefficient of two masks over foreground pixels.
pub fn mask_dice(a: &InstanceMask, b: &InstanceMask) -> Result<f64> {
    let inter = a.intersection_count(b)?;
    Ok(dice_from_counts(
        inter,
        a.foreground_count(),
        b.foreground_count(),
    ))
}

/// Rasterizes a box by the pixel-center rule. Boxes outside the frame give
/// an empty mask.
pub fn box_to_mask(bbox: &BoundingBox, dims: ImageDims) -> InstanceMask {
    let (cols, rows) = bbox.pixel_span(dims);
    let w = u64::from(dims.width);
    let intervals: Vec<_> = if cols.is_empty() {
        Vec::new()
    } else {
        rows.map(|r| {
            let base = u64::from(r) * w;
            (base + u64::from(cols.start), base + u64::from(cols.end))
        })
        .collect()
    };
    InstanceMask::from_intervals(dims, intervals)
}

/// Union of foregrounds. An empty list yields an empty mask of `dims`.
pub fn mask_union<'a>(
    dims: ImageDims,
    masks: impl IntoIterator<Item = &'a InstanceMask>,
) -> Result<InstanceMask> {
    let mut acc: Vec<(u64, u64)> = Vec::new();
    for m in masks {
        if m.dims != dims {
            return Err(Error::InvalidGeometry(format!(
                "mask dimensions differ: {}x{} vs {}x{}",
                m.dims.width, m.dims.height, dims.width, dims.height
            )));
        }
        acc = union_intervals(acc.into_iter(), m.intervals());
    }
    Ok(InstanceMask::from_intervals(dims, acc))
}

/// Restricts `mask` to `region`.
pub fn mask_intersect(mask: &InstanceMask, region: &InstanceMask) -> Result<InstanceMask> {
    mask.check_dims(region)?;
    let inter: Vec<_> = intersect_intervals(mask.intervals(), region.intervals()).collect();
    Ok(InstanceMask::from_intervals(mask.dims, inter))
}

/// Tight integer-edged bounding box of the foreground, `None` when empty.
pub fn mask_bbox(mask: &InstanceMask) -> Option<BoundingBox> {
    let w = u64::from(mask.dims.width);
    let mut bounds: Option<(u64, u64, u64, u64)> = None;
    for (s, e) in mask.intervals() {
        let last = e - 1;
        let (r0, r1) = (s / w, last / w);
        let (c0, c1) = if r0 == r1 {
            (s % w, last % w)
        } else {
            (0, w - 1)
        };
        bounds = Some(match bounds {
            None => (c0, r0, c1, r1),
            Some((x0, y0, x1, y1)) => (x0.min(c0), y0.min(r0), x1.max(c1), y1.max(r1)),
        });
    }
    let (x0, y0, x1, y1) = bounds?;
    BoundingBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64).ok()
}

/// Splits a mask into 4-connected components.
pub fn mask_components(mask: &InstanceMask) -> Vec<InstanceMask> {
    let dims = mask.dims;
    let (w, h) = (dims.width as usize, dims.height as usize);
    let raster = mask.to_raster();
    let mut label = vec![0u32; w * h];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if raster[start] == 0 || label[start] != 0 {
            continue;
        }
        let id = components.len() as u32 + 1;
        let mut pixels = Vec::new();
        label[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            pixels.push(p as u64);
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                if raster[q] != 0 && label[q] == 0 {
                    label[q] = id;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        pixels.sort_unstable();
        components.push(InstanceMask::from_intervals(
            dims,
            pixels.into_iter().map(|p| (p, p + 1)),
        ));
    }
    components
}
