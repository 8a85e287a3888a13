use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geometry::{ImageDims, InstanceMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RleOrder {
    #[default]
    RowMajor,
    ColumnMajor,
}

/// Uncompressed RLE as carried in prediction files and on the wire:
/// `{"size": [h, w], "counts": [...], "order": "row-major"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RleJson {
    pub size: [u32; 2],
    pub counts: Vec<u32>,
    #[serde(default)]
    pub order: RleOrder,
}

impl TryFrom<RleJson> for InstanceMask {
    type Error = Error;

    fn try_from(rle: RleJson) -> Result<Self, Error> {
        let dims = ImageDims::new(rle.size[1], rle.size[0])?;
        match rle.order {
            RleOrder::RowMajor => InstanceMask::from_runs(dims, &rle.counts),
            RleOrder::ColumnMajor => InstanceMask::from_column_major_runs(dims, &rle.counts),
        }
    }
}

impl From<InstanceMask> for RleJson {
    fn from(m: InstanceMask) -> Self {
        RleJson {
            size: [m.height(), m.width()],
            counts: m.runs().to_vec(),
            order: RleOrder::RowMajor,
        }
    }
}

impl Serialize for InstanceMask {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RleJson::from(self.clone()).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for InstanceMask {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rle = RleJson::deserialize(deserializer)?;
        InstanceMask::try_from(rle).map_err(serde::de::Error::custom)
    }
}

/// COCO-style uncompressed RLE (column-major, no order tag).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoRle {
    pub size: [u32; 2],
    pub counts: Vec<u32>,
}

impl CocoRle {
    pub fn from_mask(m: &InstanceMask) -> Self {
        CocoRle {
            size: [m.height(), m.width()],
            counts: m.to_column_major_runs(),
        }
    }

    pub fn to_mask(&self) -> Result<InstanceMask, Error> {
        let dims = ImageDims::new(self.size[1], self.size[0])?;
        InstanceMask::from_column_major_runs(dims, &self.counts)
    }
}
