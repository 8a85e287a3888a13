//! Box and mask primitives shared by every metric.

mod bbox;
mod mask;

pub use bbox::{box_iou, BoundingBox, ImageDims};
pub use mask::{
    box_to_mask, dice_from_counts, mask_bbox, mask_components, mask_dice, mask_intersect,
    mask_union, InstanceMask,
};
