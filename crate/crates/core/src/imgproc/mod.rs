//! Contrast normalization, segmentation-mask cleanup and lung-field cropping.

mod equalize;
mod mask;

pub use equalize::{equalize_adaptive, equalize_standard, level_histogram};
pub use mask::{cleanup_mask, closing_radius, connected_components, crop_to_lung, fill_holes, CleanupParams, LungMask};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::GrayImage;

/// Contrast normalization settings. Standard equalization always runs
/// before the adaptive pass when both are enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EqualizeParams {
    pub standard: bool,
    pub adaptive: bool,
    pub clip_limit: f64,
    pub tile_grid: (usize, usize),
}

impl Default for EqualizeParams {
    fn default() -> Self {
        Self {
            standard: true,
            adaptive: true,
            clip_limit: 2.0,
            tile_grid: (8, 8),
        }
    }
}

pub fn normalize_contrast(image: &GrayImage, params: &EqualizeParams) -> Result<GrayImage> {
    let mut out = image.clone();
    if params.standard {
        out = equalize_standard(&out);
    }
    if params.adaptive {
        out = equalize_adaptive(&out, params.clip_limit, params.tile_grid)?;
    }
    Ok(out)
}
