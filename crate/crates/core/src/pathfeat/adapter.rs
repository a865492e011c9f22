use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::GrayImage;

/// Width of the penultimate feature layer.
pub const MID_LEN: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Capabilities {
    pub mid: bool,
    pub last: bool,
    pub gradients: bool,
}

impl Capabilities {
    pub const ALL: Self = Self {
        mid: true,
        last: true,
        gradients: true,
    };
}

/// A pretrained pathology-scoring model.
///
/// Implementations receive images already resized to `input_size` and must
/// return 1024 mid-layer activations, 18 pre-sigmoid pathology logits in
/// [`PATHOLOGY_LABELS`](super::PATHOLOGY_LABELS) order, and signed input
/// gradients of a single logit with the input's shape.
pub trait ExtractorAdapter: Send + Sync {
    fn name(&self) -> &str;

    /// Stable identifier of the weights; recorded in artifact manifests.
    fn fingerprint(&self) -> String;

    /// `(width, height)`.
    fn input_size(&self) -> (usize, usize);

    fn capabilities(&self) -> Capabilities;

    fn mid(&self, image: &GrayImage) -> Result<Vec<f64>>;

    fn last(&self, image: &GrayImage) -> Result<Vec<f64>>;

    /// d logit[`node`] / d pixel, row-major, same shape as `image`.
    fn input_gradient(&self, image: &GrayImage, node: usize) -> Result<Vec<f64>>;
}

impl fmt::Debug for dyn ExtractorAdapter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ExtractorAdapter({})", self.fingerprint())
    }
}
