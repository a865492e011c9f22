//! Feature extraction through a pluggable pathology model: mid-layer
//! activations, pre-sigmoid pathology logits, and cut entropies of
//! normalized input-gradient energy maps.

mod adapter;
mod bridge;
mod stub;
mod table;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use adapter::{Capabilities, ExtractorAdapter, MID_LEN};
pub use bridge::ProcessAdapter;
pub use stub::{StubAdapter, ZeroGradientAdapter};
pub use table::{build_feature_table, gradient_columns, FeatureMode, FeatureRow, FeatureTable, TableSchema};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Output nodes of the pathology model, in model order.
pub const PATHOLOGY_LABELS: [&str; 18] = [
    "Atelectasis",
    "Cardiomegaly",
    "Consolidation",
    "Edema",
    "Effusion",
    "Emphysema",
    "Enlarged Cardiomediastinum",
    "Fibrosis",
    "Fracture",
    "Hernia",
    "Infiltration",
    "Lung Lesion",
    "Lung Opacity",
    "Mass",
    "Nodule",
    "Pleural Thickening",
    "Pneumonia",
    "Pneumothorax",
];

pub fn label_index(label: &str) -> Result<usize> {
    PATHOLOGY_LABELS
        .iter()
        .position(|l| *l == label)
        .ok_or_else(|| Error::UnknownLabel {
            label: label.to_string(),
            valid: PATHOLOGY_LABELS.iter().map(|s| s.to_string()).collect(),
        })
}

fn check_input(adapter: &dyn ExtractorAdapter, image: &GrayImage) -> Result<()> {
    if image.dims() != adapter.input_size() {
        return Err(Error::Shape(format!(
            "adapter `{}` expects {:?} input, got {:?}",
            adapter.name(),
            adapter.input_size(),
            image.dims()
        )));
    }
    Ok(())
}

fn check_values(what: &str, values: Vec<f64>, len: usize) -> Result<Vec<f64>> {
    if values.len() != len {
        return Err(Error::Adapter(format!(
            "{what} output has {} values, expected {len}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Adapter(format!("{what} output is not finite")));
    }
    Ok(values)
}

/// Penultimate-layer activations (1024 values).
pub fn extract_mid(adapter: &dyn ExtractorAdapter, image: &GrayImage) -> Result<Vec<f64>> {
    if !adapter.capabilities().mid {
        return Err(Error::UnsupportedCapability("mid"));
    }
    check_input(adapter, image)?;
    check_values("mid-layer", adapter.mid(image)?, MID_LEN)
}

/// Pre-sigmoid logits, one per entry of [`PATHOLOGY_LABELS`].
pub fn extract_last(adapter: &dyn ExtractorAdapter, image: &GrayImage) -> Result<Vec<f64>> {
    if !adapter.capabilities().last {
        return Err(Error::UnsupportedCapability("last"));
    }
    check_input(adapter, image)?;
    check_values("last-layer", adapter.last(image)?, PATHOLOGY_LABELS.len())
}

/// Squared input gradient of one pathology logit, normalized to sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientMap {
    pub image_id: String,
    pub node_label: String,
    pub width: usize,
    pub height: usize,
    /// Row-major, non-negative, sums to 1.
    pub energy: Vec<f64>,
    /// Sum of squared gradients before normalization.
    pub raw_energy: f64,
    /// Set when the gradient vanished and the uniform map was substituted.
    pub degenerate: bool,
}

impl GradientMap {
    /// Normalize squared gradients; an all-zero gradient becomes uniform.
    pub fn from_gradient(
        image_id: &str,
        node_label: &str,
        width: usize,
        height: usize,
        gradient: &[f64],
    ) -> Result<Self> {
        if gradient.len() != width * height {
            return Err(Error::Shape(format!(
                "gradient of {} values for a {width}x{height} input",
                gradient.len()
            )));
        }
        if gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::Adapter("gradient is not finite".into()));
        }
        let sq: Vec<f64> = gradient.iter().map(|g| g * g).collect();
        let total: f64 = sq.iter().sum();
        let (energy, degenerate) = if total > 0.0 && total.is_finite() {
            (sq.iter().map(|v| v / total).collect(), false)
        } else {
            let n = sq.len() as f64;
            (vec![1.0 / n; sq.len()], true)
        };
        Ok(Self {
            image_id: image_id.to_string(),
            node_label: node_label.to_string(),
            width,
            height,
            energy,
            raw_energy: total,
            degenerate,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.energy[y * self.width + x]
    }
}

pub fn gradient_map(
    adapter: &dyn ExtractorAdapter,
    image: &GrayImage,
    image_id: &str,
    node_label: &str,
) -> Result<GradientMap> {
    let node = label_index(node_label)?;
    if !adapter.capabilities().gradients {
        return Err(Error::UnsupportedCapability("gradients"));
    }
    check_input(adapter, image)?;
    let grad = adapter.input_gradient(image, node)?;
    GradientMap::from_gradient(image_id, node_label, image.width(), image.height(), &grad)
}

/// Half-plane regions of a map. Longitudinal cuts split at the vertical
/// midline, transversal cuts at the horizontal midline; for odd sizes the
/// middle column is left and the middle row is superior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cut {
    Left,
    Right,
    Superior,
    Inferior,
}

impl Cut {
    pub const ALL: [Cut; 4] = [Cut::Left, Cut::Right, Cut::Superior, Cut::Inferior];

    pub fn contains(self, x: usize, y: usize, width: usize, height: usize) -> bool {
        let mid_x = width.div_ceil(2);
        let mid_y = height.div_ceil(2);
        match self {
            Cut::Left => x < mid_x,
            Cut::Right => x >= mid_x,
            Cut::Superior => y < mid_y,
            Cut::Inferior => y >= mid_y,
        }
    }

    pub fn pixel_count(self, width: usize, height: usize) -> usize {
        match self {
            Cut::Left => width.div_ceil(2) * height,
            Cut::Right => (width / 2) * height,
            Cut::Superior => height.div_ceil(2) * width,
            Cut::Inferior => (height / 2) * width,
        }
    }
}

impl fmt::Display for Cut {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cut::Left => "left",
            Cut::Right => "right",
            Cut::Superior => "superior",
            Cut::Inferior => "inferior",
        })
    }
}

impl FromStr for Cut {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Cut::Left),
            "right" => Ok(Cut::Right),
            "superior" => Ok(Cut::Superior),
            "inferior" => Ok(Cut::Inferior),
            _ => Err(Error::Parameter(format!("unknown cut `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyFeature {
    pub node_label: String,
    pub cut: Cut,
    pub value: f64,
}

/// Probability mass of `map` inside `cut`.
pub fn cut_mass(map: &GradientMap, cut: Cut) -> f64 {
    let mut m = 0.0;
    for y in 0..map.height {
        for x in 0..map.width {
            if cut.contains(x, y, map.width, map.height) {
                m += map.get(x, y);
            }
        }
    }
    m
}

/// `-Σ p ln p` over the pixels of `cut`, with `0 ln 0 = 0`.
pub fn cut_entropy(map: &GradientMap, cut: Cut) -> EntropyFeature {
    let mut e = 0.0;
    for y in 0..map.height {
        for x in 0..map.width {
            if cut.contains(x, y, map.width, map.height) {
                let p = map.get(x, y);
                if p > 0.0 {
                    e -= p * p.ln();
                }
            }
        }
    }
    EntropyFeature {
        node_label: map.node_label.clone(),
        cut,
        value: e,
    }
}

/// Logistic function, for reading pre-sigmoid logits as probabilities.
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
