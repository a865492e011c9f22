//! Lung-field segmentation: a residual U-Net trained with a dice + BCE
//! objective, inference with resizing to the network's input size, and the
//! dice benchmark harness.

mod checkpoint;
pub mod nn;
mod train;
mod unet;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use train::{load_paired_corpus, split_train_val, train_segmenter, EpochStats, TrainOutcome, TrainingPair};
pub use unet::UNet;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::imgproc::LungMask;
use nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipStyle {
    /// Additive residual connections inside each block plus encoder to
    /// decoder concatenation skips.
    ResidualConcat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Dice,
    BceDice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    /// `(height, width)` the network runs at.
    pub input_size: (usize, usize),
    pub depth: usize,
    pub base_channels: usize,
    pub skip_style: SkipStyle,
    pub loss: LossKind,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f32,
    pub seed: u64,
    /// Fraction of each source corpus held out for validation.
    pub val_fraction: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            input_size: (256, 256),
            depth: 4,
            base_channels: 32,
            skip_style: SkipStyle::ResidualConcat,
            loss: LossKind::BceDice,
            epochs: 100,
            batch: 8,
            learning_rate: 1e-3,
            seed: 0,
            val_fraction: 0.1,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if self.depth == 0 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        let div = 1usize << self.depth;
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::Config(format!(
                "input size {h}x{w} is not divisible by 2^{} = {div}",
                self.depth
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch == 0 || self.base_channels == 0 {
            return Err(Error::Config("batch and base_channels must be >= 1".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Dice similarity coefficient in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct DiceScore(f64);

impl DiceScore {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::Parameter(format!("dice {value} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `2|a ∩ b| / (|a| + |b|)`; two empty masks score 1.
pub fn dice(a: &LungMask, b: &LungMask) -> Result<DiceScore> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("dice of {:?} and {:?} masks", a.dims(), b.dims())));
    }
    let (mut inter, mut total) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += usize::from(x & y);
        total += usize::from(x) + usize::from(y);
    }
    if total == 0 {
        return Ok(DiceScore(1.0));
    }
    Ok(DiceScore(2.0 * inter as f64 / total as f64))
}

/// Scale `[0, 1]` pixels to the network's `[-1, 1]` input range.
fn to_input(image: &GrayImage, size: (usize, usize)) -> Tensor {
    let (h, w) = size;
    let r = image.resize(w, h);
    Tensor::from_vec(1, h, w, r.as_slice().iter().map(|v| v * 2.0 - 1.0).collect())
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// A trained segmenter ready for inference.
#[derive(Debug, Clone)]
pub struct Segmenter {
    net: UNet,
}

impl Segmenter {
    pub fn new(net: UNet) -> Self {
        Self { net }
    }

    /// Fresh, untrained network for `cfg`.
    pub fn build(cfg: &SegmenterConfig) -> Result<Self> {
        Ok(Self { net: UNet::new(cfg)? })
    }

    pub fn config(&self) -> &SegmenterConfig {
        self.net.config()
    }

    pub fn net(&self) -> &UNet {
        &self.net
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_checkpoint(path).map(Self::new)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.net, path)
    }

    /// Probability map at the network resolution.
    pub fn predict_native(&self, image: &GrayImage) -> GrayImage {
        let (h, w) = self.config().input_size;
        let logits = self.net.infer(&to_input(image, (h, w)));
        GrayImage::from_vec(w, h, logits.data.iter().map(|&v| sigmoid(v)).collect()).expect("network preserves shape")
    }

    /// Probability map resized back to the image's own dimensions.
    pub fn segment(&self, image: &GrayImage) -> GrayImage {
        let mut map = self.predict_native(image).resize(image.width(), image.height());
        for v in map.as_mut_slice() {
            *v = v.clamp(0.0, 1.0);
        }
        map
    }
}

/// Reference dice scores from prior lung-field segmentation work.
pub const REFERENCE_DICE: [(&str, f64); 7] = [
    ("Li et al.", 0.964),
    ("Candemir et al.", 0.967),
    ("Shao et al.", 0.972),
    ("Novikov et al.", 0.974),
    ("Yang et al.", 0.975),
    ("Hwang et al.", 0.980),
    ("Skip-connection U-Net (1185-pair corpus)", 0.988),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<(String, f64)>,
    pub mean: f64,
}

impl BenchmarkReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image_id,dice\n");
        for (id, d) in &self.rows {
            s.push_str(&format!("{id},{d:.6}\n"));
        }
        s.push_str(&format!("mean,{:.6}\n", self.mean));
        for (name, d) in REFERENCE_DICE {
            s.push_str(&format!("# reference,{name},{d:.3}\n"));
        }
        s
    }
}

/// Mean dice over `(id, predicted, gold)` triples.
pub fn benchmark_predictions<'a>(
    items: impl IntoIterator<Item = (&'a str, &'a LungMask, &'a LungMask)>,
) -> Result<BenchmarkReport> {
    let mut rows = Vec::new();
    for (id, pred, gold) in items {
        rows.push((id.to_string(), dice(pred, gold)?.value()));
    }
    if rows.is_empty() {
        return Err(Error::Data("benchmark corpus is empty".into()));
    }
    let mean = rows.iter().map(|(_, d)| d).sum::<f64>() / rows.len() as f64;
    Ok(BenchmarkReport { rows, mean })
}

/// Segment every pair, binarize at `threshold`, and score against gold.
pub fn benchmark_dice(model: &Segmenter, corpus: &[TrainingPair], threshold: f32) -> Result<BenchmarkReport> {
    let preds: Vec<LungMask> = corpus
        .iter()
        .map(|p| LungMask::threshold(&model.segment(&p.image), threshold))
        .collect();
    benchmark_predictions(
        corpus
            .iter()
            .zip(&preds)
            .map(|(p, pred)| (p.id.as_str(), pred, &p.mask)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, h: usize, on: &[(usize, usize)]) -> LungMask {
        let mut bits = vec![0u8; w * h];
        for &(x, y) in on {
            bits[y * w + x] = 1;
        }
        LungMask::from_bits(w, h, bits).unwrap()
    }

    #[test]
    fn dice_closed_forms() {
        let a = mask(4, 4, &[(0, 0), (1, 0), (0, 1), (1, 1)]);
        let b = mask(4, 4, &[(1, 0), (2, 0), (1, 1), (2, 1)]);
        let c = mask(4, 4, &[(3, 3)]);
        assert_eq!(dice(&a, &a).unwrap().value(), 1.0);
        assert_eq!(dice(&a, &c).unwrap().value(), 0.0);
        assert_eq!(dice(&a, &b).unwrap().value(), 0.5);
        let e = mask(4, 4, &[]);
        assert_eq!(dice(&e, &e).unwrap().value(), 1.0);
        assert!(dice(&a, &mask(3, 4, &[])).is_err());
    }

    #[test]
    fn config_validation() {
        let cfg = SegmenterConfig {
            input_size: (250, 250),
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = SegmenterConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(SegmenterConfig::default().validate().is_ok());
    }

    #[test]
    fn output_shape_and_range() {
        let cfg = SegmenterConfig {
            input_size: (32, 48),
            depth: 2,
            base_channels: 4,
            ..Default::default()
        };
        let seg = Segmenter::build(&cfg).unwrap();
        let img = GrayImage::from_fn(50, 37, |x, y| ((x * y) % 11) as f32 / 10.0);
        let map = seg.segment(&img);
        assert_eq!(map.dims(), (50, 37));
        assert!(map.as_slice().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        assert_eq!(seg.segment(&img), map);
        let zero = seg.segment(&GrayImage::new(20, 20));
        assert!(zero.as_slice().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        assert_eq!(seg.predict_native(&img).dims(), (48, 32));
    }

    #[test]
    fn bottleneck_is_input_over_two_to_depth() {
        // Shape contract only; a small width keeps the test quick.
        let cfg = SegmenterConfig {
            input_size: (256, 256),
            depth: 4,
            base_channels: 32,
            ..Default::default()
        };
        let net = UNet::new(&cfg).unwrap();
        assert_eq!(net.bottleneck_size(), (16, 16));
    }

    #[test]
    fn benchmark_means() {
        let a = mask(4, 4, &[(0, 0), (1, 0), (0, 1), (1, 1)]);
        let b = mask(4, 4, &[(1, 0), (2, 0), (1, 1), (2, 1)]);
        let r = benchmark_predictions([("x", &a, &a)]).unwrap();
        assert_eq!(r.mean, 1.0);
        let r = benchmark_predictions([("x", &a, &a), ("y", &a, &b)]).unwrap();
        assert_eq!(r.mean, 0.75);
        assert!(r.to_csv().contains("Hwang et al.,0.980"));
        assert!(benchmark_predictions(std::iter::empty()).is_err());
    }
}
