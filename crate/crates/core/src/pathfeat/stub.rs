//! Seeded stand-in for the pretrained model so the whole pipeline runs
//! without downloaded weights.
//!
//! The image is area-averaged to a 32x32 grid `d` (1024 values, centred at
//! 0.5), then `mid = tanh(P d)` and `last = Q mid + b` with fixed random `P`
//! (1024x1024), `Q` (18x1024) and `b`. Input gradients are exact:
//! `d last_k / d x = A^T P^T (Q_k * (1 - mid^2))`, where `A` is the pooling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adapter::{Capabilities, ExtractorAdapter, MID_LEN};
use super::PATHOLOGY_LABELS;
use crate::error::{Error, Result};
use crate::image::GrayImage;

const GRID: usize = 32;

pub struct StubAdapter {
    seed: u64,
    size: (usize, usize),
    /// `[MID_LEN, GRID * GRID]` row-major.
    proj: Vec<f64>,
    /// `[18, MID_LEN]` row-major.
    head: Vec<f64>,
    bias: Vec<f64>,
}

impl StubAdapter {
    pub const DEFAULT_SIZE: (usize, usize) = (224, 224);

    pub fn new(seed: u64) -> Self {
        Self::with_size(seed, Self::DEFAULT_SIZE)
    }

    /// `size` is `(width, height)`; both must be at least 32.
    pub fn with_size(seed: u64, size: (usize, usize)) -> Self {
        assert!(size.0 >= GRID && size.1 >= GRID, "stub input must be at least 32x32");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = 0.12;
        let proj = (0..MID_LEN * GRID * GRID).map(|_| rng.gen_range(-a..a)).collect();
        let b = 0.1;
        let head = (0..PATHOLOGY_LABELS.len() * MID_LEN)
            .map(|_| rng.gen_range(-b..b))
            .collect();
        let bias = (0..PATHOLOGY_LABELS.len()).map(|_| rng.gen_range(-0.5..0.5)).collect();
        Self {
            seed,
            size,
            proj,
            head,
            bias,
        }
    }

    fn check(&self, image: &GrayImage) -> Result<()> {
        if image.dims() != self.size {
            return Err(Error::Shape(format!(
                "stub adapter expects {:?}, got {:?}",
                self.size,
                image.dims()
            )));
        }
        Ok(())
    }

    fn bin_of(&self, x: usize, y: usize) -> usize {
        let (w, h) = self.size;
        (y * GRID / h) * GRID + x * GRID / w
    }

    fn bin_counts(&self) -> Vec<f64> {
        let (w, h) = self.size;
        let mut counts = vec![0.0; GRID * GRID];
        for y in 0..h {
            for x in 0..w {
                counts[self.bin_of(x, y)] += 1.0;
            }
        }
        counts
    }

    fn pooled(&self, image: &GrayImage) -> Vec<f64> {
        let (w, h) = self.size;
        let mut sums = vec![0.0; GRID * GRID];
        for y in 0..h {
            for x in 0..w {
                sums[self.bin_of(x, y)] += f64::from(image.get(x, y));
            }
        }
        sums.iter().zip(self.bin_counts()).map(|(s, c)| s / c - 0.5).collect()
    }

    fn mid_activations(&self, image: &GrayImage) -> Vec<f64> {
        let d = self.pooled(image);
        self.proj
            .chunks(GRID * GRID)
            .map(|row| row.iter().zip(&d).map(|(p, v)| p * v).sum::<f64>().tanh())
            .collect()
    }
}

impl ExtractorAdapter for StubAdapter {
    fn name(&self) -> &str {
        "stub"
    }

    fn fingerprint(&self) -> String {
        format!("stub-v1:seed={}:size={}x{}", self.seed, self.size.0, self.size.1)
    }

    fn input_size(&self) -> (usize, usize) {
        self.size
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::ALL
    }

    fn mid(&self, image: &GrayImage) -> Result<Vec<f64>> {
        self.check(image)?;
        Ok(self.mid_activations(image))
    }

    fn last(&self, image: &GrayImage) -> Result<Vec<f64>> {
        self.check(image)?;
        let mid = self.mid_activations(image);
        Ok(self
            .head
            .chunks(MID_LEN)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(&mid).map(|(q, m)| q * m).sum::<f64>())
            .collect())
    }

    fn input_gradient(&self, image: &GrayImage, node: usize) -> Result<Vec<f64>> {
        self.check(image)?;
        if node >= PATHOLOGY_LABELS.len() {
            return Err(Error::Adapter(format!("node index {node} out of range")));
        }
        let mid = self.mid_activations(image);
        let q = &self.head[node * MID_LEN..(node + 1) * MID_LEN];
        let upstream: Vec<f64> = q.iter().zip(&mid).map(|(q, m)| q * (1.0 - m * m)).collect();
        let mut per_bin = vec![0.0; GRID * GRID];
        for (row, u) in self.proj.chunks(GRID * GRID).zip(&upstream) {
            for (g, p) in per_bin.iter_mut().zip(row) {
                *g += u * p;
            }
        }
        let counts = self.bin_counts();
        let (w, h) = self.size;
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let b = self.bin_of(x, y);
                out.push(per_bin[b] / counts[b]);
            }
        }
        Ok(out)
    }
}

/// Adapter whose gradients vanish everywhere; exercises the degenerate path.
pub struct ZeroGradientAdapter {
    inner: StubAdapter,
}

impl ZeroGradientAdapter {
    pub fn new(size: (usize, usize)) -> Self {
        Self {
            inner: StubAdapter::with_size(0, size),
        }
    }
}

impl ExtractorAdapter for ZeroGradientAdapter {
    fn name(&self) -> &str {
        "zero-gradient"
    }
    fn fingerprint(&self) -> String {
        "zero-gradient".into()
    }
    fn input_size(&self) -> (usize, usize) {
        self.inner.input_size()
    }
    fn capabilities(&self) -> Capabilities {
        Capabilities::ALL
    }
    fn mid(&self, image: &GrayImage) -> Result<Vec<f64>> {
        self.inner.mid(image)
    }
    fn last(&self, image: &GrayImage) -> Result<Vec<f64>> {
        self.inner.last(image)
    }
    fn input_gradient(&self, image: &GrayImage, _node: usize) -> Result<Vec<f64>> {
        Ok(vec![0.0; image.width() * image.height()])
    }
}
