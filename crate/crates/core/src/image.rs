//! Grayscale image buffer shared by every stage.
//!
//! Pixels are stored row-major as `f32` in `[0, 1]`. 8-bit inputs are scaled
//! by 1/255; `to_levels` quantizes back with rounding.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "buffer of {} values does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_levels(width: usize, height: usize, levels: &[u8]) -> Result<Self> {
        Self::from_vec(width, height, levels.iter().map(|&v| f32::from(v) / 255.0).collect())
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Quantize to 8-bit levels.
    pub fn to_levels(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_level(v)).collect()
    }

    /// Bilinear sample at continuous coordinates, replicating edge pixels
    /// outside the frame. Pixel centers sit at integer coordinates.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f32 {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Nearest-neighbour sample with edge replication.
    pub fn sample_nearest(&self, x: f64, y: f64) -> f32 {
        let xi = x.round().clamp(0.0, (self.width - 1) as f64) as usize;
        let yi = y.round().clamp(0.0, (self.height - 1) as f64) as usize;
        self.get(xi, yi)
    }

    /// Bilinear resize using half-pixel centre alignment.
    pub fn resize(&self, width: usize, height: usize) -> GrayImage {
        if (width, height) == self.dims() {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        GrayImage::from_fn(width, height, |x, y| {
            self.sample_bilinear((x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5)
        })
    }

    /// Copy of the inclusive-exclusive window `[x0, x1) x [y0, y1)`.
    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> GrayImage {
        GrayImage::from_fn(x1 - x0, y1 - y0, |x, y| self.get(x0 + x, y0 + y))
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }

    /// Load PNG/JPEG; color inputs collapse to the mean of their channels.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb32f();
        let (w, h) = rgb.dimensions();
        let data = rgb
            .pixels()
            .map(|p| ((p.0[0] + p.0[1] + p.0[2]) / 3.0).clamp(0.0, 1.0))
            .collect();
        Self::from_vec(w as usize, h as usize, data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.to_levels())
            .expect("buffer length matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }
}

#[inline]
pub fn to_level(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
