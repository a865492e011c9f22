use std::collections::VecDeque;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Binary lung-field mask aligned to an image. Values are 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LungMask {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    pub cleanup_applied: bool,
    pub component_count: usize,
}

impl LungMask {
    pub fn from_bits(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "mask buffer of {} values does not match {width}x{height}",
                pixels.len()
            )));
        }
        if pixels.iter().any(|&v| v > 1) {
            return Err(Error::Data("mask values must be 0 or 1".into()));
        }
        let component_count = connected_components(width, height, &pixels).1.len();
        Ok(Self {
            width,
            height,
            pixels,
            cleanup_applied: false,
            component_count,
        })
    }

    /// Binarize with `value >= threshold`.
    pub fn threshold(map: &GrayImage, threshold: f32) -> Self {
        let pixels = map.as_slice().iter().map(|&v| u8::from(v >= threshold)).collect();
        Self::from_bits(map.width(), map.height(), pixels).expect("shape matches")
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

    pub fn bits(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x] == 1
    }

    pub fn area(&self) -> usize {
        self.pixels.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_vec(
            self.width,
            self.height,
            self.pixels.iter().map(|&v| f32::from(v)).collect(),
        )
        .expect("same shape")
    }

    /// Inclusive bounding box `(x_min, y_min, x_max, y_max)`.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bb = Some(match bb {
                        None => (x, y, x, y),
                        Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                    });
                }
            }
        }
        bb
    }

    /// Resize with nearest-neighbour sampling, keeping the mask binary.
    pub fn resize(&self, width: usize, height: usize) -> LungMask {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            let srcy = (((y as f64 + 0.5) * sy) as usize).min(self.height - 1);
            for x in 0..width {
                let srcx = (((x as f64 + 0.5) * sx) as usize).min(self.width - 1);
                pixels.push(self.pixels[srcy * self.width + srcx]);
            }
        }
        LungMask {
            width,
            height,
            component_count: connected_components(width, height, &pixels).1.len(),
            pixels,
            cleanup_applied: self.cleanup_applied,
        }
    }

    /// Write as a 1-bit grayscale PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        let stride = self.width.div_ceil(8);
        let mut packed = vec![0u8; stride * self.height];
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    packed[y * stride + x / 8] |= 0x80 >> (x % 8);
                }
            }
        }
        let png_err = |e: png::EncodingError| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&packed).map_err(png_err)?;
        writer.finish().map_err(png_err)
    }

    /// Load any grayscale image; pixels >= 0.5 are foreground.
    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::threshold(&GrayImage::load(path)?, 0.5))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleanupParams {
    /// Closing radius at 256 px; scaled with the shorter image side.
    pub closing_radius_at_256: f64,
    /// Components smaller than this fraction of the image are dropped.
    pub min_area_frac: f64,
    pub max_components: usize,
}

impl Default for CleanupParams {
    fn default() -> Self {
        Self {
            closing_radius_at_256: 5.0,
            min_area_frac: 0.02,
            max_components: 2,
        }
    }
}

pub fn closing_radius(width: usize, height: usize, params: &CleanupParams) -> usize {
    (params.closing_radius_at_256 * width.min(height) as f64 / 256.0).round() as usize
}

fn disk(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Morphological closing with a disk. The frame is padded by the radius so
/// that objects touching the border are not eroded away.
fn close(width: usize, height: usize, bits: &[u8], radius: usize) -> Vec<u8> {
    if radius == 0 {
        return bits.to_vec();
    }
    let se = disk(radius);
    let pw = width + 2 * radius;
    let ph = height + 2 * radius;
    let mut padded = vec![0u8; pw * ph];
    for y in 0..height {
        for x in 0..width {
            padded[(y + radius) * pw + x + radius] = bits[y * width + x];
        }
    }
    let in_bounds = |x: isize, y: isize| x >= 0 && y >= 0 && (x as usize) < pw && (y as usize) < ph;
    let mut dilated = vec![0u8; pw * ph];
    for y in 0..ph {
        for x in 0..pw {
            if padded[y * pw + x] == 1 {
                for &(dx, dy) in &se {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if in_bounds(nx, ny) {
                        dilated[ny as usize * pw + nx as usize] = 1;
                    }
                }
            }
        }
    }
    let mut out = vec![0u8; width * height];
    for y in 0..height {
        for x in 0..width {
            let (px, py) = ((x + radius) as isize, (y + radius) as isize);
            let all = se.iter().all(|&(dx, dy)| {
                let (nx, ny) = (px + dx, py + dy);
                in_bounds(nx, ny) && dilated[ny as usize * pw + nx as usize] == 1
            });
            out[y * width + x] = u8::from(all);
        }
    }
    out
}

/// Set every background pixel not 4-connected to the frame border.
pub fn fill_holes(width: usize, height: usize, bits: &[u8]) -> Vec<u8> {
    let mut outside = vec![false; width * height];
    let mut queue = VecDeque::new();
    let seed = |x: usize, y: usize, outside: &mut Vec<bool>, q: &mut VecDeque<(usize, usize)>| {
        let i = y * width + x;
        if bits[i] == 0 && !outside[i] {
            outside[i] = true;
            q.push_back((x, y));
        }
    };
    for x in 0..width {
        seed(x, 0, &mut outside, &mut queue);
        seed(x, height - 1, &mut outside, &mut queue);
    }
    for y in 0..height {
        seed(0, y, &mut outside, &mut queue);
        seed(width - 1, y, &mut outside, &mut queue);
    }
    while let Some((x, y)) = queue.pop_front() {
        if x > 0 {
            seed(x - 1, y, &mut outside, &mut queue);
        }
        if x + 1 < width {
            seed(x + 1, y, &mut outside, &mut queue);
        }
        if y > 0 {
            seed(x, y - 1, &mut outside, &mut queue);
        }
        if y + 1 < height {
            seed(x, y + 1, &mut outside, &mut queue);
        }
    }
    outside.iter().map(|&o| u8::from(!o)).collect()
}

/// 8-connected foreground labelling. Returns per-pixel labels (0 is
/// background, components numbered from 1 in raster order) and areas.
pub fn connected_components(width: usize, height: usize, bits: &[u8]) -> (Vec<u32>, Vec<usize>) {
    let mut labels = vec![0u32; width * height];
    let mut areas = Vec::new();
    let mut stack = Vec::new();
    for start in 0..bits.len() {
        if bits[start] == 0 || labels[start] != 0 {
            continue;
        }
        let label = areas.len() as u32 + 1;
        labels[start] = label;
        stack.push(start);
        let mut area = 0;
        while let Some(i) = stack.pop() {
            area += 1;
            let (x, y) = ((i % width) as isize, (i / width) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                        continue;
                    }
                    let j = ny as usize * width + nx as usize;
                    if bits[j] == 1 && labels[j] == 0 {
                        labels[j] = label;
                        stack.push(j);
                    }
                }
            }
        }
        areas.push(area);
    }
    (labels, areas)
}

fn cleanup_pass(width: usize, height: usize, bits: &[u8], params: &CleanupParams) -> Vec<u8> {
    let closed = close(width, height, bits, closing_radius(width, height, params));
    let filled = fill_holes(width, height, &closed);
    let (labels, areas) = connected_components(width, height, &filled);
    let min_area = params.min_area_frac * (width * height) as f64;
    let mut order: Vec<usize> = (0..areas.len()).collect();
    order.sort_by(|&a, &b| areas[b].cmp(&areas[a]).then(a.cmp(&b)));
    let keep: Vec<u32> = order
        .into_iter()
        .filter(|&i| areas[i] as f64 >= min_area)
        .take(params.max_components)
        .map(|i| i as u32 + 1)
        .collect();
    labels.iter().map(|l| u8::from(keep.contains(l))).collect()
}

/// Binarize a probability map, close small gaps, fill interior holes and keep
/// the largest sufficiently large components.
pub fn cleanup_mask(raw: &GrayImage, threshold: f32, params: &CleanupParams) -> Result<LungMask> {
    let (w, h) = raw.dims();
    if raw.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Parameter("probability map values must lie in [0, 1]".into()));
    }
    let mut bits = LungMask::threshold(raw, threshold).pixels;
    // Iterate to a fixed point so that cleanup is idempotent.
    for _ in 0..8 {
        let next = cleanup_pass(w, h, &bits, params);
        if next == bits {
            break;
        }
        bits = next;
    }
    let mut mask = LungMask::from_bits(w, h, bits)?;
    if mask.is_empty() {
        return Err(Error::EmptyMask("no lung component survived cleanup".into()));
    }
    mask.cleanup_applied = true;
    Ok(mask)
}

/// Crop image and mask to the mask's bounding box grown by `margin_frac` of
/// the box extent per side. The low corner rounds down and the high corner
/// rounds up so every mask pixel stays inside.
pub fn crop_to_lung(
    image: &GrayImage,
    mask: &LungMask,
    margin_frac: f64,
    zero_outside: bool,
) -> Result<(GrayImage, LungMask)> {
    if image.dims() != mask.dims() {
        return Err(Error::Shape(format!(
            "image {:?} and mask {:?} differ",
            image.dims(),
            mask.dims()
        )));
    }
    if !mask.cleanup_applied {
        return Err(Error::Parameter("mask must be cleaned before cropping".into()));
    }
    let (x0, y0, x1, y1) = mask
        .bounding_box()
        .ok_or_else(|| Error::EmptyMask("cannot crop to an empty mask".into()))?;
    let grow = |lo: usize, hi: usize, limit: usize| {
        let m = margin_frac * (hi - lo + 1) as f64;
        let a = (lo as f64 - m).floor().max(0.0) as usize;
        let b = ((hi as f64 + m).ceil() as usize).min(limit - 1);
        (a, b)
    };
    let (cx0, cx1) = grow(x0, x1, mask.width);
    let (cy0, cy1) = grow(y0, y1, mask.height);
    let mut img = image.crop(cx0, cy0, cx1 + 1, cy1 + 1);
    let (cw, ch) = img.dims();
    let mut bits = Vec::with_capacity(cw * ch);
    for y in cy0..=cy1 {
        bits.extend_from_slice(&mask.pixels[y * mask.width + cx0..=y * mask.width + cx1]);
    }
    if zero_outside {
        for (p, &b) in img.as_mut_slice().iter_mut().zip(&bits) {
            if b == 0 {
                *p = 0.0;
            }
        }
    }
    let mut cropped = LungMask::from_bits(cw, ch, bits)?;
    cropped.cleanup_applied = true;
    Ok((img, cropped))
}
