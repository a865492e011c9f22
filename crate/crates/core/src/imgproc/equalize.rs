use crate::error::{Error, Result};
use crate::image::GrayImage;

pub fn level_histogram(levels: &[u8]) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in levels {
        hist[v as usize] += 1;
    }
    hist
}

/// Global histogram equalization: level `v` maps to `floor(255 * cdf(v))`.
pub fn equalize_standard(image: &GrayImage) -> GrayImage {
    let levels = image.to_levels();
    let hist = level_histogram(&levels);
    let n = levels.len() as u64;
    let mut lut = [0f32; 256];
    let mut cum = 0u64;
    for (v, &count) in hist.iter().enumerate() {
        cum += count;
        lut[v] = ((255 * cum) / n.max(1)) as f32 / 255.0;
    }
    let data = levels.iter().map(|&v| lut[v as usize]).collect();
    GrayImage::from_vec(image.width(), image.height(), data).expect("same shape")
}

/// Contrast-limited adaptive histogram equalization.
///
/// `clip_limit` is relative to the mean bin height of a tile (the usual
/// OpenCV convention); clipped counts are spread uniformly over all bins.
/// Tile mappings are blended bilinearly between tile centres.
pub fn equalize_adaptive(image: &GrayImage, clip_limit: f64, tile_grid: (usize, usize)) -> Result<GrayImage> {
    let (gx, gy) = tile_grid;
    let (w, h) = image.dims();
    if clip_limit <= 0.0 || !clip_limit.is_finite() {
        return Err(Error::Parameter(format!("clip limit must be > 0, got {clip_limit}")));
    }
    if gx == 0 || gy == 0 {
        return Err(Error::Parameter("tile grid must be at least 1x1".into()));
    }
    if gx > w || gy > h {
        return Err(Error::Parameter(format!(
            "tile grid {gx}x{gy} is finer than the {w}x{h} image"
        )));
    }
    let levels = image.to_levels();
    let bounds = |i: usize, n: usize, g: usize| (i * n / g, (i + 1) * n / g);

    let mut luts = vec![[0f32; 256]; gx * gy];
    for ty in 0..gy {
        let (y0, y1) = bounds(ty, h, gy);
        for tx in 0..gx {
            let (x0, x1) = bounds(tx, w, gx);
            let mut hist = [0f64; 256];
            for y in y0..y1 {
                for &v in &levels[y * w + x0..y * w + x1] {
                    hist[v as usize] += 1.0;
                }
            }
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            let clip = (clip_limit * count / 256.0).max(1.0);
            let mut excess = 0.0;
            for b in hist.iter_mut() {
                if *b > clip {
                    excess += *b - clip;
                    *b = clip;
                }
            }
            let bonus = excess / 256.0;
            let lut = &mut luts[ty * gx + tx];
            let mut cum = 0.0;
            for (v, b) in hist.iter().enumerate() {
                cum += b + bonus;
                lut[v] = ((255.0 * cum / count + 1e-9).floor().min(255.0)) as f32 / 255.0;
            }
        }
    }

    let tw = w as f64 / gx as f64;
    let th = h as f64 / gy as f64;
    let neighbours = |p: usize, size: f64, g: usize| {
        let f = (p as f64 + 0.5) / size - 0.5;
        let i0 = f.floor().clamp(0.0, (g - 1) as f64) as usize;
        let i1 = (i0 + 1).min(g - 1);
        let t = if i1 == i0 {
            0.0
        } else {
            (f - i0 as f64).clamp(0.0, 1.0) as f32
        };
        (i0, i1, t)
    };
    let out = GrayImage::from_fn(w, h, |x, y| {
        let v = levels[y * w + x] as usize;
        let (x0, x1, fx) = neighbours(x, tw, gx);
        let (y0, y1, fy) = neighbours(y, th, gy);
        let at = |tx: usize, ty: usize| luts[ty * gx + tx][v];
        let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
        let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    });
    Ok(out)
}
