use icufeat::imgproc::{cleanup_mask, crop_to_lung, CleanupParams, LungMask};
use icufeat::{Error, GrayImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

const FIXTURES: usize = 500;

/// Probability map with a few soft ellipses, holes and speckle.
fn blob_map(rng: &mut ChaCha8Rng) -> GrayImage {
    let (w, h) = (rng.gen_range(32..=96), rng.gen_range(32..=96));
    let blobs: Vec<(f64, f64, f64, f64, f32)> = (0..rng.gen_range(1..=5))
        .map(|_| {
            (
                rng.gen_range(0.0..w as f64),
                rng.gen_range(0.0..h as f64),
                rng.gen_range(2.0..w as f64 / 3.0),
                rng.gen_range(2.0..h as f64 / 3.0),
                rng.gen_range(0.6..1.0),
            )
        })
        .collect();
    let mut map = GrayImage::from_fn(w, h, |x, y| {
        blobs
            .iter()
            .filter(|(cx, cy, rx, ry, _)| {
                let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                dx * dx + dy * dy <= 1.0
            })
            .map(|b| b.4)
            .fold(0.0, f32::max)
    });
    for _ in 0..w * h / 50 {
        let (x, y) = (rng.gen_range(0..w), rng.gen_range(0..h));
        let v = if rng.gen_bool(0.5) {
            rng.gen_range(0.5..1.0)
        } else {
            0.0
        };
        map.set(x, y, v);
    }
    map
}

/// 8-connected foreground components, counted by flood fill.
fn components(mask: &LungMask) -> usize {
    let (w, h) = mask.dims();
    let mut seen = vec![false; w * h];
    let mut count = 0;
    for start in 0..w * h {
        if seen[start] || !mask.get(start % w, start / w) {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] && mask.get(nx as usize, ny as usize) {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    count
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB10B);
    let params = CleanupParams::default();
    let (mut cleaned, mut empty) = (0, 0);
    for k in 0..FIXTURES {
        let map = blob_map(&mut rng);
        let (w, h) = map.dims();
        let mask = match cleanup_mask(&map, 0.5, &params) {
            Ok(m) => m,
            Err(Error::EmptyMask(_)) => {
                empty += 1;
                continue;
            }
            Err(e) => return Err(format!("fixture {k}: {e}")),
        };
        cleaned += 1;
        let n = components(&mask);
        ensure(n <= 2, || {
            format!("fixture {k} ({w}x{h}): {n} components after cleanup")
        })?;

        let again = cleanup_mask(&mask.to_image(), 0.5, &params).map_err(|e| format!("fixture {k}: {e}"))?;
        ensure(again.bits() == mask.bits(), || {
            format!("fixture {k} ({w}x{h}): cleanup is not idempotent")
        })?;

        let margin = rng.gen_range(0.0..0.2);
        let zero_outside = rng.gen_bool(0.5);
        let (img, cropped) =
            crop_to_lung(&map, &mask, margin, zero_outside).map_err(|e| format!("fixture {k}: {e}"))?;
        ensure(cropped.area() == mask.area(), || {
            format!(
                "fixture {k}: crop keeps {} of {} mask pixels",
                cropped.area(),
                mask.area()
            )
        })?;
        ensure(img.dims() == cropped.dims(), || {
            format!("fixture {k}: crop image and mask differ")
        })?;
        if zero_outside {
            let (cw, ch) = img.dims();
            let leaked = (0..cw * ch).any(|i| !cropped.get(i % cw, i / cw) && img.get(i % cw, i / cw) != 0.0);
            ensure(!leaked, || format!("fixture {k}: background survived zeroing"))?;
        }
    }
    ensure(cleaned >= FIXTURES * 9 / 10, || {
        format!("only {cleaned} fixtures kept a component")
    })?;
    Ok(format!("{cleaned} cleaned fixtures ({empty} empty after cleanup)"))
}
