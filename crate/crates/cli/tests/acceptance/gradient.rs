use icufeat::pathfeat::{gradient_map, ExtractorAdapter, StubAdapter, PATHOLOGY_LABELS};
use icufeat::synth::{ellipse_lung_pair, Opacity};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

const IMAGES: usize = 10;
const PIXELS: usize = 20;
const STEP: f32 = 1e-3;
const REL_TOL: f64 = 1e-3;

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn run() -> Outcome {
    let adapter = StubAdapter::new(11);
    let (w, h) = adapter.input_size();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AD);
    let mut worst: f64 = 0.0;
    for i in 0..IMAGES {
        let (image, _) = ellipse_lung_pair(w, Opacity::default(), &mut rng);
        let image = image.resize(w, h);
        let node = rng.gen_range(0..PATHOLOGY_LABELS.len());
        let label = PATHOLOGY_LABELS[node];
        let grad = adapter.input_gradient(&image, node).map_err(|e| e.to_string())?;
        let map = gradient_map(&adapter, &image, &format!("img{i}"), label).map_err(|e| e.to_string())?;
        for _ in 0..PIXELS {
            let (x, y) = (rng.gen_range(0..w), rng.gen_range(0..h));
            let v = image.get(x, y);
            let (mut plus, mut minus) = (image.clone(), image.clone());
            plus.set(x, y, v + STEP);
            minus.set(x, y, v - STEP);
            let up = adapter.last(&plus).map_err(|e| e.to_string())?[node];
            let down = adapter.last(&minus).map_err(|e| e.to_string())?[node];
            let fd = (up - down) / (f64::from(plus.get(x, y)) - f64::from(minus.get(x, y)));

            let analytic = grad[y * w + x];
            let err = rel_err(analytic, fd);
            worst = worst.max(err);
            ensure(err <= REL_TOL, || {
                format!("image {i} {label} ({x},{y}): gradient {analytic:e} vs difference {fd:e}")
            })?;

            // The map stores g^2 / sum g^2; recover |g| and compare again.
            let from_map = (map.get(x, y) * map.raw_energy).sqrt();
            let err = rel_err(from_map, fd.abs());
            worst = worst.max(err);
            ensure(err <= REL_TOL, || {
                format!(
                    "image {i} {label} ({x},{y}): map |g| {from_map:e} vs difference {:e}",
                    fd.abs()
                )
            })?;
        }
    }
    Ok(format!(
        "{} pixels over {IMAGES} images, worst relative error {worst:.2e}",
        IMAGES * PIXELS
    ))
}
