use icufeat::imgproc::LungMask;
use icufeat::lungseg::dice;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

fn mask(w: usize, h: usize, mut on: impl FnMut(usize, usize) -> bool) -> LungMask {
    let bits = (0..w * h).map(|i| u8::from(on(i % w, i / w))).collect();
    LungMask::from_bits(w, h, bits).expect("binary mask")
}

fn score(a: &LungMask, b: &LungMask) -> Result<f64, String> {
    dice(a, b).map(|d| d.value()).map_err(|e| e.to_string())
}

fn oracle(a: &LungMask, b: &LungMask) -> f64 {
    let (w, h) = a.dims();
    let (mut both, mut sizes) = (0, 0);
    for y in 0..h {
        for x in 0..w {
            both += usize::from(a.get(x, y) && b.get(x, y));
            sizes += usize::from(a.get(x, y)) + usize::from(b.get(x, y));
        }
    }
    2.0 * both as f64 / sizes as f64
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1CE);
    let mut cases = 0;
    for _ in 0..100 {
        let (w, h) = (rng.gen_range(4..=64), rng.gen_range(4..=64));

        let density = rng.gen_range(0.05..0.95);
        let a = mask(w, h, |_, _| rng.gen_bool(density));
        if a.area() > 0 {
            let d = score(&a, &a)?;
            ensure(d == 1.0, || format!("{w}x{h}: dice(A, A) = {d}"))?;
        }

        let cut = rng.gen_range(1..w);
        let left = mask(w, h, |x, _| x < cut);
        let right = mask(w, h, |x, _| x >= cut);
        let d = score(&left, &right)?;
        ensure(d == 0.0, || format!("{w}x{h}: disjoint halves scored {d}"))?;

        // Two bands of width 2k overlapping in k columns.
        let k = rng.gen_range(1..=w / 3);
        let x0 = rng.gen_range(0..=w - 3 * k);
        let p = mask(w, h, |x, _| (x0..x0 + 2 * k).contains(&x));
        let q = mask(w, h, |x, _| (x0 + k..x0 + 3 * k).contains(&x));
        let d = score(&p, &q)?;
        ensure(d == 0.5, || format!("{w}x{h}: half overlap scored {d}"))?;

        let (da, db) = (rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95));
        let a = mask(w, h, |_, _| rng.gen_bool(da));
        let b = mask(w, h, |_, _| rng.gen_bool(db));
        if a.area() + b.area() > 0 {
            let (ab, ba) = (score(&a, &b)?, score(&b, &a)?);
            ensure(ab == ba, || format!("{w}x{h}: dice(A, B) {ab} != dice(B, A) {ba}"))?;
            let want = oracle(&a, &b);
            ensure((ab - want).abs() <= 1e-15, || {
                format!("{w}x{h}: dice {ab} vs oracle {want}")
            })?;
        }
        cases += 1;
    }
    Ok(format!("{cases} fixtures: identity, disjoint, half overlap, symmetry"))
}
