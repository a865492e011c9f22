use std::time::Instant;

use icufeat::pathfeat::{cut_entropy, cut_mass, Cut, GradientMap};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

const FIXTURES: usize = 1000;

/// Half-plane membership written out independently: the first half gets the
/// middle line when the size is odd.
fn inside(cut: Cut, x: usize, y: usize, w: usize, h: usize) -> bool {
    match cut {
        Cut::Left => 2 * x < w,
        Cut::Right => 2 * x >= w,
        Cut::Superior => 2 * y < h,
        Cut::Inferior => 2 * y >= h,
    }
}

fn complement(cut: Cut) -> Cut {
    match cut {
        Cut::Left => Cut::Right,
        Cut::Right => Cut::Left,
        Cut::Superior => Cut::Inferior,
        Cut::Inferior => Cut::Superior,
    }
}

fn cut_pixels(cut: Cut, w: usize, h: usize) -> Vec<usize> {
    (0..w * h).filter(|&i| inside(cut, i % w, i / w, w, h)).collect()
}

fn oracle_entropy(energy: &[f64], cut: Cut, w: usize, h: usize) -> f64 {
    cut_pixels(cut, w, h)
        .into_iter()
        .map(|i| energy[i])
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

fn map_from(gradient: &[f64], w: usize, h: usize) -> GradientMap {
    GradientMap::from_gradient("fixture", "Effusion", w, h, gradient).expect("valid gradient")
}

/// Unit gradient on `support`, zero elsewhere.
fn uniform_on(support: &[usize], w: usize, h: usize) -> GradientMap {
    let mut g = vec![0.0; w * h];
    for &i in support {
        g[i] = 1.0;
    }
    map_from(&g, w, h)
}

fn fixture(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let (w, h) = (rng.gen_range(2..=32), rng.gen_range(2..=32));

    // Arbitrary maps agree with the oracle and split mass exactly in two.
    let gradient: Vec<f64> = (0..w * h)
        .map(|_| {
            if rng.gen_bool(0.2) {
                0.0
            } else {
                rng.gen_range(-3.0..3.0)
            }
        })
        .collect();
    let map = map_from(&gradient, w, h);
    for cut in Cut::ALL {
        let got = cut_entropy(&map, cut).value;
        let want = oracle_entropy(&map.energy, cut, w, h);
        ensure((got - want).abs() <= 1e-12 * want.max(1.0), || {
            format!("{w}x{h} {cut}: entropy {got} vs oracle {want}")
        })?;
    }
    for (a, b) in [(Cut::Left, Cut::Right), (Cut::Superior, Cut::Inferior)] {
        let total = cut_mass(&map, a) + cut_mass(&map, b);
        ensure((total - 1.0).abs() <= 1e-12, || format!("{w}x{h} {a}+{b} mass {total}"))?;
    }

    // A single atom carries no entropy anywhere.
    let atom = rng.gen_range(0..w * h);
    let map = uniform_on(&[atom], w, h);
    for cut in Cut::ALL {
        let e = cut_entropy(&map, cut).value;
        ensure(e == 0.0, || format!("{w}x{h} atom {atom} {cut}: entropy {e}"))?;
    }

    // Uniform over K pixels of one cut: ln K inside, nothing outside.
    let cut = Cut::ALL[rng.gen_range(0..4)];
    let pixels = cut_pixels(cut, w, h);
    let k = rng.gen_range(1..=pixels.len());
    let support: Vec<usize> = sample(rng, pixels.len(), k).into_iter().map(|i| pixels[i]).collect();
    let map = uniform_on(&support, w, h);
    let e = cut_entropy(&map, cut).value;
    let ln_k = (k as f64).ln();
    ensure((e - ln_k).abs() <= 1e-9, || {
        format!("{w}x{h} {cut} uniform over {k}: {e} vs {ln_k}")
    })?;
    let outside = cut_entropy(&map, complement(cut)).value;
    ensure(outside == 0.0, || {
        format!("{w}x{h} mass in {cut} leaks {outside} outside")
    })?;

    // Growing a uniform support inside the cut never lowers its entropy.
    let k2 = rng.gen_range(k..=pixels.len());
    let mut grown = support.clone();
    grown.extend(pixels.iter().filter(|p| !support.contains(p)).take(k2 - k));
    let e2 = cut_entropy(&uniform_on(&grown, w, h), cut).value;
    ensure(e2 >= e - 1e-12, || {
        format!("{w}x{h} {cut}: support {k}->{k2} entropy {e}->{e2}")
    })?;
    if k2 > k {
        ensure(e2 > e, || {
            format!("{w}x{h} {cut}: strict growth {k}->{k2} kept entropy {e}")
        })?;
    }
    Ok(())
}

pub fn run() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xE17);
    for i in 0..FIXTURES {
        fixture(&mut rng).map_err(|e| format!("fixture {i}: {e}"))?;
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("{FIXTURES} fixtures took {secs:.2}s"))?;
    Ok(format!("{FIXTURES} fixtures in {secs:.2}s"))
}
