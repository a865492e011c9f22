//! Synthetic radiograph-like fixtures: two dark elliptical lung fields in a
//! brighter torso with a heart shadow, rib banding, a corner marker and
//! noise. Used by tests, the acceptance suite and `icufeat fixture`.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::imgproc::LungMask;
use crate::lungseg::TrainingPair;

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        self.level(x, y) <= 1.0
    }

    fn level(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.rx).powi(2) + (v / self.ry).powi(2)
    }
}

/// Severity-related opacities painted inside the lungs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Opacity {
    /// Number of bright patches per lung.
    pub patches: usize,
    /// Patch brightness added on top of the lung field.
    pub strength: f32,
}

/// One synthetic radiograph and its gold lung mask.
pub fn ellipse_lung_pair(size: usize, opacity: Opacity, rng: &mut impl Rng) -> (GrayImage, LungMask) {
    let s = size as f64;
    let j = |rng: &mut dyn rand::RngCore, a: f64| rng.gen_range(-a..=a);
    let torso = Ellipse {
        cx: s * (0.5 + j(rng, 0.02)),
        cy: s * (0.58 + j(rng, 0.02)),
        rx: s * (0.46 + j(rng, 0.02)),
        ry: s * (0.52 + j(rng, 0.02)),
        angle: 0.0,
    };
    let lung = |rng: &mut dyn rand::RngCore, side: f64| Ellipse {
        cx: s * (0.5 + side * (0.19 + j(rng, 0.02))),
        cy: s * (0.5 + j(rng, 0.03)),
        rx: s * (0.12 + j(rng, 0.015)),
        ry: s * (0.27 + j(rng, 0.025)),
        angle: side * (0.08 + j(rng, 0.06)),
    };
    let left = lung(rng, -1.0);
    let right = lung(rng, 1.0);
    let heart = Ellipse {
        cx: s * (0.55 + j(rng, 0.02)),
        cy: s * (0.68 + j(rng, 0.02)),
        rx: s * (0.11 + j(rng, 0.01)),
        ry: s * (0.09 + j(rng, 0.01)),
        angle: j(rng, 0.3),
    };
    let body_level = rng.gen_range(0.55..0.7f32);
    let lung_level = rng.gen_range(0.18..0.3f32);
    let rib_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let rib_period = s * rng.gen_range(0.07..0.09);
    let mut patches = Vec::new();
    for l in [left, right] {
        for _ in 0..opacity.patches {
            let t = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = rng.gen_range(0.0..0.6);
            patches.push(Ellipse {
                cx: l.cx + r * l.rx * t.cos(),
                cy: l.cy + r * l.ry * t.sin(),
                rx: s * rng.gen_range(0.03..0.06),
                ry: s * rng.gen_range(0.03..0.06),
                angle: 0.0,
            });
        }
    }
    let marker = (rng.gen_range(0.03..0.1) * s, rng.gen_range(0.03..0.08) * s);

    let mut mask_bits = vec![0u8; size * size];
    let mut noise_rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let image = GrayImage::from_fn(size, size, |x, y| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut v = 0.08f32;
        if torso.contains(fx, fy) {
            v = body_level;
            let rib = ((fy / rib_period) * std::f64::consts::TAU + rib_phase).sin();
            v += 0.04 * rib as f32;
        }
        let in_heart = heart.contains(fx, fy);
        let in_lung = left.contains(fx, fy) || right.contains(fx, fy);
        if in_lung && !in_heart {
            v = lung_level + 0.08 * (fy / s) as f32;
            v += 0.03 * (((fy / rib_period) * std::f64::consts::TAU + rib_phase).sin() as f32);
            for p in &patches {
                let l = p.level(fx, fy);
                if l < 1.0 {
                    v += opacity.strength * (1.0 - l as f32);
                }
            }
            mask_bits[y * size + x] = 1;
        } else if in_heart {
            v = body_level + 0.1;
        }
        if fx > marker.0 && fx < marker.0 + 0.05 * s && fy > marker.1 && fy < marker.1 + 0.03 * s {
            v = 0.95;
        }
        (v + noise_rng.gen_range(-0.03..0.03f32)).clamp(0.0, 1.0)
    });
    let mut mask = LungMask::from_bits(size, size, mask_bits).expect("shape matches");
    mask.cleanup_applied = true;
    (image, mask)
}

/// `n` seeded image/mask pairs for segmenter training.
pub fn ellipse_lung_corpus(n: usize, size: usize, seed: u64) -> Vec<TrainingPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (image, mask) = ellipse_lung_pair(size, Opacity::default(), &mut rng);
            TrainingPair {
                id: format!("synth{i:04}"),
                source: "synthetic".into(),
                image,
                mask,
            }
        })
        .collect()
}

const EXTERNAL_PATHOLOGY: [&str; 8] = [
    "consolidation",
    "alveolar",
    "effusion",
    "covid",
    "pneumonia",
    "pleural",
    "interstitial",
    "normal",
];
const EXTERNAL_LOCATION: [&str; 6] = ["bilateral", "middle", "lower", "peripheral", "upper", "hilar"];

/// Paths written by [`write_fixture`].
#[derive(Debug, Clone)]
pub struct FixtureLayout {
    pub cohort_manifest: std::path::PathBuf,
    pub cohort_images: std::path::PathBuf,
    pub seg_corpus: std::path::PathBuf,
    pub external_manifest: std::path::PathBuf,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write a complete synthetic input set under `dir`:
///
/// * `cohort/metadata.csv` + `cohort/images/` with `n_cohort` images
///   (class 1 images carry lung opacities, plus some excluded rows)
/// * `segcorpus/images|masks/` with `n_seg` pairs
/// * `external/metadata.csv` + `external/images/` with `n_external` images
///   whose label lists correlate with the painted opacities
pub fn write_fixture(
    dir: &Path,
    size: usize,
    n_cohort: usize,
    n_seg: usize,
    n_external: usize,
    seed: u64,
) -> Result<FixtureLayout> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cohort_images = dir.join("cohort/images");
    let mut manifest = String::from("patientid,filename,went_icu,in_icu,view\n");
    for i in 0..n_cohort {
        let severe = i % 2 == 0;
        let opacity = if severe {
            Opacity {
                patches: 3,
                strength: 0.35,
            }
        } else {
            Opacity::default()
        };
        let (img, _) = ellipse_lung_pair(size, opacity, &mut rng);
        let name = format!("cxr{i:03}.png");
        img.save_png(&cohort_images.join(&name))?;
        let (went, inn) = if severe { ("Y", "N") } else { ("N", "N") };
        writeln!(manifest, "p{i:03},{name},{went},{inn},PA").unwrap();
    }
    // Rows the cohort filter must drop.
    writeln!(manifest, "p900,missing_a.png,Y,Y,PA").unwrap();
    writeln!(manifest, "p901,missing_b.png,,N,AP").unwrap();
    let cohort_manifest = dir.join("cohort/metadata.csv");
    write_file(&cohort_manifest, &manifest)?;

    let seg_corpus = dir.join("segcorpus");
    for (k, p) in ellipse_lung_corpus(n_seg, size, rng.gen()).into_iter().enumerate() {
        let name = format!("seg{k:04}.png");
        p.image.save_png(&seg_corpus.join("images").join(&name))?;
        p.mask.save_png(&seg_corpus.join("masks").join(&name))?;
    }

    let ext_images = dir.join("external/images");
    let mut ext = String::from("image_path,labels\n");
    for i in 0..n_external {
        let severe = rng.gen_bool(0.4);
        let opacity = if severe {
            Opacity {
                patches: 3,
                strength: 0.35,
            }
        } else {
            Opacity::default()
        };
        let (img, _) = ellipse_lung_pair(size, opacity, &mut rng);
        let name = format!("ext{i:04}.png");
        img.save_png(&ext_images.join(&name))?;
        let mut labels: Vec<&str> = Vec::new();
        for t in EXTERNAL_PATHOLOGY.iter().chain(&EXTERNAL_LOCATION) {
            let p = match (*t, severe) {
                ("consolidation" | "bilateral" | "effusion", true) => 0.8,
                ("consolidation" | "bilateral" | "effusion", false) => 0.2,
                ("normal", true) => 0.1,
                ("normal", false) => 0.6,
                _ => 0.4,
            };
            if rng.gen_bool(p) {
                labels.push(t);
            }
        }
        let cell = if i % 17 == 5 {
            String::new()
        } else {
            format!(
                "[{}]",
                labels.iter().map(|l| format!("'{l}'")).collect::<Vec<_>>().join(", ")
            )
        };
        writeln!(ext, "images/{name},\"{cell}\"").unwrap();
    }
    let external_manifest = dir.join("external/metadata.csv");
    write_file(&external_manifest, &ext)?;

    Ok(FixtureLayout {
        cohort_manifest,
        cohort_images,
        seg_corpus,
        external_manifest,
    })
}
