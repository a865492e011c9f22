use std::time::Instant;

use icufeat::imgproc::LungMask;
use icufeat::lungseg::{split_train_val, train_segmenter, SegmenterConfig};
use icufeat::synth::ellipse_lung_corpus;

use crate::{ensure, Outcome};

const PAIRS: usize = 200;
const SIZE: usize = 256;
const MAX_EPOCHS: usize = 20;
const TARGET: f64 = 0.95;

fn overlap(pred: &LungMask, gold: &LungMask) -> f64 {
    let (mut both, mut sizes) = (0usize, 0usize);
    for (&p, &g) in pred.bits().iter().zip(gold.bits()) {
        both += usize::from(p == 1 && g == 1);
        sizes += usize::from(p) + usize::from(g);
    }
    if sizes == 0 {
        1.0
    } else {
        2.0 * both as f64 / sizes as f64
    }
}

pub fn run() -> Outcome {
    let started = Instant::now();
    let pairs = ellipse_lung_corpus(PAIRS, SIZE, 7);
    let cfg = SegmenterConfig {
        input_size: (SIZE, SIZE),
        depth: 4,
        base_channels: 8,
        epochs: 4,
        batch: 4,
        seed: 1,
        ..Default::default()
    };
    ensure(cfg.epochs <= MAX_EPOCHS, || "epoch budget exceeded".into())?;
    let outcome = train_segmenter(&pairs, &cfg).map_err(|e| e.to_string())?;
    ensure(outcome.history.len() <= MAX_EPOCHS, || {
        format!("{} epochs ran", outcome.history.len())
    })?;

    // Score the held-out split again from scratch.
    let (_, val) = split_train_val(&pairs, cfg.val_fraction, cfg.seed);
    ensure(!val.is_empty(), || "empty validation split".into())?;
    let mean = val
        .iter()
        .map(|&i| {
            let prob = outcome.segmenter.segment(&pairs[i].image);
            overlap(&LungMask::threshold(&prob, 0.5), &pairs[i].mask)
        })
        .sum::<f64>()
        / val.len() as f64;
    ensure((mean - outcome.best_val_dice).abs() < 1e-6, || {
        format!(
            "recomputed validation dice {mean:.4} differs from reported {:.4}",
            outcome.best_val_dice
        )
    })?;
    ensure(mean >= TARGET, || format!("validation dice {mean:.4} < {TARGET}"))?;
    let secs = started.elapsed().as_secs_f64();
    ensure(secs <= 2.0 * 3600.0, || format!("training took {secs:.0}s"))?;
    Ok(format!(
        "validation dice {mean:.4} on {} held-out pairs after {} epochs (best epoch {})",
        val.len(),
        outcome.history.len(),
        outcome.best_epoch
    ))
}
