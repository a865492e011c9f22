use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{Adam, Tensor};
use super::{dice, sigmoid, to_input, LossKind, Segmenter, SegmenterConfig, UNet};
use crate::cohort::derive_seed;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::imgproc::LungMask;

#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub id: String,
    /// Corpus the pair came from; the validation split is stratified on it.
    pub source: String,
    pub image: GrayImage,
    pub mask: LungMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dice: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best validation dice.
    pub segmenter: Segmenter,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_dice: f64,
}

/// Load `dir/images/*` paired with `dir/masks/*` by file name.
pub fn load_paired_corpus(dir: &Path) -> Result<Vec<TrainingPair>> {
    let images = dir.join("images");
    let masks = dir.join("masks");
    let source = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut names: Vec<_> = std::fs::read_dir(&images)
        .map_err(|e| Error::io(&images, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name())
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let mask_path = masks.join(&name);
            if !mask_path.exists() {
                return Err(Error::Data(format!(
                    "no mask for {} in {}",
                    name.to_string_lossy(),
                    masks.display()
                )));
            }
            let id = Path::new(&name)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok(TrainingPair {
                id,
                source: source.clone(),
                image: GrayImage::load(&images.join(&name))?,
                mask: LungMask::load(&mask_path)?,
            })
        })
        .collect()
}

/// Seeded split stratified by `source`. Returns `(train, validation)` indices.
pub fn split_train_val(pairs: &[TrainingPair], val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_source: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        by_source.entry(p.source.as_str()).or_default().push(i);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (source, mut idx) in by_source {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, source, 0));
        idx.shuffle(&mut rng);
        let n_val = ((idx.len() as f64) * val_fraction).round() as usize;
        val.extend_from_slice(&idx[..n_val.min(idx.len())]);
        train.extend_from_slice(&idx[n_val.min(idx.len())..]);
    }
    // Both sides must be non-empty once there are two pairs.
    if val.is_empty() && train.len() >= 2 {
        val.push(train.pop().unwrap());
    }
    if train.is_empty() && val.len() >= 2 {
        train.push(val.pop().unwrap());
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Loss value and its gradient with respect to the logits.
pub(crate) fn loss_and_grad(logits: &[f32], target: &[f32], kind: LossKind) -> (f64, Vec<f32>) {
    let n = logits.len() as f64;
    let probs: Vec<f32> = logits.iter().map(|&z| sigmoid(z)).collect();
    let mut grad = vec![0.0f32; logits.len()];
    let mut loss = 0.0f64;

    if kind == LossKind::BceDice {
        let mut bce = 0.0f64;
        for i in 0..logits.len() {
            let z = f64::from(logits[i]);
            let t = f64::from(target[i]);
            bce += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
            grad[i] += ((probs[i] - target[i]) as f64 / n) as f32;
        }
        loss += bce / n;
    }

    let smooth = 1.0f64;
    let inter: f64 = probs.iter().zip(target).map(|(&p, &t)| f64::from(p * t)).sum();
    let total: f64 = probs.iter().chain(target).map(|&v| f64::from(v)).sum::<f64>() + smooth;
    let num = 2.0 * inter + smooth;
    loss += 1.0 - num / total;
    for i in 0..logits.len() {
        let p = f64::from(probs[i]);
        let dp = -(2.0 * f64::from(target[i]) * total - num) / (total * total);
        grad[i] += (dp * p * (1.0 - p)) as f32;
    }
    (loss, grad)
}

struct Prepared {
    input: Tensor,
    target: Vec<f32>,
}

/// Train a fresh network on `pairs` and keep the best validation epoch.
pub fn train_segmenter(pairs: &[TrainingPair], cfg: &SegmenterConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pairs.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 image/mask pairs, got {}",
            pairs.len()
        )));
    }
    for p in pairs {
        if p.image.dims() != p.mask.dims() {
            return Err(Error::Data(format!(
                "pair `{}`: image {:?} and mask {:?} are misaligned",
                p.id,
                p.image.dims(),
                p.mask.dims()
            )));
        }
    }
    let (h, w) = cfg.input_size;
    let prepared: Vec<Prepared> = pairs
        .iter()
        .map(|p| Prepared {
            input: to_input(&p.image, (h, w)),
            target: p.mask.resize(w, h).bits().iter().map(|&b| f32::from(b)).collect(),
        })
        .collect();
    let (mut train_idx, val_idx) = split_train_val(pairs, cfg.val_fraction, cfg.seed);
    log::info!(
        "segmenter: {} train / {} validation pairs at {}x{}",
        train_idx.len(),
        val_idx.len(),
        w,
        h
    );

    let mut net = UNet::new(cfg)?;
    let mut adam = Adam::new(cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, UNet)> = None;

    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "epoch", epoch as u64));
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in train_idx.chunks(cfg.batch) {
            for &i in batch {
                let (logits, cache) = net.forward(&prepared[i].input);
                let (loss, grad) = loss_and_grad(&logits.data, &prepared[i].target, cfg.loss);
                loss_sum += loss;
                net.backward(&cache, &Tensor::from_vec(1, h, w, grad));
            }
            adam.step(net.params_mut(), 1.0 / batch.len() as f32);
        }
        let train_loss = loss_sum / train_idx.len() as f64;

        let seg = Segmenter::new(net.clone());
        let mut dice_sum = 0.0;
        for &i in &val_idx {
            let pred = LungMask::threshold(&seg.segment(&pairs[i].image), 0.5);
            dice_sum += dice(&pred, &pairs[i].mask)?.value();
        }
        let val_dice = if val_idx.is_empty() {
            f64::NAN
        } else {
            dice_sum / val_idx.len() as f64
        };
        log::info!("epoch {epoch}: loss {train_loss:.4}, validation dice {val_dice:.4}");
        history.push(EpochStats {
            epoch,
            train_loss,
            val_dice,
        });
        let better = match &best {
            None => true,
            Some((d, _, _)) => val_dice > *d,
        };
        if better {
            best = Some((val_dice, epoch, seg.net().clone()));
        }
    }
    let (best_val_dice, best_epoch, net) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        segmenter: Segmenter::new(net),
        history,
        best_epoch,
        best_val_dice,
    })
}
