//! U-Net with residual conv blocks at every level and concatenated
//! encoder-to-decoder skips. Output is a single-channel logit map the size
//! of the input.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::nn::{
    concat, maxpool2, maxpool2_backward, split, upsample2, upsample2_backward, Conv2d, Param, ResBlock, ResCache,
    Tensor,
};
use super::SegmenterConfig;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct UNet {
    pub(crate) cfg: SegmenterConfig,
    enc: Vec<ResBlock>,
    bottleneck: ResBlock,
    /// Indexed by level; level `s` consumes `up(level s+1) ++ skip(s)`.
    dec: Vec<ResBlock>,
    head: Conv2d,
}

struct EncLevel {
    cache: ResCache,
    out: Tensor,
    pool_idx: Vec<u32>,
}

pub(crate) struct ForwardCache {
    enc: Vec<EncLevel>,
    bottleneck: ResCache,
    dec: Vec<Option<ResCache>>,
    head_cols: Vec<f32>,
}

impl UNet {
    pub fn new(cfg: &SegmenterConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let ch = |s: usize| cfg.base_channels << s;
        let mut enc = Vec::with_capacity(cfg.depth);
        for s in 0..cfg.depth {
            let cin = if s == 0 { 1 } else { ch(s - 1) };
            enc.push(ResBlock::new(cin, ch(s), &mut rng));
        }
        let bottleneck = ResBlock::new(ch(cfg.depth - 1), ch(cfg.depth), &mut rng);
        let dec = (0..cfg.depth)
            .map(|s| ResBlock::new(ch(s + 1) + ch(s), ch(s), &mut rng))
            .collect();
        let head = Conv2d::new(ch(0), 1, 1, 1.0, &mut rng);
        Ok(Self {
            cfg: cfg.clone(),
            enc,
            bottleneck,
            dec,
            head,
        })
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.cfg
    }

    /// Spatial size of the bottleneck feature map `(h, w)`.
    pub fn bottleneck_size(&self) -> (usize, usize) {
        let (h, w) = self.cfg.input_size;
        (h >> self.cfg.depth, w >> self.cfg.depth)
    }

    pub(crate) fn forward(&self, x: &Tensor) -> (Tensor, ForwardCache) {
        let mut enc = Vec::with_capacity(self.cfg.depth);
        let mut cur = x.clone();
        for block in &self.enc {
            let (out, cache) = block.forward(&cur);
            let (pooled, pool_idx) = maxpool2(&out);
            enc.push(EncLevel { cache, out, pool_idx });
            cur = pooled;
        }
        let (mut cur, bottleneck) = self.bottleneck.forward(&cur);
        let mut dec: Vec<Option<ResCache>> = (0..self.cfg.depth).map(|_| None).collect();
        for s in (0..self.cfg.depth).rev() {
            let cat = concat(&upsample2(&cur), &enc[s].out);
            let (out, cache) = self.dec[s].forward(&cat);
            dec[s] = Some(cache);
            cur = out;
        }
        let (logits, head_cols) = self.head.forward(&cur);
        (
            logits,
            ForwardCache {
                enc,
                bottleneck,
                dec,
                head_cols,
            },
        )
    }

    /// Forward pass without keeping activations for training.
    pub fn infer(&self, x: &Tensor) -> Tensor {
        self.forward(x).0
    }

    /// Accumulate gradients of the loss given its gradient w.r.t. the logits.
    pub(crate) fn backward(&mut self, cache: &ForwardCache, dlogits: &Tensor) {
        let ch = |s: usize| self.cfg.base_channels << s;
        let mut grad = self
            .head
            .backward(&cache.head_cols, dlogits, true)
            .expect("dx requested");
        let mut dskips = Vec::with_capacity(self.cfg.depth);
        for s in 0..self.cfg.depth {
            let dcat = self.dec[s].backward(cache.dec[s].as_ref().expect("forward ran"), &grad);
            let (dup, dskip) = split(&dcat, ch(s + 1));
            dskips.push(dskip);
            grad = upsample2_backward(&dup);
        }
        grad = self.bottleneck.backward(&cache.bottleneck, &grad);
        for s in (0..self.cfg.depth).rev() {
            let level = &cache.enc[s];
            let mut dout = maxpool2_backward(&grad, &level.pool_idx, &level.out);
            for (a, b) in dout.data.iter_mut().zip(&dskips[s].data) {
                *a += b;
            }
            grad = self.enc[s].backward(&level.cache, &dout);
        }
    }

    fn convs(&self) -> Vec<(String, &Conv2d)> {
        const NAMES: [&str; 3] = ["conv1", "conv2", "proj"];
        let blocks = self
            .enc
            .iter()
            .enumerate()
            .map(|(s, b)| (format!("enc{s}"), b))
            .chain(std::iter::once(("bottleneck".to_string(), &self.bottleneck)))
            .chain(self.dec.iter().enumerate().map(|(s, b)| (format!("dec{s}"), b)));
        let mut out = Vec::new();
        for (prefix, block) in blocks {
            for (conv, name) in block.convs().into_iter().zip(NAMES) {
                out.push((format!("{prefix}.{name}"), conv));
            }
        }
        out.push(("head".to_string(), &self.head));
        out
    }

    /// Named parameter tensors in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Param)> {
        self.convs()
            .into_iter()
            .flat_map(|(name, c)| {
                let [w, b] = c.params();
                [(format!("{name}.weight"), w), (format!("{name}.bias"), b)]
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for b in self.enc.iter_mut() {
            for c in b.convs_mut() {
                out.extend(c.params_mut());
            }
        }
        for c in self.bottleneck.convs_mut() {
            out.extend(c.params_mut());
        }
        for b in self.dec.iter_mut() {
            for c in b.convs_mut() {
                out.extend(c.params_mut());
            }
        }
        out.extend(self.head.params_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.value.len()).sum()
    }
}
