//! Minimal CPU layers for the segmenter: im2col convolution, residual
//! blocks, 2x2 max-pooling and nearest upsampling, each with an explicit
//! backward pass. Activations are single images in CHW layout; batches are
//! handled by accumulating gradients across samples.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), c * h * w);
        Self { c, h, w, data }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    fn same_shape(&self) -> Self {
        Self::zeros(self.c, self.h, self.w)
    }
}

/// A learnable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    fn new(value: Vec<f32>) -> Self {
        let grad = vec![0.0; value.len()];
        Self { value, grad }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    /// `[cout, cin * k * k]`
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    pub fn new(cin: usize, cout: usize, k: usize, gain: f32, rng: &mut impl Rng) -> Self {
        assert!(k % 2 == 1, "odd kernels only");
        let fan_in = (cin * k * k) as f32;
        let bound = gain * (6.0 / fan_in).sqrt();
        let weight = (0..cout * cin * k * k).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self {
            cin,
            cout,
            k,
            weight: Param::new(weight),
            bias: Param::new(vec![0.0; cout]),
        }
    }

    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// Unfold `x` into `[cin * k * k, h * w]` with zero padding `k / 2`.
    fn im2col(&self, x: &Tensor) -> Vec<f32> {
        let (h, w, k) = (x.h, x.w, self.k);
        let pad = (k / 2) as isize;
        let hw = h * w;
        let mut cols = vec![0.0f32; self.patch_len() * hw];
        for ci in 0..self.cin {
            let src = &x.data[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    let oy = ky as isize - pad;
                    let ox = kx as isize - pad;
                    let x_lo = (-ox).max(0) as usize;
                    let x_hi = (w as isize - ox).min(w as isize).max(0) as usize;
                    for y in 0..h {
                        let sy = y as isize + oy;
                        if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                            continue;
                        }
                        let sy = sy as usize;
                        let d = &mut dst[y * w + x_lo..y * w + x_hi];
                        let s0 = (sy * w) as isize + x_lo as isize + ox;
                        d.copy_from_slice(&src[s0 as usize..s0 as usize + (x_hi - x_lo)]);
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f32], h: usize, w: usize) -> Tensor {
        let k = self.k;
        let pad = (k / 2) as isize;
        let hw = h * w;
        let mut out = Tensor::zeros(self.cin, h, w);
        for ci in 0..self.cin {
            let dst = &mut out.data[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * hw..(row + 1) * hw];
                    let oy = ky as isize - pad;
                    let ox = kx as isize - pad;
                    let x_lo = (-ox).max(0) as usize;
                    let x_hi = (w as isize - ox).min(w as isize).max(0) as usize;
                    for y in 0..h {
                        let sy = y as isize + oy;
                        if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                            continue;
                        }
                        let s0 = (sy as usize * w) as isize + x_lo as isize + ox;
                        let d = &mut dst[s0 as usize..s0 as usize + (x_hi - x_lo)];
                        for (a, b) in d.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                            *a += b;
                        }
                    }
                }
            }
        }
        out
    }

    /// Returns the output and the unfolded input needed by `backward`.
    pub fn forward(&self, x: &Tensor) -> (Tensor, Vec<f32>) {
        debug_assert_eq!(x.c, self.cin);
        let hw = x.plane();
        let kk = self.patch_len();
        let cols = if self.k == 1 { x.data.clone() } else { self.im2col(x) };
        let mut out = Tensor::zeros(self.cout, x.h, x.w);
        for (co, row) in out.data.chunks_mut(hw).enumerate() {
            row.fill(self.bias.value[co]);
        }
        unsafe {
            matrixmultiply::sgemm(
                self.cout,
                kk,
                hw,
                1.0,
                self.weight.value.as_ptr(),
                kk as isize,
                1,
                cols.as_ptr(),
                hw as isize,
                1,
                1.0,
                out.data.as_mut_ptr(),
                hw as isize,
                1,
            );
        }
        (out, cols)
    }

    /// Accumulate parameter gradients; return the input gradient if asked.
    pub fn backward(&mut self, cols: &[f32], dy: &Tensor, need_dx: bool) -> Option<Tensor> {
        let hw = dy.plane();
        let kk = self.patch_len();
        for (co, row) in dy.data.chunks(hw).enumerate() {
            self.bias.grad[co] += row.iter().sum::<f32>();
        }
        unsafe {
            // dW[cout, kk] += dY[cout, hw] * cols^T[hw, kk]
            matrixmultiply::sgemm(
                self.cout,
                hw,
                kk,
                1.0,
                dy.data.as_ptr(),
                hw as isize,
                1,
                cols.as_ptr(),
                1,
                hw as isize,
                1.0,
                self.weight.grad.as_mut_ptr(),
                kk as isize,
                1,
            );
        }
        if !need_dx {
            return None;
        }
        let mut dcols = vec![0.0f32; kk * hw];
        unsafe {
            // dcols[kk, hw] = W^T[kk, cout] * dY[cout, hw]
            matrixmultiply::sgemm(
                kk,
                self.cout,
                hw,
                1.0,
                self.weight.value.as_ptr(),
                1,
                kk as isize,
                dy.data.as_ptr(),
                hw as isize,
                1,
                0.0,
                dcols.as_mut_ptr(),
                hw as isize,
                1,
            );
        }
        Some(if self.k == 1 {
            Tensor::from_vec(self.cin, dy.h, dy.w, dcols)
        } else {
            self.col2im(&dcols, dy.h, dy.w)
        })
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}

fn relu_inplace(t: &mut Tensor) {
    for v in &mut t.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zero `grad` wherever the post-ReLU activation is not positive.
fn relu_backward(grad: &mut Tensor, activated: &Tensor) {
    for (g, &a) in grad.data.iter_mut().zip(&activated.data) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// `relu(conv2(relu(conv1(x))) + shortcut(x))`, where the shortcut is the
/// identity or a 1x1 projection when channel counts differ.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub proj: Option<Conv2d>,
}

pub struct ResCache {
    cols1: Vec<f32>,
    a1: Tensor,
    cols2: Vec<f32>,
    proj_cols: Option<Vec<f32>>,
    out: Tensor,
}

impl ResBlock {
    pub fn new(cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv1: Conv2d::new(cin, cout, 3, 1.0, rng),
            // Residual branch starts at half gain; there is no normalization.
            conv2: Conv2d::new(cout, cout, 3, 0.5, rng),
            proj: (cin != cout).then(|| Conv2d::new(cin, cout, 1, 1.0, rng)),
        }
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, ResCache) {
        let (mut a1, cols1) = self.conv1.forward(x);
        relu_inplace(&mut a1);
        let (mut out, cols2) = self.conv2.forward(&a1);
        let proj_cols = match &self.proj {
            Some(p) => {
                let (s, cols) = p.forward(x);
                for (o, v) in out.data.iter_mut().zip(&s.data) {
                    *o += v;
                }
                Some(cols)
            }
            None => {
                for (o, v) in out.data.iter_mut().zip(&x.data) {
                    *o += v;
                }
                None
            }
        };
        relu_inplace(&mut out);
        let cache = ResCache {
            cols1,
            a1,
            cols2,
            proj_cols,
            out: out.clone(),
        };
        (out, cache)
    }

    pub fn backward(&mut self, cache: &ResCache, dy: &Tensor) -> Tensor {
        let mut dsum = dy.clone();
        relu_backward(&mut dsum, &cache.out);
        let mut da1 = self.conv2.backward(&cache.cols2, &dsum, true).expect("dx requested");
        relu_backward(&mut da1, &cache.a1);
        let mut dx = self.conv1.backward(&cache.cols1, &da1, true).expect("dx requested");
        match (&mut self.proj, &cache.proj_cols) {
            (Some(p), Some(cols)) => {
                let ds = p.backward(cols, &dsum, true).expect("dx requested");
                for (a, b) in dx.data.iter_mut().zip(&ds.data) {
                    *a += b;
                }
            }
            _ => {
                for (a, b) in dx.data.iter_mut().zip(&dsum.data) {
                    *a += b;
                }
            }
        }
        dx
    }

    pub fn convs(&self) -> Vec<&Conv2d> {
        let mut v = vec![&self.conv1, &self.conv2];
        v.extend(self.proj.as_ref());
        v
    }

    pub fn convs_mut(&mut self) -> Vec<&mut Conv2d> {
        let mut v = vec![&mut self.conv1, &mut self.conv2];
        v.extend(self.proj.as_mut());
        v
    }
}

/// 2x2 max-pool; returns the pooled tensor and argmax indices into `x`.
pub fn maxpool2(x: &Tensor) -> (Tensor, Vec<u32>) {
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, h2, w2);
    let mut idx = vec![0u32; x.c * h2 * w2];
    for c in 0..x.c {
        let base = c * x.plane();
        for y in 0..h2 {
            for xx in 0..w2 {
                let mut best = base + 2 * y * x.w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = base + (2 * y + dy) * x.w + 2 * xx + dx;
                    if x.data[j] > x.data[best] {
                        best = j;
                    }
                }
                let o = (c * h2 + y) * w2 + xx;
                out.data[o] = x.data[best];
                idx[o] = best as u32;
            }
        }
    }
    (out, idx)
}

pub fn maxpool2_backward(dy: &Tensor, idx: &[u32], input: &Tensor) -> Tensor {
    let mut dx = input.same_shape();
    for (g, &i) in dy.data.iter().zip(idx) {
        dx.data[i as usize] += g;
    }
    dx
}

pub fn upsample2(x: &Tensor) -> Tensor {
    let (h2, w2) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, h2, w2);
    for c in 0..x.c {
        for y in 0..h2 {
            for xx in 0..w2 {
                out.data[(c * h2 + y) * w2 + xx] = x.data[(c * x.h + y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(dy: &Tensor) -> Tensor {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut dx = Tensor::zeros(dy.c, h, w);
    for c in 0..dy.c {
        for y in 0..dy.h {
            for xx in 0..dy.w {
                dx.data[(c * h + y / 2) * w + xx / 2] += dy.data[(c * dy.h + y) * dy.w + xx];
            }
        }
    }
    dx
}

pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!((a.h, a.w), (b.h, b.w));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::from_vec(a.c + b.c, a.h, a.w, data)
}

pub fn split(t: &Tensor, first_channels: usize) -> (Tensor, Tensor) {
    let n = first_channels * t.plane();
    (
        Tensor::from_vec(first_channels, t.h, t.w, t.data[..n].to_vec()),
        Tensor::from_vec(t.c - first_channels, t.h, t.w, t.data[n..].to_vec()),
    )
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one update with gradients scaled by `scale`, then clear them.
    pub fn step(&mut self, params: Vec<&mut Param>, scale: f32) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i] * scale;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.value[i] -= self.lr * mh / (vh.sqrt() + self.eps);
                p.grad[i] = 0.0;
            }
        }
    }
}
