use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{gemm, Mode, Param, Tensor};

const COLS_BUDGET: usize = 1 << 22;

pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `out × in × k × k`.
    pub weight: Param,
    input: Option<Tensor>,
}

impl Conv2d {
    /// Kaiming-normal initialization (fan-out, ReLU gain), no bias.
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_out = (out_channels * kernel * kernel) as f32;
        let normal = Normal::new(0.0, libm::sqrtf(2.0 / fan_out)).expect("positive std");
        let len = out_channels * in_channels * kernel * kernel;
        let value = (0..len).map(|_| normal.sample(rng)).collect();
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::new(value, vec![out_channels, in_channels, kernel, kernel]),
            input: None,
        }
    }

    fn out_size(&self, size: usize) -> usize {
        (size + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    /// Writes the patches of one sample into columns `col0..col0 + oh·ow`
    /// of a `in·k·k × ld` matrix.
    fn im2col(&self, x: &[f32], h: usize, w: usize, cols: &mut [f32], ld: usize, col0: usize) {
        let (oh, ow) = (self.out_size(h), self.out_size(w));
        let (k, s, pad) = (self.kernel, self.stride, self.padding);
        let mut row = 0;
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let dst = &mut cols[row * ld + col0..row * ld + col0 + oh * ow];
                    // Output columns whose input column lies inside the image.
                    let lo = pad.saturating_sub(kx).div_ceil(s);
                    let hi = (w + pad).saturating_sub(kx).div_ceil(s);
                    let (lo, hi) = (lo.min(ow), hi.min(ow).max(lo.min(ow)));
                    for oy in 0..oh {
                        let out = &mut dst[oy * ow..(oy + 1) * ow];
                        let iy = (oy * s + ky) as isize - pad as isize;
                        if iy < 0 || iy as usize >= h {
                            out.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        out[..lo].fill(0.0);
                        out[hi..].fill(0.0);
                        let ix0 = lo * s + kx - pad;
                        if s == 1 {
                            out[lo..hi].copy_from_slice(&src[ix0..ix0 + hi - lo]);
                        } else {
                            for (o, ix) in out[lo..hi].iter_mut().zip((ix0..).step_by(s)) {
                                *o = src[ix];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], ld: usize, col0: usize, h: usize, w: usize, dx: &mut [f32]) {
        let (oh, ow) = (self.out_size(h), self.out_size(w));
        let (k, s, pad) = (self.kernel, self.stride, self.padding);
        let mut row = 0;
        for c in 0..self.in_channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let src = &cols[row * ld + col0..row * ld + col0 + oh * ow];
                    let lo = pad.saturating_sub(kx).div_ceil(s).min(ow);
                    let hi = (w + pad).saturating_sub(kx).div_ceil(s).min(ow).max(lo);
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let ix0 = lo * s + kx - pad;
                        for (ox, ix) in (lo..hi).zip((ix0..).step_by(s)) {
                            dst[ix] += src[oy * ow + ox];
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Samples per GEMM, keeping the patch matrix to a few million floats.
    fn chunk(&self, x: &Tensor) -> usize {
        let kk = self.in_channels * self.kernel * self.kernel;
        let p = self.out_size(x.h) * self.out_size(x.w);
        (COLS_BUDGET / (kk * p).max(1)).clamp(1, x.n.max(1))
    }

    /// Patch matrix `in·k·k × m·oh·ow` for samples `i0..i0 + m`.
    fn columns(&self, x: &Tensor, i0: usize, m: usize, cols: &mut Vec<f32>) {
        let kk = self.in_channels * self.kernel * self.kernel;
        let p = self.out_size(x.h) * self.out_size(x.w);
        let ld = m * p;
        cols.resize(kk * ld, 0.0);
        for j in 0..m {
            if self.is_pointwise() {
                let sample = x.sample(i0 + j);
                for c in 0..kk {
                    cols[c * ld + j * p..c * ld + (j + 1) * p].copy_from_slice(&sample[c * p..(c + 1) * p]);
                }
            } else {
                self.im2col(x.sample(i0 + j), x.h, x.w, cols, ld, j * p);
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        debug_assert_eq!(x.c, self.in_channels);
        let (oh, ow) = (self.out_size(x.h), self.out_size(x.w));
        let kk = self.in_channels * self.kernel * self.kernel;
        let (p, oc) = (oh * ow, self.out_channels);
        let mut out = Tensor::zeros(x.n, oc, oh, ow);
        let chunk = self.chunk(x);
        let mut cols = Vec::new();
        let mut y = Vec::new();
        let mut i0 = 0;
        while i0 < x.n {
            let m = chunk.min(x.n - i0);
            self.columns(x, i0, m, &mut cols);
            y.resize(oc * m * p, 0.0);
            gemm(oc, kk, m * p, &self.weight.value, false, &cols, false, 0.0, &mut y);
            for j in 0..m {
                let dst = out.sample_mut(i0 + j);
                for o in 0..oc {
                    dst[o * p..(o + 1) * p].copy_from_slice(&y[o * m * p + j * p..o * m * p + (j + 1) * p]);
                }
            }
            i0 += m;
        }
        self.input = Some(x.clone());
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.input.take().expect("forward before backward");
        let kk = self.in_channels * self.kernel * self.kernel;
        let (p, oc) = (dy.h * dy.w, self.out_channels);
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        let chunk = self.chunk(&x);
        let (mut cols, mut dys, mut dcols) = (Vec::new(), Vec::new(), Vec::new());
        let mut i0 = 0;
        while i0 < x.n {
            let m = chunk.min(x.n - i0);
            let ld = m * p;
            self.columns(&x, i0, m, &mut cols);
            dys.resize(oc * ld, 0.0);
            for j in 0..m {
                let src = dy.sample(i0 + j);
                for o in 0..oc {
                    dys[o * ld + j * p..o * ld + (j + 1) * p].copy_from_slice(&src[o * p..(o + 1) * p]);
                }
            }
            // dW += dY · colsᵀ
            gemm(oc, ld, kk, &dys, false, &cols, true, 1.0, &mut self.weight.grad);
            dcols.resize(kk * ld, 0.0);
            gemm(kk, oc, ld, &self.weight.value, true, &dys, false, 0.0, &mut dcols);
            for j in 0..m {
                let dst = dx.sample_mut(i0 + j);
                if self.is_pointwise() {
                    for c in 0..kk {
                        dst[c * p..(c + 1) * p].copy_from_slice(&dcols[c * ld + j * p..c * ld + (j + 1) * p]);
                    }
                } else {
                    self.col2im(&dcols, ld, j * p, x.h, x.w, dst);
                }
            }
            i0 += m;
        }
        self.input = Some(x);
        dx
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}

pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub eps: f32,
    cache: Option<BnCache>,
}

struct BnCache {
    x_hat: Tensor,
    inv_std: Vec<f32>,
    batch_stats: bool,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            gamma: Param::new(vec![1.0; channels], vec![channels]),
            beta: Param::new(vec![0.0; channels], vec![channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, mut x: Tensor, mode: Mode) -> Tensor {
        let hw = x.h * x.w;
        let count = (x.n * hw) as f32;
        let mut inv_std = vec![0.0; self.channels];
        let mut x_hat = x.clone();
        for c in 0..self.channels {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut sum = 0.0f64;
                    let mut sq = 0.0f64;
                    for i in 0..x.n {
                        for &v in &x.sample(i)[c * hw..(c + 1) * hw] {
                            sum += v as f64;
                            sq += (v as f64) * (v as f64);
                        }
                    }
                    let mean = sum / count as f64;
                    let var = (sq / count as f64 - mean * mean).max(0.0);
                    let unbiased = if count > 1.0 { var * count as f64 / (count as f64 - 1.0) } else { var };
                    let m = self.momentum;
                    self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * mean as f32;
                    self.running_var[c] = (1.0 - m) * self.running_var[c] + m * unbiased as f32;
                    (mean as f32, var as f32)
                }
                Mode::Eval => (self.running_mean[c], self.running_var[c]),
            };
            let is = 1.0 / libm::sqrtf(var + self.eps);
            inv_std[c] = is;
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for i in 0..x.n {
                let xs = &mut x.sample_mut(i)[c * hw..(c + 1) * hw];
                let hs = &mut x_hat.sample_mut(i)[c * hw..(c + 1) * hw];
                for (v, h) in xs.iter_mut().zip(hs.iter_mut()) {
                    *h = (*v - mean) * is;
                    *v = g * *h + b;
                }
            }
        }
        self.cache = Some(BnCache {
            x_hat,
            inv_std,
            batch_stats: mode == Mode::Train,
        });
        x
    }

    pub fn backward(&mut self, mut dy: Tensor) -> Tensor {
        let cache = self.cache.as_ref().expect("forward before backward");
        let hw = dy.h * dy.w;
        let count = (dy.n * hw) as f32;
        for c in 0..self.channels {
            let mut sum_dy = 0.0f32;
            let mut sum_dy_xhat = 0.0f32;
            for i in 0..dy.n {
                let d = &dy.sample(i)[c * hw..(c + 1) * hw];
                let h = &cache.x_hat.sample(i)[c * hw..(c + 1) * hw];
                for (a, b) in d.iter().zip(h) {
                    sum_dy += a;
                    sum_dy_xhat += a * b;
                }
            }
            self.gamma.grad[c] += sum_dy_xhat;
            self.beta.grad[c] += sum_dy;
            let g = self.gamma.value[c] * cache.inv_std[c];
            for i in 0..dy.n {
                let h = &cache.x_hat.sample(i)[c * hw..(c + 1) * hw];
                let d = &mut dy.sample_mut(i)[c * hw..(c + 1) * hw];
                if cache.batch_stats {
                    for (a, xh) in d.iter_mut().zip(h) {
                        *a = g / count * (count * *a - sum_dy - xh * sum_dy_xhat);
                    }
                } else {
                    for a in d.iter_mut() {
                        *a *= g;
                    }
                }
            }
        }
        dy
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// `out × in`.
    pub weight: Param,
    pub bias: Param,
    input: Vec<f32>,
}

impl Linear {
    /// Uniform `±1/√in` initialization.
    pub fn new<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / libm::sqrtf(in_features as f32);
        let uniform = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let weight = (0..in_features * out_features).map(|_| uniform.sample(rng)).collect();
        let bias = (0..out_features).map(|_| uniform.sample(rng)).collect();
        Linear {
            in_features,
            out_features,
            weight: Param::new(weight, vec![out_features, in_features]),
            bias: Param::new(bias, vec![out_features]),
            input: Vec::new(),
        }
    }

    pub fn forward(&mut self, x: &[f32]) -> Vec<f32> {
        let n = x.len() / self.in_features;
        let mut y = Vec::with_capacity(n * self.out_features);
        for _ in 0..n {
            y.extend_from_slice(&self.bias.value);
        }
        gemm(n, self.in_features, self.out_features, x, false, &self.weight.value, true, 1.0, &mut y);
        self.input = x.to_vec();
        y
    }

    pub fn backward(&mut self, dy: &[f32]) -> Vec<f32> {
        let n = dy.len() / self.out_features;
        gemm(self.out_features, n, self.in_features, dy, true, &self.input, false, 1.0, &mut self.weight.grad);
        for row in dy.chunks(self.out_features) {
            for (g, d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = vec![0.0; n * self.in_features];
        gemm(n, self.out_features, self.in_features, dy, false, &self.weight.value, false, 0.0, &mut dx);
        dx
    }
}

pub(crate) fn relu_inplace(x: &mut Tensor) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `d` wherever the ReLU output `out` was not positive.
pub(crate) fn relu_backward(d: &mut Tensor, out: &Tensor) {
    for (g, &o) in d.data.iter_mut().zip(&out.data) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 3×3 max pooling, stride 2, padding 1.
pub(crate) struct MaxPool {
    argmax: Vec<usize>,
    input_shape: [usize; 4],
}

impl MaxPool {
    pub fn new() -> Self {
        MaxPool {
            argmax: Vec::new(),
            input_shape: [0; 4],
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let oh = (x.h + 2 - 3) / 2 + 1;
        let ow = (x.w + 2 - 3) / 2 + 1;
        let mut out = Tensor::zeros(x.n, x.c, oh, ow);
        self.argmax = vec![0; out.data.len()];
        self.input_shape = x.shape();
        let mut o = 0;
        for plane in 0..x.n * x.c {
            let base = plane * x.h * x.w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut at = base;
                    for ky in 0..3 {
                        let iy = (oy * 2 + ky) as isize - 1;
                        if iy < 0 || iy as usize >= x.h {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * 2 + kx) as isize - 1;
                            if ix < 0 || ix as usize >= x.w {
                                continue;
                            }
                            let idx = base + iy as usize * x.w + ix as usize;
                            if x.data[idx] > best {
                                best = x.data[idx];
                                at = idx;
                            }
                        }
                    }
                    out.data[o] = best;
                    self.argmax[o] = at;
                    o += 1;
                }
            }
        }
        out
    }

    pub fn backward(&self, dy: &Tensor) -> Tensor {
        let [n, c, h, w] = self.input_shape;
        let mut dx = Tensor::zeros(n, c, h, w);
        for (g, &at) in dy.data.iter().zip(&self.argmax) {
            dx.data[at] += g;
        }
        dx
    }
}

pub(crate) fn global_avg_pool(x: &Tensor) -> Vec<f32> {
    let hw = (x.h * x.w) as f32;
    x.data.chunks(x.h * x.w).map(|plane| plane.iter().sum::<f32>() / hw).collect()
}

pub(crate) fn global_avg_pool_backward(d: &[f32], shape: [usize; 4]) -> Tensor {
    let [n, c, h, w] = shape;
    let hw = h * w;
    let mut dx = Tensor::zeros(n, c, h, w);
    for (plane, &g) in dx.data.chunks_mut(hw).zip(d) {
        plane.fill(g / hw as f32);
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    /// Finite-difference check of a layer's input gradient under the
    /// scalar objective `Σ r ⊙ layer(x)` for a fixed pseudo-random `r`.
    /// `back` must redo the forward pass on `x` before backpropagating.
    fn check_input_grad<L>(
        layer: &mut L,
        x: &Tensor,
        f: impl Fn(&mut L, &Tensor) -> Tensor,
        back: impl Fn(&mut L, &Tensor, &Tensor) -> Tensor,
    ) {
        let y = f(layer, x);
        let r: Vec<f32> = (0..y.data.len()).map(|i| ((i * 37 % 11) as f32 - 5.0) / 7.0).collect();
        let mut dy = y.clone();
        dy.data.copy_from_slice(&r);
        let dx = back(layer, x, &dy);
        let h = 1e-2f32;
        for idx in (0..x.data.len()).step_by(3) {
            let mut xp = x.clone();
            xp.data[idx] += h;
            let mut xm = x.clone();
            xm.data[idx] -= h;
            let fp: f32 = f(layer, &xp).data.iter().zip(&r).map(|(a, b)| a * b).sum();
            let fm: f32 = f(layer, &xm).data.iter().zip(&r).map(|(a, b)| a * b).sum();
            let num = (fp - fm) / (2.0 * h);
            assert!(
                (num - dx.data[idx]).abs() < 2e-2 * (1.0 + num.abs()),
                "idx {idx}: numeric {num}, analytic {}",
                dx.data[idx]
            );
        }
    }

    fn random_tensor(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = stream(seed, 0);
        let normal = Normal::new(0.0f32, 1.0).unwrap();
        Tensor::from_vec(n, c, h, w, (0..n * c * h * w).map(|_| normal.sample(&mut rng)).collect()).unwrap()
    }

    #[test]
    fn conv_gradients() {
        for (k, s, p) in [(3, 1, 1), (3, 2, 1), (1, 1, 0), (1, 2, 0)] {
            let mut rng = stream(1, 1);
            let mut conv = Conv2d::new(2, 3, k, s, p, &mut rng);
            let x = random_tensor(2, 2, 5, 5, 2);
            check_input_grad(
                &mut conv,
                &x,
                |c, x| c.forward(x),
                |c, x, dy| {
                    c.forward(x);
                    c.backward(dy)
                },
            );
        }
    }

    #[test]
    fn conv_weight_gradient() {
        let mut rng = stream(3, 1);
        let mut conv = Conv2d::new(2, 2, 3, 2, 1, &mut rng);
        let x = random_tensor(2, 2, 6, 6, 4);
        let y = conv.forward(&x);
        let mut dy = y.clone();
        dy.data.fill(1.0);
        conv.backward(&dy);
        let analytic = conv.weight.grad.clone();
        let h = 1e-2;
        for idx in 0..analytic.len() {
            conv.weight.value[idx] += h;
            let fp: f32 = conv.forward(&x).data.iter().sum();
            conv.weight.value[idx] -= 2.0 * h;
            let fm: f32 = conv.forward(&x).data.iter().sum();
            conv.weight.value[idx] += h;
            let num = (fp - fm) / (2.0 * h);
            assert!((num - analytic[idx]).abs() < 1e-2 * (1.0 + num.abs()));
        }
    }

    #[test]
    fn batchnorm_gradients() {
        let x = random_tensor(3, 2, 3, 3, 5);
        for mode in [Mode::Train, Mode::Eval] {
            let mut bn = BatchNorm2d::new(2);
            bn.gamma.value = vec![1.5, -0.7];
            bn.beta.value = vec![0.1, 0.3];
            bn.running_mean = vec![0.2, -0.1];
            bn.running_var = vec![0.8, 1.3];
            // Restore running statistics so every probe sees the same layer.
            let forward = |bn: &mut BatchNorm2d, x: &Tensor| {
                let saved = (bn.running_mean.clone(), bn.running_var.clone());
                let y = bn.forward(x.clone(), mode);
                (bn.running_mean, bn.running_var) = saved;
                y
            };
            check_input_grad(&mut bn, &x, forward, |bn, x, dy| {
                forward(bn, x);
                bn.backward(dy.clone())
            });
        }
    }

    #[test]
    fn maxpool_and_linear() {
        let x = random_tensor(1, 2, 5, 5, 6);
        let mut pool = MaxPool::new();
        let y = pool.forward(&x);
        assert_eq!(y.shape(), [1, 2, 3, 3]);
        let mut dy = y.clone();
        dy.data.fill(1.0);
        let dx = pool.backward(&dy);
        assert_eq!(dx.data.iter().sum::<f32>(), 18.0);

        let mut rng = stream(7, 0);
        let mut lin = Linear::new(3, 2, &mut rng);
        let input = [0.5, -1.0, 2.0, 1.0, 0.0, -0.5];
        let out = lin.forward(&input);
        for n in 0..2 {
            for o in 0..2 {
                let expect: f32 = (0..3).map(|i| lin.weight.value[o * 3 + i] * input[n * 3 + i]).sum::<f32>()
                    + lin.bias.value[o];
                assert!((out[n * 2 + o] - expect).abs() < 1e-6);
            }
        }
        let dx = lin.backward(&[1.0, 0.0, 0.0, 1.0]);
        assert!((dx[0] - lin.weight.value[0]).abs() < 1e-7);
        assert!((dx[3] - lin.weight.value[3]).abs() < 1e-7);
        assert_eq!(lin.bias.grad, [1.0, 1.0]);
    }
}
