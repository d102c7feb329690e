//! Minimal dense-tensor machinery for the tracker network.
//!
//! Everything here operates on single samples in channel-major (`C x H x W`)
//! layout. Convolutions go through im2col + GEMM, the cross-convolution join
//! is a direct depthwise correlation. Every forward op has a matching
//! hand-written backward op; the network module composes them.
//!
//! The code is generic over [`Scalar`] so that training runs in `f32` while
//! gradient checks run the identical code path in `f64`.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating point element type usable by the network.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + AddAssign + Sum + Default + Debug + Send + Sync + 'static
{
    /// `C <- alpha * A * B + beta * C` with arbitrary strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n` and
    /// `m x n` matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }
}

impl Scalar for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major product `c = a (m x k) * b (k x n)`, overwriting `c`.
pub fn matmul<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            T::zero(),
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// A single-sample activation tensor in `C x H x W` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), channels * height * width, "tensor shape mismatch");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut T {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }
}

/// Output size and leading pad of a "same"-padded strided window.
///
/// Matches the usual convention: `out = ceil(input / stride)` and the total
/// padding is split with the smaller half before the data.
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let needed = (out - 1) * stride + kernel;
    let total = needed.saturating_sub(input);
    (out, total / 2)
}

/// Convolution parameters. Weight layout is `out x (in * k * k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Intermediate values a convolution keeps for its backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    input_shape: (usize, usize, usize),
    out_hw: (usize, usize),
    pad: (usize, usize),
    /// im2col matrix, `(in * k * k) x (oh * ow)`. For 1x1 stride-1 convs this
    /// is a copy of the input.
    cols: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: vec![T::zero(); out_channels * in_channels * kernel * kernel],
            bias: vec![T::zero(); out_channels],
        }
    }

    /// He-normal weights scaled by `gain`, zero bias.
    pub fn init<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let mut conv = Self::zeros(in_channels, out_channels, kernel, stride);
        let fan_in = (in_channels * kernel * kernel) as f64;
        let std = gain * (2.0 / fan_in).sqrt();
        for w in conv.weight.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *w = T::lit(z * std);
        }
        conv
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_hw(&self, height: usize, width: usize) -> (usize, usize) {
        (
            same_padding(height, self.kernel, self.stride).0,
            same_padding(width, self.kernel, self.stride).0,
        )
    }

    pub fn forward(&self, input: &Tensor<T>) -> (Tensor<T>, ConvCache<T>) {
        assert_eq!(input.channels, self.in_channels, "conv input channels");
        let (oh, pt) = same_padding(input.height, self.kernel, self.stride);
        let (ow, pl) = same_padding(input.width, self.kernel, self.stride);
        let cols = if self.kernel == 1 && self.stride == 1 {
            input.data.clone()
        } else {
            im2col(input, self.kernel, self.stride, (oh, ow), (pt, pl))
        };
        let p = oh * ow;
        let k = self.patch_len();
        let mut out = Tensor::zeros(self.out_channels, oh, ow);
        for (co, b) in self.bias.iter().enumerate() {
            out.data[co * p..(co + 1) * p].fill(*b);
        }
        unsafe {
            T::gemm(
                self.out_channels,
                k,
                p,
                T::one(),
                self.weight.as_ptr(),
                k as isize,
                1,
                cols.as_ptr(),
                p as isize,
                1,
                T::one(),
                out.data.as_mut_ptr(),
                p as isize,
                1,
            );
        }
        let cache = ConvCache {
            input_shape: (input.channels, input.height, input.width),
            out_hw: (oh, ow),
            pad: (pt, pl),
            cols,
        };
        (out, cache)
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient when `need_input_grad` is set.
    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        grad_out: &Tensor<T>,
        grad: &mut Conv2d<T>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let (oh, ow) = cache.out_hw;
        assert_eq!(grad_out.channels, self.out_channels);
        assert_eq!((grad_out.height, grad_out.width), (oh, ow));
        let p = oh * ow;
        let k = self.patch_len();
        for co in 0..self.out_channels {
            let s: T = grad_out.data[co * p..(co + 1) * p].iter().copied().sum();
            grad.bias[co] += s;
        }
        // dW += dY * cols^T
        unsafe {
            T::gemm(
                self.out_channels,
                p,
                k,
                T::one(),
                grad_out.data.as_ptr(),
                p as isize,
                1,
                cache.cols.as_ptr(),
                1,
                p as isize,
                T::one(),
                grad.weight.as_mut_ptr(),
                k as isize,
                1,
            );
        }
        if !need_input_grad {
            return None;
        }
        // dcols = W^T * dY
        let mut dcols = vec![T::zero(); k * p];
        unsafe {
            T::gemm(
                k,
                self.out_channels,
                p,
                T::one(),
                self.weight.as_ptr(),
                1,
                k as isize,
                grad_out.data.as_ptr(),
                p as isize,
                1,
                T::zero(),
                dcols.as_mut_ptr(),
                p as isize,
                1,
            );
        }
        let (c, h, w) = cache.input_shape;
        if self.kernel == 1 && self.stride == 1 {
            return Some(Tensor::from_vec(c, h, w, dcols));
        }
        let mut dx = Tensor::zeros(c, h, w);
        col2im(&dcols, &mut dx, self.kernel, self.stride, cache.out_hw, cache.pad);
        Some(dx)
    }
}

fn im2col<T: Scalar>(
    input: &Tensor<T>,
    kernel: usize,
    stride: usize,
    (oh, ow): (usize, usize),
    (pt, pl): (usize, usize),
) -> Vec<T> {
    let p = oh * ow;
    let (h, w) = (input.height as isize, input.width as isize);
    let mut cols = vec![T::zero(); input.channels * kernel * kernel * p];
    for ci in 0..input.channels {
        let plane = input.plane(ci);
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (ci * kernel + ki) * kernel + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pt as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let src = &plane[iy as usize * w as usize..(iy as usize + 1) * w as usize];
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - pl as isize;
                        if ix >= 0 && ix < w {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(
    cols: &[T],
    out: &mut Tensor<T>,
    kernel: usize,
    stride: usize,
    (oh, ow): (usize, usize),
    (pt, pl): (usize, usize),
) {
    let p = oh * ow;
    let (h, w) = (out.height as isize, out.width as isize);
    let plane_len = out.plane_len();
    for ci in 0..out.channels {
        let plane = &mut out.data[ci * plane_len..(ci + 1) * plane_len];
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (ci * kernel + ki) * kernel + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pt as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w as usize..(iy as usize + 1) * w as usize];
                    let srow = &src[oy * ow..(oy + 1) * ow];
                    for (ox, s) in srow.iter().enumerate() {
                        let ix = (ox * stride + kj) as isize - pl as isize;
                        if ix >= 0 && ix < w {
                            dst[ix as usize] += *s;
                        }
                    }
                }
            }
        }
    }
}

/// In-place rectifier; the output doubles as the mask for the backward pass.
pub fn relu_inplace<T: Scalar>(t: &mut Tensor<T>) {
    for v in t.data.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

pub fn relu_backward_inplace<T: Scalar>(activated: &Tensor<T>, grad: &mut Tensor<T>) {
    for (g, a) in grad.data.iter_mut().zip(&activated.data) {
        if *a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Leading pad used by the "same" cross-convolution for a kernel of size `k`.
///
/// A unit impulse at index `(k - 1) / 2` reproduces the search map exactly.
#[inline]
pub fn xcorr_pad(k: usize) -> usize {
    (k - 1) / 2
}

/// Depthwise "same"-padded correlation: every search channel is correlated
/// with the matching kernel channel, output has the search map's extent.
pub fn xcorr_forward<T: Scalar>(kernel: &Tensor<T>, search: &Tensor<T>) -> Tensor<T> {
    assert_eq!(kernel.channels, search.channels, "cross-convolution channels");
    let (kh, kw) = (kernel.height, kernel.width);
    let (h, w) = (search.height, search.width);
    let (ph, pw) = (xcorr_pad(kh), xcorr_pad(kw));
    let mut out = Tensor::zeros(search.channels, h, w);
    let plane = h * w;
    for c in 0..search.channels {
        let s = search.plane(c);
        let k = kernel.plane(c);
        let o = &mut out.data[c * plane..(c + 1) * plane];
        for i in 0..kh {
            for j in 0..kw {
                let kv = k[i * kw + j];
                if kv == T::zero() {
                    continue;
                }
                let Some((x0, x1)) = valid_span(w, j, pw) else {
                    continue;
                };
                for y in 0..h {
                    let sy = y as isize + i as isize - ph as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let srow = &s[sy * w + x0 + j - pw..sy * w + x1 + j - pw];
                    let orow = &mut o[y * w + x0..y * w + x1];
                    for (ov, sv) in orow.iter_mut().zip(srow) {
                        *ov += kv * *sv;
                    }
                }
            }
        }
    }
    out
}

/// Output columns `[x0, x1)` for which `x + j - pw` lands inside `[0, w)`.
#[inline]
fn valid_span(w: usize, j: usize, pw: usize) -> Option<(usize, usize)> {
    let x0 = pw.saturating_sub(j);
    let x1 = (w + pw).saturating_sub(j).min(w);
    (x0 < x1).then_some((x0, x1))
}

/// Gradients of [`xcorr_forward`] with respect to kernel and search maps.
pub fn xcorr_backward<T: Scalar>(
    kernel: &Tensor<T>,
    search: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (kh, kw) = (kernel.height, kernel.width);
    let (h, w) = (search.height, search.width);
    let (ph, pw) = (xcorr_pad(kh), xcorr_pad(kw));
    let mut dk = Tensor::zeros(kernel.channels, kh, kw);
    let mut ds = Tensor::zeros(search.channels, h, w);
    let plane = h * w;
    for c in 0..search.channels {
        let s = search.plane(c);
        let k = kernel.plane(c);
        let g = grad_out.plane(c);
        let dkp = &mut dk.data[c * kh * kw..(c + 1) * kh * kw];
        let dsp = &mut ds.data[c * plane..(c + 1) * plane];
        for i in 0..kh {
            for j in 0..kw {
                let Some((x0, x1)) = valid_span(w, j, pw) else {
                    continue;
                };
                let kv = k[i * kw + j];
                let mut acc = T::zero();
                for y in 0..h {
                    let sy = y as isize + i as isize - ph as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let grow = &g[y * w + x0..y * w + x1];
                    let lo = sy * w + x0 + j - pw;
                    let hi = sy * w + x1 + j - pw;
                    let srow = &s[lo..hi];
                    for (gv, sv) in grow.iter().zip(srow) {
                        acc += *gv * *sv;
                    }
                    if kv != T::zero() {
                        let drow = &mut dsp[lo..hi];
                        for (dv, gv) in drow.iter_mut().zip(grow) {
                            *dv += kv * *gv;
                        }
                    }
                }
                dkp[i * kw + j] += acc;
            }
        }
    }
    (dk, ds)
}

/// Adaptive-moment optimizer state for one flat parameter buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub first: Vec<T>,
    pub second: Vec<T>,
}

impl<T: Scalar> Moments<T> {
    pub fn zeros(len: usize) -> Self {
        Self {
            first: vec![T::zero(); len],
            second: vec![T::zero(); len],
        }
    }
}

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    /// One bias-corrected update. `step` is 1-based.
    pub fn update<T: Scalar>(
        &self,
        step: u64,
        lr: f64,
        params: &mut [T],
        grads: &[T],
        moments: &mut Moments<T>,
    ) {
        assert_eq!(params.len(), grads.len());
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let one = T::one();
        let c1 = one - b1.powi(step as i32);
        let c2 = one - b2.powi(step as i32);
        let lr = T::lit(lr);
        let eps = T::lit(self.epsilon);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(moments.first.iter_mut())
            .zip(moments.second.iter_mut())
        {
            *m = b1 * *m + (one - b1) * *g;
            *v = b2 * *v + (one - b2) * *g * *g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_vec(
            c,
            h,
            w,
            (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    fn naive_conv(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (oh, pt) = same_padding(x.height, conv.kernel, conv.stride);
        let (ow, pl) = same_padding(x.width, conv.kernel, conv.stride);
        let k = conv.kernel;
        let mut out = Tensor::zeros(conv.out_channels, oh, ow);
        for co in 0..conv.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = conv.bias[co];
                    for ci in 0..conv.in_channels {
                        for ki in 0..k {
                            for kj in 0..k {
                                let iy = (oy * conv.stride + ki) as isize - pt as isize;
                                let ix = (ox * conv.stride + kj) as isize - pl as isize;
                                if iy >= 0
                                    && ix >= 0
                                    && (iy as usize) < x.height
                                    && (ix as usize) < x.width
                                {
                                    acc += conv.weight[((co * conv.in_channels + ci) * k + ki) * k + kj]
                                        * x.at(ci, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    *out.at_mut(co, oy, ox) = acc;
                }
            }
        }
        out
    }

    #[test]
    fn same_padding_matches_reference_sizes() {
        assert_eq!(same_padding(128, 3, 2), (64, 0));
        assert_eq!(same_padding(255, 3, 2), (128, 1));
        assert_eq!(same_padding(128, 3, 1), (128, 1));
        assert_eq!(same_padding(127, 3, 2), (64, 1));
        assert_eq!(same_padding(64, 3, 2).0, 32);
    }

    #[test]
    fn conv_forward_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(stride, h, w) in &[(1, 7, 9), (2, 8, 8), (2, 9, 7)] {
            let conv: Conv2d<f64> = Conv2d::init(3, 4, 3, stride, 1.0, &mut rng);
            let mut conv = conv;
            conv.bias = vec![0.1, -0.2, 0.3, 0.0];
            let x = random_tensor(3, h, w, &mut rng);
            let (y, _) = conv.forward(&x);
            let r = naive_conv(&conv, &x);
            assert!(y.same_shape(&r));
            for (a, b) in y.data.iter().zip(&r.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let conv: Conv2d<f64> = Conv2d::init(2, 3, 3, 2, 1.0, &mut rng);
        let x = random_tensor(2, 6, 5, &mut rng);
        let (y, cache) = conv.forward(&x);
        let gy = random_tensor(y.channels, y.height, y.width, &mut rng);
        let mut grad = Conv2d::zeros(2, 3, 3, 2);
        let dx = conv.backward(&cache, &gy, &mut grad, true).unwrap();
        let loss = |c: &Conv2d<f64>, x: &Tensor<f64>| -> f64 {
            let (y, _) = c.forward(x);
            y.data.iter().zip(&gy.data).map(|(a, b)| a * b).sum()
        };
        let eps = 1e-6;
        for i in 0..conv.weight.len() {
            let mut p = conv.clone();
            p.weight[i] += eps;
            let mut m = conv.clone();
            m.weight[i] -= eps;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * eps);
            assert!((fd - grad.weight[i]).abs() < 1e-7, "weight {i}");
        }
        for i in 0..x.data.len() {
            let mut p = x.clone();
            p.data[i] += eps;
            let mut m = x.clone();
            m.data[i] -= eps;
            let fd = (loss(&conv, &p) - loss(&conv, &m)) / (2.0 * eps);
            assert!((fd - dx.data[i]).abs() < 1e-7, "input {i}");
        }
    }

    #[test]
    fn xcorr_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = random_tensor(2, 4, 3, &mut rng);
        let s = random_tensor(2, 6, 7, &mut rng);
        let out = xcorr_forward(&k, &s);
        let g = random_tensor(2, out.height, out.width, &mut rng);
        let (dk, ds) = xcorr_backward(&k, &s, &g);
        let loss = |k: &Tensor<f64>, s: &Tensor<f64>| -> f64 {
            xcorr_forward(k, s)
                .data
                .iter()
                .zip(&g.data)
                .map(|(a, b)| a * b)
                .sum()
        };
        let eps = 1e-6;
        for i in 0..k.data.len() {
            let (mut p, mut m) = (k.clone(), k.clone());
            p.data[i] += eps;
            m.data[i] -= eps;
            let fd = (loss(&p, &s) - loss(&m, &s)) / (2.0 * eps);
            assert!((fd - dk.data[i]).abs() < 1e-7);
        }
        for i in 0..s.data.len() {
            let (mut p, mut m) = (s.clone(), s.clone());
            p.data[i] += eps;
            m.data[i] -= eps;
            let fd = (loss(&k, &p) - loss(&k, &m)) / (2.0 * eps);
            assert!((fd - ds.data[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let cfg = AdamConfig::default();
        let mut p = vec![1.0f64, -1.0, 0.5];
        let g = vec![0.3, -2.0, 0.0];
        let mut m = Moments::zeros(3);
        cfg.update(1, 0.01, &mut p, &g, &mut m);
        assert!((p[0] - 0.99).abs() < 1e-6);
        assert!((p[1] + 0.99).abs() < 1e-6);
        assert_eq!(p[2], 0.5);
    }
}
