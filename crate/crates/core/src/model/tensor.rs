//! Minimal CHW tensors with 3x3 same-padded convolution and 2x2 max pooling,
//! forward and backward, generic over `f32`/`f64`.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, Sub};

pub trait Scalar:
    Copy + Debug + Default + PartialOrd + Send + Sync + 'static + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + AddAssign
{
    const ZERO: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;

    /// `c = alpha * a * b + beta * c` with explicit row/column strides.
    ///
    /// # Safety
    /// The pointers must address matrices of the given shapes and strides.
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
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
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
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
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
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major `a (m x k) * b (k x n)`, with either operand optionally
/// transposed in place of its stored layout.
pub(crate) fn matmul<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_transposed: bool,
    b: &[T],
    b_transposed: bool,
    out: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(out.len(), m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::from_f64(1.0) } else { T::ZERO };
    // SAFETY: slice lengths checked above; strides describe those buffers.
    unsafe {
        T::gemm(m, k, n, T::from_f64(1.0), a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, out.as_mut_ptr(), n as isize, 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor3 { channels, height, width, data: vec![T::ZERO; channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), channels * height * width, "tensor data length");
        Tensor3 { channels, height, width, data }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn relu_in_place(&mut self) {
        for v in &mut self.data {
            if *v < T::ZERO {
                *v = T::ZERO;
            }
        }
    }

    /// Per-channel spatial mean, accumulated as offsets from the first
    /// element so a constant channel averages to exactly its value.
    pub fn global_average(&self) -> Vec<T> {
        let plane = self.plane();
        let inv = T::from_f64(1.0 / plane as f64);
        self.data
            .chunks(plane)
            .map(|ch| {
                let first = ch[0];
                let mut acc = T::ZERO;
                for &v in ch {
                    acc += v - first;
                }
                first + acc * inv
            })
            .collect()
    }
}

/// 3x3 convolution, stride 1, zero padding 1. Weights are laid out
/// `[out][in][ky][kx]` (the common layout of VGG checkpoints).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub struct ConvGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv3x3<T> {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Conv3x3 {
            in_channels,
            out_channels,
            weight: vec![T::ZERO; out_channels * in_channels * 9],
            bias: vec![T::ZERO; out_channels],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn im2col(&self, input: &Tensor3<T>) -> Vec<T> {
        let (c, h, w) = input.shape();
        let plane = h * w;
        let mut cols = vec![T::ZERO; c * 9 * plane];
        for ci in 0..c {
            let src = &input.data[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &mut cols[((ci * 9) + ky * 3 + kx) * plane..][..plane];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src_row = &src[sy as usize * w..][..w];
                        let dst_row = &mut row[y * w..][..w];
                        let (x_lo, x_hi) = match kx {
                            0 => (1, w),
                            1 => (0, w),
                            _ => (0, w.saturating_sub(1)),
                        };
                        for x in x_lo..x_hi {
                            dst_row[x] = src_row[x + kx - 1];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize) -> Tensor3<T> {
        let plane = h * w;
        let mut out = Tensor3::zeros(self.in_channels, h, w);
        for ci in 0..self.in_channels {
            let dst = &mut out.data[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &cols[((ci * 9) + ky * 3 + kx) * plane..][..plane];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let (x_lo, x_hi) = match kx {
                            0 => (1, w),
                            1 => (0, w),
                            _ => (0, w.saturating_sub(1)),
                        };
                        for x in x_lo..x_hi {
                            dst[sy as usize * w + x + kx - 1] += row[y * w + x];
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, input: &Tensor3<T>) -> Tensor3<T> {
        self.forward_cached(input).0
    }

    /// Forward pass that also returns the im2col buffer for `backward`.
    pub fn forward_cached(&self, input: &Tensor3<T>) -> (Tensor3<T>, Vec<T>) {
        assert_eq!(input.channels, self.in_channels, "conv input channels");
        let (_, h, w) = input.shape();
        let plane = h * w;
        let cols = self.im2col(input);
        let mut out = Tensor3::zeros(self.out_channels, h, w);
        for (o, chunk) in out.data.chunks_mut(plane).enumerate() {
            chunk.fill(self.bias[o]);
        }
        matmul(self.out_channels, self.in_channels * 9, plane, &self.weight, false, &cols, false, &mut out.data, true);
        (out, cols)
    }

    /// Gradients w.r.t. weights, bias and input given the upstream gradient.
    pub fn backward(&self, cols: &[T], grad_out: &Tensor3<T>) -> (ConvGrads<T>, Tensor3<T>) {
        let plane = grad_out.plane();
        let k = self.in_channels * 9;
        let mut grad_w = vec![T::ZERO; self.weight.len()];
        matmul(self.out_channels, plane, k, &grad_out.data, false, cols, true, &mut grad_w, false);
        let grad_b = grad_out
            .data
            .chunks(plane)
            .map(|ch| {
                let mut acc = T::ZERO;
                for &v in ch {
                    acc += v;
                }
                acc
            })
            .collect();
        let mut grad_cols = vec![T::ZERO; k * plane];
        matmul(k, self.out_channels, plane, &self.weight, true, &grad_out.data, false, &mut grad_cols, false);
        let grad_in = self.col2im(&grad_cols, grad_out.height, grad_out.width);
        (ConvGrads { weight: grad_w, bias: grad_b }, grad_in)
    }
}

/// 2x2 max pooling with stride 2 (odd trailing rows/columns dropped).
/// Returns the pooled tensor and the flat argmax index of each output.
pub fn max_pool2<T: Scalar>(input: &Tensor3<T>) -> (Tensor3<T>, Vec<usize>) {
    let (c, h, w) = input.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor3::zeros(c, oh, ow);
    let mut arg = vec![0usize; c * oh * ow];
    for ci in 0..c {
        let base = ci * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + (2 * y) * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * x + dx;
                    if input.data[idx] > input.data[best] {
                        best = idx;
                    }
                }
                let o = (ci * oh + y) * ow + x;
                out.data[o] = input.data[best];
                arg[o] = best;
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward<T: Scalar>(grad_out: &Tensor3<T>, argmax: &[usize], input_shape: (usize, usize, usize)) -> Tensor3<T> {
    let (c, h, w) = input_shape;
    let mut grad = Tensor3::zeros(c, h, w);
    for (g, &idx) in grad_out.data.iter().zip(argmax) {
        grad.data[idx] += *g;
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn naive_conv(conv: &Conv3x3<f64>, input: &Tensor3<f64>) -> Tensor3<f64> {
        let (c, h, w) = input.shape();
        let mut out = Tensor3::zeros(conv.out_channels, h, w);
        for o in 0..conv.out_channels {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = conv.bias[o];
                    for ci in 0..c {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, x + kx - 1);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let wv = conv.weight[((o * c + ci) * 3 + ky as usize) * 3 + kx as usize];
                                acc += wv * input.data[(ci * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out.data[(o * h + y as usize) * w + x as usize] = acc;
                }
            }
        }
        out
    }

    fn random_conv(rng: &mut impl Rng, cin: usize, cout: usize) -> Conv3x3<f64> {
        let mut conv = Conv3x3::zeros(cin, cout);
        conv.weight.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        conv.bias.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        conv
    }

    fn random_tensor(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> Tensor3<f64> {
        Tensor3::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn im2col_conv_matches_direct_loop() {
        let mut rng = crate::seed::rng_from(1);
        let conv = random_conv(&mut rng, 3, 4);
        let input = random_tensor(&mut rng, 3, 5, 7);
        let fast = conv.forward(&input);
        let slow = naive_conv(&conv, &input);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = crate::seed::rng_from(2);
        let conv = random_conv(&mut rng, 2, 3);
        let input = random_tensor(&mut rng, 2, 4, 5);
        let upstream = random_tensor(&mut rng, 3, 4, 5);
        // loss = <upstream, conv(input)>
        let loss = |c: &Conv3x3<f64>, x: &Tensor3<f64>| -> f64 {
            c.forward(x).data.iter().zip(&upstream.data).map(|(a, b)| a * b).sum()
        };
        let (_, cols) = conv.forward_cached(&input);
        let (grads, grad_in) = conv.backward(&cols, &upstream);
        let eps = 1e-6;
        for i in (0..conv.weight.len()).step_by(5) {
            let mut plus = conv.clone();
            plus.weight[i] += eps;
            let mut minus = conv.clone();
            minus.weight[i] -= eps;
            let numeric = (loss(&plus, &input) - loss(&minus, &input)) / (2.0 * eps);
            assert!((numeric - grads.weight[i]).abs() < 1e-6, "w[{i}]");
        }
        for o in 0..3 {
            let mut plus = conv.clone();
            plus.bias[o] += eps;
            let mut minus = conv.clone();
            minus.bias[o] -= eps;
            let numeric = (loss(&plus, &input) - loss(&minus, &input)) / (2.0 * eps);
            assert!((numeric - grads.bias[o]).abs() < 1e-6);
        }
        for i in 0..input.data.len() {
            let mut plus = input.clone();
            plus.data[i] += eps;
            let mut minus = input.clone();
            minus.data[i] -= eps;
            let numeric = (loss(&conv, &plus) - loss(&conv, &minus)) / (2.0 * eps);
            assert!((numeric - grad_in.data[i]).abs() < 1e-6, "x[{i}]");
        }
    }

    #[test]
    fn pooling_picks_block_maxima_and_routes_gradient() {
        let input = Tensor3::from_vec(1, 2, 4, vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 7.0, 6.0]);
        let (out, arg) = max_pool2(&input);
        assert_eq!(out.data, vec![5.0, 7.0]);
        let grad = max_pool2_backward(&Tensor3::from_vec(1, 1, 2, vec![1.0, 2.0]), &arg, input.shape());
        assert_eq!(grad.data, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn odd_sizes_floor_when_pooling() {
        let input: Tensor3<f32> = Tensor3::zeros(2, 7, 5);
        let (out, _) = max_pool2(&input);
        assert_eq!(out.shape(), (2, 3, 2));
    }

    #[test]
    fn global_average_of_constant_channels_is_exact() {
        let mut t: Tensor3<f64> = Tensor3::zeros(3, 7, 7);
        for (c, chunk) in t.data.chunks_mut(49).enumerate() {
            chunk.fill(0.1 * (c as f64 + 1.0));
        }
        let g = t.global_average();
        for (c, v) in g.iter().enumerate() {
            assert_eq!(*v, 0.1 * (c as f64 + 1.0));
        }
    }
}
