//! Layer primitives with exact reverse-mode gradients.
//!
//! Feature maps are `(channels, height, width)` arrays.

use ndarray::{s, Array1, Array2, Array3, ArrayView3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Real;

/// 2-D convolution with square kernel, zero padding `kernel / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `out_ch × (in_ch · kernel²)`, column index `(c · k + ki) · k + kj`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// Values kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Array2<T>,
    in_hw: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            weight: Array2::zeros((out_ch, in_ch * kernel * kernel)),
            bias: Array1::zeros(out_ch),
        }
    }

    /// Weights drawn from `N(0, std²)`, zero biases.
    pub fn gaussian(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, std: f64, rng: &mut impl Rng) -> Self {
        let mut conv = Self::zeros(in_ch, out_ch, kernel, stride);
        let normal = Normal::new(0.0, std).expect("std must be finite and >= 0");
        conv.weight.mapv_inplace(|_| T::lit(normal.sample(rng)));
        conv
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn out_hw(&self, (h, w): (usize, usize)) -> (usize, usize) {
        let p = self.pad();
        ((h + 2 * p - self.kernel) / self.stride + 1, (w + 2 * p - self.kernel) / self.stride + 1)
    }

    fn im2col(&self, x: ArrayView3<'_, T>) -> Array2<T> {
        let (c_in, h, w) = x.dim();
        let (ho, wo) = self.out_hw((h, w));
        let k = self.kernel;
        let p = self.pad() as isize;
        let s = self.stride as isize;
        let mut cols = Array2::<T>::zeros((c_in * k * k, ho * wo));
        for c in 0..c_in {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let mut dst = cols.row_mut(row);
                    for oh in 0..ho {
                        let ih = oh as isize * s + ki as isize - p;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for ow in 0..wo {
                            let iw = ow as isize * s + kj as isize - p;
                            if iw >= 0 && iw < w as isize {
                                dst[oh * wo + ow] = x[[c, ih as usize, iw as usize]];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<T>, (h, w): (usize, usize)) -> Array3<T> {
        let (ho, wo) = self.out_hw((h, w));
        let k = self.kernel;
        let p = self.pad() as isize;
        let s = self.stride as isize;
        let mut x = Array3::<T>::zeros((self.in_ch, h, w));
        for c in 0..self.in_ch {
            for ki in 0..k {
                for kj in 0..k {
                    let src = cols.row((c * k + ki) * k + kj);
                    for oh in 0..ho {
                        let ih = oh as isize * s + ki as isize - p;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for ow in 0..wo {
                            let iw = ow as isize * s + kj as isize - p;
                            if iw >= 0 && iw < w as isize {
                                x[[c, ih as usize, iw as usize]] += src[oh * wo + ow];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    pub fn forward(&self, x: ArrayView3<'_, T>) -> (Array3<T>, ConvCache<T>) {
        let (c_in, h, w) = x.dim();
        assert_eq!(c_in, self.in_ch, "conv input channels");
        let (ho, wo) = self.out_hw((h, w));
        let cols = self.im2col(x);
        let mut y = self.weight.dot(&cols);
        for (mut row, &b) in y.rows_mut().into_iter().zip(self.bias.iter()) {
            row.mapv_inplace(|v| v + b);
        }
        let y = y.into_shape_with_order((self.out_ch, ho, wo)).expect("conv output shape");
        (y, ConvCache { cols, in_hw: (h, w) })
    }

    /// Returns the input gradient and the parameter gradients.
    pub fn backward(&self, cache: &ConvCache<T>, dy: ArrayView3<'_, T>) -> (Array3<T>, ConvGrad<T>) {
        let (c_out, ho, wo) = dy.dim();
        let dy = dy.as_standard_layout().into_owned().into_shape_with_order((c_out, ho * wo)).expect("dy shape");
        let weight = dy.dot(&cache.cols.t());
        let bias = dy.sum_axis(Axis(1));
        let dcols = self.weight.t().dot(&dy);
        (self.col2im(&dcols, cache.in_hw), ConvGrad { weight, bias })
    }
}

/// Per-channel normalization over spatial positions with learned scale and
/// shift (batch normalization with a batch of one image).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
}

#[derive(Debug, Clone)]
pub struct NormCache<T> {
    xhat: Array3<T>,
    inv_std: Array1<T>,
}

pub const NORM_EPS: f64 = 1e-5;

impl<T: Real> ChannelNorm<T> {
    pub fn identity(channels: usize) -> Self {
        Self { gamma: Array1::ones(channels), beta: Array1::zeros(channels) }
    }

    pub fn forward(&self, x: ArrayView3<'_, T>) -> (Array3<T>, NormCache<T>) {
        let (c, h, w) = x.dim();
        let n = T::from_count(h * w);
        let eps = T::lit(NORM_EPS);
        let mut xhat = x.to_owned();
        let mut inv_std = Array1::<T>::zeros(c);
        let mut y = Array3::<T>::zeros((c, h, w));
        for ch in 0..c {
            let mut plane = xhat.index_axis_mut(Axis(0), ch);
            let mean = plane.sum() / n;
            plane.mapv_inplace(|v| v - mean);
            let var = plane.iter().map(|&v| v * v).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            plane.mapv_inplace(|v| v * inv);
            inv_std[ch] = inv;
            let (g, b) = (self.gamma[ch], self.beta[ch]);
            y.index_axis_mut(Axis(0), ch).zip_mut_with(&plane, |o, &v| *o = g * v + b);
        }
        (y, NormCache { xhat, inv_std })
    }

    /// Returns the input gradient and the `(gamma, beta)` gradients.
    pub fn backward(&self, cache: &NormCache<T>, dy: &Array3<T>) -> (Array3<T>, (Array1<T>, Array1<T>)) {
        let (c, h, w) = dy.dim();
        let n = T::from_count(h * w);
        let mut dx = Array3::<T>::zeros((c, h, w));
        let mut dgamma = Array1::<T>::zeros(c);
        let mut dbeta = Array1::<T>::zeros(c);
        for ch in 0..c {
            let xh = cache.xhat.index_axis(Axis(0), ch);
            let d = dy.index_axis(Axis(0), ch);
            dgamma[ch] = d.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum();
            dbeta[ch] = d.sum();
            let g = self.gamma[ch];
            let sum_d = dbeta[ch] * g;
            let sum_dx = dgamma[ch] * g;
            let k = cache.inv_std[ch] / n;
            ndarray::Zip::from(dx.index_axis_mut(Axis(0), ch)).and(&d).and(&xh).for_each(|o, &dv, &xv| {
                *o = k * (n * g * dv - sum_d - xv * sum_dx);
            });
        }
        (dx, (dgamma, dbeta))
    }
}

pub fn leaky_relu<T: Real>(x: &Array3<T>, slope: T) -> Array3<T> {
    x.mapv(|v| if v > T::zero() { v } else { v * slope })
}

/// Gradient through LeakyReLU given the pre-activation input.
pub fn leaky_relu_backward<T: Real>(pre: &Array3<T>, dy: &Array3<T>, slope: T) -> Array3<T> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(pre).for_each(|d, &p| {
        if p <= T::zero() {
            *d *= slope;
        }
    });
    dx
}

/// Nearest-neighbour ×2 upsampling, cropped to `(h, w)`.
pub fn upsample_nearest<T: Real>(x: ArrayView3<'_, T>, (h, w): (usize, usize)) -> Array3<T> {
    let (c, _, _) = x.dim();
    Array3::from_shape_fn((c, h, w), |(ch, i, j)| x[[ch, i / 2, j / 2]])
}

pub fn upsample_nearest_backward<T: Real>(dy: ArrayView3<'_, T>, in_hw: (usize, usize)) -> Array3<T> {
    let (c, h, w) = dy.dim();
    let mut dx = Array3::<T>::zeros((c, in_hw.0, in_hw.1));
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                dx[[ch, i / 2, j / 2]] += dy[[ch, i, j]];
            }
        }
    }
    dx
}

/// Channel concatenation `[a; b]`.
pub fn concat<T: Real>(a: ArrayView3<'_, T>, b: ArrayView3<'_, T>) -> Array3<T> {
    ndarray::concatenate(Axis(0), &[a, b]).expect("matching spatial dims")
}

/// Splits a concatenation gradient back into its two parts.
pub fn concat_backward<T: Real>(dy: ArrayView3<'_, T>, a_channels: usize) -> (Array3<T>, Array3<T>) {
    (dy.slice(s![..a_channels, .., ..]).to_owned(), dy.slice(s![a_channels.., .., ..]).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random3(shape: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Array3<f64> {
        Array3::from_shape_fn(shape, |_| rng.random::<f64>() - 0.5)
    }

    /// `Σ g ⊙ f(x)` so every input/parameter gradient is a directional check.
    fn dot3(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
    }

    fn rel_close(analytic: f64, numeric: f64) -> bool {
        (analytic - numeric).abs() <= 1e-4 * analytic.abs().max(numeric.abs()).max(1e-6)
    }

    const H: f64 = 1e-6;

    fn check_conv(kernel: usize, stride: usize, hw: (usize, usize)) {
        let mut rng = ChaCha8Rng::seed_from_u64(kernel as u64 * 10 + stride as u64);
        let mut conv = Conv2d::<f64>::gaussian(3, 4, kernel, stride, 0.5, &mut rng);
        conv.bias.mapv_inplace(|_| rng.random::<f64>() - 0.5);
        let x = random3((3, hw.0, hw.1), &mut rng);
        let (y, cache) = conv.forward(x.view());
        let g = random3(y.dim(), &mut rng);
        let (dx, grad) = conv.backward(&cache, g.view());
        let loss = |conv: &Conv2d<f64>, x: &Array3<f64>| dot3(&g, &conv.forward(x.view()).0);
        for idx in [(0, 0, 0), (1, 2, 3), (2, hw.0 - 1, hw.1 - 1), (0, 3, 1)] {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[idx] += H;
            m[idx] -= H;
            let fd = (loss(&conv, &p) - loss(&conv, &m)) / (2.0 * H);
            assert!(rel_close(dx[idx], fd), "dx{idx:?} {} vs {fd}", dx[idx]);
        }
        for idx in [(0, 0), (3, conv.weight.ncols() - 1), (2, 5 % conv.weight.ncols())] {
            let (mut p, mut m) = (conv.clone(), conv.clone());
            p.weight[idx] += H;
            m.weight[idx] -= H;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * H);
            assert!(rel_close(grad.weight[idx], fd), "dw{idx:?}");
        }
        for o in 0..4 {
            let (mut p, mut m) = (conv.clone(), conv.clone());
            p.bias[o] += H;
            m.bias[o] -= H;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * H);
            assert!(rel_close(grad.bias[o], fd));
        }
    }

    #[test]
    fn conv3x3_gradients() {
        check_conv(3, 1, (6, 5));
    }

    #[test]
    fn strided_downsample_gradients() {
        check_conv(3, 2, (7, 6));
    }

    #[test]
    fn pointwise_head_gradients() {
        check_conv(1, 1, (4, 5));
    }

    #[test]
    fn downsample_shape_is_ceil_half() {
        let conv = Conv2d::<f64>::zeros(1, 1, 3, 2);
        assert_eq!(conv.out_hw((36, 36)), (18, 18));
        assert_eq!(conv.out_hw((9, 9)), (5, 5));
    }

    #[test]
    fn channel_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let norm = ChannelNorm {
            gamma: Array1::from_shape_fn(3, |_| 0.5 + rng.random::<f64>()),
            beta: Array1::from_shape_fn(3, |_| rng.random::<f64>() - 0.5),
        };
        let x = random3((3, 4, 5), &mut rng);
        let g = random3((3, 4, 5), &mut rng);
        let (_, cache) = norm.forward(x.view());
        let (dx, (dgamma, dbeta)) = norm.backward(&cache, &g);
        let f = |n: &ChannelNorm<f64>, x: &Array3<f64>| dot3(&g, &n.forward(x.view()).0);
        for idx in [(0, 0, 0), (1, 2, 3), (2, 3, 4), (1, 1, 0)] {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[idx] += H;
            m[idx] -= H;
            assert!(rel_close(dx[idx], (f(&norm, &p) - f(&norm, &m)) / (2.0 * H)), "dx{idx:?}");
        }
        for ch in 0..3 {
            let (mut p, mut m) = (norm.clone(), norm.clone());
            p.gamma[ch] += H;
            m.gamma[ch] -= H;
            assert!(rel_close(dgamma[ch], (f(&p, &x) - f(&m, &x)) / (2.0 * H)));
            let (mut p, mut m) = (norm.clone(), norm.clone());
            p.beta[ch] += H;
            m.beta[ch] -= H;
            assert!(rel_close(dbeta[ch], (f(&p, &x) - f(&m, &x)) / (2.0 * H)));
        }
    }

    #[test]
    fn leaky_relu_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random3((2, 4, 4), &mut rng);
        let g = random3((2, 4, 4), &mut rng);
        let dx = leaky_relu_backward(&x, &g, 0.1);
        for idx in [(0, 0, 0), (1, 3, 2), (0, 2, 1), (1, 1, 1)] {
            if x[idx].abs() < 1e-3 {
                continue;
            }
            let (mut p, mut m) = (x.clone(), x.clone());
            p[idx] += H;
            m[idx] -= H;
            let fd = (dot3(&g, &leaky_relu(&p, 0.1)) - dot3(&g, &leaky_relu(&m, 0.1))) / (2.0 * H);
            assert!(rel_close(dx[idx], fd));
        }
    }

    #[test]
    fn upsample_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random3((2, 3, 3), &mut rng);
        let target = (5, 6);
        let g = random3((2, 5, 6), &mut rng);
        let dx = upsample_nearest_backward(g.view(), (3, 3));
        for idx in [(0, 0, 0), (1, 2, 2), (0, 1, 2)] {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[idx] += H;
            m[idx] -= H;
            let fd = (dot3(&g, &upsample_nearest(p.view(), target)) - dot3(&g, &upsample_nearest(m.view(), target))) / (2.0 * H);
            assert!(rel_close(dx[idx], fd));
        }
    }

    #[test]
    fn concat_skip_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random3((2, 3, 3), &mut rng);
        let b = random3((3, 3, 3), &mut rng);
        let g = random3((5, 3, 3), &mut rng);
        let (da, db) = concat_backward(g.view(), 2);
        let f = |a: &Array3<f64>, b: &Array3<f64>| dot3(&g, &concat(a.view(), b.view()));
        for idx in [(0, 0, 0), (1, 2, 1)] {
            let (mut p, mut m) = (a.clone(), a.clone());
            p[idx] += H;
            m[idx] -= H;
            assert!(rel_close(da[idx], (f(&p, &b) - f(&m, &b)) / (2.0 * H)));
        }
        for idx in [(0, 1, 0), (2, 2, 2)] {
            let (mut p, mut m) = (b.clone(), b.clone());
            p[idx] += H;
            m[idx] -= H;
            assert!(rel_close(db[idx], (f(&a, &p) - f(&a, &m)) / (2.0 * H)));
        }
    }
}
