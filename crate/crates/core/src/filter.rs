//! Small separable-filter helpers.

use ndarray::{Array2, ArrayView2};

use crate::scalar::Real;

/// Normalized 1-D Gaussian taps of length `2 * radius + 1`.
pub fn gaussian_kernel<T: Real>(sigma: f64, radius: usize) -> Vec<T> {
    let taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| T::lit(t / total)).collect()
}

/// Separable convolution with symmetric (mirror) boundary handling; output
/// has the input's shape.
pub fn blur_same<T: Real>(img: ArrayView2<'_, T>, taps: &[T]) -> Array2<T> {
    let (rows, cols) = img.dim();
    let radius = (taps.len() / 2) as isize;
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let mut i = i.rem_euclid(period);
        if i >= n {
            i = period - i;
        }
        i as usize
    };
    let mut tmp = Array2::<T>::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = T::zero();
            for (k, &w) in taps.iter().enumerate() {
                acc += w * img[[r, reflect(c as isize + k as isize - radius, cols)]];
            }
            tmp[[r, c]] = acc;
        }
    }
    let mut out = Array2::<T>::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = T::zero();
            for (k, &w) in taps.iter().enumerate() {
                acc += w * tmp[[reflect(r as isize + k as isize - radius, rows), c]];
            }
            out[[r, c]] = acc;
        }
    }
    out
}

/// Separable correlation keeping only fully-inside positions
/// (`rows - len + 1` × `cols - len + 1`).
pub fn filter_valid<T: Real>(img: ArrayView2<'_, T>, taps: &[T]) -> Array2<T> {
    let (rows, cols) = img.dim();
    let n = taps.len();
    let (orows, ocols) = (rows + 1 - n, cols + 1 - n);
    let mut tmp = Array2::<T>::zeros((rows, ocols));
    for r in 0..rows {
        for c in 0..ocols {
            let mut acc = T::zero();
            for (k, &w) in taps.iter().enumerate() {
                acc += w * img[[r, c + k]];
            }
            tmp[[r, c]] = acc;
        }
    }
    let mut out = Array2::<T>::zeros((orows, ocols));
    for r in 0..orows {
        for c in 0..ocols {
            let mut acc = T::zero();
            for (k, &w) in taps.iter().enumerate() {
                acc += w * tmp[[r + k, c]];
            }
            out[[r, c]] = acc;
        }
    }
    out
}
