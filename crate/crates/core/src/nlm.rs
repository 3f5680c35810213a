//! Non-local means on single-channel 2-D images.

use ndarray::{Array2, ArrayView2};

use crate::scalar::Real;

#[inline]
fn clamped<T: Real>(img: ArrayView2<'_, T>, r: isize, c: isize) -> T {
    let (rows, cols) = img.dim();
    img[[r.clamp(0, rows as isize - 1) as usize, c.clamp(0, cols as isize - 1) as usize]]
}

/// Denoises `img` with comparison patches of radius `patch_radius`, candidates
/// within `search_radius`, and filtering strength `h`. Borders are clamped.
///
/// Each output pixel is a convex combination of input pixels, so the output
/// range lies inside the input range.
pub fn nlm_denoise<T: Real>(img: ArrayView2<'_, T>, patch_radius: usize, search_radius: usize, h: T) -> Array2<T> {
    let (rows, cols) = img.dim();
    let pr = patch_radius as isize;
    let sr = search_radius as isize;
    let patch_len = T::from_count((2 * patch_radius + 1).pow(2));
    let h2 = h * h;
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let (r, c) = (r as isize, c as isize);
        let mut num = T::zero();
        let mut den = T::zero();
        for qr in (r - sr).max(0)..=(r + sr).min(rows as isize - 1) {
            for qc in (c - sr).max(0)..=(c + sr).min(cols as isize - 1) {
                let mut ssd = T::zero();
                for dr in -pr..=pr {
                    for dc in -pr..=pr {
                        let d = clamped(img, r + dr, c + dc) - clamped(img, qr + dr, qc + dc);
                        ssd += d * d;
                    }
                }
                let w = (-(ssd / patch_len) / h2).exp();
                num += w * img[[qr as usize, qc as usize]];
                den += w;
            }
        }
        num / den
    })
}
