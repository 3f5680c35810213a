//! Band-averaged PSNR and SSIM.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5) evaluated at every position
//! where the window fits inside the band, with `C₁ = (0.01·peak)²` and
//! `C₂ = (0.03·peak)²`. Scores are accumulated in 64-bit regardless of the
//! cube's scalar type.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::error::{invalid, mismatch, Error, Result};
use crate::filter::{filter_valid, gaussian_kernel};
use crate::scalar::Real;

pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub mpsnr: f64,
    pub mssim: f64,
    pub per_band_psnr: Vec<f64>,
    pub per_band_ssim: Vec<f64>,
}

fn check<T: Real>(x: &HsiCube<T>, reference: &HsiCube<T>, peak: f64) -> Result<()> {
    if x.dims() != reference.dims() {
        return Err(mismatch(format!("metric inputs {} vs {}", x.dims(), reference.dims())));
    }
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(invalid(format!("peak must be positive, got {peak}")));
    }
    if x.bands() == 0 {
        return Err(mismatch("cube has no bands"));
    }
    Ok(())
}

fn band_f64<T: Real>(x: &HsiCube<T>, b: usize) -> Array2<f64> {
    x.band(b).mapv(|v| v.to_f64_lossy())
}

/// PSNR of every band, capped at [`PSNR_CAP_DB`].
pub fn per_band_psnr<T: Real>(x: &HsiCube<T>, reference: &HsiCube<T>, peak: f64) -> Result<Vec<f64>> {
    check(x, reference, peak)?;
    let n = (x.rows() * x.cols()) as f64;
    Ok((0..x.bands())
        .map(|b| {
            let mse = x
                .band(b)
                .iter()
                .zip(reference.band(b).iter())
                .map(|(&a, &r)| {
                    let d = a.to_f64_lossy() - r.to_f64_lossy();
                    d * d
                })
                .sum::<f64>()
                / n;
            if mse < peak * peak * 1e-10 {
                PSNR_CAP_DB
            } else {
                10.0 * (peak * peak / mse).log10()
            }
        })
        .collect())
}

pub fn mpsnr<T: Real>(x: &HsiCube<T>, reference: &HsiCube<T>, peak: f64) -> Result<f64> {
    let v = per_band_psnr(x, reference, peak)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

fn ssim_band(a: &Array2<f64>, b: &Array2<f64>, taps: &[f64], peak: f64) -> f64 {
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let mu_a = filter_valid(a.view(), taps);
    let mu_b = filter_valid(b.view(), taps);
    let aa = filter_valid((a * a).view(), taps);
    let bb = filter_valid((b * b).view(), taps);
    let ab = filter_valid((a * b).view(), taps);
    let mut total = 0.0;
    for idx in 0..mu_a.len() {
        let (ma, mb) = (mu_a.as_slice().unwrap()[idx], mu_b.as_slice().unwrap()[idx]);
        let va = aa.as_slice().unwrap()[idx] - ma * ma;
        let vb = bb.as_slice().unwrap()[idx] - mb * mb;
        let cov = ab.as_slice().unwrap()[idx] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    total / mu_a.len() as f64
}

/// SSIM of every band.
pub fn per_band_ssim<T: Real>(x: &HsiCube<T>, reference: &HsiCube<T>, peak: f64) -> Result<Vec<f64>> {
    check(x, reference, peak)?;
    if x.rows() < SSIM_WINDOW || x.cols() < SSIM_WINDOW {
        return Err(Error::ImageTooSmall);
    }
    let taps: Vec<f64> = gaussian_kernel(SSIM_SIGMA, SSIM_WINDOW / 2);
    Ok((0..x.bands())
        .into_par_iter()
        .map(|b| ssim_band(&band_f64(x, b), &band_f64(reference, b), &taps, peak))
        .collect())
}

pub fn mssim<T: Real>(x: &HsiCube<T>, reference: &HsiCube<T>, peak: f64) -> Result<f64> {
    let v = per_band_ssim(x, reference, peak)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

pub fn quality_report<T: Real>(x: &HsiCube<T>, reference: &HsiCube<T>, peak: f64) -> Result<QualityReport> {
    let per_band_psnr = per_band_psnr(x, reference, peak)?;
    let per_band_ssim = per_band_ssim(x, reference, peak)?;
    Ok(QualityReport {
        mpsnr: per_band_psnr.iter().sum::<f64>() / per_band_psnr.len() as f64,
        mssim: per_band_ssim.iter().sum::<f64>() / per_band_ssim.len() as f64,
        per_band_psnr,
        per_band_ssim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cube(dims: Dims, rng: &mut ChaCha8Rng) -> HsiCube<f64> {
        HsiCube::from_fn(dims, |_, _, _| rng.random::<f64>())
    }

    /// Direct 2-D weighted sums over each window, no separability.
    fn brute_ssim(a: &HsiCube<f64>, b: &HsiCube<f64>, peak: f64) -> f64 {
        let w = 11;
        let mut g = [[0.0; 11]; 11];
        let mut total = 0.0;
        for (i, row) in g.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
                total += *v;
            }
        }
        let c1 = (0.01 * peak) * (0.01 * peak);
        let c2 = (0.03 * peak) * (0.03 * peak);
        let mut bands = 0.0;
        for band in 0..a.bands() {
            let mut acc = 0.0;
            let mut count = 0.0;
            for r in 0..=a.rows() - w {
                for c in 0..=a.cols() - w {
                    let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..w {
                        for j in 0..w {
                            let k = g[i][j] / total;
                            let x = a.get(r + i, c + j, band);
                            let y = b.get(r + i, c + j, band);
                            ma += k * x;
                            mb += k * y;
                            saa += k * x * x;
                            sbb += k * y * y;
                            sab += k * x * y;
                        }
                    }
                    let va = saa - ma * ma;
                    let vb = sbb - mb * mb;
                    let cov = sab - ma * mb;
                    acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1.0;
                }
            }
            bands += acc / count;
        }
        bands / a.bands() as f64
    }

    #[test]
    fn identical_inputs_hit_the_caps() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_cube(Dims::new(16, 13, 3), &mut rng);
        assert_eq!(mpsnr(&x, &x, 1.0).unwrap(), 100.0);
        assert_eq!(mssim(&x, &x, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn unit_mse_is_zero_db() {
        let dims = Dims::new(4, 4, 1);
        let a = HsiCube::<f64>::zeros(dims);
        let b = HsiCube::from_elem(dims, 1.0);
        assert_eq!(mpsnr(&a, &b, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn psnr_matches_two_line_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dims = Dims::new(9, 7, 5);
        let a = random_cube(dims, &mut rng);
        let b = random_cube(dims, &mut rng);
        let reference: f64 = (0..5)
            .map(|band| {
                let mse: f64 = (0..63).map(|k| (a.band(band).iter().nth(k).unwrap() - b.band(band).iter().nth(k).unwrap()).powi(2)).sum::<f64>() / 63.0;
                -10.0 * mse.log10()
            })
            .sum::<f64>()
            / 5.0;
        assert!((mpsnr(&a, &b, 1.0).unwrap() - reference).abs() < 1e-9);
    }

    #[test]
    fn ssim_matches_brute_force_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..3 {
            let dims = Dims::new(14, 12, 2);
            let a = random_cube(dims, &mut rng);
            let b = a.map(|v| v + 0.2 * (v - 0.5).sin());
            assert!((mssim(&a, &b, 1.0).unwrap() - brute_ssim(&a, &b, 1.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_images_reduce_to_luminance_term() {
        let dims = Dims::new(12, 12, 1);
        let (c, d) = (0.4, 0.15);
        let a = HsiCube::from_elem(dims, c);
        let b = HsiCube::from_elem(dims, c + d);
        let c1: f64 = 1e-4;
        let expected = (2.0 * c * (c + d) + c1) / (c * c + (c + d) * (c + d) + c1);
        assert!((mssim(&b, &a, 1.0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ssim_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = Dims::new(12, 15, 2);
        let a = random_cube(dims, &mut rng);
        let b = random_cube(dims, &mut rng);
        assert!((mssim(&a, &b, 1.0).unwrap() - mssim(&b, &a, 1.0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn small_image_rejected() {
        let a = HsiCube::<f64>::zeros(Dims::new(10, 20, 1));
        assert!(matches!(mssim(&a, &a, 1.0), Err(Error::ImageTooSmall)));
    }

    #[test]
    fn noise_strictly_lowers_psnr() {
        let dims = Dims::new(16, 16, 4);
        let reference = HsiCube::from_fn(dims, |r, c, b| 0.5 + 0.3 * ((r + c + b) as f64 * 0.3).sin());
        let mut wins = 0;
        for seed in 0..10 {
            let mut last = f64::INFINITY;
            let mut ok = true;
            for sigma in [0.01, 0.02, 0.05, 0.1, 0.2] {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let noisy = HsiCube::from_fn(dims, |r, c, b| reference.get(r, c, b) + sigma * (rng.random::<f64>() - 0.5) * 3.46);
                let p = mpsnr(&noisy, &reference, 1.0).unwrap();
                ok &= p < last;
                last = p;
            }
            wins += ok as usize;
        }
        assert_eq!(wins, 10);
    }

    #[test]
    fn report_means_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dims = Dims::new(12, 12, 3);
        let a = random_cube(dims, &mut rng);
        let b = random_cube(dims, &mut rng);
        let r = quality_report(&a, &b, 1.0).unwrap();
        assert_eq!(r.mpsnr, r.per_band_psnr.iter().sum::<f64>() / 3.0);
        assert_eq!(r.mssim, r.per_band_ssim.iter().sum::<f64>() / 3.0);
        let json = serde_json::to_value(&r).unwrap();
        for key in ["mpsnr", "mssim", "per_band_psnr", "per_band_ssim"] {
            assert!(json.get(key).is_some());
        }
    }
}
