//! Synthetic ground truth and the masking + additive-noise degradation.
//!
//! Randomness comes from a seeded ChaCha stream per purpose (abundances,
//! signatures, mask, noise), so each output is a pure function of its spec.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cube::{Dims, HsiCube, MaskCube};
use crate::error::{invalid, Error, Result};
use crate::filter::{blur_same, gaussian_kernel};
use crate::scalar::Real;

const STREAM_ABUNDANCE: u64 = 1;
const STREAM_SIGNATURE: u64 = 2;
const STREAM_MASK: u64 = 3;
const STREAM_NOISE: u64 = 4;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    /// Uniformly chosen pixels, missing in every band.
    RandomPixels,
    /// Whole image rows, missing in every band.
    DeadLines,
    /// Whole image columns, chosen independently per band.
    Stripes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradeSpec {
    pub mask_kind: MaskKind,
    pub missing_fraction: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DegradeSpec {
    fn default() -> Self {
        Self { mask_kind: MaskKind::RandomPixels, missing_fraction: 0.25, noise_sigma: 0.12, seed: 0 }
    }
}

impl DegradeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return Err(invalid(format!("missing_fraction {} not in [0,1)", self.missing_fraction)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(invalid(format!("noise_sigma {} must be finite and >= 0", self.noise_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub rank: usize,
    /// Gaussian blur sigma (pixels) applied to the abundance fields.
    pub abundance_smoothness: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { rows: 32, cols: 32, bands: 32, rank: 4, abundance_smoothness: 3.0, seed: 0 }
    }
}

impl SynthSpec {
    pub fn dims(&self) -> Dims {
        Dims::new(self.rows, self.cols, self.bands)
    }
}

/// Low-rank synthetic cube `A Eᵀ`: non-negative smooth abundances times
/// smooth positive spectral signatures, scaled so the maximum is 1.
pub fn synth_cube<T: Real>(spec: &SynthSpec) -> Result<HsiCube<T>> {
    let dims = spec.dims();
    if dims.is_empty() {
        return Err(invalid("synthetic cube dims must be positive"));
    }
    if spec.rank == 0 {
        return Err(invalid("rank must be positive"));
    }
    if spec.rank > dims.pixels().min(dims.bands) {
        return Err(Error::RankTooLarge { rank: spec.rank, pixels: dims.pixels(), bands: dims.bands });
    }
    if !(spec.abundance_smoothness >= 0.0 && spec.abundance_smoothness.is_finite()) {
        return Err(invalid("abundance_smoothness must be finite and >= 0"));
    }

    let mut rng = stream_rng(spec.seed, STREAM_ABUNDANCE);
    let taps: Option<Vec<f64>> = (spec.abundance_smoothness > 0.0).then(|| {
        let radius = (3.0 * spec.abundance_smoothness).ceil() as usize;
        gaussian_kernel(spec.abundance_smoothness, radius)
    });
    let mut abundances = Array2::<f64>::zeros((dims.pixels(), spec.rank));
    for k in 0..spec.rank {
        let noise = Array2::from_shape_fn((dims.rows, dims.cols), |_| rng.sample::<f64, _>(StandardNormal));
        let field = match &taps {
            Some(t) => blur_same(noise.view(), t),
            None => noise,
        };
        let n = field.len() as f64;
        let mean = field.sum() / n;
        let std = (field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
        for (dst, v) in abundances.column_mut(k).iter_mut().zip(field.iter()) {
            *dst = ((v - mean) / std + 0.25).max(0.0);
        }
    }

    let mut rng = stream_rng(spec.seed, STREAM_SIGNATURE);
    let mut signatures = Array2::<f64>::zeros((dims.bands, spec.rank));
    for k in 0..spec.rank {
        let bumps: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| (rng.random_range(0.3..1.0), rng.random_range(0.0..1.0), rng.random_range(0.08..0.3)))
            .collect();
        for b in 0..dims.bands {
            let t = if dims.bands > 1 { b as f64 / (dims.bands - 1) as f64 } else { 0.0 };
            signatures[[b, k]] = 0.05
                + bumps
                    .iter()
                    .map(|&(amp, center, width)| amp * (-(t - center).powi(2) / (2.0 * width * width)).exp())
                    .sum::<f64>();
        }
    }

    let mut mat = abundances.dot(&signatures.t());
    let peak = mat.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        mat.mapv_inplace(|v| v / peak);
    }
    HsiCube::dematricize(mat.mapv(T::lit).view(), dims)
}

/// Draws the observation mask described by `spec` for a cube of `dims`.
pub fn draw_mask(dims: Dims, spec: &DegradeSpec) -> Result<MaskCube> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, STREAM_MASK);
    match spec.mask_kind {
        MaskKind::RandomPixels => {
            let n = (spec.missing_fraction * dims.pixels() as f64).round() as usize;
            let mut pixels = Array2::<u8>::ones((dims.rows, dims.cols));
            for idx in sample(&mut rng, dims.pixels(), n) {
                pixels[[idx / dims.cols, idx % dims.cols]] = 0;
            }
            MaskCube::from_pixels(pixels.view(), dims.bands)
        }
        MaskKind::DeadLines => {
            let n = (spec.missing_fraction * dims.rows as f64).round() as usize;
            let mut pixels = Array2::<u8>::ones((dims.rows, dims.cols));
            for r in sample(&mut rng, dims.rows, n) {
                pixels.row_mut(r).fill(0);
            }
            MaskCube::from_pixels(pixels.view(), dims.bands)
        }
        MaskKind::Stripes => {
            let n = (spec.missing_fraction * dims.cols as f64).round() as usize;
            let mut data = vec![1u8; dims.len()];
            for b in 0..dims.bands {
                for c in sample(&mut rng, dims.cols, n) {
                    for r in 0..dims.rows {
                        data[b * dims.pixels() + r * dims.cols + c] = 0;
                    }
                }
            }
            MaskCube::new(dims, data)
        }
    }
}

/// `y = M{x} + n`, with Gaussian noise only on observed entries; missing
/// entries of `y` are exactly zero.
pub fn degrade<T: Real>(x: &HsiCube<T>, spec: &DegradeSpec) -> Result<(HsiCube<T>, MaskCube)> {
    let mask = draw_mask(x.dims(), spec)?;
    let mut y = x.clone();
    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma validated"));
    let mut rng = stream_rng(spec.seed, STREAM_NOISE);
    for (v, &keep) in y.as_slice_mut().iter_mut().zip(mask.as_slice()) {
        if keep == 0 {
            *v = T::zero();
        } else if let Some(n) = &noise {
            *v += T::lit(n.sample(&mut rng));
        }
    }
    Ok((y, mask))
}
