//! Singular value thresholding on the pixels × bands unfolding.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvtConfig {
    /// Shrinkage applied to every singular value (`w_lr / μ₂` in the solver).
    pub threshold: f64,
    /// Keep only this many leading components before shrinking.
    pub rank_cap: Option<usize>,
}

impl SvtConfig {
    pub fn new(threshold: f64) -> Self {
        Self { threshold, rank_cap: None }
    }
}

/// Proximal map of `threshold · ‖·‖_*` applied to the matricized cube.
pub fn svt<T: Real>(v: &HsiCube<T>, cfg: &SvtConfig) -> Result<HsiCube<T>> {
    if !(cfg.threshold >= 0.0 && cfg.threshold.is_finite()) {
        return Err(invalid(format!("SVT threshold {} must be finite and >= 0", cfg.threshold)));
    }
    if cfg.rank_cap == Some(0) {
        return Err(invalid("rank_cap must be positive"));
    }
    if !v.is_finite() {
        return Err(invalid("SVT input must be finite"));
    }
    let mat = v.matricize();
    let svd = T::thin_svd(mat.view()).ok_or(Error::SvdFailed)?;
    let tau = T::lit(cfg.threshold);
    let keep = cfg.rank_cap.unwrap_or(usize::MAX).min(svd.s.len());
    let shrunk: Vec<T> = svd.s.iter().take(keep).map(|&s| (s - tau).max(T::zero())).collect();
    let active = shrunk.iter().take_while(|&&s| s > T::zero()).count();
    let (m, n) = mat.dim();
    let mut out = Array2::<T>::zeros((m, n));
    if active > 0 {
        let mut us = svd.u.slice(ndarray::s![.., ..active]).to_owned();
        for (mut col, &s) in us.columns_mut().into_iter().zip(&shrunk) {
            col.mapv_inplace(|x| x * s);
        }
        out = us.dot(&svd.vt.slice(ndarray::s![..active, ..]));
    }
    HsiCube::dematricize(out.view(), v.dims())
}

/// Sum of singular values of the matricized cube.
pub fn nuclear_norm<T: Real>(x: &HsiCube<T>) -> Result<T> {
    let svd = T::thin_svd(x.matricize().view()).ok_or(Error::SvdFailed)?;
    Ok(svd.s.iter().copied().sum())
}
