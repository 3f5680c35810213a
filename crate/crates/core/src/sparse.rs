//! The coefficient subproblem: patch-wise sparse coding by plug-and-play ISTA.
//!
//! For targets `t_i` (`P_i(x) + λ₁ᵢ/μ₁`) the smooth term is
//! `f(α) = μ₁/2 Σ_i ‖t_i − Φα_i‖²` and every iterate is
//! `α ← D(α − η∇f(α))` with `η = 1/(μ₁‖Φ‖²)`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::PatchSet;
use crate::dictionary::Dictionary;
use crate::error::{invalid, mismatch, Error, Result};
use crate::nlm::nlm_denoise;
use crate::scalar::Real;

/// Coefficients, one column per patch (`atoms × count`).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode<T> {
    data: Array2<T>,
}

impl<T: Real> SparseCode<T> {
    pub fn zeros(atoms: usize, count: usize) -> Self {
        Self { data: Array2::zeros((atoms, count)) }
    }

    pub fn from_matrix(data: Array2<T>) -> Self {
        Self { data }
    }

    pub fn atoms(&self) -> usize {
        self.data.nrows()
    }

    pub fn count(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<T> {
        &self.data
    }

    pub fn into_data(self) -> Array2<T> {
        self.data
    }

    /// `Σ_i ‖α_i‖₁`.
    pub fn l1_norm(&self) -> T {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn nnz(&self) -> usize {
        self.data.iter().filter(|&&v| v != T::zero()).count()
    }

    /// `Φα`, one decoded patch per column.
    pub fn decode(&self, phi: &Dictionary<T>) -> Array2<T> {
        phi.data().dot(&self.data)
    }
}

/// Plug-and-play denoiser applied after each gradient step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Denoiser {
    /// Exact ℓ₁ proximal map with threshold `η · w_s`: plain ISTA.
    #[default]
    SoftThreshold,
    /// Non-local means on the decoded 2-D patch, re-encoded on the current
    /// support and then soft-thresholded.
    NonLocalMeans { window: usize, search: usize, h: f64 },
}

impl Denoiser {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Denoiser::SoftThreshold => Ok(()),
            Denoiser::NonLocalMeans { h, .. } if !(h > 0.0 && h.is_finite()) => {
                Err(invalid(format!("NLM strength h must be positive, got {h}")))
            }
            Denoiser::NonLocalMeans { .. } => Ok(()),
        }
    }
}

#[inline]
pub fn soft_threshold<T: Real>(v: T, t: T) -> T {
    let mag = v.abs() - t;
    if mag > T::zero() {
        v.signum() * mag
    } else {
        T::zero()
    }
}

fn check_dims<T: Real>(alpha: &SparseCode<T>, targets: &PatchSet<T>, phi: &Dictionary<T>) -> Result<()> {
    if phi.patch_dim() != targets.patch_dim() {
        return Err(mismatch(format!(
            "dictionary patch_dim {} vs targets {}",
            phi.patch_dim(),
            targets.patch_dim()
        )));
    }
    if alpha.atoms() != phi.atoms() || alpha.count() != targets.count() {
        return Err(mismatch(format!(
            "code {}x{} vs dictionary atoms {} and {} targets",
            alpha.atoms(),
            alpha.count(),
            phi.atoms(),
            targets.count()
        )));
    }
    Ok(())
}

/// `∇f(α) = μ₁ Φᵀ(Φα − t)`, per column.
pub fn grad_f<T: Real>(alpha: &SparseCode<T>, targets: &PatchSet<T>, phi: &Dictionary<T>, mu1: T) -> Result<SparseCode<T>> {
    check_dims(alpha, targets, phi)?;
    let resid = phi.data().dot(alpha.data()) - targets.data();
    Ok(SparseCode::from_matrix(phi.data().t().dot(&resid) * mu1))
}

/// `μ₁/2 Σ‖t_i − Φα_i‖² + w_s Σ‖α_i‖₁`.
pub fn coding_objective<T: Real>(alpha: &SparseCode<T>, targets: &PatchSet<T>, phi: &Dictionary<T>, mu1: T, w_s: T) -> T {
    let resid = phi.data().dot(alpha.data()) - targets.data();
    let fit = resid.iter().map(|&v| v * v).sum::<T>();
    T::lit(0.5) * mu1 * fit + w_s * alpha.l1_norm()
}

/// Computes `∇f` either directly or through the cached Gram matrix,
/// whichever is cheaper for the dictionary's shape.
struct Gradient<'a, T: Real> {
    phi: &'a Dictionary<T>,
    targets: ArrayView2<'a, T>,
    phit_t: Option<Array2<T>>,
    mu1: T,
}

impl<'a, T: Real> Gradient<'a, T> {
    fn new(phi: &'a Dictionary<T>, targets: ArrayView2<'a, T>, mu1: T) -> Self {
        let use_gram = phi.atoms() < 2 * phi.patch_dim();
        let phit_t = use_gram.then(|| phi.data().t().dot(&targets));
        Self { phi, targets, phit_t, mu1 }
    }

    fn eval(&self, alpha: &Array2<T>) -> Array2<T> {
        match &self.phit_t {
            Some(pt) => (self.phi.gram().dot(alpha) - pt) * self.mu1,
            None => {
                let resid = self.phi.data().dot(alpha) - self.targets;
                self.phi.data().t().dot(&resid) * self.mu1
            }
        }
    }
}

/// Runs `it_max` PnP-ISTA iterations from `init` and returns the last iterate.
pub fn pnp_ista_solve<T: Real>(
    init: &SparseCode<T>,
    targets: &PatchSet<T>,
    phi: &Dictionary<T>,
    denoiser: &Denoiser,
    mu1: T,
    w_s: T,
    it_max: usize,
) -> Result<SparseCode<T>> {
    pnp_ista_solve_observed(init, targets, phi, denoiser, mu1, w_s, it_max, |_, _| {})
}

/// [`pnp_ista_solve`] with a callback receiving each iterate.
#[allow(clippy::too_many_arguments)]
pub fn pnp_ista_solve_observed<T: Real>(
    init: &SparseCode<T>,
    targets: &PatchSet<T>,
    phi: &Dictionary<T>,
    denoiser: &Denoiser,
    mu1: T,
    w_s: T,
    it_max: usize,
    mut observe: impl FnMut(usize, &SparseCode<T>),
) -> Result<SparseCode<T>> {
    check_dims(init, targets, phi)?;
    denoiser.validate()?;
    if it_max == 0 {
        return Err(invalid("it_max must be at least 1"));
    }
    if !(mu1 > T::zero()) || w_s < T::zero() {
        return Err(invalid("need mu1 > 0 and w_s >= 0"));
    }
    let lipschitz = mu1 * phi.spectral_norm() * phi.spectral_norm();
    let eta = T::one() / lipschitz;
    let thresh = eta * w_s;
    let grad = Gradient::new(phi, targets.data().view(), mu1);
    let mut alpha = init.clone();
    for it in 0..it_max {
        let step = &alpha.data - &(grad.eval(&alpha.data) * eta);
        alpha.data = match *denoiser {
            Denoiser::SoftThreshold => step.mapv(|v| soft_threshold(v, thresh)),
            Denoiser::NonLocalMeans { window, search, h } => nlm_step(step.view(), phi, thresh, window, search, T::lit(h)),
        };
        if alpha.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::SparseCodingDiverged);
        }
        observe(it, &alpha);
    }
    Ok(alpha)
}

/// Denoises each decoded gradient step as an image, then re-encodes it on the
/// soft-threshold support by least squares and shrinks the result.
fn nlm_step<T: Real>(step: ArrayView2<'_, T>, phi: &Dictionary<T>, thresh: T, window: usize, search: usize, h: T) -> Array2<T> {
    let (prows, pcols) = phi.patch_shape();
    let columns: Vec<Array1<T>> = (0..step.ncols())
        .into_par_iter()
        .map(|i| {
            let w = step.column(i);
            let support: Vec<usize> = (0..w.len()).filter(|&j| w[j].abs() > thresh).collect();
            let mut out = Array1::<T>::zeros(w.len());
            if support.is_empty() {
                return out;
            }
            let decoded = phi.data().dot(&w);
            let img = decoded.into_shape_with_order((prows, pcols)).expect("patch shape matches patch_dim");
            let clean = nlm_denoise(img.view(), window, search, h);
            let clean = clean.into_shape_with_order(prows * pcols).expect("same size");
            let sub = phi.data().select(Axis(1), &support);
            if let Some(beta) = T::lstsq(sub.view(), clean.view()) {
                for (&j, &b) in support.iter().zip(beta.iter()) {
                    out[j] = soft_threshold(b, thresh);
                }
            } else {
                out.fill(T::nan());
            }
            out
        })
        .collect();
    let mut out = Array2::<T>::zeros(step.dim());
    for (i, col) in columns.into_iter().enumerate() {
        out.column_mut(i).assign(&col);
    }
    out
}
