//! ADMM orchestration of the two priors.
//!
//! Each outer iteration performs, in order:
//!
//! 1. `α ← PnP-ISTA` on the targets `P_i(x) + λ₁ᵢ/μ₁`,
//! 2. `u ← prox(x + λ₂/μ₂)`: singular value thresholding with threshold
//!    `w_lr/μ₂`, the network prior fitted from that input, or the identity,
//! 3. the closed-form `x` step (a diagonal solve),
//! 4. `λ₁ᵢ ← λ₁ᵢ + μ₁(P_i x − Φα_i)`, `λ₂ ← λ₂ + μ₂(x − u)`, `μ ← ρμ`.
//!
//! The data term is `γ/2 ‖y − Mx‖²`, which makes step 3 the exact minimizer of
//! the augmented Lagrangian in `x`.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::cube::{HsiCube, MaskCube, PatchLayout, PatchScheme, PatchSet};
use crate::dictionary::Dictionary;
use crate::dip::{DipPrior, StopReport};
use crate::error::{invalid, mismatch, Error, Result};
use crate::lowrank::{nuclear_norm, svt, SvtConfig};
use crate::metrics::{mpsnr, mssim};
use crate::scalar::Real;
use crate::sparse::{pnp_ista_solve, Denoiser, SparseCode};

/// Guard for relative-norm denominators.
pub const EPS: f64 = 1e-12;

/// Prior acting on the auxiliary variable `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UPrior {
    /// Nuclear norm of the pixels × bands unfolding, via SVT.
    Svt,
    /// Untrained network output.
    Dip,
    /// No prior: `u` simply tracks `x + λ₂/μ₂`.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub gamma: f64,
    pub w_lr: f64,
    pub w_s: f64,
    pub lambda1_init: f64,
    pub lambda2_init: f64,
    pub mu1_init: f64,
    pub mu2_init: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub outer_max: usize,
    pub inner_ista: usize,
    pub dip_inner: usize,
    pub tol: f64,
    pub seed: u64,
    pub u_prior: UPrior,
    /// Patch sparse-coding prior on or off.
    pub sparse_prior: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            w_lr: 1.0,
            w_s: 1.0,
            lambda1_init: 0.0,
            lambda2_init: 0.0,
            mu1_init: 1.0,
            mu2_init: 1.0,
            rho1: 1.0,
            rho2: 1.0,
            outer_max: 50,
            inner_ista: 50,
            dip_inner: 20,
            tol: 1e-4,
            seed: 0,
            u_prior: UPrior::Svt,
            sparse_prior: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("gamma", self.gamma), ("w_lr", self.w_lr), ("w_s", self.w_s), ("mu1_init", self.mu1_init), ("mu2_init", self.mu2_init)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [("rho1", self.rho1), ("rho2", self.rho2)] {
            if !(v >= 1.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be >= 1, got {v}")));
            }
        }
        for (name, v) in [("lambda1_init", self.lambda1_init), ("lambda2_init", self.lambda2_init)] {
            if !v.is_finite() {
                return Err(invalid(format!("{name} must be finite")));
            }
        }
        if self.outer_max == 0 || self.inner_ista == 0 || self.dip_inner == 0 {
            return Err(invalid("outer_max, inner_ista and dip_inner must be >= 1"));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(invalid("tol must be finite and >= 0"));
        }
        Ok(())
    }
}

/// One outer iteration as written to the trace stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub objective: f64,
    /// `(Σ_i ‖P_i x − Φα_i‖²)^{1/2}`.
    pub patch_residual: f64,
    /// `‖x − u‖`.
    pub consensus_residual: f64,
    pub rel_change: f64,
    pub mu1: f64,
    pub mu2: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mpsnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dip_inner: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub dip_losses: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dip_steps_total: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dip_stopped_at: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub converged: bool,
    /// Stopper summary for the network prior.
    pub stop: Option<StopReport>,
    /// MPSNR of the network output before every training step, when ground
    /// truth was supplied and per-step recording requested.
    pub dip_step_mpsnr: Vec<f64>,
}

impl Trace {
    /// One JSON object per outer iteration, newline-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }
}

/// ADMM variables.
#[derive(Debug, Clone)]
pub struct SolverState<T> {
    pub x: HsiCube<T>,
    pub u: HsiCube<T>,
    pub alpha: SparseCode<T>,
    /// Patch-shaped multiplier, one column per patch.
    pub lambda1: PatchSet<T>,
    pub lambda2: HsiCube<T>,
    pub mu1: T,
    pub mu2: T,
    pub k: usize,
    pub trace: Vec<TraceRecord>,
}

impl<T: Real> SolverState<T> {
    /// `x⁰ = u⁰ = y`, `α⁰ = 0`, multipliers at their initial constants.
    pub fn init(y: &HsiCube<T>, layout: &PatchLayout, atoms: usize, cfg: &SolverConfig) -> Self {
        let l1 = Array2::from_elem((layout.patch_dim(), layout.count()), T::lit(cfg.lambda1_init));
        Self {
            x: y.clone(),
            u: y.clone(),
            alpha: SparseCode::zeros(atoms, layout.count()),
            lambda1: layout.wrap(l1),
            lambda2: HsiCube::from_elem(y.dims(), T::lit(cfg.lambda2_init)),
            mu1: T::lit(cfg.mu1_init),
            mu2: T::lit(cfg.mu2_init),
            k: 0,
            trace: Vec::new(),
        }
    }
}

fn sq_norm<T: Real>(it: impl Iterator<Item = T>) -> T {
    it.map(|v| v * v).sum()
}

fn check_problem<T: Real>(y: &HsiCube<T>, m: &MaskCube, phi: Option<&Dictionary<T>>, layout: &PatchLayout) -> Result<()> {
    if y.dims() != m.dims() || y.dims() != layout.dims() {
        return Err(mismatch(format!("y {}, mask {}, layout {}", y.dims(), m.dims(), layout.dims())));
    }
    if let Some(phi) = phi {
        if phi.patch_dim() != layout.patch_dim() {
            return Err(mismatch(format!(
                "dictionary patch_dim {} vs scheme patch_dim {}",
                phi.patch_dim(),
                layout.patch_dim()
            )));
        }
    }
    Ok(())
}

/// `P_i x − Φα_i` for every patch.
fn patch_residual<T: Real>(x: &HsiCube<T>, alpha: &SparseCode<T>, phi: &Dictionary<T>, layout: &PatchLayout) -> Result<Array2<T>> {
    Ok(layout.extract(x)?.into_data() - alpha.decode(phi))
}

/// The augmented Lagrangian
/// `γ/2‖y − Mx‖² + w_lr‖u‖_* + w_s Σ‖α_i‖₁ + μ₁/2 Σ‖P_i x − Φα_i + λ₁ᵢ/μ₁‖² + μ₂/2‖x − u + λ₂/μ₂‖²`.
///
/// The nuclear-norm term is present only for the SVT prior and the two patch
/// terms only when the sparse prior is on.
pub fn objective<T: Real>(
    state: &SolverState<T>,
    y: &HsiCube<T>,
    m: &MaskCube,
    phi: Option<&Dictionary<T>>,
    layout: &PatchLayout,
    cfg: &SolverConfig,
) -> Result<T> {
    check_problem(y, m, phi, layout)?;
    let half = T::lit(0.5);
    let fid = sq_norm(
        y.as_slice()
            .iter()
            .zip(state.x.as_slice())
            .zip(m.as_slice())
            .map(|((&yv, &xv), &w)| if w != 0 { yv - xv } else { yv }),
    );
    let mut total = half * T::lit(cfg.gamma) * fid;
    if cfg.u_prior == UPrior::Svt {
        total += T::lit(cfg.w_lr) * nuclear_norm(&state.u)?;
    }
    if cfg.sparse_prior {
        let phi = phi.ok_or_else(|| invalid("sparse prior needs a dictionary"))?;
        total += T::lit(cfg.w_s) * state.alpha.l1_norm();
        let r = patch_residual(&state.x, &state.alpha, phi, layout)?;
        let mu1 = state.mu1;
        total += half * mu1 * sq_norm(r.iter().zip(state.lambda1.data().iter()).map(|(&a, &l)| a + l / mu1));
    }
    let mu2 = state.mu2;
    total += half
        * mu2
        * sq_norm(
            state.x.as_slice()
                .iter()
                .zip(state.u.as_slice())
                .zip(state.lambda2.as_slice())
                .map(|((&x, &u), &l)| x - u + l / mu2),
        );
    Ok(total)
}

/// Closed-form minimizer of the augmented Lagrangian in `x`:
/// `(γMᵀy + μ₁ Σ P_iᵀΦα_i − Σ P_iᵀλ₁ᵢ + μ₂u − λ₂) / (γ diag(MᵀM) + μ₁·coverage + μ₂)`.
pub fn x_update<T: Real>(
    state: &SolverState<T>,
    y: &HsiCube<T>,
    m: &MaskCube,
    phi: Option<&Dictionary<T>>,
    layout: &PatchLayout,
    cfg: &SolverConfig,
) -> Result<HsiCube<T>> {
    check_problem(y, m, phi, layout)?;
    let gamma = T::lit(cfg.gamma);
    let (mu1, mu2) = (state.mu1, state.mu2);
    let mut num = HsiCube::from_fn(y.dims(), |r, c, b| {
        let w = if m.is_observed(r, c, b) { gamma } else { T::zero() };
        w * y.get(r, c, b) + mu2 * state.u.get(r, c, b) - state.lambda2.get(r, c, b)
    });
    let mut den = HsiCube::from_fn(y.dims(), |r, c, b| if m.is_observed(r, c, b) { gamma + mu2 } else { mu2 });
    if cfg.sparse_prior {
        let phi = phi.ok_or_else(|| invalid("sparse prior needs a dictionary"))?;
        let mut patches = state.alpha.decode(phi) * mu1;
        patches -= state.lambda1.data();
        let back = layout.scatter(patches.view())?;
        Zip::from(num.array_mut()).and(back.array()).for_each(|n, &b| *n += b);
        Zip::from(den.array_mut()).and(layout.coverage()).for_each(|d, &c| *d += mu1 * T::from_count(c as usize));
    }
    if let Some(i) = den.as_slice().iter().position(|&d| d == T::zero()) {
        return Err(Error::SingularSystem(i));
    }
    num.zip_map(&den, |n, d| n / d)
}

/// Dual ascent on both multipliers, then `μ ← ρμ`.
pub fn multiplier_update<T: Real>(
    state: &mut SolverState<T>,
    phi: Option<&Dictionary<T>>,
    layout: &PatchLayout,
    cfg: &SolverConfig,
) -> Result<()> {
    if cfg.sparse_prior {
        let phi = phi.ok_or_else(|| invalid("sparse prior needs a dictionary"))?;
        let r = patch_residual(&state.x, &state.alpha, phi, layout)?;
        state.lambda1.data_mut().scaled_add(state.mu1, &r);
    }
    let mu2 = state.mu2;
    Zip::from(state.lambda2.array_mut())
        .and(state.x.array())
        .and(state.u.array())
        .for_each(|l, &x, &u| *l += mu2 * (x - u));
    state.mu1 *= T::lit(cfg.rho1);
    state.mu2 *= T::lit(cfg.rho2);
    Ok(())
}

/// Extra inputs for monitoring a solve.
#[derive(Debug, Clone, Copy, Default)]
pub struct SolveOptions<'a, T> {
    pub ground_truth: Option<&'a HsiCube<T>>,
    /// Record the MPSNR of the network output at every training step.
    pub record_dip_steps: bool,
}

/// The general loop behind every algorithm variant.
#[allow(clippy::too_many_arguments)]
pub fn solve<T: Real>(
    y: &HsiCube<T>,
    m: &MaskCube,
    phi: Option<&Dictionary<T>>,
    scheme: PatchScheme,
    denoiser: &Denoiser,
    mut dip: Option<&mut DipPrior<T>>,
    cfg: &SolverConfig,
    opts: SolveOptions<'_, T>,
) -> Result<(HsiCube<T>, SolverState<T>, Trace)> {
    cfg.validate()?;
    denoiser.validate()?;
    if !y.is_finite() {
        return Err(invalid("observation contains non-finite values"));
    }
    let layout = PatchLayout::new(scheme, y.dims())?;
    if cfg.sparse_prior && phi.is_none() {
        return Err(invalid("sparse prior needs a dictionary"));
    }
    let phi = if cfg.sparse_prior { phi } else { None };
    check_problem(y, m, phi, &layout)?;
    if cfg.u_prior == UPrior::Dip && dip.is_none() {
        return Err(invalid("network prior selected but no network supplied"));
    }
    if let Some(gt) = opts.ground_truth {
        if gt.dims() != y.dims() {
            return Err(mismatch(format!("ground truth {} vs y {}", gt.dims(), y.dims())));
        }
    }

    let atoms = phi.map_or(0, Dictionary::atoms);
    let mut state = SolverState::init(y, &layout, atoms, cfg);
    let mut trace = Trace::default();
    let eps = T::lit(EPS);
    let (w_s, w_lr) = (T::lit(cfg.w_s), cfg.w_lr);

    for k in 0..cfg.outer_max {
        if let Some(phi) = phi {
            let mut targets = layout.extract(&state.x)?;
            let mu1 = state.mu1;
            targets.data_mut().zip_mut_with(state.lambda1.data(), |t, &l| *t += l / mu1);
            state.alpha = pnp_ista_solve(&state.alpha, &targets, phi, denoiser, mu1, w_s, cfg.inner_ista)?;
        }

        let mu2 = state.mu2;
        let z = state.x.zip_map(&state.lambda2, |x, l| x + l / mu2)?;
        let mut dip_losses = Vec::new();
        state.u = match cfg.u_prior {
            UPrior::Svt => svt(&z, &SvtConfig::new(w_lr / mu2.to_f64_lossy()))?,
            UPrior::None => z,
            UPrior::Dip => {
                let prior = dip.as_deref_mut().expect("checked above");
                let keep = opts.record_dip_steps && opts.ground_truth.is_some();
                let out = prior.update(&z, y, m, cfg.dip_inner, keep)?;
                if let Some(gt) = opts.ground_truth.filter(|_| keep) {
                    for o in &out.outputs {
                        trace.dip_step_mpsnr.push(mpsnr(o, gt, 1.0)?);
                    }
                }
                dip_losses = out.losses.iter().map(|l| l.to_f64_lossy()).collect();
                out.u
            }
        };

        let x_new = x_update(&state, y, m, phi, &layout, cfg)?;
        if !x_new.is_finite() {
            return Err(Error::SolverDiverged);
        }
        let diff = x_new.zip_map(&state.x, |a, b| a - b)?.norm();
        let rel_change = diff / state.x.norm().max(eps);
        state.x = x_new;
        multiplier_update(&mut state, phi, &layout, cfg)?;
        state.k = k + 1;

        let patch_res = match phi {
            Some(phi) => sq_norm(patch_residual(&state.x, &state.alpha, phi, &layout)?.into_iter()).sqrt(),
            None => T::zero(),
        };
        let consensus = state.x.zip_map(&state.u, |a, b| a - b)?.norm();
        let obj = objective(&state, y, m, phi, &layout, cfg)?;
        let (q_psnr, q_ssim) = match opts.ground_truth {
            Some(gt) => (
                Some(mpsnr(&state.x, gt, 1.0)?),
                if gt.rows() >= crate::metrics::SSIM_WINDOW && gt.cols() >= crate::metrics::SSIM_WINDOW {
                    Some(mssim(&state.x, gt, 1.0)?)
                } else {
                    None
                },
            ),
            None => (None, None),
        };
        let dip_meta = dip.as_deref().filter(|_| cfg.u_prior == UPrior::Dip);
        let record = TraceRecord {
            iteration: k + 1,
            objective: obj.to_f64_lossy(),
            patch_residual: patch_res.to_f64_lossy(),
            consensus_residual: consensus.to_f64_lossy(),
            rel_change: rel_change.to_f64_lossy(),
            mu1: state.mu1.to_f64_lossy(),
            mu2: state.mu2.to_f64_lossy(),
            mpsnr: q_psnr,
            mssim: q_ssim,
            dip_inner: dip_meta.map(|_| cfg.dip_inner),
            dip_losses,
            dip_steps_total: dip_meta.map(|p| p.stopper.steps_seen()),
            dip_stopped_at: dip_meta.and_then(|p| p.stopper.report().fired_at),
        };
        state.trace.push(record.clone());
        trace.records.push(record);
        if rel_change < T::lit(cfg.tol) {
            trace.converged = true;
            break;
        }
    }
    if cfg.u_prior == UPrior::Dip {
        trace.stop = dip.as_deref().map(|p| p.stopper.report());
    }
    Ok((state.x.clone(), state, trace))
}

/// Sparse-coding prior plus SVT.
pub fn solve_lrs_pnp<T: Real>(
    y: &HsiCube<T>,
    m: &MaskCube,
    phi: &Dictionary<T>,
    scheme: PatchScheme,
    denoiser: &Denoiser,
    cfg: &SolverConfig,
) -> Result<(HsiCube<T>, Trace)> {
    if cfg.u_prior != UPrior::Svt {
        return Err(invalid("solve_lrs_pnp requires u_prior = svt"));
    }
    let (x, _, trace) = solve(y, m, Some(phi), scheme, denoiser, None, cfg, SolveOptions::default())?;
    Ok((x, trace))
}

/// Sparse-coding prior plus the network prior.
pub fn solve_lrs_pnp_dip<T: Real>(
    y: &HsiCube<T>,
    m: &MaskCube,
    phi: &Dictionary<T>,
    scheme: PatchScheme,
    denoiser: &Denoiser,
    net: &mut DipPrior<T>,
    cfg: &SolverConfig,
) -> Result<(HsiCube<T>, Trace)> {
    if cfg.u_prior != UPrior::Dip {
        return Err(invalid("solve_lrs_pnp_dip requires u_prior = dip"));
    }
    let (x, _, trace) = solve(y, m, Some(phi), scheme, denoiser, Some(net), cfg, SolveOptions::default())?;
    Ok((x, trace))
}
