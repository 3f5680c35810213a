//! End-to-end runs: dictionary preparation, the five algorithm variants and
//! repeated seeded runs with mean ± standard deviation reporting.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::cube::{HsiCube, MaskCube, PatchLayout};
use crate::dictionary::{analytic_dictionary, learn_ksvd, Dictionary};
use crate::dip::DipPrior;
use crate::error::{invalid, mismatch, Result};
use crate::metrics::{quality_report, QualityReport};
use crate::solver::{solve, SolveOptions, SolverConfig, Trace, UPrior};

type Cube = HsiCube<f64>;
type Dict = Dictionary<f64>;

/// The full methods and the single-prior ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Patch sparse coding plus SVT.
    LrsPnp,
    /// Patch sparse coding plus the network prior.
    LrsPnpDip,
    /// SVT alone.
    SvtOnly,
    /// Patch sparse coding alone.
    SparseOnly,
    /// The network prior alone.
    DipOnly,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] =
        [Algorithm::LrsPnp, Algorithm::LrsPnpDip, Algorithm::SvtOnly, Algorithm::SparseOnly, Algorithm::DipOnly];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::LrsPnp => "lrs-pnp",
            Algorithm::LrsPnpDip => "lrs-pnp-dip",
            Algorithm::SvtOnly => "svt-only",
            Algorithm::SparseOnly => "sparse-only",
            Algorithm::DipOnly => "dip-only",
        }
    }

    pub fn u_prior(self) -> UPrior {
        match self {
            Algorithm::LrsPnp | Algorithm::SvtOnly => UPrior::Svt,
            Algorithm::LrsPnpDip | Algorithm::DipOnly => UPrior::Dip,
            Algorithm::SparseOnly => UPrior::None,
        }
    }

    pub fn uses_sparse_prior(self) -> bool {
        matches!(self, Algorithm::LrsPnp | Algorithm::LrsPnpDip | Algorithm::SparseOnly)
    }

    /// Whether the output depends on the seed (the network initialization).
    pub fn is_stochastic(self) -> bool {
        self.u_prior() == UPrior::Dip
    }

    /// `base` with the prior switches of this variant.
    pub fn solver_config(self, base: &SolverConfig) -> SolverConfig {
        SolverConfig { u_prior: self.u_prior(), sparse_prior: self.uses_sparse_prior(), ..base.clone() }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| invalid(format!("unknown algorithm {s:?}")))
    }
}

/// Patch layout of `cfg.patch` on `y`'s dims.
pub fn layout_for(y: &Cube, cfg: &ExperimentConfig) -> Result<PatchLayout> {
    PatchLayout::new(cfg.patch, y.dims())
}

/// The dictionary `cfg` asks for: analytic when `dictionary.analytic` is set,
/// otherwise masked K-SVD on the patches of `y`.
pub fn build_dictionary(y: &Cube, m: &MaskCube, cfg: &ExperimentConfig) -> Result<Dict> {
    let layout = layout_for(y, cfg)?;
    let shape = layout.patch_shape();
    match cfg.dictionary.analytic {
        Some(kind) => analytic_dictionary(kind, layout.patch_dim(), cfg.dictionary.ksvd.atoms)?.with_patch_shape(shape),
        None => {
            let patches = layout.extract(y)?;
            let valid = layout.extract(&m.to_real::<f64>())?;
            learn_ksvd(&patches, &valid, &cfg.dictionary.ksvd)
        }
    }
}

/// Rebuilds a dictionary read from a container, checking it against the
/// configured patch scheme.
pub fn dictionary_from_cube(cube: &Cube, y: &Cube, cfg: &ExperimentConfig) -> Result<Dict> {
    let layout = layout_for(y, cfg)?;
    if cube.rows() != layout.patch_dim() {
        return Err(mismatch(format!(
            "dictionary atoms have length {}, the patch scheme needs {}",
            cube.rows(),
            layout.patch_dim()
        )));
    }
    Dictionary::from_cube(cube, layout.patch_shape())
}

/// One solve and its evaluation.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub x: Cube,
    pub trace: Trace,
    pub quality: Option<QualityReport>,
}

/// Runs `algo` once with the given seed. `gt`, when present, is tracked in
/// the trace and used for the final quality report.
#[allow(clippy::too_many_arguments)]
pub fn run_once(
    algo: Algorithm,
    y: &Cube,
    m: &MaskCube,
    phi: Option<&Dict>,
    cfg: &ExperimentConfig,
    seed: u64,
    gt: Option<&Cube>,
    record_dip_steps: bool,
) -> Result<RunOutput> {
    let solver = SolverConfig { seed, ..algo.solver_config(&cfg.solver) };
    let mut prior = match algo.is_stochastic() {
        true => Some(DipPrior::new(y.bands(), cfg.dip.clone(), seed)?),
        false => None,
    };
    let opts = SolveOptions { ground_truth: gt, record_dip_steps };
    let phi = phi.filter(|_| algo.uses_sparse_prior());
    let (x, _, trace) = solve(y, m, phi, cfg.patch, &cfg.denoiser, prior.as_mut(), &solver, opts)?;
    let quality = gt.map(|g| quality_report(&x, g, 1.0)).transpose()?;
    Ok(RunOutput { seed, x, trace, quality })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (zero for a single value).
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        // Shifting by the first value makes identical inputs give exactly
        // their value and a spread of exactly zero.
        let shift = values[0];
        let offset = values.iter().map(|v| v - shift).sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - shift - offset).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean: shift + offset, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunQuality {
    pub seed: u64,
    pub mpsnr: f64,
    pub mssim: f64,
}

/// Repeated-run report: one entry per seed plus the summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub runs: usize,
    pub stochastic: bool,
    pub mpsnr: MeanStd,
    pub mssim: MeanStd,
    pub per_run: Vec<RunQuality>,
}

/// Runs `algo` with seeds `base_seed .. base_seed + runs` and summarizes the
/// quality against `gt`. Solves may run concurrently; results are reduced in
/// seed order. Returns every run together with the summary.
#[allow(clippy::too_many_arguments)]
pub fn run_many(
    algo: Algorithm,
    y: &Cube,
    m: &MaskCube,
    phi: Option<&Dict>,
    cfg: &ExperimentConfig,
    base_seed: u64,
    runs: usize,
    gt: &Cube,
) -> Result<(Vec<RunOutput>, RunSummary)> {
    if runs == 0 {
        return Err(invalid("runs must be >= 1"));
    }
    let outputs: Vec<RunOutput> = (0..runs as u64)
        .into_par_iter()
        .map(|i| run_once(algo, y, m, phi, cfg, base_seed.wrapping_add(i), Some(gt), false))
        .collect::<Result<_>>()?;
    let per_run: Vec<RunQuality> = outputs
        .iter()
        .map(|o| {
            let q = o.quality.as_ref().expect("ground truth supplied");
            RunQuality { seed: o.seed, mpsnr: q.mpsnr, mssim: q.mssim }
        })
        .collect();
    let psnr: Vec<f64> = per_run.iter().map(|r| r.mpsnr).collect();
    let ssim: Vec<f64> = per_run.iter().map(|r| r.mssim).collect();
    let summary = RunSummary {
        algorithm: algo,
        runs,
        stochastic: algo.is_stochastic(),
        mpsnr: MeanStd::of(&psnr),
        mssim: MeanStd::of(&ssim),
        per_run,
    };
    Ok((outputs, summary))
}
