//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use hsi_inpaint::config::ExperimentConfig;
use hsi_inpaint::degrade::{degrade, synth_cube, DegradeSpec, SynthSpec};
use hsi_inpaint::io::{read_cube, read_mask, write_cube, write_mask};
use hsi_inpaint::metrics::quality_report;
use hsi_inpaint::pipeline::{build_dictionary, dictionary_from_cube, run_many, run_once, Algorithm};
use hsi_inpaint::{Cube, Dict, Error, Result};
use serde::Serialize;

use crate::Command;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { spec, out, seed } => synth(&spec, &out, seed),
        Command::Degrade { input, fraction, sigma, seed, mask_kind, out, mask } => {
            let spec = DegradeSpec { mask_kind: mask_kind.into(), missing_fraction: fraction, noise_sigma: sigma, seed };
            degrade_cmd(&input, &spec, &out, &mask)
        }
        Command::LearnDict { input, mask, atoms, config, sparsity, iters, seed, out } => {
            let mut cfg = load_config(config.as_deref())?;
            let ksvd = &mut cfg.dictionary.ksvd;
            ksvd.atoms = atoms.unwrap_or(ksvd.atoms);
            ksvd.sparsity = sparsity.unwrap_or(ksvd.sparsity);
            ksvd.iters = iters.unwrap_or(ksvd.iters);
            ksvd.seed = seed.unwrap_or(ksvd.seed);
            learn_dict(&input, &mask, &cfg, &out)
        }
        Command::Inpaint { algo, input, mask, dict, config, out, trace, runs, gt, seed, report } => {
            let cfg = load_config(config.as_deref())?;
            let paths = InpaintPaths { input, mask, dict, out, trace, gt, report };
            inpaint(algo.into(), &paths, &cfg, runs, seed)
        }
        Command::Eval { a, b, peak } => eval(&a, &b, peak),
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::Config(e.to_string()))?;
    println!("{text}");
    Ok(())
}

/// Accepts a full experiment config or a bare synth spec.
fn synth(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let text = fs::read_to_string(spec_path)?;
    let mut spec = match ExperimentConfig::from_json(&text) {
        Ok(cfg) => cfg.synth,
        Err(full) => serde_json::from_str::<SynthSpec>(&text).map_err(|_| full)?,
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let cube: Cube = synth_cube(&spec)?;
    write_cube(out, &cube)
}

fn degrade_cmd(input: &Path, spec: &DegradeSpec, out: &Path, mask_out: &Path) -> Result<()> {
    spec.validate()?;
    let x: Cube = read_cube(input)?;
    let (y, m) = degrade(&x, spec)?;
    write_cube(out, &y)?;
    write_mask(mask_out, &m)
}

fn learn_dict(input: &Path, mask: &Path, cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let y: Cube = read_cube(input)?;
    let m = read_mask(mask)?;
    let phi = build_dictionary(&y, &m, cfg)?;
    write_cube(out, &phi.to_cube())
}

struct InpaintPaths {
    input: PathBuf,
    mask: PathBuf,
    dict: Option<PathBuf>,
    out: PathBuf,
    trace: Option<PathBuf>,
    gt: Option<PathBuf>,
    report: Option<PathBuf>,
}

/// Summary printed when no ground truth is available.
#[derive(Serialize)]
struct SolveSummary {
    algorithm: Algorithm,
    seed: u64,
    iterations: usize,
    converged: bool,
}

/// Resolves a config-supplied output path against `outputs.dir`.
fn config_path(cfg: &ExperimentConfig, p: &Option<String>) -> Option<PathBuf> {
    let p = PathBuf::from(p.as_ref()?);
    Some(match &cfg.outputs.dir {
        Some(dir) if p.is_relative() => Path::new(dir).join(p),
        _ => p,
    })
}

fn inpaint(algo: Algorithm, paths: &InpaintPaths, cfg: &ExperimentConfig, runs: Option<usize>, seed: Option<u64>) -> Result<()> {
    let y: Cube = read_cube(&paths.input)?;
    let m = read_mask(&paths.mask)?;
    let gt: Option<Cube> = paths.gt.as_deref().map(read_cube).transpose()?;
    let seed = seed.unwrap_or(cfg.solver.seed);
    let runs = runs.unwrap_or(if gt.is_some() { cfg.runs } else { 1 });
    if runs == 0 {
        return Err(Error::Config("--runs must be >= 1".into()));
    }

    let phi: Option<Dict> = match (algo.uses_sparse_prior(), &paths.dict) {
        (false, _) => None,
        (true, Some(p)) => Some(dictionary_from_cube(&read_cube(p)?, &y, cfg)?),
        (true, None) => Some(build_dictionary(&y, &m, cfg)?),
    };

    let (first, summary) = match (&gt, runs) {
        (Some(gt), _) => {
            let (mut outs, summary) = run_many(algo, &y, &m, phi.as_ref(), cfg, seed, runs, gt)?;
            (outs.swap_remove(0), serde_json::to_string(&summary))
        }
        (None, 1) => {
            let out = run_once(algo, &y, &m, phi.as_ref(), cfg, seed, None, false)?;
            let summary = SolveSummary { algorithm: algo, seed, iterations: out.trace.records.len(), converged: out.trace.converged };
            (out, serde_json::to_string(&summary))
        }
        (None, _) => return Err(Error::Config("--runs above 1 needs --gt to report quality".into())),
    };
    let summary = summary.map_err(|e| Error::Config(e.to_string()))?;

    write_cube(&paths.out, &first.x)?;
    if let Some(trace) = paths.trace.clone().or_else(|| config_path(cfg, &cfg.outputs.trace)) {
        fs::write(trace, first.trace.to_jsonl())?;
    }
    println!("{summary}");
    if let Some(report) = paths.report.clone().or_else(|| config_path(cfg, &cfg.outputs.report)) {
        fs::write(report, summary + "\n")?;
    }
    Ok(())
}

fn eval(a: &Path, b: &Path, peak: f64) -> Result<()> {
    let x: Cube = read_cube(a)?;
    let reference: Cube = read_cube(b)?;
    print_json(&quality_report(&x, &reference, peak)?)
}
