//! `hsi-inpaint`: synthesize, degrade, learn a dictionary, inpaint and
//! evaluate hyperspectral cubes stored in the `HSIB1` container.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hsi_inpaint::degrade::MaskKind;
use hsi_inpaint::pipeline::Algorithm;

#[derive(Debug, Parser)]
#[command(name = "hsi-inpaint", version, about = "Hyperspectral inpainting with low-rank and sparse plug-and-play priors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic low-rank cube.
    Synth {
        /// Experiment config (its `synth` section is used) or a bare synth spec.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Mask and add Gaussian noise to a cube.
    Degrade {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        fraction: f64,
        #[arg(long, default_value_t = 0.12)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = MaskArg::RandomPixels)]
        mask_kind: MaskArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mask: PathBuf,
    },
    /// Learn a patch dictionary from a degraded cube with masked K-SVD.
    LearnDict {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Overrides the config's atom count.
        #[arg(long)]
        atoms: Option<usize>,
        /// Patch scheme and K-SVD settings; defaults apply when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        sparsity: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a cube.
    Inpaint {
        #[arg(long, value_enum)]
        algo: AlgoArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Dictionary container; built from the config when absent.
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Line-delimited JSON trace of the (first) run.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Number of seeded repetitions; needs `--gt` when above 1.
        #[arg(long)]
        runs: Option<usize>,
        /// Ground truth for per-iteration and final quality.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Overrides `solver.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the summary JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print MPSNR/MSSIM of `--a` against the reference `--b` as JSON.
    Eval {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        peak: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MaskArg {
    RandomPixels,
    DeadLines,
    Stripes,
}

impl From<MaskArg> for MaskKind {
    fn from(m: MaskArg) -> Self {
        match m {
            MaskArg::RandomPixels => MaskKind::RandomPixels,
            MaskArg::DeadLines => MaskKind::DeadLines,
            MaskArg::Stripes => MaskKind::Stripes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgoArg {
    LrsPnp,
    LrsPnpDip,
    SvtOnly,
    SparseOnly,
    DipOnly,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::LrsPnp => Algorithm::LrsPnp,
            AlgoArg::LrsPnpDip => Algorithm::LrsPnpDip,
            AlgoArg::SvtOnly => Algorithm::SvtOnly,
            AlgoArg::SparseOnly => Algorithm::SparseOnly,
            AlgoArg::DipOnly => Algorithm::DipOnly,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let text = e.render().to_string();
            eprintln!("{}", text.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(1);
        }
        Err(e) => {
            print!("{}", e.render());
            return ExitCode::SUCCESS;
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code())
        }
    }
}
