//! Helpers shared by the CLI integration targets.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_hsi-inpaint");

/// A 16×16×8 problem with 4×4 patches and an analytic dictionary, sized for
/// quick repeated runs.
pub const SMALL_CONFIG: &str = r#"{
  "synth": { "rows": 16, "cols": 16, "bands": 8, "rank": 4, "seed": 0 },
  "degrade": { "missing_fraction": 0.25, "noise_sigma": 0.12, "seed": 0 },
  "patch": { "mode": "spatial", "patch_edge": 4, "stride": 2 },
  "dictionary": {
    "ksvd": { "atoms": 64, "sparsity": 4, "iters": 3, "seed": 0 },
    "analytic": { "kind": "overcomplete_dct2d", "rows": 4, "cols": 4 }
  },
  "solver": { "w_s": 0.01, "mu1_init": 0.25, "outer_max": 15, "inner_ista": 20, "dip_inner": 5, "seed": 0 },
  "dip": { "channels": [4, 8], "wmv_window": 5, "wmv_patience": 3 },
  "runs": 20
}"#;

pub fn benchmark_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/benchmark.json")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

/// Runs the binary and panics with its stderr unless it exits cleanly.
pub fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "hsi-inpaint {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

pub fn json(text: &str) -> serde_json::Value {
    serde_json::from_str(text.trim()).expect("stdout is one JSON document")
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Paths of one synthesized and degraded problem inside `dir`.
pub struct Problem {
    pub gt: PathBuf,
    pub y: PathBuf,
    pub mask: PathBuf,
    pub config: PathBuf,
}

/// `synth` then `degrade` with the given config and seed.
pub fn make_problem(dir: &Path, config: &Path, seed: u64) -> Problem {
    let gt = dir.join(format!("gt{seed}.hsi"));
    let y = dir.join(format!("y{seed}.hsi"));
    let mask = dir.join(format!("m{seed}.hsi"));
    let seed_s = seed.to_string();
    ok(&["synth", "--spec", s(config), "--out", s(&gt), "--seed", &seed_s]);
    ok(&["degrade", "--in", s(&gt), "--fraction", "0.25", "--sigma", "0.12", "--seed", &seed_s, "--out", s(&y), "--mask", s(&mask)]);
    Problem { gt, y, mask, config: config.to_path_buf() }
}

pub fn small_problem(dir: &Path, seed: u64) -> Problem {
    let config = dir.join("small.json");
    std::fs::write(&config, SMALL_CONFIG).unwrap();
    make_problem(dir, &config, seed)
}
