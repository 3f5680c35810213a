//! Acceptance suite.
//!
//! Runs without the libtest harness so that each criterion prints exactly one
//! `PASS` or `FAIL` line even when output capture is on. Numeric arguments
//! restrict the run to those criteria. The process exits
//! non-zero when any criterion fails.

mod common;

use std::any::Any;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use common::{benchmark_config, json, make_problem, ok, s, small_problem};
use hsi_inpaint::config::ExperimentConfig;
use hsi_inpaint::degrade::{degrade, synth_cube, DegradeSpec, SynthSpec};
use hsi_inpaint::dictionary::Dictionary;
use hsi_inpaint::dip::layers::{
    concat, concat_backward, leaky_relu, leaky_relu_backward, upsample_nearest, upsample_nearest_backward, ChannelNorm,
    Conv2d,
};
use hsi_inpaint::dip::net::grad_slices;
use hsi_inpaint::lowrank::{svt, SvtConfig};
use hsi_inpaint::metrics::{mpsnr, mssim};
use hsi_inpaint::pipeline::{build_dictionary, run_once, Algorithm};
use hsi_inpaint::solver::{x_update, SolverConfig, SolverState};
use hsi_inpaint::sparse::{pnp_ista_solve_observed, Denoiser, SparseCode};
use hsi_inpaint::{Cube, Dims, MaskCube, Net, PatchLayout, PatchScheme, PatchSet};
use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn panic_text(e: &(dyn Any + Send)) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("svt agrees with a certified factored oracle", svt_oracle),
        ("x-update is stationary and matches a dense solve", x_update_stationarity),
        ("soft-threshold ISTA never increases its objective", ista_monotone),
        ("network layers and full network pass finite differences", network_gradients),
        ("lrs-pnp gains on the synthetic benchmark", lrs_gain),
        ("algorithm ordering on the synthetic benchmark", ordering),
        ("repeated CLI runs are byte-identical", cli_determinism),
        ("WMV stop lands near the best iterate", wmv_stop),
        ("metrics match brute-force references", metrics_conformance),
        ("repeated runs report mean and spread", variance_reporting),
    ];
    // Numeric arguments select criteria by number; anything else is ignored.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let (mut failed, mut ran) = (0, 0);
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| verdict(false, format!("panicked: {}", panic_text(e.as_ref()))));
        if !v.pass {
            failed += 1;
        }
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} {:>2} {name}: {} [{:.1} s]", i + 1, v.detail, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------------------
// Dense linear algebra for the oracles.

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn sq(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Solves `a · x = b` by Gaussian elimination with partial pivoting.
fn solve(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut a = a.clone();
    let mut b = b.clone();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs())).unwrap();
        for k in 0..n {
            a.swap([col, k], [pivot, k]);
        }
        for k in 0..b.ncols() {
            b.swap([col, k], [pivot, k]);
        }
        for row in col + 1..n {
            let f = a[[row, col]] / a[[col, col]];
            if f != 0.0 {
                for k in col..n {
                    a[[row, k]] -= f * a[[col, k]];
                }
                for k in 0..b.ncols() {
                    b[[row, k]] -= f * b[[col, k]];
                }
            }
        }
    }
    let mut x = Array2::zeros(b.dim());
    for k in 0..b.ncols() {
        for row in (0..n).rev() {
            let tail: f64 = (row + 1..n).map(|j| a[[row, j]] * x[[j, k]]).sum();
            x[[row, k]] = (b[[row, k]] - tail) / a[[row, row]];
        }
    }
    x
}

/// True when the symmetric matrix admits a Cholesky factorization.
fn is_positive_definite(a: &Array2<f64>) -> bool {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let dot: f64 = (0..j).map(|k| l[[i, k]] * l[[j, k]]).sum();
            if i == j {
                let d = a[[i, i]] - dot;
                if !(d > 0.0) {
                    return false;
                }
                l[[i, i]] = d.sqrt();
            } else {
                l[[i, j]] = (a[[i, j]] - dot) / l[[j, j]];
            }
        }
    }
    true
}

/// Upper bound on the spectral norm: bisection on positive definiteness of
/// `t·I − aᵀa`, seeded with a power-iteration lower bound.
fn spectral_norm_upper(a: &Array2<f64>) -> f64 {
    let g = a.t().dot(a);
    let n = g.nrows();
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut lo = 0.0;
    for _ in 0..200 {
        let w = g.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            break;
        }
        lo = v.dot(&w);
        v = w / norm;
    }
    let mut hi = g.diag().sum().max(lo);
    for _ in 0..80 {
        let t = 0.5 * (lo + hi);
        if t <= lo || t >= hi {
            break;
        }
        if is_positive_definite(&(Array2::eye(n) * t - &g)) {
            hi = t;
        } else {
            lo = t;
        }
    }
    hi.sqrt()
}

/// Minimizes `½‖LRᵀ − V‖² + τ/2 (‖L‖² + ‖R‖²)` by alternating exact least
/// squares. Every minimizer `X = LRᵀ` of the factored problem minimizes
/// `½‖X − V‖² + τ‖X‖_*`; the returned bound on `‖X − X*‖_F` is `√(2·gap)`
/// from a feasible dual point, so it certifies the oracle independently of any
/// singular value decomposition.
fn factored_prox(v: &Array2<f64>, tau: f64, rng: &mut ChaCha8Rng) -> (Array2<f64>, f64) {
    let (m, n) = v.dim();
    let k = m.min(n);
    let mut l = uniform(rng, (m, k));
    let mut r = uniform(rng, (n, k));
    let eye = Array2::<f64>::eye(k) * tau;
    let mut x = l.dot(&r.t());
    for _ in 0..100_000 {
        l = solve(&(r.t().dot(&r) + &eye), &r.t().dot(&v.t())).reversed_axes();
        r = solve(&(l.t().dot(&l) + &eye), &l.t().dot(v)).reversed_axes();
        let next = l.dot(&r.t());
        let change = sq(&(&next - &x)).sqrt();
        x = next;
        if change <= 1e-15 * sq(&x).sqrt() {
            break;
        }
    }
    let bound = duality_bound(v, &x, &l, &r, tau);
    (x, bound)
}

fn duality_bound(v: &Array2<f64>, x: &Array2<f64>, l: &Array2<f64>, r: &Array2<f64>, tau: f64) -> f64 {
    let resid = v - x;
    let s = (tau / spectral_norm_upper(&resid)).min(1.0);
    let penalty = 0.5 * tau * (sq(l) + sq(r));
    let inner: f64 = x.iter().zip(resid.iter()).map(|(a, b)| a * b).sum();
    let gap = penalty - s * inner + 0.5 * (1.0 - s) * (1.0 - s) * sq(&resid);
    (2.0 * gap.max(0.0)).sqrt()
}

// ---------------------------------------------------------------------------
// 1

fn svt_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut worst_cert) = (0.0f64, 0.0f64);
    let dims = Dims::new(20, 1, 12);
    for _ in 0..200 {
        let v = uniform(&mut rng, (20, 12));
        let tau = rng.random_range(0.05..0.95) * spectral_norm_upper(&v);
        let cube = Cube::dematricize(v.view(), dims).unwrap();
        let ours = svt(&cube, &SvtConfig::new(tau)).unwrap().matricize();
        let (oracle, bound) = factored_prox(&v, tau, &mut rng);
        let norm = sq(&oracle).sqrt();
        worst = worst.max(sq(&(&ours - &oracle)).sqrt() / norm);
        worst_cert = worst_cert.max(bound / norm);
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-6 && worst_cert <= 1e-6 && secs < 10.0,
        format!("200 matrices 20x12, max rel diff {worst:.2e}, max certified oracle error {worst_cert:.2e}, {secs:.2} s (limits 1e-6, 10 s)"),
    )
}

// ---------------------------------------------------------------------------
// 2

struct XInstance {
    y: Cube,
    m: MaskCube,
    phi: Dictionary<f64>,
    layout: PatchLayout,
    state: SolverState<f64>,
    cfg: SolverConfig,
}

fn random_cube(rng: &mut ChaCha8Rng, dims: Dims) -> Cube {
    Cube::from_fn(dims, |_, _, _| rng.random_range(-1.0..1.0))
}

fn random_x_instance(rng: &mut ChaCha8Rng, dims: Option<Dims>) -> XInstance {
    let dims = dims.unwrap_or_else(|| Dims::new(rng.random_range(5..=9), rng.random_range(5..=9), rng.random_range(1..=4)));
    let scheme = if rng.random_bool(0.25) {
        PatchScheme::BandSlice
    } else {
        let patch_edge = rng.random_range(2..=4);
        PatchScheme::Spatial { patch_edge, stride: rng.random_range(1..=patch_edge) }
    };
    let layout = PatchLayout::new(scheme, dims).unwrap();
    let p = layout.patch_dim();
    let atoms = p + rng.random_range(0..=p);
    let phi = Dictionary::new(uniform(rng, (p, atoms)), layout.patch_shape()).unwrap();
    let y = random_cube(rng, dims);
    let bits: Vec<u8> = (0..dims.len()).map(|_| u8::from(rng.random_bool(0.7))).collect();
    let m = MaskCube::new(dims, bits).unwrap();
    let cfg = SolverConfig { gamma: rng.random_range(0.1..5.0), sparse_prior: true, ..Default::default() };
    let mut state = SolverState::init(&y, &layout, atoms, &cfg);
    state.u = random_cube(rng, dims);
    state.lambda2 = random_cube(rng, dims);
    let code = Array2::from_shape_fn((atoms, layout.count()), |_| {
        if rng.random_bool(0.3) {
            rng.random_range(-1.0..1.0)
        } else {
            0.0
        }
    });
    state.alpha = SparseCode::from_matrix(code);
    state.lambda1 = layout.wrap(uniform(rng, (p, layout.count())));
    state.mu1 = rng.random_range(0.1..5.0);
    state.mu2 = rng.random_range(0.1..5.0);
    XInstance { y, m, phi, layout, state, cfg }
}

/// The augmented Lagrangian restricted to its `x`-dependent terms.
fn x_objective(inst: &XInstance, x: &Cube) -> f64 {
    let st = &inst.state;
    let fid: f64 = x
        .as_slice()
        .iter()
        .zip(inst.y.as_slice())
        .zip(inst.m.as_slice())
        .filter(|(_, &w)| w == 1)
        .map(|((a, b), _)| (b - a) * (b - a))
        .sum();
    let patches = inst.layout.extract(x).unwrap().into_data();
    let synth = inst.phi.data().dot(st.alpha.data());
    let t1: f64 = patches
        .iter()
        .zip(synth.iter())
        .zip(st.lambda1.data().iter())
        .map(|((p, d), l)| (p - d + l / st.mu1).powi(2))
        .sum();
    let t2: f64 = x
        .as_slice()
        .iter()
        .zip(st.u.as_slice())
        .zip(st.lambda2.as_slice())
        .map(|((x, u), l)| (x - u + l / st.mu2).powi(2))
        .sum();
    0.5 * inst.cfg.gamma * fid + 0.5 * st.mu1 * t1 + 0.5 * st.mu2 * t2
}

fn solve_x(inst: &XInstance) -> Cube {
    x_update(&inst.state, &inst.y, &inst.m, Some(&inst.phi), &inst.layout, &inst.cfg).unwrap()
}

/// Builds and solves the normal equations with explicit patch operators.
fn dense_x(inst: &XInstance) -> Vec<f64> {
    let dims = inst.y.dims();
    let n = dims.len();
    let st = &inst.state;
    let gamma = inst.cfg.gamma;
    let pt_p = |v: &Cube| {
        let p = inst.layout.extract(v).unwrap().into_data();
        inst.layout.scatter(p.view()).unwrap()
    };
    let mut a = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = pt_p(&Cube::new(dims, e).unwrap());
        for i in 0..n {
            a[[i, j]] = st.mu1 * col.as_slice()[i];
        }
        a[[j, j]] += st.mu2 + if inst.m.as_slice()[j] == 1 { gamma } else { 0.0 };
    }
    let target = inst.phi.data().dot(st.alpha.data()) - st.lambda1.data() / st.mu1;
    let back = inst.layout.scatter(target.view()).unwrap();
    let b = Array2::from_shape_fn((n, 1), |(i, _)| {
        let w = if inst.m.as_slice()[i] == 1 { gamma } else { 0.0 };
        w * inst.y.as_slice()[i] + st.mu1 * back.as_slice()[i] + st.mu2 * st.u.as_slice()[i] - st.lambda2.as_slice()[i]
    });
    solve(&a, &b).into_raw_vec_and_offset().0
}

fn x_update_stationarity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-3;
    let mut worst_fd = 0.0f64;
    for _ in 0..50 {
        let inst = random_x_instance(&mut rng, None);
        let x = solve_x(&inst);
        for _ in 0..5 {
            let d = random_cube(&mut rng, x.dims());
            let d = d.map(|v| v / d.norm());
            let plus = x.zip_map(&d, |a, b| a + h * b).unwrap();
            let minus = x.zip_map(&d, |a, b| a - h * b).unwrap();
            let fd = (x_objective(&inst, &plus) - x_objective(&inst, &minus)) / (2.0 * h);
            worst_fd = worst_fd.max(fd.abs());
        }
    }
    let mut worst_dense = 0.0f64;
    for _ in 0..10 {
        let inst = random_x_instance(&mut rng, Some(Dims::new(6, 6, 3)));
        let x = solve_x(&inst);
        for (a, b) in x.as_slice().iter().zip(dense_x(&inst)) {
            worst_dense = worst_dense.max((a - b).abs());
        }
    }
    verdict(
        worst_fd < 1e-6 && worst_dense < 1e-10,
        format!("max |directional derivative| {worst_fd:.2e} on 50 instances (limit 1e-6), max dense diff {worst_dense:.2e} on 10 6x6x3 instances (limit 1e-10)"),
    )
}

// ---------------------------------------------------------------------------
// 3

fn ista_monotone() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut violations, mut checked) = (0usize, 0usize);
    for _ in 0..100 {
        let p = rng.random_range(4..=16);
        let atoms = rng.random_range(p..=2 * p);
        let count = rng.random_range(1..=8);
        let phi = Dictionary::new(uniform(&mut rng, (p, atoms)), (p, 1)).unwrap();
        let targets = PatchSet::from_matrix(uniform(&mut rng, (p, count)), (p, 1)).unwrap();
        let mu1 = rng.random_range(0.1..4.0);
        let w_s = rng.random_range(0.0..0.5);
        let init = if rng.random_bool(0.5) {
            SparseCode::zeros(atoms, count)
        } else {
            SparseCode::from_matrix(uniform(&mut rng, (atoms, count)))
        };
        let objective = |a: &Array2<f64>| {
            let r = targets.data() - &phi.data().dot(a);
            0.5 * mu1 * sq(&r) + w_s * a.iter().map(|v| v.abs()).sum::<f64>()
        };
        let mut prev = objective(init.data());
        pnp_ista_solve_observed(&init, &targets, &phi, &Denoiser::SoftThreshold, mu1, w_s, 60, |_, a| {
            let f = objective(a.data());
            if f > prev + 1e-12 * prev.abs().max(1.0) {
                violations += 1;
            }
            prev = f;
            checked += 1;
        })
        .unwrap();
    }
    verdict(violations == 0, format!("{violations} increases across {checked} iterations on 100 instances"))
}

// ---------------------------------------------------------------------------
// 4

const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
const FD_FLOOR: f64 = 1e-5;

#[derive(Default)]
struct GradCheck {
    worst: f64,
    entries: usize,
}

impl GradCheck {
    /// Central differences of `loss` in every entry of `values`, against `grad`.
    fn entries(&mut self, values: &[f64], grad: &[f64], loss: impl Fn(&[f64]) -> f64) {
        assert_eq!(values.len(), grad.len());
        let mut work = values.to_vec();
        for i in 0..values.len() {
            work[i] = values[i] + FD_STEP;
            let up = loss(&work);
            work[i] = values[i] - FD_STEP;
            let down = loss(&work);
            work[i] = values[i];
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = (numeric - grad[i]).abs() / numeric.abs().max(grad[i].abs()).max(FD_FLOOR);
            self.worst = self.worst.max(err);
            self.entries += 1;
        }
    }
}

fn random3(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero so the activation's kink is never crossed.
fn off_kink(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_fn(shape, |_| {
        let v: f64 = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn flat(a: &Array3<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn dot3(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn check_conv(chk: &mut GradCheck, rng: &mut ChaCha8Rng, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) {
    let conv = Conv2d::<f64>::gaussian(in_ch, out_ch, kernel, stride, 0.5, rng);
    let mut conv = conv;
    conv.bias = Array1::from_shape_fn(out_ch, |_| rng.random_range(-1.0..1.0));
    let x = random3(rng, (in_ch, 7, 6));
    let (y, cache) = conv.forward(x.view());
    let dy = random3(rng, y.dim());
    let (dx, g) = conv.backward(&cache, dy.view());
    let shape = x.dim();
    chk.entries(&flat(&x), &flat(&dx), |v| {
        let x = Array3::from_shape_vec(shape, v.to_vec()).unwrap();
        dot3(&conv.forward(x.view()).0, &dy)
    });
    let wshape = conv.weight.dim();
    chk.entries(conv.weight.as_slice().unwrap(), g.weight.as_slice().unwrap(), |v| {
        let mut c = conv.clone();
        c.weight = Array2::from_shape_vec(wshape, v.to_vec()).unwrap();
        dot3(&c.forward(x.view()).0, &dy)
    });
    chk.entries(conv.bias.as_slice().unwrap(), g.bias.as_slice().unwrap(), |v| {
        let mut c = conv.clone();
        c.bias = Array1::from_vec(v.to_vec());
        dot3(&c.forward(x.view()).0, &dy)
    });
}

fn check_norm(chk: &mut GradCheck, rng: &mut ChaCha8Rng) {
    let c = 3;
    let norm = ChannelNorm {
        gamma: Array1::from_shape_fn(c, |_| rng.random_range(0.5..1.5)),
        beta: Array1::from_shape_fn(c, |_| rng.random_range(-0.5..0.5)),
    };
    let x = random3(rng, (c, 5, 4));
    let (y, cache) = norm.forward(x.view());
    let dy = random3(rng, y.dim());
    let (dx, (dgamma, dbeta)) = norm.backward(&cache, &dy);
    let shape = x.dim();
    chk.entries(&flat(&x), &flat(&dx), |v| {
        let x = Array3::from_shape_vec(shape, v.to_vec()).unwrap();
        dot3(&norm.forward(x.view()).0, &dy)
    });
    chk.entries(norm.gamma.as_slice().unwrap(), dgamma.as_slice().unwrap(), |v| {
        let n = ChannelNorm { gamma: Array1::from_vec(v.to_vec()), beta: norm.beta.clone() };
        dot3(&n.forward(x.view()).0, &dy)
    });
    chk.entries(norm.beta.as_slice().unwrap(), dbeta.as_slice().unwrap(), |v| {
        let n = ChannelNorm { gamma: norm.gamma.clone(), beta: Array1::from_vec(v.to_vec()) };
        dot3(&n.forward(x.view()).0, &dy)
    });
}

fn check_pointwise(chk: &mut GradCheck, rng: &mut ChaCha8Rng) {
    let slope = 0.2;
    let x = off_kink(rng, (3, 4, 5));
    let dy = random3(rng, x.dim());
    let shape = x.dim();
    chk.entries(&flat(&x), &flat(&leaky_relu_backward(&x, &dy, slope)), |v| {
        dot3(&leaky_relu(&Array3::from_shape_vec(shape, v.to_vec()).unwrap(), slope), &dy)
    });

    for out_hw in [(6, 5), (5, 6)] {
        let x = random3(rng, (2, 3, 3));
        let dy = random3(rng, (2, out_hw.0, out_hw.1));
        let dx = upsample_nearest_backward(dy.view(), (3, 3));
        chk.entries(&flat(&x), &flat(&dx), |v| {
            let x = Array3::from_shape_vec((2, 3, 3), v.to_vec()).unwrap();
            dot3(&upsample_nearest(x.view(), out_hw), &dy)
        });
    }

    let a = random3(rng, (2, 3, 3));
    let b = random3(rng, (3, 3, 3));
    let dy = random3(rng, (5, 3, 3));
    let (da, db) = concat_backward(dy.view(), 2);
    chk.entries(&flat(&a), &flat(&da), |v| {
        dot3(&concat(Array3::from_shape_vec((2, 3, 3), v.to_vec()).unwrap().view(), b.view()), &dy)
    });
    chk.entries(&flat(&b), &flat(&db), |v| {
        dot3(&concat(a.view(), Array3::from_shape_vec((3, 3, 3), v.to_vec()).unwrap().view()), &dy)
    });
}

/// Every parameter of a network on a `2 × 6 × 6` input.
fn check_network(chk: &mut GradCheck, rng: &mut ChaCha8Rng, normalize: bool) {
    let mut net = Net::new(2, &[4, 8], normalize, 0.3, rng.random()).unwrap();
    for p in net.params_mut() {
        for v in p.iter_mut() {
            *v += 0.05 * rng.random_range(-1.0..1.0);
        }
    }
    let z = random3(rng, (2, 6, 6));
    let (out, tape) = net.forward_tape(z.view()).unwrap();
    let dout = random3(rng, out.dim());
    let grads = net.backward(&tape, dout.view());
    let grads: Vec<Vec<f64>> = grad_slices(&grads).into_iter().map(|g| g.to_vec()).collect();
    let values: Vec<Vec<f64>> = net.clone().params_mut().into_iter().map(|p| p.to_vec()).collect();
    for (group, (vals, grad)) in values.iter().zip(&grads).enumerate() {
        chk.entries(vals, grad, |v| {
            let mut n = net.clone();
            n.params_mut()[group].copy_from_slice(v);
            dot3(&n.forward(z.view()).unwrap(), &dout)
        });
    }
}

fn network_gradients() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut layers = GradCheck::default();
    for (in_ch, out_ch, kernel, stride) in [(3, 4, 3, 1), (3, 5, 3, 2), (4, 2, 1, 1)] {
        check_conv(&mut layers, &mut rng, in_ch, out_ch, kernel, stride);
    }
    check_norm(&mut layers, &mut rng);
    check_pointwise(&mut layers, &mut rng);
    let mut network = GradCheck::default();
    check_network(&mut network, &mut rng, true);
    check_network(&mut network, &mut rng, false);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        layers.worst <= 1e-4 && network.worst <= 1e-4 && secs < 60.0,
        format!(
            "layers: {} entries, worst rel err {:.2e}; 6x6x2 networks: {} entries, worst {:.2e}; {secs:.1} s (limits 1e-4, 60 s)",
            layers.entries, layers.worst, network.entries, network.worst
        ),
    )
}

// ---------------------------------------------------------------------------
// 5, 6, 8

fn benchmark() -> ExperimentConfig {
    ExperimentConfig::load(benchmark_config()).unwrap()
}

fn benchmark_problem(cfg: &ExperimentConfig, seed: u64) -> (Cube, Cube, MaskCube) {
    let gt: Cube = synth_cube(&SynthSpec { seed, ..cfg.synth.clone() }).unwrap();
    let (y, m) = degrade(&gt, &DegradeSpec { seed, ..cfg.degrade.clone() }).unwrap();
    (gt, y, m)
}

#[derive(Debug, Clone, Copy)]
struct Quality {
    mpsnr: f64,
    mssim: f64,
}

struct SeedRuns {
    input: Quality,
    lrs: Quality,
    lrs_secs: f64,
    dip: Quality,
    svt: Quality,
    sparse: Quality,
}

const BENCH_SEEDS: u64 = 5;

/// All four algorithms on seeds `0..5`, computed once and shared.
fn bench_runs() -> &'static [SeedRuns] {
    static RUNS: OnceLock<Vec<SeedRuns>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let cfg = benchmark();
        (0..BENCH_SEEDS)
            .map(|seed| {
                let (gt, y, m) = benchmark_problem(&cfg, seed);
                let input = Quality { mpsnr: mpsnr(&y, &gt, 1.0).unwrap(), mssim: mssim(&y, &gt, 1.0).unwrap() };
                let start = Instant::now();
                let phi = build_dictionary(&y, &m, &cfg).unwrap();
                let run = |algo| {
                    let q = run_once(algo, &y, &m, Some(&phi), &cfg, seed, Some(&gt), false).unwrap().quality.unwrap();
                    Quality { mpsnr: q.mpsnr, mssim: q.mssim }
                };
                let lrs = run(Algorithm::LrsPnp);
                let lrs_secs = start.elapsed().as_secs_f64();
                SeedRuns {
                    input,
                    lrs,
                    lrs_secs,
                    dip: run(Algorithm::LrsPnpDip),
                    svt: run(Algorithm::SvtOnly),
                    sparse: run(Algorithm::SparseOnly),
                }
            })
            .collect()
    })
}

fn lrs_gain() -> Verdict {
    let runs = bench_runs();
    let mut pass = true;
    let mut parts = Vec::new();
    for (seed, r) in runs.iter().enumerate() {
        let dp = r.lrs.mpsnr - r.input.mpsnr;
        let ds = r.lrs.mssim - r.input.mssim;
        pass &= dp >= 5.0 && ds >= 0.15 && r.lrs_secs < 120.0;
        parts.push(format!("s{seed} {:.2}->{:.2} dB ssim +{ds:.3} {:.0}s", r.input.mpsnr, r.lrs.mpsnr, r.lrs_secs));
    }
    verdict(pass, format!("{} (needs +5 dB, +0.15, <120 s)", parts.join("; ")))
}

fn ordering() -> Verdict {
    let runs = bench_runs();
    let mean = |f: fn(&SeedRuns) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let lrs = mean(|r| r.lrs.mpsnr);
    let dip = mean(|r| r.dip.mpsnr);
    let svt = mean(|r| r.svt.mpsnr);
    let sparse = mean(|r| r.sparse.mpsnr);
    let ablation = svt.max(sparse);
    verdict(
        dip >= lrs - 0.5 && lrs >= ablation + 1.0 && dip >= ablation + 1.0,
        format!("mean MPSNR over {BENCH_SEEDS} seeds: lrs-pnp-dip {dip:.2}, lrs-pnp {lrs:.2}, sparse-only {sparse:.2}, svt-only {svt:.2}"),
    )
}

fn wmv_stop() -> Verdict {
    let mut cfg = benchmark();
    cfg.dip.early_stop = false;
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 0..3 {
        let (gt, y, m) = benchmark_problem(&cfg, seed);
        let phi = build_dictionary(&y, &m, &cfg).unwrap();
        let out = run_once(Algorithm::LrsPnpDip, &y, &m, Some(&phi), &cfg, seed, Some(&gt), true).unwrap();
        let curve = &out.trace.dip_step_mpsnr;
        let best = (0..curve.len()).max_by(|&a, &b| curve[a].total_cmp(&curve[b])).unwrap();
        match out.trace.stop.as_ref().and_then(|s| s.fired_at) {
            Some(stop) => {
                let off = stop.abs_diff(best);
                pass &= off <= 200;
                parts.push(format!("s{seed} stop {stop} best {best} (|d| {off})"));
            }
            None => {
                pass = false;
                parts.push(format!("s{seed} never fired, best {best}"));
            }
        }
    }
    verdict(pass, format!("{} (limit 200 steps)", parts.join("; ")))
}

// ---------------------------------------------------------------------------
// 7, 10

fn cli_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = benchmark_config();
    let mut runs: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for k in 0..2 {
        let sub = dir.path().join(format!("run{k}"));
        let small = sub.join("small");
        fs::create_dir_all(&small).unwrap();

        let p = make_problem(&sub, &cfg, 0);
        let dict = sub.join("phi.hsi");
        let (x, trace) = (sub.join("lrs.hsi"), sub.join("lrs.jsonl"));
        ok(&["learn-dict", "--in", s(&p.y), "--mask", s(&p.mask), "--config", s(&cfg), "--out", s(&dict)]);
        ok(&[
            "inpaint", "--algo", "lrs-pnp", "--in", s(&p.y), "--mask", s(&p.mask), "--dict", s(&dict), "--config", s(&cfg),
            "--out", s(&x), "--trace", s(&trace),
        ]);

        // The network variant runs on the small problem to keep the suite short.
        let q = small_problem(&small, 0);
        let (xd, traced) = (small.join("dip.hsi"), small.join("dip.jsonl"));
        ok(&[
            "inpaint", "--algo", "lrs-pnp-dip", "--in", s(&q.y), "--mask", s(&q.mask), "--config", s(&q.config),
            "--out", s(&xd), "--trace", s(&traced),
        ]);

        let files = [p.gt, p.y, p.mask, dict, x, trace, q.gt, q.y, q.mask, xd, traced];
        runs.push(files.iter().map(|f| (file_name(f), fs::read(f).unwrap())).collect());
    }
    let differing: Vec<&str> = runs[0].iter().zip(&runs[1]).filter(|(a, b)| a != b).map(|(a, _)| a.0.as_str()).collect();
    let bytes: usize = runs[0].iter().map(|(_, b)| b.len()).sum();
    verdict(
        differing.is_empty() && runs[0].iter().all(|(_, b)| !b.is_empty()),
        if differing.is_empty() {
            format!("{} files ({bytes} bytes) identical across two full CLI pipelines", runs[0].len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn file_name(p: &Path) -> String {
    p.file_name().unwrap().to_string_lossy().into_owned()
}

fn variance_reporting() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let p = small_problem(dir.path(), 0);
    let out = dir.path().join("x.hsi");
    let mut pass = true;
    let mut parts = Vec::new();
    for algo in ["lrs-pnp-dip", "dip-only", "lrs-pnp"] {
        let v = json(&ok(&[
            "inpaint", "--algo", algo, "--in", s(&p.y), "--mask", s(&p.mask), "--config", s(&p.config), "--gt", s(&p.gt),
            "--runs", "20", "--out", s(&out),
        ]));
        let get = |k: &str, f: &str| v[k][f].as_f64().unwrap_or(f64::NAN);
        let (mean, std, ssim_std) = (get("mpsnr", "mean"), get("mpsnr", "std"), get("mssim", "std"));
        let stochastic = v["stochastic"].as_bool() == Some(true);
        let shape = v["runs"] == 20 && v["per_run"].as_array().map(Vec::len) == Some(20) && mean.is_finite();
        pass &= shape
            && if algo == "lrs-pnp" {
                !stochastic && std == 0.0 && ssim_std == 0.0
            } else {
                stochastic && std > 0.0 && ssim_std > 0.0
            };
        parts.push(format!("{algo} {mean:.2} ± {std:.3} dB"));
    }
    verdict(pass, format!("--runs 20: {}", parts.join("; ")))
}

// ---------------------------------------------------------------------------
// 9

fn brute_psnr(a: &Cube, b: &Cube, peak: f64) -> f64 {
    let mut total = 0.0;
    for band in 0..a.bands() {
        let mut mse = 0.0;
        for r in 0..a.rows() {
            for c in 0..a.cols() {
                mse += (a.get(r, c, band) - b.get(r, c, band)).powi(2);
            }
        }
        mse /= (a.rows() * a.cols()) as f64;
        total += if mse == 0.0 { 100.0 } else { (10.0 * (peak * peak / mse).log10()).min(100.0) };
    }
    total / a.bands() as f64
}

fn brute_ssim(a: &Cube, b: &Cube, peak: f64) -> f64 {
    let w = 11;
    let mut g = [[0.0; 11]; 11];
    let mut norm = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            norm += *v;
        }
    }
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let mut total = 0.0;
    for band in 0..a.bands() {
        let (mut acc, mut count) = (0.0, 0.0);
        for r in 0..=a.rows() - w {
            for c in 0..=a.cols() - w {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (i, row) in g.iter().enumerate() {
                    for (j, &gv) in row.iter().enumerate() {
                        let k = gv / norm;
                        let (x, y) = (a.get(r + i, c + j, band), b.get(r + i, c + j, band));
                        ma += k * x;
                        mb += k * y;
                        saa += k * x * x;
                        sbb += k * y * y;
                        sab += k * x * y;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
        total += acc / count;
    }
    total / a.bands() as f64
}

fn metrics_conformance() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut worst_psnr, mut worst_ssim) = (0.0f64, 0.0f64);
    let mut exact = true;
    for _ in 0..20 {
        let dims = Dims::new(rng.random_range(11..=20), rng.random_range(11..=20), rng.random_range(1..=4));
        let peak = if rng.random_bool(0.5) { 1.0 } else { 2.0 };
        let a = Cube::from_fn(dims, |_, _, _| rng.random_range(0.0..peak));
        let sigma = rng.random_range(0.005..0.3) * peak;
        let b = a.map(|v| v + sigma * rng.random_range(-1.0..1.0));
        worst_psnr = worst_psnr.max((mpsnr(&a, &b, peak).unwrap() - brute_psnr(&a, &b, peak)).abs());
        worst_ssim = worst_ssim.max((mssim(&a, &b, peak).unwrap() - brute_ssim(&a, &b, peak)).abs());
        let same = a.clone();
        exact &= mpsnr(&a, &same, peak).unwrap() == 100.0 && mssim(&a, &same, peak).unwrap() == 1.0;
    }
    verdict(
        worst_psnr <= 1e-6 && worst_ssim <= 1e-6 && exact,
        format!(
            "20 pairs: max |dMPSNR| {worst_psnr:.2e}, max |dMSSIM| {worst_ssim:.2e} (limit 1e-6); identical inputs exact 100/1.0: {exact}"
        ),
    )
}
