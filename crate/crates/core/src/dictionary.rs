//! Sparse-coding dictionaries: analytic overcomplete DCT frames and masked
//! K-SVD learned from the degraded cube itself.

use std::sync::OnceLock;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::{HsiCube, PatchSet};
use crate::degrade::stream_rng;
use crate::error::{invalid, mismatch, Error, Result};
use crate::scalar::Real;

/// Relative inflation applied to the power-iteration estimate so the cached
/// spectral norm bounds the true one from above.
const NORM_INFLATION: f64 = 1e-9;

/// Unit-norm atoms stored column-wise (`patch_dim × atoms`).
#[derive(Debug, Clone)]
pub struct Dictionary<T> {
    data: Array2<T>,
    patch_shape: (usize, usize),
    spectral_norm: T,
    gram: OnceLock<Array2<T>>,
}

impl<T: Real> Dictionary<T> {
    /// Normalizes every column to unit length and caches the spectral norm.
    pub fn new(mut data: Array2<T>, patch_shape: (usize, usize)) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(invalid("dictionary must have at least one row and one atom"));
        }
        if patch_shape.0 * patch_shape.1 != data.nrows() {
            return Err(mismatch(format!(
                "patch shape {patch_shape:?} does not match patch_dim {}",
                data.nrows()
            )));
        }
        for mut col in data.columns_mut() {
            let n = col.iter().map(|&v| v * v).sum::<T>().sqrt();
            if !(n > T::zero()) || !n.is_finite() {
                return Err(invalid("dictionary atoms must be finite and nonzero"));
            }
            col.mapv_inplace(|v| v / n);
        }
        let spectral_norm = power_norm(data.view()) * T::lit(1.0 + NORM_INFLATION);
        Ok(Self { data, patch_shape, spectral_norm, gram: OnceLock::new() })
    }

    pub fn patch_dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn atoms(&self) -> usize {
        self.data.ncols()
    }

    pub fn patch_shape(&self) -> (usize, usize) {
        self.patch_shape
    }

    pub fn data(&self) -> &Array2<T> {
        &self.data
    }

    /// Largest singular value (upper estimate).
    pub fn spectral_norm(&self) -> T {
        self.spectral_norm
    }

    /// `ΦᵀΦ`, computed on first use.
    pub fn gram(&self) -> &Array2<T> {
        self.gram.get_or_init(|| self.data.t().dot(&self.data))
    }

    /// Same atoms, reinterpreted for a different patch geometry of equal size.
    pub fn with_patch_shape(mut self, patch_shape: (usize, usize)) -> Result<Self> {
        if patch_shape.0 * patch_shape.1 != self.patch_dim() {
            return Err(mismatch(format!(
                "patch shape {patch_shape:?} does not match patch_dim {}",
                self.patch_dim()
            )));
        }
        self.patch_shape = patch_shape;
        Ok(self)
    }

    /// The container representation: a `patch_dim × atoms × 1` cube.
    pub fn to_cube(&self) -> HsiCube<T> {
        HsiCube::from_array(self.data.clone().insert_axis(Axis(0)))
    }

    /// Inverse of [`Dictionary::to_cube`]; columns are renormalized since the
    /// container stores 32-bit values.
    pub fn from_cube(cube: &HsiCube<T>, patch_shape: (usize, usize)) -> Result<Self> {
        if cube.bands() != 1 {
            return Err(mismatch(format!("dictionary cube must have one band, got {}", cube.bands())));
        }
        Self::new(cube.band(0).to_owned(), patch_shape)
    }
}

/// Largest singular value by power iteration on the smaller Gram matrix.
pub fn power_norm<T: Real>(a: ArrayView2<'_, T>) -> T {
    let (m, n) = a.dim();
    let small = m.min(n);
    let mut v = Array1::from_shape_fn(small, |i| T::one() + T::lit(0.01 * (i as f64 + 1.0).sin()));
    let norm = |v: &Array1<T>| v.iter().map(|&x| x * x).sum::<T>().sqrt();
    let nv = norm(&v);
    v.mapv_inplace(|x| x / nv);
    let mut lambda = T::zero();
    for _ in 0..20_000 {
        let w = if m <= n { a.dot(&a.t().dot(&v)) } else { a.t().dot(&a.dot(&v)) };
        let next = v.dot(&w);
        let nw = norm(&w);
        if nw == T::zero() {
            return T::zero();
        }
        v = w.mapv(|x| x / nw);
        let done = (next - lambda).abs() <= T::lit(1e-14) * next.abs();
        lambda = next;
        if done {
            break;
        }
    }
    lambda.max(T::zero()).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticKind {
    /// 1-D overcomplete DCT-II frame over the flattened patch.
    OvercompleteDct,
    /// Separable 2-D overcomplete DCT over a `rows × cols` patch.
    OvercompleteDct2d { rows: usize, cols: usize },
}

/// `n × k` DCT-II frame with frequencies `j / k` (unit-norm columns).
fn dct_frame(n: usize, k: usize) -> Array2<f64> {
    let mut d = Array2::from_shape_fn((n, k), |(i, j)| {
        (std::f64::consts::PI * (i as f64 + 0.5) * j as f64 / k as f64).cos()
    });
    for mut col in d.columns_mut() {
        let norm = col.dot(&col).sqrt();
        col.mapv_inplace(|v| v / norm);
    }
    d
}

fn dct_2d_atoms(rows: usize, cols: usize, atoms: usize) -> Array2<f64> {
    let scale = (atoms as f64 / (rows * cols) as f64).sqrt().max(1.0);
    let ka = ((rows as f64 * scale).ceil() as usize).max(rows);
    let kb = ((cols as f64 * scale).ceil() as usize).max(cols);
    let fr = dct_frame(rows, ka);
    let fc = dct_frame(cols, kb);
    let mut pairs: Vec<(usize, usize)> = (0..ka).flat_map(|p| (0..kb).map(move |q| (p, q))).collect();
    pairs.sort_by(|a, b| {
        let fa = a.0 as f64 / ka as f64 + a.1 as f64 / kb as f64;
        let fb = b.0 as f64 / ka as f64 + b.1 as f64 / kb as f64;
        fa.partial_cmp(&fb).unwrap()
    });
    let mut out = Array2::zeros((rows * cols, atoms.min(pairs.len())));
    for (j, &(p, q)) in pairs.iter().take(out.ncols()).enumerate() {
        for r in 0..rows {
            for c in 0..cols {
                out[[r * cols + c, j]] = fr[[r, p]] * fc[[c, q]];
            }
        }
    }
    out
}

/// An analytic overcomplete DCT dictionary.
pub fn analytic_dictionary<T: Real>(kind: AnalyticKind, patch_dim: usize, atoms: usize) -> Result<Dictionary<T>> {
    if patch_dim == 0 || atoms < patch_dim {
        return Err(invalid(format!("need 0 < patch_dim <= atoms, got {patch_dim} and {atoms}")));
    }
    let (data, shape) = match kind {
        AnalyticKind::OvercompleteDct => (dct_frame(patch_dim, atoms), (patch_dim, 1)),
        AnalyticKind::OvercompleteDct2d { rows, cols } => {
            if rows * cols != patch_dim {
                return Err(mismatch(format!("{rows}x{cols} patch does not have dim {patch_dim}")));
            }
            (dct_2d_atoms(rows, cols, atoms), (rows, cols))
        }
    };
    Dictionary::new(data.mapv(T::lit), shape)
}

/// A sparse code as `(atom, coefficient)` pairs.
pub type SparseVec<T> = Vec<(usize, T)>;

/// Orthogonal matching pursuit restricted to the entries where `weights` is
/// nonzero (all entries when `None`). Stops at `sparsity` atoms or when the
/// residual falls below `tol · ‖p‖`.
pub fn omp<T: Real>(
    phi: ArrayView2<'_, T>,
    p: ArrayView1<'_, T>,
    weights: Option<ArrayView1<'_, T>>,
    sparsity: usize,
    tol: T,
) -> SparseVec<T> {
    let observed: Vec<usize> = match weights {
        Some(w) => (0..p.len()).filter(|&i| w[i] > T::zero()).collect(),
        None => (0..p.len()).collect(),
    };
    if observed.is_empty() || sparsity == 0 {
        return Vec::new();
    }
    let atoms = phi.ncols();
    let mut norms = vec![T::zero(); atoms];
    for &i in &observed {
        for (n, &v) in norms.iter_mut().zip(phi.row(i).iter()) {
            *n += v * v;
        }
    }
    norms.iter_mut().for_each(|n| *n = n.sqrt());
    let target: Array1<T> = observed.iter().map(|&i| p[i]).collect();
    let pnorm = target.dot(&target).sqrt();
    if pnorm == T::zero() {
        return Vec::new();
    }
    let mut residual = target.clone();
    let mut support: Vec<usize> = Vec::new();
    let mut coeffs = Array1::<T>::zeros(0);
    let max_atoms = sparsity.min(observed.len());
    while support.len() < max_atoms && residual.dot(&residual).sqrt() > tol * pnorm {
        let mut corr = vec![T::zero(); atoms];
        for (k, &i) in observed.iter().enumerate() {
            let r = residual[k];
            for (c, &v) in corr.iter_mut().zip(phi.row(i).iter()) {
                *c += v * r;
            }
        }
        let best = (0..atoms)
            .filter(|j| !support.contains(j) && norms[*j] > T::lit(1e-12))
            .map(|j| (j, (corr[j] / norms[j]).abs()))
            .fold(None, |acc: Option<(usize, T)>, cur| match acc {
                Some(a) if a.1 >= cur.1 => Some(a),
                _ => Some(cur),
            });
        let Some((j, score)) = best else { break };
        if score <= T::zero() {
            break;
        }
        support.push(j);
        let sub = Array2::from_shape_fn((observed.len(), support.len()), |(r, c)| phi[[observed[r], support[c]]]);
        let Some(beta) = T::lstsq(sub.view(), target.view()) else { break };
        residual = &target - &sub.dot(&beta);
        coeffs = beta;
    }
    support.into_iter().zip(coeffs).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KsvdParams {
    pub atoms: usize,
    pub sparsity: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for KsvdParams {
    fn default() -> Self {
        Self { atoms: 2000, sparsity: 8, iters: 20, seed: 0 }
    }
}

/// Minimum fraction of observed entries for a patch to be used in training.
pub const MIN_VALID_FRACTION: f64 = 0.5;
const ALS_ROUNDS: usize = 3;

/// Patch with missing entries replaced by the mean of its observed entries.
fn mean_filled<T: Real>(p: ArrayView1<'_, T>, w: ArrayView1<'_, T>) -> Array1<T> {
    let (sum, cnt) = p
        .iter()
        .zip(w.iter())
        .filter(|(_, &wi)| wi > T::zero())
        .fold((T::zero(), T::zero()), |(s, c), (&v, _)| (s + v, c + T::one()));
    let mean = if cnt > T::zero() { sum / cnt } else { T::zero() };
    p.iter().zip(w.iter()).map(|(&v, &wi)| if wi > T::zero() { v } else { mean }).collect()
}

fn weighted_sq_norm<T: Real>(r: ArrayView2<'_, T>) -> T {
    r.iter().map(|&v| v * v).sum()
}

/// Masked K-SVD. `valid` holds the 0/1 observation weights of each patch
/// entry. Returns the dictionary and the masked training error after each
/// sweep, which is non-increasing.
pub fn learn_ksvd_with_history<T: Real>(
    patches: &PatchSet<T>,
    valid: &PatchSet<T>,
    params: &KsvdParams,
) -> Result<(Dictionary<T>, Vec<T>)> {
    if patches.data().dim() != valid.data().dim() {
        return Err(mismatch("patch and validity sets differ in shape"));
    }
    if params.atoms == 0 || params.sparsity == 0 {
        return Err(invalid("atoms and sparsity must be positive"));
    }
    let pd = patches.patch_dim();
    let train: Vec<usize> = (0..patches.count())
        .filter(|&i| {
            let frac = valid.data().column(i).iter().filter(|&&w| w > T::zero()).count() as f64 / pd as f64;
            frac >= MIN_VALID_FRACTION
        })
        .collect();
    if train.is_empty() {
        return Err(Error::InsufficientObservedData);
    }
    let n = train.len();
    let weights = Array2::from_shape_fn((pd, n), |(r, c)| {
        if valid.data()[[r, train[c]]] > T::zero() { T::one() } else { T::zero() }
    });
    let data = Array2::from_shape_fn((pd, n), |(r, c)| patches.data()[[r, train[c]]] * weights[[r, c]]);

    // initialization: shuffled training patches, then low-frequency DCT atoms
    let mut rng = stream_rng(params.seed, 11);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut atoms: Vec<Array1<T>> = Vec::with_capacity(params.atoms);
    for &i in &order {
        if atoms.len() == params.atoms {
            break;
        }
        let filled = mean_filled(data.column(i), weights.column(i));
        let norm = filled.dot(&filled).sqrt();
        if norm > T::lit(1e-12) {
            atoms.push(filled / norm);
        }
    }
    if atoms.len() < params.atoms {
        let (rows, cols) = patches.patch_shape();
        let extra = dct_2d_atoms(rows, cols, params.atoms);
        let mut k = 0;
        while atoms.len() < params.atoms {
            let col = if k < extra.ncols() {
                extra.column(k).mapv(T::lit)
            } else {
                // more atoms than the 2-D frame provides: random unit atoms
                let v = Array1::from_shape_fn(pd, |_| T::lit(rng.random::<f64>() - 0.5));
                let nv = v.dot(&v).sqrt();
                v / nv
            };
            atoms.push(col);
            k += 1;
        }
    }
    let mut phi = Array2::<T>::zeros((pd, params.atoms));
    for (j, a) in atoms.iter().enumerate() {
        phi.column_mut(j).assign(a);
    }

    let mut codes = Array2::<T>::zeros((params.atoms, n));
    let mut history = Vec::with_capacity(params.iters);
    let tol = T::lit(1e-10);

    for _sweep in 0..params.iters {
        // sparse coding; keep the previous code whenever it is better
        let old_residual = &data - &(&phi.dot(&codes) * &weights);
        let fresh: Vec<(SparseVec<T>, T)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let code = omp(phi.view(), data.column(i), Some(weights.column(i)), params.sparsity, tol);
                let mut rec = Array1::<T>::zeros(pd);
                for &(j, c) in &code {
                    rec.scaled_add(c, &phi.column(j));
                }
                let err = data
                    .column(i)
                    .iter()
                    .zip(rec.iter())
                    .zip(weights.column(i).iter())
                    .map(|((&p, &r), &w)| {
                        let d = w * (p - r);
                        d * d
                    })
                    .sum::<T>();
                (code, err)
            })
            .collect();
        for (i, (code, err)) in fresh.into_iter().enumerate() {
            let old_err = old_residual.column(i).iter().map(|&v| v * v).sum::<T>();
            if err < old_err {
                codes.column_mut(i).fill(T::zero());
                for (j, c) in code {
                    codes[[j, i]] = c;
                }
            }
        }

        let mut residual = &data - &(&phi.dot(&codes) * &weights);

        // atom updates by masked rank-1 alternating least squares
        for j in 0..params.atoms {
            let users: Vec<usize> = (0..n).filter(|&i| codes[[j, i]] != T::zero()).collect();
            if users.is_empty() {
                continue;
            }
            let mut d = phi.column(j).to_owned();
            let mut g: Vec<T> = users.iter().map(|&i| codes[[j, i]]).collect();
            let mut e = Array2::<T>::zeros((pd, users.len()));
            for (k, &i) in users.iter().enumerate() {
                for r in 0..pd {
                    e[[r, k]] = residual[[r, i]] + weights[[r, i]] * d[r] * g[k];
                }
            }
            for _ in 0..ALS_ROUNDS {
                for (k, &i) in users.iter().enumerate() {
                    let (mut num, mut den) = (T::zero(), T::zero());
                    for r in 0..pd {
                        let w = weights[[r, i]];
                        num += w * d[r] * e[[r, k]];
                        den += w * d[r] * d[r];
                    }
                    if den > T::zero() {
                        g[k] = num / den;
                    }
                }
                for r in 0..pd {
                    let (mut num, mut den) = (T::zero(), T::zero());
                    for (k, &i) in users.iter().enumerate() {
                        let w = weights[[r, i]];
                        num += w * g[k] * e[[r, k]];
                        den += w * g[k] * g[k];
                    }
                    if den > T::zero() {
                        d[r] = num / den;
                    }
                }
            }
            let norm = d.dot(&d).sqrt();
            if !(norm > T::zero()) {
                continue;
            }
            d.mapv_inplace(|v| v / norm);
            g.iter_mut().for_each(|v| *v *= norm);
            for (k, &i) in users.iter().enumerate() {
                for r in 0..pd {
                    residual[[r, i]] = e[[r, k]] - weights[[r, i]] * d[r] * g[k];
                }
                codes[[j, i]] = g[k];
            }
            phi.column_mut(j).assign(&d);
        }

        // unused atoms take the worst-reconstructed patches
        let dead: Vec<usize> = (0..params.atoms).filter(|&j| codes.row(j).iter().all(|&c| c == T::zero())).collect();
        if !dead.is_empty() {
            let mut ranked: Vec<(usize, T, f64)> = (0..n)
                .map(|i| (i, residual.column(i).iter().map(|&v| v * v).sum::<T>(), rng.random::<f64>()))
                .collect();
            ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.2.partial_cmp(&b.2).unwrap()));
            for (&j, &(i, err, _)) in dead.iter().zip(ranked.iter()) {
                let scale = data.column(i).dot(&data.column(i));
                if err <= T::lit(1e-20) * scale.max(T::one()) {
                    break;
                }
                let filled = mean_filled(data.column(i), weights.column(i));
                let norm = filled.dot(&filled).sqrt();
                if norm > T::lit(1e-12) {
                    phi.column_mut(j).assign(&(filled / norm));
                }
            }
        }
        history.push(weighted_sq_norm(residual.view()));
    }

    Ok((Dictionary::new(phi, patches.patch_shape())?, history))
}

/// Masked K-SVD dictionary learned from the observed entries of `patches`.
pub fn learn_ksvd<T: Real>(patches: &PatchSet<T>, valid: &PatchSet<T>, params: &KsvdParams) -> Result<Dictionary<T>> {
    learn_ksvd_with_history(patches, valid, params).map(|(d, _)| d)
}
