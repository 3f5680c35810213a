//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All algorithms are written against [`Real`], which is implemented for
//! `f32` and `f64`. The dense factorizations that the crate does not author
//! itself (thin SVD, minimum-norm least squares) are routed through
//! `nalgebra` by the per-type implementations below.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use nalgebra::{DMatrix, DVector, SVD};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// A thin singular value decomposition `a = u * diag(s) * vt`, singular values
/// sorted in non-increasing order.
#[derive(Debug, Clone)]
pub struct ThinSvd<T> {
    pub u: Array2<T>,
    pub s: Array1<T>,
    pub vt: Array2<T>,
}

/// Floating-point scalar usable throughout the crate.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + ScalarOperand
    + LinalgScalar
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Thin SVD; `None` if the iteration failed to converge.
    fn thin_svd(a: ArrayView2<'_, Self>) -> Option<ThinSvd<Self>>;

    /// Minimum-norm least-squares solution of `a x = b`.
    fn lstsq(a: ArrayView2<'_, Self>, b: ArrayView1<'_, Self>) -> Option<Array1<Self>>;

    /// Converts an `f64` literal. Every `f64` is representable (possibly
    /// rounded) in the implementing types, so this never fails.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal is representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `n` as a scalar.
    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count is representable")
    }
}

fn to_nalgebra<T: nalgebra::Scalar + Copy>(a: ArrayView2<'_, T>) -> DMatrix<T> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

fn from_nalgebra<T: nalgebra::Scalar + Copy>(m: &DMatrix<T>) -> Array2<T> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            fn thin_svd(a: ArrayView2<'_, Self>) -> Option<ThinSvd<Self>> {
                let m = to_nalgebra(a);
                let svd = SVD::try_new(m, true, true, <$t>::EPSILON, 0)?;
                let u = svd.u.as_ref()?;
                let vt = svd.v_t.as_ref()?;
                let k = svd.singular_values.len();
                let mut order: Vec<usize> = (0..k).collect();
                order.sort_by(|&i, &j| {
                    svd.singular_values[j]
                        .partial_cmp(&svd.singular_values[i])
                        .unwrap_or(std::cmp::Ordering::Equal)
                });
                let s = Array1::from_iter(order.iter().map(|&i| svd.singular_values[i]));
                let u_full = from_nalgebra(u);
                let vt_full = from_nalgebra(vt);
                let u = Array2::from_shape_fn((u_full.nrows(), k), |(i, j)| u_full[[i, order[j]]]);
                let vt = Array2::from_shape_fn((k, vt_full.ncols()), |(i, j)| vt_full[[order[i], j]]);
                Some(ThinSvd { u, s, vt })
            }

            fn lstsq(a: ArrayView2<'_, Self>, b: ArrayView1<'_, Self>) -> Option<Array1<Self>> {
                let m = to_nalgebra(a);
                let rhs = DVector::from_iterator(b.len(), b.iter().copied());
                let svd = SVD::try_new(m, true, true, <$t>::EPSILON, 0)?;
                let smax = svd.singular_values.iter().copied().fold(0.0, <$t>::max);
                let tol = smax * <$t>::EPSILON * (a.nrows().max(a.ncols()) as $t);
                let x = svd.solve(&rhs, tol).ok()?;
                Some(Array1::from_iter(x.iter().copied()))
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);
