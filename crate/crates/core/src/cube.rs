//! Cube, mask and patch algebra.
//!
//! Cubes are stored band-sequential: element `(band, row, col)` lives at
//! flat index `band * rows * cols + row * cols + col`. This is the ordering of
//! [`HsiCube::vectorize`] and of the on-disk container payload.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, ArrayViewMut3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::scalar::Real;

/// Cube extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
}

impl Dims {
    pub fn new(rows: usize, cols: usize, bands: usize) -> Self {
        Self { rows, cols, bands }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols * self.bands
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    fn shape(&self) -> (usize, usize, usize) {
        (self.bands, self.rows, self.cols)
    }

    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.bands == 0 {
            return Err(invalid(format!("cube dims must be positive, got {self:?}")));
        }
        Ok(())
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.rows, self.cols, self.bands)
    }
}

/// A dense hyperspectral cube (rows × cols × bands).
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube<T> {
    data: Array3<T>,
}

impl<T: Real> HsiCube<T> {
    /// Builds a cube from band-sequential data.
    pub fn new(dims: Dims, data: Vec<T>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(mismatch(format!(
                "data length {} does not match {dims} = {}",
                data.len(),
                dims.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("cube values must be finite"));
        }
        let data = Array3::from_shape_vec(dims.shape(), data).expect("length checked");
        Ok(Self { data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self { data: Array3::zeros(dims.shape()) }
    }

    pub fn from_elem(dims: Dims, v: T) -> Self {
        Self { data: Array3::from_elem(dims.shape(), v) }
    }

    /// Wraps an array shaped `(bands, rows, cols)`.
    pub fn from_array(data: Array3<T>) -> Self {
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().into_owned()
        };
        Self { data }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        Self {
            data: Array3::from_shape_fn(dims.shape(), |(b, r, c)| f(r, c, b)),
        }
    }

    pub fn dims(&self) -> Dims {
        let (bands, rows, cols) = self.data.dim();
        Dims { rows, cols, bands }
    }

    pub fn rows(&self) -> usize {
        self.data.dim().1
    }

    pub fn cols(&self) -> usize {
        self.data.dim().2
    }

    pub fn bands(&self) -> usize {
        self.data.dim().0
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, row: usize, col: usize, band: usize) -> T {
        self.data[[band, row, col]]
    }

    pub fn set(&mut self, row: usize, col: usize, band: usize, v: T) {
        self.data[[band, row, col]] = v;
    }

    /// `(bands, rows, cols)` view.
    pub fn array(&self) -> ArrayView3<'_, T> {
        self.data.view()
    }

    pub fn array_mut(&mut self) -> ArrayViewMut3<'_, T> {
        self.data.view_mut()
    }

    pub fn into_array(self) -> Array3<T> {
        self.data
    }

    /// Band-sequential flat slice.
    pub fn as_slice(&self) -> &[T] {
        self.data.as_slice().expect("standard layout")
    }

    pub fn as_slice_mut(&mut self) -> &mut [T] {
        self.data.as_slice_mut().expect("standard layout")
    }

    /// Spatial plane of one band, `rows × cols`.
    pub fn band(&self, b: usize) -> ArrayView2<'_, T> {
        self.data.index_axis(Axis(0), b)
    }

    pub fn vectorize(&self) -> Vec<T> {
        self.as_slice().to_vec()
    }

    pub fn devectorize(v: &[T], dims: Dims) -> Result<Self> {
        Self::new(dims, v.to_vec())
    }

    /// The `(rows·cols) × bands` unfolding: column `b` is band `b`'s
    /// row-major plane.
    pub fn matricize(&self) -> Array2<T> {
        let d = self.dims();
        let flat = self
            .data
            .view()
            .into_shape_with_order((d.bands, d.pixels()))
            .expect("standard layout");
        flat.t().to_owned()
    }

    pub fn dematricize(mat: ArrayView2<'_, T>, dims: Dims) -> Result<Self> {
        dims.validate()?;
        if mat.dim() != (dims.pixels(), dims.bands) {
            return Err(mismatch(format!(
                "matrix {:?} does not unfold a {dims} cube",
                mat.dim()
            )));
        }
        let data = mat
            .t()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(dims.shape())
            .expect("shape checked");
        Ok(Self { data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl FnMut(T) -> T) -> Self {
        Self { data: self.data.mapv(f) }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_congruent(other.dims())?;
        let mut out = self.data.clone();
        Zip::from(&mut out).and(&other.data).for_each(|a, &b| *a = f(*a, b));
        Ok(Self { data: out })
    }

    /// Element-wise conversion to another scalar type (rounds to nearest).
    pub fn cast<U: Real>(&self) -> HsiCube<U> {
        HsiCube {
            data: self.data.mapv(|v| U::from(v).expect("finite value converts")),
        }
    }

    pub fn norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> T {
        self.data.iter().zip(other.data.iter()).map(|(&a, &b)| a * b).sum()
    }

    pub fn check_congruent(&self, dims: Dims) -> Result<()> {
        if self.dims() != dims {
            return Err(mismatch(format!("cube {} vs {dims}", self.dims())));
        }
        Ok(())
    }
}

/// Binary observation mask (1 = observed, 0 = missing), congruent to a cube.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskCube {
    data: Array3<u8>,
    replicated_spatial: bool,
}

impl MaskCube {
    /// Builds a mask from band-sequential 0/1 data. `replicated_spatial` is
    /// detected from the data.
    pub fn new(dims: Dims, data: Vec<u8>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(mismatch(format!(
                "mask length {} does not match {dims}",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidMaskValue);
        }
        let data = Array3::from_shape_vec(dims.shape(), data).expect("length checked");
        let replicated_spatial = Self::detect_replicated(&data);
        Ok(Self { data, replicated_spatial })
    }

    pub fn ones(dims: Dims) -> Self {
        Self { data: Array3::from_elem(dims.shape(), 1), replicated_spatial: true }
    }

    pub fn zeros(dims: Dims) -> Self {
        Self { data: Array3::zeros(dims.shape()), replicated_spatial: true }
    }

    /// Replicates a `rows × cols` pixel mask across all bands.
    pub fn from_pixels(pixels: ArrayView2<'_, u8>, bands: usize) -> Result<Self> {
        let (rows, cols) = pixels.dim();
        let dims = Dims::new(rows, cols, bands);
        dims.validate()?;
        if pixels.iter().any(|&v| v > 1) {
            return Err(Error::InvalidMaskValue);
        }
        let data = Array3::from_shape_fn(dims.shape(), |(_, r, c)| pixels[[r, c]]);
        Ok(Self { data, replicated_spatial: true })
    }

    fn detect_replicated(data: &Array3<u8>) -> bool {
        let first = data.index_axis(Axis(0), 0);
        data.outer_iter().all(|band| band == first)
    }

    pub fn dims(&self) -> Dims {
        let (bands, rows, cols) = self.data.dim();
        Dims { rows, cols, bands }
    }

    pub fn replicated_spatial(&self) -> bool {
        self.replicated_spatial
    }

    pub fn is_observed(&self, row: usize, col: usize, band: usize) -> bool {
        self.data[[band, row, col]] == 1
    }

    pub fn set(&mut self, row: usize, col: usize, band: usize, observed: bool) {
        self.data[[band, row, col]] = u8::from(observed);
        self.replicated_spatial = Self::detect_replicated(&self.data);
    }

    pub fn as_slice(&self) -> &[u8] {
        self.data.as_slice().expect("standard layout")
    }

    pub fn array(&self) -> ArrayView3<'_, u8> {
        self.data.view()
    }

    pub fn observed_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// The mask as a 0/1 real cube.
    pub fn to_real<T: Real>(&self) -> HsiCube<T> {
        HsiCube::from_array(self.data.mapv(|v| if v == 1 { T::one() } else { T::zero() }))
    }
}

/// `M{y}`: keeps observed entries, zeroes missing ones.
pub fn apply_mask<T: Real>(y: &HsiCube<T>, m: &MaskCube) -> Result<HsiCube<T>> {
    y.check_congruent(m.dims())?;
    let mut out = y.clone();
    Zip::from(&mut out.data).and(&m.data).for_each(|v, &keep| {
        if keep == 0 {
            *v = T::zero();
        }
    });
    Ok(out)
}

/// How a cube is cut into patches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PatchScheme {
    /// One patch per band: the band's whole `rows × cols` plane.
    #[default]
    BandSlice,
    /// Square `patch_edge × patch_edge` windows in every band; the last
    /// window on each axis is clamped to the border.
    Spatial { patch_edge: usize, stride: usize },
}

/// Window positions of a scheme on concrete cube dims, plus coverage.
#[derive(Debug, Clone)]
pub struct PatchLayout {
    dims: Dims,
    patch_rows: usize,
    patch_cols: usize,
    /// `(band, row0, col0)` of each patch, in patch order.
    origins: Vec<(usize, usize, usize)>,
    coverage: Array3<u32>,
}

fn window_starts(len: usize, edge: usize, stride: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut s = 0;
    while s + edge < len {
        starts.push(s);
        s += stride;
    }
    starts.push(len - edge);
    starts.dedup();
    starts
}

impl PatchLayout {
    pub fn new(scheme: PatchScheme, dims: Dims) -> Result<Self> {
        dims.validate()?;
        let (patch_rows, patch_cols, origins) = match scheme {
            PatchScheme::BandSlice => (
                dims.rows,
                dims.cols,
                (0..dims.bands).map(|b| (b, 0, 0)).collect::<Vec<_>>(),
            ),
            PatchScheme::Spatial { patch_edge, stride } => {
                if patch_edge == 0 || stride == 0 {
                    return Err(invalid("patch_edge and stride must be positive"));
                }
                if stride > patch_edge {
                    return Err(invalid(format!("stride {stride} exceeds patch_edge {patch_edge}; windows would leave gaps")));
                }
                if patch_edge > dims.rows || patch_edge > dims.cols {
                    return Err(Error::PatchTooLarge {
                        edge: patch_edge,
                        rows: dims.rows,
                        cols: dims.cols,
                    });
                }
                let rs = window_starts(dims.rows, patch_edge, stride);
                let cs = window_starts(dims.cols, patch_edge, stride);
                let mut origins = Vec::with_capacity(dims.bands * rs.len() * cs.len());
                for b in 0..dims.bands {
                    for &r in &rs {
                        for &c in &cs {
                            origins.push((b, r, c));
                        }
                    }
                }
                (patch_edge, patch_edge, origins)
            }
        };
        let mut coverage = Array3::<u32>::zeros(dims.shape());
        for &(b, r0, c0) in &origins {
            coverage
                .slice_mut(ndarray::s![b, r0..r0 + patch_rows, c0..c0 + patch_cols])
                .mapv_inplace(|v| v + 1);
        }
        Ok(Self { dims, patch_rows, patch_cols, origins, coverage })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_rows * self.patch_cols
    }

    /// `(rows, cols)` of each patch.
    pub fn patch_shape(&self) -> (usize, usize) {
        (self.patch_rows, self.patch_cols)
    }

    pub fn count(&self) -> usize {
        self.origins.len()
    }

    pub fn origins(&self) -> &[(usize, usize, usize)] {
        &self.origins
    }

    /// Diagonal of `Σ P_iᵀ P_i`.
    pub fn coverage(&self) -> &Array3<u32> {
        &self.coverage
    }

    /// Column `i` of the result is `P_i(x)`.
    pub fn extract<T: Real>(&self, x: &HsiCube<T>) -> Result<PatchSet<T>> {
        x.check_congruent(self.dims)?;
        let mut data = Array2::<T>::zeros((self.patch_dim(), self.count()));
        for (i, &(b, r0, c0)) in self.origins.iter().enumerate() {
            let window = x.data.slice(ndarray::s![b, r0..r0 + self.patch_rows, c0..c0 + self.patch_cols]);
            for (dst, &src) in data.column_mut(i).iter_mut().zip(window.iter()) {
                *dst = src;
            }
        }
        Ok(self.wrap(data))
    }

    /// Wraps a patch-shaped matrix (e.g. `Φα` or a multiplier) as a set.
    pub fn wrap<T: Real>(&self, data: Array2<T>) -> PatchSet<T> {
        PatchSet {
            patch_shape: self.patch_shape(),
            data,
            coverage: self.coverage.clone(),
        }
    }

    /// `Σ_i P_iᵀ(column_i)`: overlap-add without normalization, in patch
    /// order.
    pub fn scatter<T: Real>(&self, patches: ArrayView2<'_, T>) -> Result<HsiCube<T>> {
        if patches.dim() != (self.patch_dim(), self.count()) {
            return Err(mismatch(format!(
                "patch matrix {:?} does not match layout ({}, {})",
                patches.dim(),
                self.patch_dim(),
                self.count()
            )));
        }
        let mut out = HsiCube::<T>::zeros(self.dims);
        for (i, &(b, r0, c0)) in self.origins.iter().enumerate() {
            let mut window =
                out.data.slice_mut(ndarray::s![b, r0..r0 + self.patch_rows, c0..c0 + self.patch_cols]);
            for (dst, &src) in window.iter_mut().zip(patches.column(i).iter()) {
                *dst += src;
            }
        }
        Ok(out)
    }
}

/// Extracted patches, one per column.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet<T> {
    patch_shape: (usize, usize),
    data: Array2<T>,
    coverage: Array3<u32>,
}

impl<T: Real> PatchSet<T> {
    /// A set not tied to any cube (coverage is empty). Used for synthetic
    /// coding problems where patches are plain vectors.
    pub fn from_matrix(data: Array2<T>, patch_shape: (usize, usize)) -> Result<Self> {
        if patch_shape.0 * patch_shape.1 != data.nrows() {
            return Err(mismatch(format!(
                "patch shape {patch_shape:?} does not match patch_dim {}",
                data.nrows()
            )));
        }
        Ok(Self { patch_shape, data, coverage: Array3::zeros((0, 0, 0)) })
    }

    pub fn patch_dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn count(&self) -> usize {
        self.data.ncols()
    }

    pub fn patch_shape(&self) -> (usize, usize) {
        self.patch_shape
    }

    pub fn data(&self) -> &Array2<T> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<T> {
        &mut self.data
    }

    pub fn into_data(self) -> Array2<T> {
        self.data
    }

    pub fn coverage(&self) -> &Array3<u32> {
        &self.coverage
    }

    pub fn with_data(&self, data: Array2<T>) -> Result<Self> {
        if data.dim() != self.data.dim() {
            return Err(mismatch("replacement patch data has a different shape"));
        }
        Ok(Self { patch_shape: self.patch_shape, data, coverage: self.coverage.clone() })
    }
}

pub fn extract_patches<T: Real>(x: &HsiCube<T>, scheme: PatchScheme) -> Result<PatchSet<T>> {
    PatchLayout::new(scheme, x.dims())?.extract(x)
}

pub fn scatter_patches<T: Real>(p: &PatchSet<T>, scheme: PatchScheme, dims: Dims) -> Result<HsiCube<T>> {
    PatchLayout::new(scheme, dims)?.scatter(p.data.view())
}
