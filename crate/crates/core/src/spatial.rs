//! Uniform tensor-product grids and the central finite-difference Laplacian.
//!
//! The 1D stencil matrix of each axis is diagonalised by closed-form cosine
//! (Neumann) or real Fourier (periodic) eigenvectors. The multi-dimensional
//! operator is the Kronecker sum of the axis matrices, so every axis can be
//! transformed independently, one line at a time.
//!
//! Two transform paths exist for every axis: dense matrix products with the
//! eigenvector matrix and its inverse, and a fast path that uses a DCT-I
//! (Neumann) or a real FFT (periodic). They compute the same coefficients and
//! are checked against each other in the tests.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustdct::{Dct1, DctPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid needs at least 3 points per axis, got {0}")]
    TooFewPoints(usize),
    #[error("dimension must be 1, 2 or 3, got {0}")]
    BadDimension(usize),
    #[error("per-axis arrays disagree in length")]
    AxisMismatch,
    #[error("{name} must be finite and strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("field has {got} values but the grid has {expected} nodes")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("field contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("eigen-decomposition check failed: {0}")]
    Reconstruction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Neumann,
    Periodic,
}

impl Boundary {
    pub fn as_str(&self) -> &'static str {
        match self {
            Boundary::Neumann => "neumann",
            Boundary::Periodic => "periodic",
        }
    }

    /// Number of nodes covering `length` at spacing `h`.
    ///
    /// Neumann grids include both endpoints, periodic grids only one.
    pub fn nodes_for_spacing(&self, length: f64, h: f64) -> usize {
        let cells = (length / h).round() as usize;
        match self {
            Boundary::Neumann => cells + 1,
            Boundary::Periodic => cells,
        }
    }

    pub fn spacing(&self, length: f64, n: usize) -> f64 {
        match self {
            Boundary::Neumann => length / (n - 1) as f64,
            Boundary::Periodic => length / n as f64,
        }
    }
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Boundary {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "neumann" => Ok(Boundary::Neumann),
            "periodic" => Ok(Boundary::Periodic),
            other => Err(format!("unknown boundary condition `{other}`")),
        }
    }
}

/// A uniform tensor grid on a box `origin + [0, length]` per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    n_axis: Vec<usize>,
    length_axis: Vec<f64>,
    origin_axis: Vec<f64>,
    h_axis: Vec<f64>,
    bc: Boundary,
}

impl GridSpec {
    pub fn new(
        n_axis: &[usize],
        length_axis: &[f64],
        origin_axis: &[f64],
        bc: Boundary,
    ) -> Result<Self, GridError> {
        let dim = n_axis.len();
        if !(1..=3).contains(&dim) {
            return Err(GridError::BadDimension(dim));
        }
        if length_axis.len() != dim || origin_axis.len() != dim {
            return Err(GridError::AxisMismatch);
        }
        if let Some(&n) = n_axis.iter().find(|&&n| n < 3) {
            return Err(GridError::TooFewPoints(n));
        }
        for &l in length_axis {
            if !(l.is_finite() && l > 0.0) {
                return Err(GridError::NonPositive { name: "length", value: l });
            }
        }
        if let Some(&o) = origin_axis.iter().find(|o| !o.is_finite()) {
            return Err(GridError::NonPositive { name: "origin", value: o });
        }
        let h_axis = n_axis
            .iter()
            .zip(length_axis)
            .map(|(&n, &l)| bc.spacing(l, n))
            .collect();
        Ok(Self {
            n_axis: n_axis.to_vec(),
            length_axis: length_axis.to_vec(),
            origin_axis: origin_axis.to_vec(),
            h_axis,
            bc,
        })
    }

    /// Equal axes of side `length` centred on the origin, with spacing
    /// `length / cells`.
    pub fn centered(dim: usize, length: f64, cells: usize, bc: Boundary) -> Result<Self, GridError> {
        let n = match bc {
            Boundary::Neumann => cells + 1,
            Boundary::Periodic => cells,
        };
        Self::new(&vec![n; dim], &vec![length; dim], &vec![-0.5 * length; dim], bc)
    }

    pub fn dim(&self) -> usize {
        self.n_axis.len()
    }

    pub fn n_axis(&self) -> &[usize] {
        &self.n_axis
    }

    pub fn h_axis(&self) -> &[f64] {
        &self.h_axis
    }

    pub fn length_axis(&self) -> &[f64] {
        &self.length_axis
    }

    pub fn origin_axis(&self) -> &[f64] {
        &self.origin_axis
    }

    pub fn bc(&self) -> Boundary {
        self.bc
    }

    /// Total number of unknowns.
    pub fn len(&self) -> usize {
        self.n_axis.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Product of the spacings, the volume weight of one node.
    pub fn cell_volume(&self) -> f64 {
        self.h_axis.iter().product()
    }

    pub fn coordinates(&self, axis: usize) -> Vec<f64> {
        let (o, h) = (self.origin_axis[axis], self.h_axis[axis]);
        (0..self.n_axis[axis]).map(|j| o + j as f64 * h).collect()
    }

    /// Builds the eigen-decomposed Laplacian of every axis.
    pub fn axes(&self) -> Result<Vec<Arc<LaplacianAxis>>, GridError> {
        self.n_axis
            .iter()
            .zip(&self.h_axis)
            .map(|(&n, &h)| LaplacianAxis::new(n, h, self.bc).map(Arc::new))
            .collect()
    }

    fn check(&self, field: &Field) -> Result<(), GridError> {
        if field.grid.n_axis != self.n_axis || field.values.len() != self.len() {
            return Err(GridError::ShapeMismatch { expected: self.len(), got: field.values.len() });
        }
        Ok(())
    }
}

/// Nodal values on a grid, stored row-major (last axis fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::ShapeMismatch { expected: grid.len(), got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    /// Wraps values produced by solver arithmetic; they may be non-finite.
    pub(crate) fn from_parts(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: &GridSpec, value: f64) -> Self {
        Self { values: vec![value; grid.len()], grid: grid.clone() }
    }

    pub fn from_fn(grid: &GridSpec, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let coords: Vec<Vec<f64>> = (0..grid.dim()).map(|a| grid.coordinates(a)).collect();
        let mut point = vec![0.0; grid.dim()];
        let mut index = vec![0usize; grid.dim()];
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            for (a, &i) in index.iter().enumerate() {
                point[a] = coords[a][i];
            }
            values.push(f(&point));
            for a in (0..grid.dim()).rev() {
                index[a] += 1;
                if index[a] < grid.n_axis[a] {
                    break;
                }
                index[a] = 0;
            }
        }
        Self { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Returns `Err` with the first non-finite index.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }

    pub fn same_grid(&self, other: &Field) -> Result<(), GridError> {
        self.grid.check(other)
    }
}

/// Which implementation moves a line into or out of eigen-coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransformPath {
    /// DCT-I or real FFT, `O(n log n)` per line.
    #[default]
    Fast,
    /// Products with the dense eigenvector matrices, `O(n^2)` per line.
    Dense,
}

enum FastPlan {
    Cosine(Arc<dyn Dct1<f64>>),
    Fourier { r2c: Arc<dyn RealToComplex<f64>>, c2r: Arc<dyn ComplexToReal<f64>> },
}

/// The 1D stencil matrix of one axis together with its eigen-decomposition
/// `L = V diag(mu) V^-1`.
pub struct LaplacianAxis {
    n: usize,
    h: f64,
    bc: Boundary,
    eigenvalues: Vec<f64>,
    plan: FastPlan,
    forward: OnceLock<DMatrix<f64>>,
    inverse: OnceLock<DMatrix<f64>>,
}

impl fmt::Debug for LaplacianAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LaplacianAxis")
            .field("n", &self.n)
            .field("h", &self.h)
            .field("bc", &self.bc)
            .finish_non_exhaustive()
    }
}

impl LaplacianAxis {
    pub fn new(n: usize, h: f64, bc: Boundary) -> Result<Self, GridError> {
        if n < 3 {
            return Err(GridError::TooFewPoints(n));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(GridError::NonPositive { name: "h", value: h });
        }
        let inv_h2 = 1.0 / (h * h);
        let (eigenvalues, plan) = match bc {
            Boundary::Neumann => {
                let m = (n - 1) as f64;
                let mu = (0..n)
                    .map(|k| if k == 0 { 0.0 } else { (2.0 * (k as f64 * PI / m).cos() - 2.0) * inv_h2 })
                    .collect();
                (mu, FastPlan::Cosine(DctPlanner::new().plan_dct1(n)))
            }
            Boundary::Periodic => {
                let mu = (0..n)
                    .map(|k| {
                        if k == 0 {
                            0.0
                        } else {
                            (2.0 * (2.0 * PI * k as f64 / n as f64).cos() - 2.0) * inv_h2
                        }
                    })
                    .collect();
                let mut planner = RealFftPlanner::new();
                let plan = FastPlan::Fourier { r2c: planner.plan_fft_forward(n), c2r: planner.plan_fft_inverse(n) };
                (mu, plan)
            }
        };
        Ok(Self { n, h, bc, eigenvalues, plan, forward: OnceLock::new(), inverse: OnceLock::new() })
    }

    /// Builds the axis and verifies `V diag(mu) V^-1` against the stencil.
    pub fn new_checked(n: usize, h: f64, bc: Boundary) -> Result<Self, GridError> {
        let axis = Self::new(n, h, bc)?;
        let err = axis.reconstruction_error();
        let tol = 1e-12 / (h * h) * (n as f64).max(1.0);
        if err > tol {
            return Err(GridError::Reconstruction(format!("max entry error {err:e} exceeds {tol:e}")));
        }
        Ok(axis)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn bc(&self) -> Boundary {
        self.bc
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Largest absolute row sum of the stencil matrix.
    pub fn max_abs_row_sum(&self) -> f64 {
        4.0 / (self.h * self.h)
    }

    /// Eigenvector matrix `V`, columns ordered like [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        self.forward.get_or_init(|| {
            let n = self.n;
            match self.bc {
                Boundary::Neumann => {
                    let m = (n - 1) as f64;
                    DMatrix::from_fn(n, n, |j, k| cos_pi_ratio(j * k, m))
                }
                Boundary::Periodic => DMatrix::from_fn(n, n, |j, k| {
                    if k <= n / 2 {
                        (2.0 * PI * ((j * k) % n) as f64 / n as f64).cos()
                    } else {
                        (2.0 * PI * ((j * (n - k)) % n) as f64 / n as f64).sin()
                    }
                }),
            }
        })
    }

    /// `V^-1`, obtained in closed form from the orthogonality relations of
    /// the cosine and Fourier bases.
    pub fn inverse_eigenvectors(&self) -> &DMatrix<f64> {
        self.inverse.get_or_init(|| {
            let v = self.eigenvectors();
            let n = self.n;
            match self.bc {
                Boundary::Neumann => {
                    let m = (n - 1) as f64;
                    let w = |i: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                    DMatrix::from_fn(n, n, |k, j| 2.0 / m * w(k) * v[(j, k)] * w(j))
                }
                Boundary::Periodic => DMatrix::from_fn(n, n, |k, j| {
                    let norm = if k == 0 || (n % 2 == 0 && k == n / 2) { n as f64 } else { 0.5 * n as f64 };
                    v[(j, k)] / norm
                }),
            }
        })
    }

    /// `max |V diag(mu) V^-1 - L|` over all entries.
    pub fn reconstruction_error(&self) -> f64 {
        let v = self.eigenvectors();
        let vi = self.inverse_eigenvectors();
        let mu = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.eigenvalues));
        let rebuilt = v * mu * vi;
        let dense = dense_laplacian_1d(self.n, self.h, self.bc).expect("validated at construction");
        (rebuilt - dense).amax()
    }

    /// Replaces the nodal values of one line with eigen-coefficients `V^-1 x`.
    pub fn forward_line(&self, line: &mut [f64], path: TransformPath, scratch: &mut Scratch) {
        debug_assert_eq!(line.len(), self.n);
        match path {
            TransformPath::Dense => dense_apply(self.inverse_eigenvectors(), line, scratch),
            TransformPath::Fast => match &self.plan {
                FastPlan::Cosine(dct) => {
                    let n = self.n;
                    let s = scratch.real(dct.get_scratch_len());
                    dct.process_dct1_with_scratch(line, s);
                    let scale = 2.0 / (n - 1) as f64;
                    for v in line.iter_mut() {
                        *v *= scale;
                    }
                    line[0] *= 0.5;
                    line[n - 1] *= 0.5;
                }
                FastPlan::Fourier { r2c, .. } => {
                    let n = self.n;
                    let (input, spectrum, s) = scratch.fourier(n, r2c.get_scratch_len());
                    input.copy_from_slice(line);
                    r2c.process_with_scratch(input, spectrum, s).expect("buffer sizes match the plan");
                    let inv_n = 1.0 / n as f64;
                    line[0] = spectrum[0].re * inv_n;
                    let mut k = 1;
                    while 2 * k < n {
                        line[k] = 2.0 * spectrum[k].re * inv_n;
                        line[n - k] = -2.0 * spectrum[k].im * inv_n;
                        k += 1;
                    }
                    if n % 2 == 0 {
                        line[n / 2] = spectrum[n / 2].re * inv_n;
                    }
                }
            },
        }
    }

    /// Replaces eigen-coefficients of one line with nodal values `V c`.
    pub fn inverse_line(&self, line: &mut [f64], path: TransformPath, scratch: &mut Scratch) {
        debug_assert_eq!(line.len(), self.n);
        match path {
            TransformPath::Dense => dense_apply(self.eigenvectors(), line, scratch),
            TransformPath::Fast => match &self.plan {
                FastPlan::Cosine(dct) => {
                    let n = self.n;
                    line[0] *= 2.0;
                    line[n - 1] *= 2.0;
                    let s = scratch.real(dct.get_scratch_len());
                    dct.process_dct1_with_scratch(line, s);
                }
                FastPlan::Fourier { c2r, .. } => {
                    let n = self.n;
                    let (output, spectrum, s) = scratch.fourier(n, c2r.get_scratch_len());
                    spectrum[0] = Complex::new(line[0], 0.0);
                    let mut k = 1;
                    while 2 * k < n {
                        spectrum[k] = Complex::new(0.5 * line[k], -0.5 * line[n - k]);
                        k += 1;
                    }
                    if n % 2 == 0 {
                        spectrum[n / 2] = Complex::new(line[n / 2], 0.0);
                    }
                    c2r.process_with_scratch(spectrum, output, s).expect("hermitian spectrum");
                    line.copy_from_slice(output);
                }
            },
        }
    }
}

fn cos_pi_ratio(num: usize, m: f64) -> f64 {
    // cos(pi * num / m) with the argument reduced modulo 2m
    let period = 2 * m as usize;
    (PI * (num % period) as f64 / m).cos()
}

fn dense_apply(matrix: &DMatrix<f64>, line: &mut [f64], scratch: &mut Scratch) {
    let n = line.len();
    let tmp = scratch.real(n);
    tmp[..n].copy_from_slice(line);
    for (i, out) in line.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, x) in tmp[..n].iter().enumerate() {
            acc += matrix[(i, j)] * x;
        }
        *out = acc;
    }
}

/// Reusable buffers for line transforms.
#[derive(Default)]
pub struct Scratch {
    real: Vec<f64>,
    line: Vec<f64>,
    spectrum: Vec<Complex<f64>>,
    fft: Vec<Complex<f64>>,
}

impl Scratch {
    fn real(&mut self, len: usize) -> &mut [f64] {
        if self.real.len() < len {
            self.real.resize(len, 0.0);
        }
        &mut self.real[..len]
    }

    fn fourier(&mut self, n: usize, fft_len: usize) -> (&mut [f64], &mut [Complex<f64>], &mut [Complex<f64>]) {
        self.line.resize(n, 0.0);
        self.spectrum.resize(n / 2 + 1, Complex::new(0.0, 0.0));
        if self.fft.len() < fft_len {
            self.fft.resize(fft_len, Complex::new(0.0, 0.0));
        }
        (&mut self.line[..], &mut self.spectrum[..], &mut self.fft[..fft_len])
    }
}

/// Calls `op` on every line of `values` along `axis`, gathering strided
/// lines into a contiguous buffer first.
pub(crate) fn for_each_line(
    values: &mut [f64],
    shape: &[usize],
    axis: usize,
    mut op: impl FnMut(&mut [f64]),
) {
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    if inner == 1 {
        for line in values.chunks_exact_mut(n) {
            op(line);
        }
        return;
    }
    let mut buf = vec![0.0; n];
    for o in 0..outer {
        let base = o * n * inner;
        for i in 0..inner {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = values[base + j * inner + i];
            }
            op(&mut buf);
            for (j, b) in buf.iter().enumerate() {
                values[base + j * inner + i] = *b;
            }
        }
    }
}

/// The 1D stencil matrix `L` of one axis.
///
/// Neumann rows use ghost reflection, so the first and last rows read
/// `(-2, 2)` and `(2, -2)`; periodic rows wrap around.
pub fn dense_laplacian_1d(n: usize, h: f64, bc: Boundary) -> Result<DMatrix<f64>, GridError> {
    if n < 3 {
        return Err(GridError::TooFewPoints(n));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(GridError::NonPositive { name: "h", value: h });
    }
    let s = 1.0 / (h * h);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = -2.0 * s;
        match bc {
            Boundary::Neumann => {
                if i == 0 {
                    m[(0, 1)] = 2.0 * s;
                } else if i == n - 1 {
                    m[(i, i - 1)] = 2.0 * s;
                } else {
                    m[(i, i - 1)] = s;
                    m[(i, i + 1)] = s;
                }
            }
            Boundary::Periodic => {
                m[(i, (i + n - 1) % n)] += s;
                m[(i, (i + 1) % n)] += s;
            }
        }
    }
    Ok(m)
}

/// Dense `D_h`, the Kronecker sum of the axis matrices, in row-major node
/// order. Intended for oracles on small grids.
pub fn dense_operator(grid: &GridSpec) -> Result<DMatrix<f64>, GridError> {
    let dims = grid.n_axis();
    let total = grid.len();
    let mut out = DMatrix::zeros(total, total);
    for axis in 0..grid.dim() {
        let l = dense_laplacian_1d(dims[axis], grid.h_axis()[axis], grid.bc())?;
        let before: usize = dims[..axis].iter().product();
        let after: usize = dims[axis + 1..].iter().product();
        let term = DMatrix::<f64>::identity(before, before)
            .kronecker(&l)
            .kronecker(&DMatrix::<f64>::identity(after, after));
        out += term;
    }
    Ok(out)
}

/// `D_h u` by direct stencil application along each axis.
pub fn apply_laplacian(grid: &GridSpec, field: &Field) -> Result<Field, GridError> {
    grid.check(field)?;
    let mut out = vec![0.0; field.values.len()];
    laplacian_into(grid, &field.values, &mut out);
    Ok(Field::from_parts(grid.clone(), out))
}

pub(crate) fn laplacian_into(grid: &GridSpec, u: &[f64], out: &mut [f64]) {
    let dims = grid.n_axis();
    out.iter_mut().for_each(|v| *v = 0.0);
    for axis in 0..dims.len() {
        let n = dims[axis];
        let inner: usize = dims[axis + 1..].iter().product();
        let outer: usize = dims[..axis].iter().product();
        let s = 1.0 / (grid.h_axis()[axis] * grid.h_axis()[axis]);
        for o in 0..outer {
            let base = o * n * inner;
            for i in 0..inner {
                let at = |j: usize| base + j * inner + i;
                for j in 0..n {
                    let (left, right) = match grid.bc() {
                        Boundary::Neumann => {
                            if j == 0 {
                                (u[at(1)], u[at(1)])
                            } else if j == n - 1 {
                                (u[at(n - 2)], u[at(n - 2)])
                            } else {
                                (u[at(j - 1)], u[at(j + 1)])
                            }
                        }
                        Boundary::Periodic => (u[at((j + n - 1) % n)], u[at((j + 1) % n)]),
                    };
                    out[at(j)] += (left - 2.0 * u[at(j)] + right) * s;
                }
            }
        }
    }
}

/// `||A||_inf` for `A = eps^2 D_h`, without assembling `D_h`.
///
/// Diagonal entries of the Kronecker sum add while off-diagonal entries never
/// overlap, so the largest absolute row sum is the sum of the per-axis maxima.
pub fn operator_inf_norm(grid: &GridSpec, eps: f64) -> f64 {
    let per_axis: f64 = grid.h_axis().iter().map(|h| 4.0 / (h * h)).sum();
    eps * eps * per_axis
}
