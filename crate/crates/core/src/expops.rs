//! Actions of `exp(tA)`, `phi_1(tA)` and `phi_2(tA)` for `A = eps^2 D_h`.
//!
//! Every axis is moved into eigen-coordinates, the joint eigenvalue grid
//! `s = eps^2 (mu_1 + ... + mu_d)` is multiplied pointwise, and the axes are
//! moved back. The dense functions at the bottom are oracles for small grids.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::spatial::{for_each_line, Field, GridError, GridSpec, LaplacianAxis, Scratch, TransformPath};

/// Largest matrix accepted by the dense oracles.
pub const DENSE_SIZE_CAP: usize = 1024;

const PHI2_TAYLOR_CUTOFF: f64 = 1e-1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("time increment must be finite and non-negative, got {0}")]
    NegativeTime(f64),
    #[error("interfacial parameter must be finite and non-negative, got {0}")]
    BadEps(f64),
    #[error("phi_{0} is not supported (only phi_1 and phi_2)")]
    UnsupportedPhi(u32),
    #[error("axes do not match the grid")]
    AxisMismatch,
    #[error("dense oracle limited to {cap}x{cap}, got {size}x{size}")]
    TooLarge { size: usize, cap: usize },
    #[error("matrix is not square")]
    NotSquare,
}

/// Spectral kernels a propagator can apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    Identity,
    Exp,
    Phi1,
    Phi2,
}

/// Cached spectral multipliers for one `(grid, eps, t)`.
pub struct Propagator {
    grid: GridSpec,
    axes: Vec<Arc<LaplacianAxis>>,
    eps: f64,
    t: f64,
    path: TransformPath,
    axis_exp: Vec<Vec<f64>>,
    joint: Vec<f64>,
    exp: Vec<f64>,
    phi1: OnceLock<Vec<f64>>,
    phi2: OnceLock<Vec<f64>>,
}

impl std::fmt::Debug for Propagator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Propagator")
            .field("n_axis", &self.grid.n_axis())
            .field("eps", &self.eps)
            .field("t", &self.t)
            .field("path", &self.path)
            .finish_non_exhaustive()
    }
}

impl Propagator {
    pub fn new(grid: &GridSpec, axes: &[Arc<LaplacianAxis>], eps: f64, t: f64) -> Result<Self, ExpError> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(ExpError::NegativeTime(t));
        }
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(ExpError::BadEps(eps));
        }
        if axes.len() != grid.dim()
            || axes.iter().zip(grid.n_axis()).any(|(a, &n)| a.n() != n || a.bc() != grid.bc())
            || axes.iter().zip(grid.h_axis()).any(|(a, &h)| a.h() != h)
        {
            return Err(ExpError::AxisMismatch);
        }
        let e2 = eps * eps;
        let axis_exp = axes
            .iter()
            .map(|a| a.eigenvalues().iter().map(|&mu| (t * e2 * mu).exp()).collect())
            .collect();

        // joint eigenvalue grid in the same row-major order as the field
        let mut joint = vec![0.0; grid.len()];
        let mut stride = grid.len();
        for axis in axes {
            let n = axis.n();
            stride /= n;
            for (idx, z) in joint.iter_mut().enumerate() {
                *z += t * e2 * axis.eigenvalues()[(idx / stride) % n];
            }
        }
        let exp = joint.iter().map(|z| z.exp()).collect();
        Ok(Self {
            grid: grid.clone(),
            axes: axes.to_vec(),
            eps,
            t,
            path: TransformPath::Fast,
            axis_exp,
            joint,
            exp,
            phi1: OnceLock::new(),
            phi2: OnceLock::new(),
        })
    }

    /// Builds the axes for `grid` and the propagator in one go.
    pub fn for_grid(grid: &GridSpec, eps: f64, t: f64) -> Result<Self, ExpError> {
        let axes = grid.axes()?;
        Self::new(grid, &axes, eps, t)
    }

    pub fn with_path(mut self, path: TransformPath) -> Self {
        self.path = path;
        self
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn axes(&self) -> &[Arc<LaplacianAxis>] {
        &self.axes
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// `exp(t eps^2 mu_k)` for each axis.
    pub fn axis_factors(&self) -> &[Vec<f64>] {
        &self.axis_exp
    }

    /// `t * s` on the joint eigenvalue grid.
    pub fn scaled_eigenvalues(&self) -> &[f64] {
        &self.joint
    }

    fn multiplier(&self, kernel: Kernel) -> Option<&[f64]> {
        match kernel {
            Kernel::Identity => None,
            Kernel::Exp => Some(&self.exp),
            Kernel::Phi1 => Some(self.phi1.get_or_init(|| self.joint.iter().map(|&z| phi1(z)).collect())),
            Kernel::Phi2 => Some(self.phi2.get_or_init(|| self.joint.iter().map(|&z| phi2(z)).collect())),
        }
    }

    pub fn apply_exp(&self, field: &Field) -> Result<Field, ExpError> {
        self.apply(Kernel::Exp, field)
    }

    pub fn apply_phi(&self, k: u32, field: &Field) -> Result<Field, ExpError> {
        let kernel = match k {
            1 => Kernel::Phi1,
            2 => Kernel::Phi2,
            other => return Err(ExpError::UnsupportedPhi(other)),
        };
        self.apply(kernel, field)
    }

    pub fn apply(&self, kernel: Kernel, field: &Field) -> Result<Field, ExpError> {
        self.grid_check(field)?;
        let values = self.combine(&[(kernel, 1.0, field.values())]);
        Ok(Field::from_parts(self.grid.clone(), values))
    }

    fn grid_check(&self, field: &Field) -> Result<(), ExpError> {
        if field.grid().n_axis() != self.grid.n_axis() {
            return Err(GridError::ShapeMismatch { expected: self.grid.len(), got: field.values().len() }.into());
        }
        Ok(())
    }

    /// `sum_i scale_i * K_i(tA) v_i` with a single inverse transform.
    ///
    /// Callers guarantee every `v_i` has the grid's length.
    pub(crate) fn combine(&self, terms: &[(Kernel, f64, &[f64])]) -> Vec<f64> {
        let mut acc = vec![0.0; self.grid.len()];
        if self.joint.iter().all(|&z| z == 0.0) {
            // tA = 0: every kernel is a scalar, so skip the round trip
            for &(kernel, scale, values) in terms {
                let w = if kernel == Kernel::Phi2 { 0.5 * scale } else { scale };
                for (a, v) in acc.iter_mut().zip(values) {
                    *a += w * v;
                }
            }
            return acc;
        }
        let mut scratch = Scratch::default();
        let mut coeffs = Vec::with_capacity(self.grid.len());
        for &(kernel, scale, values) in terms {
            debug_assert_eq!(values.len(), acc.len());
            coeffs.clear();
            coeffs.extend_from_slice(values);
            self.forward(&mut coeffs, &mut scratch);
            match self.multiplier(kernel) {
                Some(m) => {
                    for ((a, c), w) in acc.iter_mut().zip(&coeffs).zip(m) {
                        *a += scale * w * c;
                    }
                }
                None => {
                    for (a, c) in acc.iter_mut().zip(&coeffs) {
                        *a += scale * c;
                    }
                }
            }
        }
        self.inverse(&mut acc, &mut scratch);
        acc
    }

    fn forward(&self, values: &mut [f64], scratch: &mut Scratch) {
        let shape = self.grid.n_axis();
        for (a, axis) in self.axes.iter().enumerate() {
            for_each_line(values, shape, a, |line| axis.forward_line(line, self.path, scratch));
        }
    }

    fn inverse(&self, values: &mut [f64], scratch: &mut Scratch) {
        let shape = self.grid.n_axis();
        for (a, axis) in self.axes.iter().enumerate().rev() {
            for_each_line(values, shape, a, |line| axis.inverse_line(line, self.path, scratch));
        }
    }
}

fn phi1(z: f64) -> f64 {
    if z == 0.0 {
        1.0
    } else {
        z.exp_m1() / z
    }
}

fn phi2(z: f64) -> f64 {
    if z.abs() >= PHI2_TAYLOR_CUTOFF {
        (z.exp_m1() - z) / (z * z)
    } else {
        // sum_{j=0}^{8} z^j / (j+2)!, Horner form
        let mut acc = 1.0 / 3_628_800.0;
        for denom in [362_880.0, 40_320.0, 5_040.0, 720.0, 120.0, 24.0, 6.0, 2.0] {
            acc = acc * z + 1.0 / denom;
        }
        acc
    }
}

/// `phi_k(z)` for `k` in `{1, 2}`; other orders return `None`.
pub fn phi_scalar(k: u32, z: f64) -> Option<f64> {
    match k {
        1 => Some(phi1(z)),
        2 => Some(phi2(z)),
        _ => None,
    }
}

/// Dense `exp(t M)` by scaling and squaring with a Padé core.
pub fn dense_expm(matrix: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>, ExpError> {
    if !matrix.is_square() {
        return Err(ExpError::NotSquare);
    }
    if matrix.nrows() > DENSE_SIZE_CAP {
        return Err(ExpError::TooLarge { size: matrix.nrows(), cap: DENSE_SIZE_CAP });
    }
    Ok((matrix * t).exp())
}

/// Dense `phi_k(t M) v` through the exponential of an augmented matrix
/// `[[tM, v, 0], [0, 0, 1], [0, 0, 0]]` (last rows trimmed for `k = 1`).
pub fn dense_phi_action(matrix: &DMatrix<f64>, t: f64, k: u32, v: &DVector<f64>) -> Result<DVector<f64>, ExpError> {
    if !matrix.is_square() {
        return Err(ExpError::NotSquare);
    }
    let n = matrix.nrows();
    if n > DENSE_SIZE_CAP {
        return Err(ExpError::TooLarge { size: n, cap: DENSE_SIZE_CAP });
    }
    if !(1..=2).contains(&k) {
        return Err(ExpError::UnsupportedPhi(k));
    }
    let k = k as usize;
    let mut aug = DMatrix::zeros(n + k, n + k);
    aug.view_mut((0, 0), (n, n)).copy_from(&(matrix * t));
    aug.view_mut((0, n), (n, 1)).copy_from(v);
    for j in 1..k {
        aug[(n + j - 1, n + j)] = 1.0;
    }
    let e = aug.exp();
    Ok(e.view((0, n + k - 1), (n, 1)).into_owned().column(0).into_owned())
}

/// Dense `phi_k(t M)` as the top-right block of the exponential of
/// `[[tM, I, 0], [0, 0, I], [0, 0, 0]]` (trimmed to two blocks for `k = 1`).
pub fn dense_phi_matrix(matrix: &DMatrix<f64>, t: f64, k: u32) -> Result<DMatrix<f64>, ExpError> {
    if !matrix.is_square() {
        return Err(ExpError::NotSquare);
    }
    let n = matrix.nrows();
    if n > DENSE_SIZE_CAP {
        return Err(ExpError::TooLarge { size: n, cap: DENSE_SIZE_CAP });
    }
    if !(1..=2).contains(&k) {
        return Err(ExpError::UnsupportedPhi(k));
    }
    let k = k as usize;
    let mut aug = DMatrix::zeros(n * (k + 1), n * (k + 1));
    aug.view_mut((0, 0), (n, n)).copy_from(&(matrix * t));
    for j in 0..k {
        aug.view_mut((j * n, (j + 1) * n), (n, n)).fill_with_identity();
    }
    Ok(aug.exp().view((0, k * n), (n, n)).into_owned())
}

/// Dense `exp(t eps^2 D_h)` through a symmetric eigendecomposition.
///
/// `D_h` becomes symmetric under the diagonal similarity `W^{1/2} D_h W^{-1/2}`
/// with `W` the trapezoidal node weights, so no squaring steps are needed
/// and the result keeps full accuracy for large `t ||A||`.
pub fn dense_expm_eigen(grid: &GridSpec, eps: f64, t: f64) -> Result<DMatrix<f64>, ExpError> {
    let n = grid.len();
    if n > DENSE_SIZE_CAP {
        return Err(ExpError::TooLarge { size: n, cap: DENSE_SIZE_CAP });
    }
    let d = crate::spatial::dense_operator(grid)?;
    let root_w: Vec<f64> = node_weights(grid).iter().map(|w| w.sqrt()).collect();
    let mut sym = DMatrix::from_fn(n, n, |i, j| root_w[i] * d[(i, j)] / root_w[j]);
    sym = (&sym + sym.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scaled = eig.eigenvalues.map(|mu| (t * eps * eps * mu).exp());
    let q = &eig.eigenvectors;
    let e_sym = q * DMatrix::from_diagonal(&scaled) * q.transpose();
    Ok(DMatrix::from_fn(n, n, |i, j| e_sym[(i, j)] * root_w[j] / root_w[i]))
}

/// Trapezoidal weights (1/2 at Neumann end nodes), row-major.
fn node_weights(grid: &GridSpec) -> Vec<f64> {
    let mut w = vec![1.0; grid.len()];
    if grid.bc() == crate::spatial::Boundary::Neumann {
        let mut stride = grid.len();
        for &n in grid.n_axis() {
            stride /= n;
            for (idx, wi) in w.iter_mut().enumerate() {
                let k = (idx / stride) % n;
                if k == 0 || k == n - 1 {
                    *wi *= 0.5;
                }
            }
        }
    }
    w
}

/// Largest discrepancies between the fast propagator and dense oracles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatorCheck {
    /// Relative infinity-norm error of the assembled `exp(tA)` matrix
    /// against both dense exponentials.
    pub exp_error: f64,
    /// Worst relative infinity-norm error of `phi_1(tA) v` over the probes.
    pub phi1_error: f64,
    pub phi2_error: f64,
    /// `||exp(tA)||_inf` of the assembled fast operator, at most one for a
    /// contraction.
    pub exp_norm: f64,
    /// The same norm from the eigendecomposition oracle; its round-off
    /// grows with the grid size.
    pub dense_norm: f64,
}

impl OperatorCheck {
    pub fn worst_error(&self) -> f64 {
        self.exp_error.max(self.phi1_error).max(self.phi2_error)
    }
}

fn rel_inf(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = b.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Compares `exp(tA)` column by column against both dense exponentials, and
/// `phi_1`, `phi_2` on `probes` seeded random vectors against augmented
/// exponentials.
pub fn check_against_dense(grid: &GridSpec, eps: f64, t: f64, probes: usize) -> Result<OperatorCheck, ExpError> {
    use rand::{Rng, SeedableRng};

    let n = grid.len();
    if n > DENSE_SIZE_CAP {
        return Err(ExpError::TooLarge { size: n, cap: DENSE_SIZE_CAP });
    }
    let prop = Propagator::for_grid(grid, eps, t)?;
    let a = crate::spatial::dense_operator(grid)? * (eps * eps);
    let dense_exp = dense_expm(&a, t)?;

    let mut fast = DMatrix::zeros(n, n);
    let mut unit = vec![0.0; n];
    for j in 0..n {
        unit[j] = 1.0;
        let col = prop.combine(&[(Kernel::Exp, 1.0, &unit)]);
        fast.set_column(j, &DVector::from_vec(col));
        unit[j] = 0.0;
    }
    let inf_norm = |m: &DMatrix<f64>| m.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let eigen_exp = dense_expm_eigen(grid, eps, t)?;
    let dense_norm = inf_norm(&eigen_exp);
    let exp_error =
        (inf_norm(&(&fast - &dense_exp)) / inf_norm(&dense_exp)).max(inf_norm(&(&fast - &eigen_exp)) / dense_norm);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let (mut phi1_error, mut phi2_error) = (0.0f64, 0.0f64);
    for _ in 0..probes {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let dv = DVector::from_column_slice(&v);
        for (k, kernel, slot) in [(1, Kernel::Phi1, &mut phi1_error), (2, Kernel::Phi2, &mut phi2_error)] {
            let want = dense_phi_action(&a, t, k, &dv)?;
            let got = prop.combine(&[(kernel, 1.0, &v)]);
            *slot = slot.max(rel_inf(&got, want.as_slice()));
        }
    }
    Ok(OperatorCheck { exp_error, phi1_error, phi2_error, exp_norm: inf_norm(&fast), dense_norm })
}
