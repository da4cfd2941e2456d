//! Dense reference implementations shared by the integration tests. They
//! are built from the stencil definitions directly and never call the
//! library's own dense helpers.
#![allow(dead_code)]

use mbp_lri::expops::{Kernel, Propagator};
use mbp_lri::spatial::{Boundary, Field, GridSpec};
use nalgebra::{DMatrix, DVector};

/// Second-difference matrix on `n` nodes with ghost-point reflection
/// (Neumann) or wrap-around (periodic).
pub fn lambda_1d(n: usize, h: f64, bc: Boundary) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let s = 1.0 / (h * h);
    for i in 0..n {
        m[(i, i)] = -2.0 * s;
        let (left, right) = match bc {
            Boundary::Periodic => ((i + n - 1) % n, (i + 1) % n),
            Boundary::Neumann => (if i == 0 { 1 } else { i - 1 }, if i == n - 1 { n - 2 } else { i + 1 }),
        };
        m[(i, left)] += s;
        m[(i, right)] += s;
    }
    m
}

/// `D_h` for a grid in row-major order (last axis fastest).
pub fn dense_d(grid: &GridSpec) -> DMatrix<f64> {
    let dims = grid.n_axis();
    let total: usize = dims.iter().product();
    let mut d = DMatrix::zeros(total, total);
    for (a, (&n, &h)) in dims.iter().zip(grid.h_axis()).enumerate() {
        let l = lambda_1d(n, h, grid.bc());
        let before: usize = dims[..a].iter().product();
        let after: usize = dims[a + 1..].iter().product();
        let block = DMatrix::<f64>::identity(before, before).kronecker(&l).kronecker(&DMatrix::identity(after, after));
        d += block;
    }
    d
}

pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn rel_inf(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    inf_norm(&(got - want)) / inf_norm(want)
}

/// `phi_k(M)` from the exponential of a block upper-triangular matrix.
pub fn phi_block(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    if k == 0 {
        return m.clone().exp();
    }
    let n = m.nrows();
    let mut big = DMatrix::zeros(n * (k + 1), n * (k + 1));
    big.view_mut((0, 0), (n, n)).copy_from(m);
    for j in 0..k {
        big.view_mut((j * n, (j + 1) * n), (n, n)).fill_with_identity();
    }
    big.exp().view((0, k * n), (n, n)).into_owned()
}

/// Node weights that make `W D_h` symmetric: 1/2 at Neumann end nodes.
pub fn symmetrizer(grid: &GridSpec) -> Vec<f64> {
    let dims = grid.n_axis();
    let total: usize = dims.iter().product();
    (0..total)
        .map(|mut idx| {
            let mut w = 1.0;
            for &n in dims.iter().rev() {
                let k = idx % n;
                idx /= n;
                if grid.bc() == Boundary::Neumann && (k == 0 || k == n - 1) {
                    w *= 0.5;
                }
            }
            w
        })
        .collect()
}

/// `exp(gamma D_h)` by a symmetric eigendecomposition of `W^{1/2} D_h W^{-1/2}`.
pub fn expm_symmetric(grid: &GridSpec, gamma: f64) -> DMatrix<f64> {
    let d = dense_d(grid);
    let n = d.nrows();
    let r: Vec<f64> = symmetrizer(grid).iter().map(|w| w.sqrt()).collect();
    let s = DMatrix::from_fn(n, n, |i, j| 0.5 * (r[i] * d[(i, j)] / r[j] + r[j] * d[(j, i)] / r[i]));
    let eig = s.symmetric_eigen();
    let q = &eig.eigenvectors;
    let e = q * DMatrix::from_diagonal(&eig.eigenvalues.map(|mu| (gamma * mu).exp())) * q.transpose();
    DMatrix::from_fn(n, n, |i, j| e[(i, j)] * r[j] / r[i])
}

/// Assembles the matrix of a propagator kernel column by column.
pub fn fast_matrix(prop: &Propagator, kernel: Kernel) -> DMatrix<f64> {
    let grid = prop.grid();
    let n = grid.len();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = prop.apply(kernel, &Field::new(grid.clone(), e).unwrap()).unwrap();
        out.set_column(j, &DVector::from_column_slice(col.values()));
    }
    out
}

pub fn unit_grid(n: usize, dim: usize, bc: Boundary) -> GridSpec {
    GridSpec::new(&vec![n; dim], &vec![1.0; dim], &vec![0.0; dim], bc).unwrap()
}

/// Closed-form solution of `u' = u - u^3`, `u(0) = 1/2`.
pub fn logistic_cubic(t: f64) -> f64 {
    1.0 / (1.0 + 3.0 * (-2.0 * t).exp()).sqrt()
}
