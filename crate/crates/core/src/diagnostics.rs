//! Discrete energy, norms, bound checks, convergence rates and the
//! a priori error and increment estimates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::potential::{Potential, PotentialError, StabilityBounds};
use crate::schemes::SchemeKind;
use crate::spatial::{laplacian_into, Field, GridError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error("need at least two matching entries, got {errors} errors and {dts} steps")]
    Lengths { errors: usize, dts: usize },
    #[error("dt = {dt} exceeds the certified ceiling {ceiling}")]
    Uncertified { dt: f64, ceiling: f64 },
    #[error("no a priori estimate is available for {0}")]
    NoEstimate(SchemeKind),
    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),
}

/// `E_h(U) = sum_i F(U_i) - eps^2/2 U^T D_h U`, with `D_h U` from the stencil.
pub fn discrete_energy(field: &Field, eps: f64, potential: &Potential) -> Result<f64, DiagnosticsError> {
    let u = field.values();
    let bulk = potential.total_energy(u)?;
    let mut lap = vec![0.0; u.len()];
    laplacian_into(field.grid(), u, &mut lap);
    let quad: f64 = u.iter().zip(&lap).map(|(a, b)| a * b).sum();
    Ok(bulk - 0.5 * eps * eps * quad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MbpReport {
    pub max_abs: f64,
    pub argmax: usize,
    pub pass: bool,
}

/// Passes iff `max |U_i| <= beta + tol`. A non-finite entry always fails.
pub fn mbp_check(values: &[f64], beta: f64, tol: f64) -> MbpReport {
    let mut argmax = 0;
    let mut max_abs = 0.0f64;
    for (i, &x) in values.iter().enumerate() {
        let a = x.abs();
        if !(a <= max_abs) {
            max_abs = a;
            argmax = i;
            if a.is_nan() {
                break;
            }
        }
    }
    MbpReport { max_abs, argmax, pass: max_abs <= beta + tol }
}

/// `(l2, linf)` of `u - v`, with `l2 = sqrt(h^d sum (u_i - v_i)^2)`.
pub fn error_norms(u: &Field, v: &Field) -> Result<(f64, f64), DiagnosticsError> {
    u.same_grid(v)?;
    let mut sum = 0.0;
    let mut linf = 0.0f64;
    for (a, b) in u.values().iter().zip(v.values()) {
        let d = a - b;
        sum += d * d;
        linf = if d.abs() > linf || d.is_nan() { d.abs() } else { linf };
    }
    Ok(((u.grid().cell_volume() * sum).sqrt(), linf))
}

/// `rate_k = ln(e_{k-1}/e_k) / ln(dt_{k-1}/dt_k)`; the first entry is
/// always `None`, as is any rate involving a non-positive or non-finite
/// error.
pub fn convergence_rates(errors: &[f64], dts: &[f64]) -> Result<Vec<Option<f64>>, DiagnosticsError> {
    if errors.len() != dts.len() || errors.len() < 2 {
        return Err(DiagnosticsError::Lengths { errors: errors.len(), dts: dts.len() });
    }
    let ok = |x: f64| x.is_finite() && x > 0.0;
    let mut rates = vec![None];
    for k in 1..errors.len() {
        let (e0, e1, d0, d1) = (errors[k - 1], errors[k], dts[k - 1], dts[k]);
        let rate = (ok(e0) && ok(e1) && ok(d0) && ok(d1) && d0 != d1).then(|| (e0 / e1).ln() / (d0 / d1).ln());
        rates.push(rate);
    }
    Ok(rates)
}

/// Constants of the a priori estimate `C (e^{rate t} - 1) dt^order`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorConstants {
    pub order: u32,
    /// Local truncation constant (`c_0` or `c`).
    pub local: f64,
    /// Growth rate in the exponent (`F_1` or `F_4`).
    pub growth: f64,
    /// `local / growth`.
    pub prefactor: f64,
}

/// Constants for an LRI scheme; `a_inf` is `||A||_inf`.
pub fn error_constants(scheme: SchemeKind, b: &StabilityBounds, a_inf: f64) -> Result<ErrorConstants, DiagnosticsError> {
    if !scheme.is_lri() {
        return Err(DiagnosticsError::NoEstimate(scheme));
    }
    let beta = b.beta;
    let (local, growth) = if scheme.order() == 1 {
        (0.5 * ((b.f0 + beta * b.f1) * a_inf + b.f0 * b.f1), b.f1)
    } else {
        let c1 = 0.5 * b.f1_tilde * ((3.0 * b.f0 + beta * b.f1) * a_inf + b.f0 * b.f1);
        let c2 = 0.5 * b.f0 * b.f0 * b.f2_tilde;
        let c3 = b.f0 * (b.f1 + beta * b.f2) * a_inf;
        let c4 = 0.5 * (b.f0 + 3.0 * beta * b.f1 + beta * beta * b.f2) * a_inf * a_inf;
        ((c1 + c2 + c3) / 3.0 + c4 / 6.0, b.f4)
    };
    Ok(ErrorConstants { order: scheme.order(), local, growth, prefactor: local / growth })
}

/// Upper bound on `||U_m - u(t_m)||_inf` at `t = t_m`.
pub fn theoretical_error_bound(
    scheme: SchemeKind,
    bounds: &StabilityBounds,
    a_inf: f64,
    t: f64,
    dt: f64,
) -> Result<f64, DiagnosticsError> {
    if !(t >= 0.0) {
        return Err(DiagnosticsError::NegativeTime(t));
    }
    let ceiling = scheme.mbp_ceiling(bounds);
    if !(dt > 0.0 && dt <= ceiling) {
        return Err(DiagnosticsError::Uncertified { dt, ceiling });
    }
    let k = error_constants(scheme, bounds, a_inf)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok(k.prefactor * (k.growth * t).exp_m1() * dt.powi(k.order as i32))
}

/// Per-unit-`dt` constant `c` with `||U_{m+1} - U_m||_inf <= c dt`.
pub fn increment_constant(scheme: SchemeKind, bounds: &StabilityBounds, a_inf: f64) -> Result<f64, DiagnosticsError> {
    let base = bounds.beta * a_inf + bounds.f0;
    match scheme {
        SchemeKind::Lri1a | SchemeKind::Lri1b => Ok(base),
        SchemeKind::Lri2 => Ok(base + bounds.dt_max_second * bounds.f0 * bounds.f1),
        other => Err(DiagnosticsError::NoEstimate(other)),
    }
}

/// The constant `C` in `E_h(U_m) <= E_h(U_0) + C` over `[0, t_final]` on
/// `nodes` grid points.
pub fn energy_bound_constant(
    scheme: SchemeKind,
    bounds: &StabilityBounds,
    a_inf: f64,
    nodes: usize,
    t_final: f64,
) -> Result<f64, DiagnosticsError> {
    let c = increment_constant(scheme, bounds, a_inf)?;
    Ok(c * nodes as f64 * t_final * (bounds.f0 + bounds.beta * a_inf))
}

/// Summary of a discrete energy series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub values: Vec<f64>,
    pub initial: f64,
    pub max: f64,
    /// `(step, increase)` wherever `E_m - E_{m-1}` exceeds the relative
    /// tolerance times `|E_{m-1}|`.
    pub violations: Vec<(usize, f64)>,
}

impl EnergyReport {
    /// `values[m]` is the energy after step `m`; `values[0]` is the initial energy.
    pub fn from_series(values: Vec<f64>, rel_tol: f64) -> Self {
        let initial = values.first().copied().unwrap_or(f64::NAN);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let violations = values
            .windows(2)
            .enumerate()
            .filter_map(|(i, w)| {
                let inc = w[1] - w[0];
                (!(inc <= rel_tol * w[0].abs())).then_some((i + 1, inc))
            })
            .collect();
        Self { values, initial, max, violations }
    }

    pub fn is_monotone(&self) -> bool {
        self.violations.is_empty()
    }

    /// Whether every value stays at or below `initial + slack`.
    pub fn bounded_by_initial(&self, slack: f64) -> bool {
        self.values.iter().all(|&e| e <= self.initial + slack)
    }
}
