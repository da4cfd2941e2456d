//! The traveling-wave convergence study and seeded coarsening runs.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{convergence_rates, discrete_energy, error_norms, DiagnosticsError};
use crate::expops::{ExpError, Propagator};
use crate::potential::{compute_bounds, Potential, PotentialError, PotentialSpec, StabilityBounds};
use crate::schemes::{integrate, IntegrateError, SchemeKind, StepError, Stepper};
use crate::spatial::{Boundary, Field, GridError, GridSpec};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Exp(#[from] ExpError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

fn config_err(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

/// Speed `3 eps / sqrt(2)` of the traveling front.
pub fn wave_speed(eps: f64) -> f64 {
    3.0 * eps / std::f64::consts::SQRT_2
}

/// `u = (1 - tanh((x - s t) / (2 sqrt(2) eps))) / 2`, with `x` the first coordinate.
pub fn traveling_wave_field(grid: &GridSpec, eps: f64, t: f64) -> Field {
    let s = wave_speed(eps);
    let width = 2.0 * std::f64::consts::SQRT_2 * eps;
    Field::from_fn(grid, |x| 0.5 * (1.0 - ((x[0] - s * t) / width).tanh()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveConfig {
    pub eps: f64,
    /// Mesh size is `1 / h_denom` on the unit square centred at the origin.
    pub h_denom: usize,
    pub dim: usize,
    /// Each step size is `T / divisor`.
    pub dt_divisors: Vec<u32>,
    pub schemes: Vec<SchemeKind>,
}

impl Default for WaveConfig {
    fn default() -> Self {
        Self::desk(0.02)
    }
}

impl WaveConfig {
    pub fn desk(eps: f64) -> Self {
        Self {
            eps,
            h_denom: 256,
            dim: 2,
            dt_divisors: vec![32, 64, 128, 256, 512, 1024],
            schemes: SchemeKind::ALL.to_vec(),
        }
    }

    pub fn full_scale(eps: f64) -> Self {
        Self { h_denom: 2048, ..Self::desk(eps) }
    }

    pub fn final_time(&self) -> f64 {
        1.0 / (4.0 * wave_speed(self.eps))
    }

    pub fn grid(&self) -> Result<GridSpec, GridError> {
        GridSpec::centered(self.dim, 1.0, self.h_denom, Boundary::Neumann)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(config_err(format!("eps must be positive, got {}", self.eps)));
        }
        if self.h_denom < 2 {
            return Err(config_err("h_denom must be at least 2"));
        }
        if self.dt_divisors.is_empty() || self.dt_divisors.contains(&0) {
            return Err(config_err("dt divisors must be non-empty and positive"));
        }
        if self.dt_divisors.windows(2).any(|w| w[0] >= w[1]) {
            return Err(config_err("dt divisors must be strictly increasing"));
        }
        if self.schemes.is_empty() {
            return Err(config_err("at least one scheme is required"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub scheme: SchemeKind,
    pub divisor: u32,
    pub dt: f64,
    pub l2_error: f64,
    pub l2_rate: Option<f64>,
    pub linf_error: f64,
    pub linf_rate: Option<f64>,
    pub diverged: bool,
    /// `dt` is within the scheme's maximum-bound ceiling.
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub eps: f64,
    pub final_time: f64,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn rows_for(&self, scheme: SchemeKind) -> impl Iterator<Item = &ConvergenceRow> {
        self.rows.iter().filter(move |r| r.scheme == scheme)
    }

    pub fn any_uncertified(&self) -> bool {
        self.rows.iter().any(|r| !r.certified)
    }
}

/// Result of one `(scheme, dt)` cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellResult {
    pub l2: f64,
    pub linf: f64,
    pub diverged: bool,
}

/// Integrates the wave to `T` with step `T / divisor` and measures the error.
pub fn run_wave_cell(
    config: &WaveConfig,
    grid: &GridSpec,
    propagator: Arc<Propagator>,
    scheme: SchemeKind,
    divisor: u32,
) -> Result<CellResult, ExperimentError> {
    let stepper = Stepper::new(scheme, propagator, Potential::double_well())?;
    let u0 = traveling_wave_field(grid, config.eps, 0.0);
    let traj = integrate(&stepper, &u0, divisor as usize, None)?;
    if traj.diverged() {
        return Ok(CellResult { l2: f64::NAN, linf: f64::NAN, diverged: true });
    }
    let exact = traveling_wave_field(grid, config.eps, config.final_time());
    let (l2, linf) = error_norms(&traj.final_field, &exact)?;
    Ok(CellResult { l2, linf, diverged: false })
}

/// Runs every `(scheme, dt)` cell, in parallel, and assembles the table
/// in configuration order.
pub fn run_convergence(config: &WaveConfig) -> Result<ConvergenceTable, ExperimentError> {
    config.validate()?;
    let grid = config.grid()?;
    let axes = grid.axes()?;
    let t_final = config.final_time();
    let bounds = compute_bounds(&Potential::double_well())?;

    let propagators: Vec<Arc<Propagator>> = config
        .dt_divisors
        .iter()
        .map(|&d| Propagator::new(&grid, &axes, config.eps, t_final / d as f64).map(Arc::new))
        .collect::<Result<_, _>>()?;

    let cells: Vec<(usize, usize)> = (0..config.schemes.len())
        .flat_map(|s| (0..config.dt_divisors.len()).map(move |d| (s, d)))
        .collect();
    let results: Vec<CellResult> = cells
        .par_iter()
        .map(|&(s, d)| {
            run_wave_cell(config, &grid, propagators[d].clone(), config.schemes[s], config.dt_divisors[d])
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::with_capacity(cells.len());
    for (s, &scheme) in config.schemes.iter().enumerate() {
        let chunk = &results[s * config.dt_divisors.len()..(s + 1) * config.dt_divisors.len()];
        let dts: Vec<f64> = config.dt_divisors.iter().map(|&d| t_final / d as f64).collect();
        let l2: Vec<f64> = chunk.iter().map(|c| c.l2).collect();
        let linf: Vec<f64> = chunk.iter().map(|c| c.linf).collect();
        let (l2_rates, linf_rates) = if dts.len() >= 2 {
            (convergence_rates(&l2, &dts)?, convergence_rates(&linf, &dts)?)
        } else {
            (vec![None], vec![None])
        };
        let ceiling = scheme.mbp_ceiling(&bounds);
        for (k, cell) in chunk.iter().enumerate() {
            rows.push(ConvergenceRow {
                scheme,
                divisor: config.dt_divisors[k],
                dt: dts[k],
                l2_error: cell.l2,
                l2_rate: l2_rates[k],
                linf_error: cell.linf,
                linf_rate: linf_rates[k],
                diverged: cell.diverged,
                certified: dts[k] <= ceiling,
            });
        }
    }
    Ok(ConvergenceTable { eps: config.eps, final_time: t_final, rows })
}

/// I.i.d. uniform values on `[lo, hi]` from a ChaCha8 stream seeded by `seed`.
pub fn random_field(grid: &GridSpec, lo: f64, hi: f64, seed: u64) -> Result<Field, ExperimentError> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(config_err(format!("need lo < hi, got [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(lo, hi);
    let values = (0..grid.len()).map(|_| dist.sample(&mut rng)).collect();
    Ok(Field::new(grid.clone(), values)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoarsenConfig {
    pub potential: PotentialSpec,
    pub scheme: SchemeKind,
    pub eps: f64,
    /// Nodes per axis of the periodic unit square.
    pub n: usize,
    pub dt: f64,
    pub t_final: f64,
    pub seed: u64,
    pub init_range: (f64, f64),
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Slack allowed above `beta` before a step counts as a violation.
    pub mbp_tol: f64,
}

impl CoarsenConfig {
    /// Desk-scale run at the certified ceiling used in the reference figures.
    pub fn desk(potential: PotentialSpec, scheme: SchemeKind) -> Self {
        let (dt, init_range) = match (potential, scheme) {
            (PotentialSpec::DoubleWell, SchemeKind::Lri2) => (0.6, (-1.0, 1.0)),
            (PotentialSpec::DoubleWell, _) => (0.5, (-1.0, 1.0)),
            (PotentialSpec::FloryHuggins { .. }, SchemeKind::Lri2) => (0.17, (-0.9, 0.9)),
            (PotentialSpec::FloryHuggins { .. }, _) => (0.12, (-0.9, 0.9)),
        };
        Self {
            potential,
            scheme,
            eps: 0.01,
            n: 128,
            dt,
            t_final: 50.0,
            seed: 20230101,
            init_range,
            snapshot_times: Vec::new(),
            mbp_tol: 1e-9,
        }
    }

    pub fn grid(&self) -> Result<GridSpec, GridError> {
        GridSpec::centered(2, 1.0, self.n, Boundary::Periodic)
    }

    /// `ceil(T / dt)`, ignoring round-off just above an integer.
    pub fn steps(&self) -> usize {
        let ratio = self.t_final / self.dt;
        let r = ratio.round();
        if (ratio - r).abs() <= 1e-9 * ratio.max(1.0) {
            r as usize
        } else {
            ratio.ceil() as usize
        }
    }

    /// Step index nearest to time `t`.
    pub fn nearest_step(&self, t: f64) -> usize {
        ((t / self.dt).round() as usize).min(self.steps())
    }

    pub fn validate(&self, potential: &Potential) -> Result<(), ExperimentError> {
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(config_err(format!("eps must be non-negative, got {}", self.eps)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(config_err(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(config_err(format!("T must be positive, got {}", self.t_final)));
        }
        let (lo, hi) = self.init_range;
        let beta = potential.beta();
        if !(lo < hi && lo >= -beta && hi <= beta) {
            return Err(config_err(format!("initial range [{lo}, {hi}] must lie inside [-{beta}, {beta}]")));
        }
        if let Some(t) = self.snapshot_times.iter().find(|&&t| !(0.0..=self.t_final).contains(&t)) {
            return Err(config_err(format!("snapshot time {t} is outside [0, {}]", self.t_final)));
        }
        if !(self.mbp_tol >= 0.0) {
            return Err(config_err("mbp_tol must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub requested: f64,
    pub time: f64,
    pub step: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Anomaly {
    /// A non-finite value appeared at this step.
    Diverged { step: usize },
    /// The iterate after this step left the domain of the potential.
    DomainBreach { step: usize, message: String },
    /// First step whose sup-norm exceeded `beta + mbp_tol`.
    MbpViolation { step: usize, sup_norm: f64 },
}

impl Anomaly {
    pub fn step(&self) -> usize {
        match self {
            Anomaly::Diverged { step } | Anomaly::DomainBreach { step, .. } | Anomaly::MbpViolation { step, .. } => {
                *step
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub beta: f64,
    pub bounds: StabilityBounds,
    pub dt: f64,
    /// Entry `m` refers to `U_m`, starting from the initial field.
    pub times: Vec<f64>,
    pub sup_norm: Vec<f64>,
    pub energy: Vec<f64>,
    /// `||U_m - U_{m-1}||_inf` for `m >= 1`.
    pub increments: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub final_values: Vec<f64>,
    pub anomaly: Option<Anomaly>,
}

impl RunReport {
    pub fn steps_recorded(&self) -> usize {
        self.times.len().saturating_sub(1)
    }
}

/// Integrates from a seeded random field, recording sup-norm, energy and
/// increment series and the requested snapshots.
pub fn run_coarsening(config: &CoarsenConfig) -> Result<RunReport, ExperimentError> {
    let potential = config.potential.build()?;
    config.validate(&potential)?;
    let bounds = compute_bounds(&potential)?;
    let beta = potential.beta();
    let grid = config.grid()?;
    let (lo, hi) = config.init_range;
    let u0 = random_field(&grid, lo, hi, config.seed)?;
    let stepper = Stepper::build(config.scheme, &grid, config.eps, config.dt, potential.clone())?;
    let steps = config.steps();

    let mut wanted: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &t in &config.snapshot_times {
        wanted.entry(config.nearest_step(t)).or_default().push(t);
    }
    let mut snapshots = Vec::new();
    let take = |step: usize, values: &[f64], snapshots: &mut Vec<Snapshot>| {
        if let Some(ts) = wanted.get(&step) {
            for &requested in ts {
                snapshots.push(Snapshot { requested, time: step as f64 * config.dt, step, values: values.to_vec() });
            }
        }
    };

    let mut times = vec![0.0];
    let mut sup_norm = vec![u0.sup_norm()];
    let mut energy = vec![discrete_energy(&u0, config.eps, &potential)?];
    let mut increments = Vec::new();
    take(0, u0.values(), &mut snapshots);

    let mut prev = u0.values().to_vec();
    let mut breach: Option<(usize, String)> = None;
    let mut monitor = |m: usize, u: &Field| {
        times.push(m as f64 * config.dt);
        sup_norm.push(u.sup_norm());
        let e = match discrete_energy(u, config.eps, &potential) {
            Ok(e) => e,
            Err(err) => {
                breach.get_or_insert((m, err.to_string()));
                f64::NAN
            }
        };
        energy.push(e);
        let inc = u.values().iter().zip(&prev).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        increments.push(inc);
        prev.copy_from_slice(u.values());
        take(m, u.values(), &mut snapshots);
    };
    let outcome = integrate(&stepper, &u0, steps, Some(&mut monitor));

    let (final_values, mut anomaly) = match outcome {
        Ok(traj) => {
            let anomaly = traj.diverged_at.map(|step| Anomaly::Diverged { step });
            (traj.final_field.into_values(), anomaly)
        }
        Err(IntegrateError::Step { step, source: StepError::Potential(err) }) => {
            let (step, message) = breach.clone().unwrap_or((step, err.to_string()));
            (prev.clone(), Some(Anomaly::DomainBreach { step, message }))
        }
        Err(other) => return Err(other.into()),
    };
    if let Some((step, message)) = breach {
        anomaly.get_or_insert(Anomaly::DomainBreach { step, message });
    }
    if let Some(step) = sup_norm.iter().position(|&s| !(s <= beta + config.mbp_tol)) {
        let violation = Anomaly::MbpViolation { step, sup_norm: sup_norm[step] };
        anomaly = match anomaly {
            Some(a) if a.step() <= step => Some(a),
            _ => Some(violation),
        };
    }

    Ok(RunReport {
        beta,
        bounds,
        dt: config.dt,
        times,
        sup_norm,
        energy,
        increments,
        snapshots,
        final_values,
        anomaly,
    })
}
