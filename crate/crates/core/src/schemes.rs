//! One-step maps and the trajectory driver.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expops::{ExpError, Kernel, Propagator};
use crate::potential::{Potential, PotentialError, StabilityBounds};
use crate::spatial::{Field, GridError, GridSpec};

#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Exp(#[from] ExpError),
    #[error("time step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("unknown scheme `{0}` (expected one of LRI1a, LRI1b, LRI2, ETD1, ETDRK2)")]
    UnknownScheme(String),
}

#[derive(Debug, Error)]
pub enum IntegrateError {
    #[error("at least one step is required")]
    NoSteps,
    #[error("step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: StepError,
    },
}

impl IntegrateError {
    /// 1-based index of the failing step, if any.
    pub fn step(&self) -> Option<usize> {
        match self {
            IntegrateError::NoSteps => None,
            IntegrateError::Step { step, .. } => Some(*step),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemeKind {
    #[serde(rename = "LRI1a", alias = "lri1a")]
    Lri1a,
    #[serde(rename = "LRI1b", alias = "lri1b")]
    Lri1b,
    #[serde(rename = "LRI2", alias = "lri2")]
    Lri2,
    #[serde(rename = "ETD1", alias = "etd1")]
    Etd1,
    #[serde(rename = "ETDRK2", alias = "etdrk2")]
    Etdrk2,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 5] =
        [SchemeKind::Lri1a, SchemeKind::Lri1b, SchemeKind::Lri2, SchemeKind::Etd1, SchemeKind::Etdrk2];

    pub fn order(self) -> u32 {
        match self {
            SchemeKind::Lri1a | SchemeKind::Lri1b | SchemeKind::Etd1 => 1,
            SchemeKind::Lri2 | SchemeKind::Etdrk2 => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Lri1a => "LRI1a",
            SchemeKind::Lri1b => "LRI1b",
            SchemeKind::Lri2 => "LRI2",
            SchemeKind::Etd1 => "ETD1",
            SchemeKind::Etdrk2 => "ETDRK2",
        }
    }

    /// Whether the scheme is one of the low-regularity integrators.
    pub fn is_lri(self) -> bool {
        matches!(self, SchemeKind::Lri1a | SchemeKind::Lri1b | SchemeKind::Lri2)
    }

    /// Largest step with a maximum-bound guarantee. The ETD baselines are
    /// reported against the first-order ceiling; no guarantee is claimed.
    pub fn mbp_ceiling(self, bounds: &StabilityBounds) -> f64 {
        match self {
            SchemeKind::Lri2 => bounds.dt_max_second,
            _ => bounds.dt_max_first,
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = StepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| StepError::UnknownScheme(s.to_string()))
    }
}

/// A scheme bound to a step size, propagator and potential.
#[derive(Debug, Clone)]
pub struct Stepper {
    kind: SchemeKind,
    dt: f64,
    propagator: Arc<Propagator>,
    potential: Potential,
}

impl Stepper {
    /// The step size is the propagator's time.
    pub fn new(kind: SchemeKind, propagator: Arc<Propagator>, potential: Potential) -> Result<Self, StepError> {
        let dt = propagator.time();
        if !(dt.is_finite() && dt > 0.0) {
            return Err(StepError::BadStep(dt));
        }
        Ok(Self { kind, dt, propagator, potential })
    }

    pub fn build(kind: SchemeKind, grid: &GridSpec, eps: f64, dt: f64, potential: Potential) -> Result<Self, StepError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(StepError::BadStep(dt));
        }
        Self::new(kind, Arc::new(Propagator::for_grid(grid, eps, dt)?), potential)
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn propagator(&self) -> &Propagator {
        &self.propagator
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn grid(&self) -> &GridSpec {
        self.propagator.grid()
    }

    pub fn step(&self, u: &Field) -> Result<Field, StepError> {
        if u.grid().n_axis() != self.grid().n_axis() {
            return Err(GridError::ShapeMismatch { expected: self.grid().len(), got: u.values().len() }.into());
        }
        let values = match self.kind {
            SchemeKind::Lri1a => self.lri1a(u.values())?,
            SchemeKind::Lri1b => self.lri1b(u.values())?,
            SchemeKind::Lri2 => self.lri2(u.values())?,
            SchemeKind::Etd1 => self.etd1(u.values())?,
            SchemeKind::Etdrk2 => self.etdrk2(u.values())?,
        };
        Ok(Field::from_parts(self.grid().clone(), values))
    }

    fn f(&self, u: &[f64]) -> Result<Vec<f64>, PotentialError> {
        let mut out = vec![0.0; u.len()];
        self.potential.eval_f(u, &mut out)?;
        Ok(out)
    }

    fn exp(&self, v: &[f64]) -> Vec<f64> {
        self.propagator.combine(&[(Kernel::Exp, 1.0, v)])
    }

    // e^{dt A}(u + dt f(u))
    fn lri1a(&self, u: &[f64]) -> Result<Vec<f64>, StepError> {
        let mut w = self.f(u)?;
        for (w, &x) in w.iter_mut().zip(u) {
            *w = x + self.dt * *w;
        }
        Ok(self.exp(&w))
    }

    // v + dt f(v), v = e^{dt A} u
    fn lri1b(&self, u: &[f64]) -> Result<Vec<f64>, StepError> {
        let mut v = self.exp(u);
        let fv = self.f(&v)?;
        for (v, fv) in v.iter_mut().zip(fv) {
            *v += self.dt * fv;
        }
        Ok(v)
    }

    // v + dt/2 f(v) + e^{dt A}[dt/2 f(u) + dt^2/2 f'(u) f(u)]
    fn lri2(&self, u: &[f64]) -> Result<Vec<f64>, StepError> {
        let n = u.len();
        let (mut fu, mut flow) = (vec![0.0; n], vec![0.0; n]);
        self.potential.eval_f_and_flow(u, &mut fu, &mut flow)?;
        let half = 0.5 * self.dt;
        let w: Vec<f64> = fu.iter().zip(&flow).map(|(a, b)| half * a + half * self.dt * b).collect();
        let mut v = self.exp(u);
        let fv = self.f(&v)?;
        let ew = self.exp(&w);
        for ((v, fv), ew) in v.iter_mut().zip(fv).zip(ew) {
            *v += half * fv + ew;
        }
        Ok(v)
    }

    // e^{dt A} u + dt phi1(dt A) f(u)
    fn etd1(&self, u: &[f64]) -> Result<Vec<f64>, StepError> {
        let fu = self.f(u)?;
        Ok(self.propagator.combine(&[(Kernel::Exp, 1.0, u), (Kernel::Phi1, self.dt, &fu)]))
    }

    fn etdrk2(&self, u: &[f64]) -> Result<Vec<f64>, StepError> {
        let fu = self.f(u)?;
        let mut pred = self.propagator.combine(&[(Kernel::Exp, 1.0, u), (Kernel::Phi1, self.dt, &fu)]);
        let mut diff = self.f(&pred)?;
        for (d, a) in diff.iter_mut().zip(&fu) {
            *d -= a;
        }
        let corr = self.propagator.combine(&[(Kernel::Phi2, self.dt, &diff)]);
        for (p, c) in pred.iter_mut().zip(corr) {
            *p += c;
        }
        Ok(pred)
    }
}

/// Outcome of [`integrate`].
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Last computed field; non-finite when the run diverged.
    pub final_field: Field,
    pub steps_taken: usize,
    /// First step whose output contained a non-finite value.
    pub diverged_at: Option<usize>,
}

impl Trajectory {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

/// Takes `steps` steps from `u0`, calling `monitor(m, &U_m)` after step
/// `m` (1-based). Stops early at the first non-finite iterate, which is
/// recorded rather than reported as an error.
pub fn integrate(
    stepper: &Stepper,
    u0: &Field,
    steps: usize,
    mut monitor: Option<&mut dyn FnMut(usize, &Field)>,
) -> Result<Trajectory, IntegrateError> {
    if steps == 0 {
        return Err(IntegrateError::NoSteps);
    }
    let mut u = u0.clone();
    for m in 1..=steps {
        u = stepper.step(&u).map_err(|source| IntegrateError::Step { step: m, source })?;
        if !u.is_finite() {
            return Ok(Trajectory { final_field: u, steps_taken: m, diverged_at: Some(m) });
        }
        if let Some(cb) = monitor.as_mut() {
            cb(m, &u);
        }
    }
    Ok(Trajectory { final_field: u, steps_taken: steps, diverged_at: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::Boundary;

    fn grid() -> GridSpec {
        GridSpec::centered(2, 1.0, 6, Boundary::Neumann).unwrap()
    }

    fn stepper(kind: SchemeKind, eps: f64, dt: f64, p: Potential) -> Stepper {
        Stepper::build(kind, &grid(), eps, dt, p).unwrap()
    }

    fn bump(g: &GridSpec) -> Field {
        Field::from_fn(g, |x| 0.8 * (3.0 * x[0]).cos() * (2.0 * x[1]).sin())
    }

    fn assert_const(f: &Field, value: f64, tol: f64) {
        for &x in f.values() {
            assert!((x - value).abs() <= tol, "{x} vs {value}");
        }
    }

    #[test]
    fn names_round_trip() {
        for k in SchemeKind::ALL {
            assert_eq!(k.name().parse::<SchemeKind>().unwrap(), k);
            assert_eq!(k.name().to_lowercase().parse::<SchemeKind>().unwrap(), k);
        }
        assert!("RK4".parse::<SchemeKind>().is_err());
        assert_eq!(serde_json::to_string(&SchemeKind::Lri1b).unwrap(), "\"LRI1b\"");
    }

    #[test]
    fn zero_eps_first_order_is_forward_euler() {
        let g = grid();
        let u = Field::constant(&g, 0.5);
        for k in [SchemeKind::Lri1a, SchemeKind::Lri1b, SchemeKind::Etd1] {
            let out = stepper(k, 0.0, 0.1, Potential::double_well()).step(&u).unwrap();
            assert_const(&out, 0.5375, 1e-15);
        }
        let v = bump(&g);
        let a = stepper(SchemeKind::Lri1a, 0.0, 0.1, Potential::double_well()).step(&v).unwrap();
        let b = stepper(SchemeKind::Lri1b, 0.0, 0.1, Potential::double_well()).step(&v).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn zero_eps_lri2_value() {
        let u = Field::constant(&grid(), 0.5);
        let out = stepper(SchemeKind::Lri2, 0.0, 0.1, Potential::double_well()).step(&u).unwrap();
        assert_const(&out, 0.53796875, 1e-15);
    }

    #[test]
    fn zero_eps_etdrk2_is_heun() {
        let g = grid();
        let u = bump(&g);
        let dt = 0.1;
        let out = stepper(SchemeKind::Etdrk2, 0.0, dt, Potential::double_well()).step(&u).unwrap();
        let f = |x: f64| x - x * x * x;
        for (&x, &y) in u.values().iter().zip(out.values()) {
            let heun = x + 0.5 * dt * (f(x) + f(x + dt * f(x)));
            assert!((y - heun).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_reaction_reduces_to_exponential() {
        let g = grid();
        let u = bump(&g);
        let p = Propagator::for_grid(&g, 0.3, 0.05).unwrap();
        let want = p.apply_exp(&u).unwrap();
        for k in SchemeKind::ALL {
            let out = stepper(k, 0.3, 0.05, Potential::zero(1.0)).step(&u).unwrap();
            for (a, b) in out.values().iter().zip(want.values()) {
                assert!((a - b).abs() < 1e-14, "{k}");
            }
        }
    }

    #[test]
    fn pure_phases_are_fixed_points() {
        let g = grid();
        for k in SchemeKind::ALL {
            for c in [1.0, -1.0] {
                let out = stepper(k, 0.2, 0.37, Potential::double_well()).step(&Field::constant(&g, c)).unwrap();
                assert_const(&out, c, 1e-13);
            }
        }
    }

    #[test]
    fn integrate_contract() {
        let g = grid();
        let s = stepper(SchemeKind::Lri2, 0.2, 0.1, Potential::double_well());
        let u = bump(&g);
        assert!(matches!(integrate(&s, &u, 0, None), Err(IntegrateError::NoSteps)));
        let one = integrate(&s, &u, 1, None).unwrap();
        assert_eq!(one.final_field.values(), s.step(&u).unwrap().values());

        let mut seen = Vec::new();
        let mut cb = |m: usize, f: &Field| seen.push((m, f.sup_norm()));
        let with = integrate(&s, &u, 5, Some(&mut cb)).unwrap();
        let without = integrate(&s, &u, 5, None).unwrap();
        assert_eq!(with.final_field.values(), without.final_field.values());
        assert_eq!(seen.iter().map(|s| s.0).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn divergence_is_recorded() {
        let g = grid();
        let s = stepper(SchemeKind::Lri1b, 0.0, 5.0, Potential::double_well());
        let u = Field::constant(&g, 3.0);
        let t = integrate(&s, &u, 50, None).unwrap();
        assert!(t.diverged());
        assert!(t.steps_taken < 50);
    }

    #[test]
    fn domain_breach_reports_step() {
        let g = grid();
        let fh = Potential::flory_huggins(0.8, 1.6).unwrap();
        let s = stepper(SchemeKind::Lri1b, 0.0, 0.5, fh);
        // forward Euler with a step four times the ceiling overshoots (-1, 1)
        let u = Field::constant(&g, 0.3);
        let err = integrate(&s, &u, 20, None).unwrap_err();
        assert!(err.step().is_some());
        assert!(matches!(err, IntegrateError::Step { source: StepError::Potential(PotentialError::Domain { .. }), .. }));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Stepper::build(SchemeKind::Lri1a, &grid(), 0.1, 0.0, Potential::double_well()),
            Err(StepError::BadStep(_))
        ));
        let s = stepper(SchemeKind::Lri1a, 0.1, 0.1, Potential::double_well());
        let other = GridSpec::centered(2, 1.0, 4, Boundary::Neumann).unwrap();
        assert!(s.step(&Field::constant(&other, 0.0)).is_err());
    }
}
