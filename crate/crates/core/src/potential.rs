//! Reaction terms `f = -F'` and the constants that certify time steps.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Evaluations closer than this to an endpoint of a bounded domain fail.
pub const DOMAIN_GUARD: f64 = 1e-12;

const SAMPLES: usize = 100_000;
const BISECTION_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("evaluation at {value} (index {index}) leaves the domain ({lower}, {upper})")]
    Domain { index: usize, value: f64, lower: f64, upper: f64 },
    #[error("invalid parameters: {0}")]
    Parameters(String),
    #[error("assumption f(beta) <= 0 <= f(-beta) fails for beta = {0}")]
    NotBounded(f64),
    #[error("non-finite evaluation of {what} at x = {x}")]
    NonFinite { what: &'static str, x: f64 },
    #[error("min f' on [-beta, beta] is {0}, expected negative")]
    NoStabilization(f64),
    #[error("{name} = {value} is outside the admissible range")]
    OutOfRange { name: &'static str, value: f64 },
}

/// A pointwise nonlinearity with its derivatives and antiderivative.
pub trait Reaction: fmt::Debug + Send + Sync {
    fn f(&self, x: f64) -> f64;
    fn df(&self, x: f64) -> f64;
    fn d2f(&self, x: f64) -> f64;
    /// The potential `F` with `F' = -f`.
    fn energy(&self, x: f64) -> f64;
    /// Open interval on which `f` is defined.
    fn domain(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

/// `f(u) = u - u^3`, `F(u) = (u^2 - 1)^2 / 4`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DoubleWell;

impl Reaction for DoubleWell {
    fn f(&self, x: f64) -> f64 {
        x - x * x * x
    }
    fn df(&self, x: f64) -> f64 {
        1.0 - 3.0 * x * x
    }
    fn d2f(&self, x: f64) -> f64 {
        -6.0 * x
    }
    fn energy(&self, x: f64) -> f64 {
        let s = x * x - 1.0;
        0.25 * s * s
    }
}

/// Logarithmic Flory-Huggins reaction on `(-1, 1)`.
#[derive(Debug, Clone, Copy)]
pub struct FloryHuggins {
    pub theta: f64,
    pub theta_c: f64,
}

impl Reaction for FloryHuggins {
    fn f(&self, x: f64) -> f64 {
        0.5 * self.theta * ((1.0 - x) / (1.0 + x)).ln() + self.theta_c * x
    }
    fn df(&self, x: f64) -> f64 {
        self.theta_c - self.theta / (1.0 - x * x)
    }
    fn d2f(&self, x: f64) -> f64 {
        let q = 1.0 - x * x;
        -2.0 * self.theta * x / (q * q)
    }
    fn energy(&self, x: f64) -> f64 {
        let xlogx = |y: f64| if y == 0.0 { 0.0 } else { y * y.ln() };
        0.5 * self.theta * (xlogx(1.0 + x) + xlogx(1.0 - x)) - 0.5 * self.theta_c * x * x
    }
    fn domain(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }
}

/// `f = 0`. Reduces every scheme to its linear part.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroReaction;

impl Reaction for ZeroReaction {
    fn f(&self, _: f64) -> f64 {
        0.0
    }
    fn df(&self, _: f64) -> f64 {
        0.0
    }
    fn d2f(&self, _: f64) -> f64 {
        0.0
    }
    fn energy(&self, _: f64) -> f64 {
        0.0
    }
}

/// Serializable choice of built-in potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PotentialSpec {
    DoubleWell,
    FloryHuggins { theta: f64, theta_c: f64 },
}

impl PotentialSpec {
    pub fn build(&self) -> Result<Potential, PotentialError> {
        match *self {
            PotentialSpec::DoubleWell => Ok(Potential::double_well()),
            PotentialSpec::FloryHuggins { theta, theta_c } => Potential::flory_huggins(theta, theta_c),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            PotentialSpec::DoubleWell => "double-well",
            PotentialSpec::FloryHuggins { .. } => "flory-huggins",
        }
    }
}

/// A reaction together with its maximum bound `beta`.
#[derive(Clone)]
pub struct Potential {
    name: String,
    beta: f64,
    reaction: Arc<dyn Reaction>,
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Potential").field("name", &self.name).field("beta", &self.beta).finish()
    }
}

impl Potential {
    /// Wraps a user reaction after checking `f(beta) <= 0 <= f(-beta)`.
    pub fn custom(name: impl Into<String>, reaction: Arc<dyn Reaction>, beta: f64) -> Result<Self, PotentialError> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(PotentialError::OutOfRange { name: "beta", value: beta });
        }
        let p = Self { name: name.into(), beta, reaction };
        p.check_in_domain(beta, 0)?;
        if !(p.reaction.f(beta) <= 0.0 && p.reaction.f(-beta) >= 0.0) {
            return Err(PotentialError::NotBounded(beta));
        }
        Ok(p)
    }

    pub fn double_well() -> Self {
        Self { name: "double-well".into(), beta: 1.0, reaction: Arc::new(DoubleWell) }
    }

    /// Flory-Huggins with `beta` the positive root of `f`, found by bisection.
    pub fn flory_huggins(theta: f64, theta_c: f64) -> Result<Self, PotentialError> {
        if !(theta.is_finite() && theta_c.is_finite() && 0.0 < theta && theta < theta_c) {
            return Err(PotentialError::Parameters(format!(
                "need 0 < theta < theta_c, got theta = {theta}, theta_c = {theta_c}"
            )));
        }
        let r = FloryHuggins { theta, theta_c };
        // f > 0 just right of 0 (f'(0) = theta_c - theta > 0) and f -> -inf at 1
        let (mut lo, mut hi) = (1e-3 * (1.0 - theta / theta_c), 1.0 - DOMAIN_GUARD);
        while r.f(lo) <= 0.0 {
            lo *= 0.5;
        }
        while hi - lo > BISECTION_TOL {
            let mid = 0.5 * (lo + hi);
            if r.f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let beta = 0.5 * (lo + hi);
        Ok(Self { name: "flory-huggins".into(), beta, reaction: Arc::new(r) })
    }

    pub fn zero(beta: f64) -> Self {
        Self { name: "zero".into(), beta, reaction: Arc::new(ZeroReaction) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn reaction(&self) -> &dyn Reaction {
        self.reaction.as_ref()
    }

    pub fn domain(&self) -> (f64, f64) {
        self.reaction.domain()
    }

    fn check_in_domain(&self, x: f64, index: usize) -> Result<(), PotentialError> {
        let (lower, upper) = self.reaction.domain();
        if lower.is_finite() || upper.is_finite() {
            let inside = x > lower + DOMAIN_GUARD && x < upper - DOMAIN_GUARD;
            if !inside {
                return Err(PotentialError::Domain { index, value: x, lower, upper });
            }
        }
        Ok(())
    }

    pub fn f(&self, x: f64) -> Result<f64, PotentialError> {
        self.check_in_domain(x, 0)?;
        Ok(self.reaction.f(x))
    }

    pub fn df(&self, x: f64) -> Result<f64, PotentialError> {
        self.check_in_domain(x, 0)?;
        Ok(self.reaction.df(x))
    }

    pub fn d2f(&self, x: f64) -> Result<f64, PotentialError> {
        self.check_in_domain(x, 0)?;
        Ok(self.reaction.d2f(x))
    }

    pub fn energy(&self, x: f64) -> Result<f64, PotentialError> {
        self.check_in_domain(x, 0)?;
        Ok(self.reaction.energy(x))
    }

    /// `out_i = f(u_i)`.
    pub fn eval_f(&self, u: &[f64], out: &mut [f64]) -> Result<(), PotentialError> {
        self.check_all(u)?;
        for (o, &x) in out.iter_mut().zip(u) {
            *o = self.reaction.f(x);
        }
        Ok(())
    }

    /// `out_i = f(u_i)` and `slope_i = f'(u_i) f(u_i)`.
    pub fn eval_f_and_flow(&self, u: &[f64], out: &mut [f64], slope: &mut [f64]) -> Result<(), PotentialError> {
        self.check_all(u)?;
        for ((o, s), &x) in out.iter_mut().zip(slope.iter_mut()).zip(u) {
            let fx = self.reaction.f(x);
            *o = fx;
            *s = self.reaction.df(x) * fx;
        }
        Ok(())
    }

    /// `sum_i F(u_i)`.
    pub fn total_energy(&self, u: &[f64]) -> Result<f64, PotentialError> {
        self.check_all(u)?;
        Ok(u.iter().map(|&x| self.reaction.energy(x)).sum())
    }

    fn check_all(&self, u: &[f64]) -> Result<(), PotentialError> {
        let (lower, upper) = self.reaction.domain();
        if lower.is_finite() || upper.is_finite() {
            let (lo, hi) = (lower + DOMAIN_GUARD, upper - DOMAIN_GUARD);
            if let Some(i) = u.iter().position(|&x| !(x > lo && x < hi)) {
                return Err(PotentialError::Domain { index: i, value: u[i], lower, upper });
            }
        }
        Ok(())
    }

    /// `x + omega f(x)`, which stays in `[-beta, beta]` for
    /// `|x| <= beta` and `0 < omega <= omega_0`.
    pub fn stabilized_map(&self, bounds: &StabilityBounds, omega: f64, x: f64) -> Result<f64, PotentialError> {
        if !(omega > 0.0 && omega <= bounds.omega0) {
            return Err(PotentialError::OutOfRange { name: "omega", value: omega });
        }
        if !(x.abs() <= self.beta) {
            return Err(PotentialError::OutOfRange { name: "x", value: x });
        }
        Ok(x + omega * self.f(x)?)
    }
}

/// Which second-order step ceiling is in force.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CeilingRegime {
    /// `delta_0 * omega_0`.
    Generic,
    /// `delta * omega_0`, valid when `f(-beta) = f(beta) = 0`.
    Enlarged,
}

/// Constants derived from a potential on `[-beta, beta]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityBounds {
    pub beta: f64,
    pub omega0: f64,
    pub omega1: f64,
    /// `None` when `omega1 <= 0`.
    pub delta: Option<f64>,
    pub delta0: f64,
    /// Step ceiling of the first-order schemes, `omega_0`.
    pub dt_max_first: f64,
    /// Active second-order ceiling (see `regime`).
    pub dt_max_second: f64,
    pub dt_max_second_generic: f64,
    pub dt_max_second_enlarged: Option<f64>,
    pub regime: CeilingRegime,
    pub f0: f64,
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    /// Max `|f'|` on `|x| <= beta + dt_max_second * F0`; infinite when that
    /// interval leaves the domain of `f`.
    pub f1_tilde: f64,
    pub f2_tilde: f64,
    /// `F1 + dt_max_second * F3 / 2`.
    pub f4: f64,
}

impl StabilityBounds {
    pub fn compute(potential: &Potential) -> Result<Self, PotentialError> {
        compute_bounds(potential)
    }
}

/// Maximises `g` on `[a, b]` by dense sampling plus ternary refinement.
fn maximize(mut g: impl FnMut(f64) -> f64, a: f64, b: f64, what: &'static str) -> Result<f64, PotentialError> {
    let step = (b - a) / SAMPLES as f64;
    let x_at = |i: usize| if i == SAMPLES { b } else { a + i as f64 * step };
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..=SAMPLES {
        let x = x_at(i);
        let v = g(x);
        if !v.is_finite() {
            return Err(PotentialError::NonFinite { what, x });
        }
        if v > best.1 {
            best = (i, v);
        }
    }
    let (i, mut value) = best;
    let (mut lo, mut hi) = (x_at(i.saturating_sub(1)), x_at((i + 1).min(SAMPLES)));
    for _ in 0..200 {
        if hi - lo <= 1e-15 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if g(m1) < g(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    for x in [lo, hi, 0.5 * (lo + hi)] {
        let v = g(x);
        if v.is_finite() && v > value {
            value = v;
        }
    }
    Ok(value)
}

pub fn compute_bounds(potential: &Potential) -> Result<StabilityBounds, PotentialError> {
    let r = potential.reaction();
    let beta = potential.beta();
    let (a, b) = (-beta, beta);
    for x in [a, b] {
        potential.check_in_domain(x, 0)?;
    }

    let min_df = -maximize(|x| -r.df(x), a, b, "f'")?;
    if !(min_df < 0.0) {
        return Err(PotentialError::NoStabilization(min_df));
    }
    let omega0 = -1.0 / min_df;
    let omega1 = maximize(|x| -(r.d2f(x) * r.f(x)), a, b, "f'' f")?;
    let delta = (omega1 > 0.0).then(|| {
        let q = omega0 * omega0 * omega1;
        (-1.0 + (1.0 + 7.0 * q).sqrt()) / (2.0 * q)
    });
    let delta0 = delta.map_or(1.0, |d| d.min(1.0));

    let vanishing_ends = r.f(beta).abs() <= 1e-9 && r.f(-beta).abs() <= 1e-9;
    let dt_max_second_generic = delta0 * omega0;
    let dt_max_second_enlarged = if vanishing_ends { delta.map(|d| d * omega0) } else { None };
    let (dt_max_second, regime) = match dt_max_second_enlarged {
        Some(e) => (e, CeilingRegime::Enlarged),
        None => (dt_max_second_generic, CeilingRegime::Generic),
    };

    let f0 = maximize(|x| r.f(x).abs(), a, b, "f")?;
    let f1 = maximize(|x| r.df(x).abs(), a, b, "f'")?;
    let f2 = maximize(|x| r.d2f(x).abs(), a, b, "f''")?;
    let f3 = maximize(|x| (r.d2f(x) * r.f(x) + r.df(x) * r.df(x)).abs(), a, b, "(f' f)'")?;

    let reach = beta + dt_max_second * f0;
    let (lower, upper) = r.domain();
    let (f1_tilde, f2_tilde) = if -reach > lower + DOMAIN_GUARD && reach < upper - DOMAIN_GUARD {
        (
            maximize(|x| r.df(x).abs(), -reach, reach, "f'")?,
            maximize(|x| r.d2f(x).abs(), -reach, reach, "f''")?,
        )
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    let f4 = f1 + 0.5 * dt_max_second * f3;

    Ok(StabilityBounds {
        beta,
        omega0,
        omega1,
        delta,
        delta0,
        dt_max_first: omega0,
        dt_max_second,
        dt_max_second_generic,
        dt_max_second_enlarged,
        regime,
        f0,
        f1,
        f2,
        f3,
        f1_tilde,
        f2_tilde,
        f4,
    })
}
