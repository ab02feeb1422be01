//! Problem definition for a neutral stochastic delay differential equation
//!
//! ```text
//! d[x(t) - D(x(t - τ))] = b(x(t), x(t - τ)) dt + σ(x(t), x(t - τ)) dB(t),   t ∈ [0, T]
//! x(t) = ξ(t),                                                              t ∈ [-τ, 0]
//! ```
//!
//! driven by a scalar Brownian motion. The Milstein correction terms are
//! supplied directly as the products `σ₁σ` and `σ₂σ` (with `σ₁ = ∂σ/∂x`,
//! `σ₂ = ∂σ/∂y`), which is how the one-step map consumes them.

use std::fmt;
use std::sync::Arc;

use num_rational::Ratio;
use thiserror::Error;

/// Exact rational used for the delay, horizon and step sizes.
pub type Rational = Ratio<i64>;

pub fn rational_to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

type NeutralFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type PairFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
type QuadFn = dyn Fn(&[f64], &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync;
type SegmentFn = dyn Fn(f64, &mut [f64]) + Send + Sync;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("neutral contraction constant kappa = {kappa} is outside (0, 1)")]
    ContractionViolated { kappa: f64 },
    #[error("neutral term does not vanish at the origin: |D(0)| = {norm}")]
    NeutralOriginViolated { norm: f64 },
    #[error("delay {delay} and horizon {horizon} admit no common step")]
    GridMismatch { delay: Rational, horizon: Rational },
    #[error("Khasminskii exponent p = {p} must exceed 2")]
    BadExponent { p: f64 },
    #[error("delay must be positive, got {0}")]
    BadDelay(Rational),
    #[error("horizon {horizon} must exceed the delay {delay}")]
    BadHorizon { delay: Rational, horizon: Rational },
    #[error("time {t} lies outside the extended initial segment [{lower}, 0]")]
    OutOfSegment { t: f64, lower: f64 },
    #[error("unknown problem '{0}'")]
    UnknownProblem(String),
}

/// Coefficient functions of the equation, all acting on `R^n` states.
///
/// Every function writes its result into the trailing `out` slice, which has
/// length `dim`. A fresh set has all coefficients identically zero.
#[derive(Clone)]
pub struct CoefficientSet {
    dim: usize,
    neutral: Arc<NeutralFn>,
    drift: Arc<PairFn>,
    diffusion: Arc<PairFn>,
    sigma1_sigma: Arc<PairFn>,
    sigma2_sigma: Arc<QuadFn>,
}

impl CoefficientSet {
    pub fn zero(dim: usize) -> Self {
        assert!(dim > 0, "state dimension must be positive");
        let pair: Arc<PairFn> = Arc::new(|_: &[f64], _: &[f64], out: &mut [f64]| out.fill(0.0));
        Self {
            dim,
            neutral: Arc::new(|_: &[f64], out: &mut [f64]| out.fill(0.0)),
            drift: pair.clone(),
            diffusion: pair.clone(),
            sigma1_sigma: pair,
            sigma2_sigma: Arc::new(|_: &[f64], _: &[f64], _: &[f64], _: &[f64], out: &mut [f64]| {
                out.fill(0.0)
            }),
        }
    }

    /// One-dimensional coefficients given as scalar closures.
    ///
    /// `sigma2_sigma(x, y, u, v)` must return `σ₂(x, y) · σ(u, v)`.
    pub fn scalar<N, B, S, S1, S2>(
        neutral: N,
        drift: B,
        diffusion: S,
        sigma1_sigma: S1,
        sigma2_sigma: S2,
    ) -> Self
    where
        N: Fn(f64) -> f64 + Send + Sync + 'static,
        B: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        S: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        S1: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        S2: Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            dim: 1,
            neutral: Arc::new(move |y, out| out[0] = neutral(y[0])),
            drift: Arc::new(move |x, y, out| out[0] = drift(x[0], y[0])),
            diffusion: Arc::new(move |x, y, out| out[0] = diffusion(x[0], y[0])),
            sigma1_sigma: Arc::new(move |x, y, out| out[0] = sigma1_sigma(x[0], y[0])),
            sigma2_sigma: Arc::new(move |x, y, u, v, out| out[0] = sigma2_sigma(x[0], y[0], u[0], v[0])),
        }
    }

    pub fn with_neutral(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.neutral = Arc::new(f);
        self
    }

    pub fn with_drift(mut self, f: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.drift = Arc::new(f);
        self
    }

    pub fn with_diffusion(mut self, f: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.diffusion = Arc::new(f);
        self
    }

    pub fn with_sigma1_sigma(
        mut self,
        f: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.sigma1_sigma = Arc::new(f);
        self
    }

    pub fn with_sigma2_sigma(
        mut self,
        f: impl Fn(&[f64], &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.sigma2_sigma = Arc::new(f);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `D(y)`
    #[inline]
    pub fn neutral(&self, y: &[f64], out: &mut [f64]) {
        (self.neutral)(y, out)
    }

    /// `b(x, y)`
    #[inline]
    pub fn drift(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.drift)(x, y, out)
    }

    /// `σ(x, y)`
    #[inline]
    pub fn diffusion(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, y, out)
    }

    /// `σ₁(x, y) σ(x, y)`
    #[inline]
    pub fn sigma1_sigma(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.sigma1_sigma)(x, y, out)
    }

    /// `σ₂(x, y) σ(u, v)`
    #[inline]
    pub fn sigma2_sigma(&self, x: &[f64], y: &[f64], u: &[f64], v: &[f64], out: &mut [f64]) {
        (self.sigma2_sigma)(x, y, u, v, out)
    }
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet").field("dim", &self.dim).finish_non_exhaustive()
    }
}

/// Deterministic initial path `ξ` on `[-τ, 0]`.
///
/// Queries in `[-2τ, -τ)` return `ξ(-τ)`; the σ₂ correction term reaches
/// that far back during the first `2m` steps.
#[derive(Clone)]
pub struct InitialSegment {
    eval: Arc<SegmentFn>,
    /// Declared Lipschitz-in-time constant of the segment.
    pub holder_constant: f64,
}

impl InitialSegment {
    pub fn new(holder_constant: f64, f: impl Fn(f64, &mut [f64]) + Send + Sync + 'static) -> Self {
        Self { eval: Arc::new(f), holder_constant }
    }

    pub fn scalar(holder_constant: f64, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(holder_constant, move |t, out| out[0] = f(t))
    }

    /// Constant segment `ξ ≡ value`.
    pub fn constant(value: Vec<f64>) -> Self {
        Self::new(0.0, move |_, out| out.copy_from_slice(&value))
    }

    /// Raw evaluation with no domain check or extension.
    pub fn eval_raw(&self, t: f64, out: &mut [f64]) {
        (self.eval)(t, out)
    }
}

impl fmt::Debug for InitialSegment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InitialSegment")
            .field("holder_constant", &self.holder_constant)
            .finish_non_exhaustive()
    }
}

/// Taming exponent `α ∈ (0, 1/2]` of the drift `b / (1 + Δ^α |b|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TamingParams {
    alpha: f64,
}

impl TamingParams {
    pub fn new(alpha: f64) -> Option<Self> {
        (alpha > 0.0 && alpha <= 0.5).then_some(Self { alpha })
    }

    pub fn alpha(self) -> f64 {
        self.alpha
    }
}

impl Default for TamingParams {
    fn default() -> Self {
        Self { alpha: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct NsddeProblem {
    pub name: String,
    pub coefficients: CoefficientSet,
    pub segment: InitialSegment,
    pub delay: Rational,
    pub horizon: Rational,
    /// Declared contraction constant of `D`.
    pub kappa: f64,
    /// Declared Khasminskii constant `K1`.
    pub khasminskii_k1: f64,
    /// Khasminskii exponent `p`.
    pub khasminskii_p: f64,
}

impl NsddeProblem {
    pub fn dim(&self) -> usize {
        self.coefficients.dim()
    }

    pub fn delay_f64(&self) -> f64 {
        rational_to_f64(self.delay)
    }

    pub fn horizon_f64(&self) -> f64 {
        rational_to_f64(self.horizon)
    }

    /// `ξ(t)` for `t ∈ [-τ, 0]`, `ξ(-τ)` for `t ∈ [-2τ, -τ)`.
    pub fn evaluate_segment(&self, t: f64) -> Result<Vec<f64>, ProblemError> {
        let mut out = vec![0.0; self.dim()];
        self.evaluate_segment_into(t, &mut out)?;
        Ok(out)
    }

    pub fn evaluate_segment_into(&self, t: f64, out: &mut [f64]) -> Result<(), ProblemError> {
        let tau = self.delay_f64();
        if !(t >= -2.0 * tau && t <= 0.0) {
            return Err(ProblemError::OutOfSegment { t, lower: -2.0 * tau });
        }
        self.segment.eval_raw(if t < -tau { -tau } else { t }, out);
        Ok(())
    }

    /// Largest step dividing both the delay and the horizon.
    pub fn common_step(&self) -> Option<Rational> {
        if *self.delay.numer() <= 0 || *self.horizon.numer() <= 0 {
            return None;
        }
        let (a, b) = (self.delay, self.horizon);
        let num = gcd(a.numer() * b.denom(), b.numer() * a.denom());
        Some(Rational::new(num, a.denom() * b.denom()))
    }
}

fn gcd(mut a: i64, mut b: i64) -> i64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    Contraction,
    NeutralOrigin,
    PositiveDelay,
    HorizonBeyondDelay,
    Commensurable,
    Exponent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleOutcome {
    pub rule: Rule,
    pub error: Option<ProblemError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub outcomes: Vec<RuleOutcome>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.error.is_none())
    }

    pub fn failures(&self) -> impl Iterator<Item = &ProblemError> {
        self.outcomes.iter().filter_map(|o| o.error.as_ref())
    }

    pub fn into_result(self) -> Result<(), ProblemError> {
        match self.outcomes.into_iter().find_map(|o| o.error) {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// Checks the structural rules a problem must satisfy before simulation.
pub fn validate_problem(problem: &NsddeProblem) -> ValidationReport {
    let mut origin = vec![0.0; problem.dim()];
    problem.coefficients.neutral(&vec![0.0; problem.dim()], &mut origin);
    let origin_norm = norm(&origin);

    let (tau, t) = (problem.delay, problem.horizon);
    let zero = Rational::from_integer(0);
    let check = |rule, ok: bool, err: ProblemError| RuleOutcome { rule, error: (!ok).then_some(err) };

    let outcomes = vec![
        check(
            Rule::Contraction,
            problem.kappa > 0.0 && problem.kappa < 1.0,
            ProblemError::ContractionViolated { kappa: problem.kappa },
        ),
        check(
            Rule::NeutralOrigin,
            origin_norm == 0.0,
            ProblemError::NeutralOriginViolated { norm: origin_norm },
        ),
        check(Rule::PositiveDelay, tau > zero, ProblemError::BadDelay(tau)),
        check(Rule::HorizonBeyondDelay, t > tau, ProblemError::BadHorizon { delay: tau, horizon: t }),
        check(
            Rule::Commensurable,
            problem.common_step().is_some(),
            ProblemError::GridMismatch { delay: tau, horizon: t },
        ),
        check(
            Rule::Exponent,
            problem.khasminskii_p > 2.0,
            ProblemError::BadExponent { p: problem.khasminskii_p },
        ),
    ];
    ValidationReport { outcomes }
}

pub const BUILTIN_NAMES: [&str; 3] = ["linear-sdde", "cubic-tamed", "pure-neutral"];

/// Registered test problems, addressed by name.
///
/// The declared `K1` values are the sampled maxima reported by the
/// assumption checker on the ball of radius 10, rounded up.
pub fn builtin_problem(name: &str) -> Result<NsddeProblem, ProblemError> {
    let one = Rational::from_integer(1);
    let four = Rational::from_integer(4);
    let (coefficients, segment, kappa, k1) = match name {
        // D = 0, b = -2x + y, σ = 0.5x + 0.1y
        "linear-sdde" => (
            CoefficientSet::scalar(
                |_| 0.0,
                |x, y| -2.0 * x + y,
                |x, y| 0.5 * x + 0.1 * y,
                |x, y| 0.5 * (0.5 * x + 0.1 * y),
                |_, _, u, v| 0.1 * (0.5 * u + 0.1 * v),
            ),
            InitialSegment::scalar(1.0, |t| 1.0 + t),
            0.01,
            0.2,
        ),
        // D(y) = 0.25y, b = x - x³ + 0.5y, σ = 0.5x
        "cubic-tamed" => (
            CoefficientSet::scalar(
                |y| 0.25 * y,
                |x, y| x - x * x * x + 0.5 * y,
                |x, _| 0.5 * x,
                |x, _| 0.25 * x,
                |_, _, _, _| 0.0,
            ),
            InitialSegment::scalar(1.0, |t| 1.0 + t),
            0.25,
            0.35,
        ),
        // D(y) = 0.5y, b = -x, σ = 0.3
        "pure-neutral" => (
            CoefficientSet::scalar(|y| 0.5 * y, |x, _| -x, |_, _| 0.3, |_, _| 0.0, |_, _, _, _| 0.0),
            InitialSegment::scalar(1.0, f64::cos),
            0.5,
            0.2,
        ),
        other => return Err(ProblemError::UnknownProblem(other.to_string())),
    };
    Ok(NsddeProblem {
        name: name.to_string(),
        coefficients,
        segment,
        delay: one,
        horizon: four,
        kappa,
        khasminskii_k1: k1,
        khasminskii_p: 4.0,
    })
}

#[inline]
pub(crate) fn norm(v: &[f64]) -> f64 {
    if v.len() == 1 {
        v[0].abs()
    } else {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_problem(kappa: f64, neutral: impl Fn(f64) -> f64 + Send + Sync + 'static) -> NsddeProblem {
        NsddeProblem {
            name: "test".into(),
            coefficients: CoefficientSet::scalar(neutral, |_, _| 0.0, |_, _| 0.0, |_, _| 0.0, |_, _, _, _| 0.0),
            segment: InitialSegment::scalar(1.0, |t| 1.0 + t),
            delay: Rational::from_integer(1),
            horizon: Rational::from_integer(4),
            kappa,
            khasminskii_k1: 1.0,
            khasminskii_p: 4.0,
        }
    }

    #[test]
    fn valid_problem_passes_every_rule() {
        let report = validate_problem(&scalar_problem(0.25, |y| 0.25 * y));
        assert!(report.passed());
        assert_eq!(report.outcomes.len(), 6);
    }

    #[test]
    fn contraction_above_one_is_rejected() {
        let err = validate_problem(&scalar_problem(1.2, |y| 0.25 * y)).into_result().unwrap_err();
        assert_eq!(err, ProblemError::ContractionViolated { kappa: 1.2 });
    }

    #[test]
    fn shifted_neutral_term_is_rejected() {
        let err = validate_problem(&scalar_problem(0.25, |y| y + 1.0)).into_result().unwrap_err();
        assert_eq!(err, ProblemError::NeutralOriginViolated { norm: 1.0 });
    }

    #[test]
    fn exponent_and_horizon_rules() {
        let mut p = scalar_problem(0.25, |y| 0.25 * y);
        p.khasminskii_p = 2.0;
        p.horizon = Rational::new(1, 2);
        let report = validate_problem(&p);
        let failures: Vec<_> = report.failures().cloned().collect();
        assert!(failures.contains(&ProblemError::BadExponent { p: 2.0 }));
        assert!(matches!(failures[0], ProblemError::BadHorizon { .. }));
    }

    #[test]
    fn common_step_of_rationals() {
        let mut p = scalar_problem(0.25, |y| 0.25 * y);
        p.horizon = Rational::new(33, 10);
        assert_eq!(p.common_step(), Some(Rational::new(1, 10)));
        p.delay = Rational::from_integer(0);
        assert_eq!(p.common_step(), None);
    }

    #[test]
    fn segment_evaluation_and_extension() {
        let p = scalar_problem(0.25, |y| 0.25 * y);
        assert_eq!(p.evaluate_segment(0.0).unwrap(), vec![1.0]);
        assert_eq!(p.evaluate_segment(-0.5).unwrap(), vec![0.5]);
        assert_eq!(p.evaluate_segment(-1.5).unwrap(), vec![0.0]);
        assert_eq!(p.evaluate_segment(-2.0).unwrap(), vec![0.0]);
        assert!(matches!(p.evaluate_segment(-2.5), Err(ProblemError::OutOfSegment { .. })));
        assert!(matches!(p.evaluate_segment(0.1), Err(ProblemError::OutOfSegment { .. })));
        assert!(p.evaluate_segment(f64::NAN).is_err());
    }

    #[test]
    fn segment_evaluation_is_pure() {
        let p = builtin_problem("pure-neutral").unwrap();
        for i in 0..=40 {
            let t = -2.0 + i as f64 * 0.05;
            assert_eq!(
                p.evaluate_segment(t).unwrap()[0].to_bits(),
                p.evaluate_segment(t).unwrap()[0].to_bits()
            );
        }
    }

    #[test]
    fn builtins() {
        let cubic = builtin_problem("cubic-tamed").unwrap();
        let mut out = [0.0];
        cubic.coefficients.drift(&[1.0], &[0.0], &mut out);
        assert_eq!(out[0], 0.0);

        let linear = builtin_problem("linear-sdde").unwrap();
        linear.coefficients.neutral(&[5.0], &mut out);
        assert_eq!(out[0], 0.0);

        assert_eq!(builtin_problem("nope").unwrap_err(), ProblemError::UnknownProblem("nope".into()));
        for name in BUILTIN_NAMES {
            assert!(validate_problem(&builtin_problem(name).unwrap()).passed(), "{name}");
        }
    }

    #[test]
    fn taming_params_range() {
        assert!(TamingParams::new(0.5).is_some());
        assert!(TamingParams::new(0.7).is_none());
        assert!(TamingParams::new(0.0).is_none());
        assert_eq!(TamingParams::default().alpha(), 0.5);
    }
}
