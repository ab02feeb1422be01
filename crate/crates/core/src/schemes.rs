//! One-step maps and path simulation.
//!
//! The tamed Milstein map is
//!
//! ```text
//! Y_{k+1} = D(Y_{k+1-m}) + Y_k - D(Y_{k-m}) + b_h(Y_k, Y_{k-m}) Δ + σ(Y_k, Y_{k-m}) ΔB_k
//!         + σ₁σ(Y_k, Y_{k-m}) l1_k + σ₂(Y_k, Y_{k-m}) σ(Y_{k-m}, Y_{k-2m}) l2_k
//! ```
//!
//! The baselines drop the taming (`Milstein`), the iterated integrals
//! (`TamedEulerMaruyama`), or both (`EulerMaruyama`).

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::brownian::{GridSpec, Increment, StepIncrements};
use crate::problem::{norm, CoefficientSet, NsddeProblem};
use crate::taming::tame_in_place;

/// States whose norm reaches this value mark the path as exploded.
pub const OVERFLOW_GUARD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeKind {
    EulerMaruyama,
    TamedEulerMaruyama,
    Milstein,
    TamedMilstein,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] = [
        SchemeKind::EulerMaruyama,
        SchemeKind::TamedEulerMaruyama,
        SchemeKind::Milstein,
        SchemeKind::TamedMilstein,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::EulerMaruyama => "em",
            SchemeKind::TamedEulerMaruyama => "tamed-em",
            SchemeKind::Milstein => "milstein",
            SchemeKind::TamedMilstein => "tamed-milstein",
        }
    }

    pub fn is_tamed(self) -> bool {
        matches!(self, SchemeKind::TamedEulerMaruyama | SchemeKind::TamedMilstein)
    }

    pub fn has_iterated_integrals(self) -> bool {
        matches!(self, SchemeKind::Milstein | SchemeKind::TamedMilstein)
    }

    /// Advances one step, writing `Y_{k+1}` into `out`.
    pub fn step_into(
        self,
        coeffs: &CoefficientSet,
        states: &StepStates<'_>,
        inc: Increment,
        step: &StepSize,
        ws: &mut StepWorkspace,
        out: &mut [f64],
    ) -> Result<(), Overflow> {
        let StepWorkspace { d_next, d_delayed, drift, sigma, s1, s2 } = ws;
        coeffs.neutral(states.next_delayed, d_next);
        coeffs.neutral(states.delayed, d_delayed);
        coeffs.drift(states.current, states.delayed, drift);
        coeffs.diffusion(states.current, states.delayed, sigma);

        if drift.iter().any(|v| !v.is_finite()) {
            return Err(Overflow { norm: f64::INFINITY });
        }
        if self.is_tamed() {
            tame_in_place(drift, step.dt_pow_alpha, step.clamp);
            debug_assert!(norm(drift) * step.dt <= step.dt * step.clamp);
        }

        for i in 0..out.len() {
            out[i] = d_next[i] + states.current[i] - d_delayed[i] + drift[i] * step.dt + sigma[i] * inc.db;
        }
        if self.has_iterated_integrals() {
            coeffs.sigma1_sigma(states.current, states.delayed, s1);
            coeffs.sigma2_sigma(states.current, states.delayed, states.delayed, states.delayed2, s2);
            for i in 0..out.len() {
                out[i] = out[i] + s1[i] * inc.l1 + s2[i] * inc.l2;
            }
        }

        let n = norm(out);
        if !n.is_finite() || n >= OVERFLOW_GUARD {
            return Err(Overflow { norm: n });
        }
        Ok(())
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown scheme '{0}' (expected em, tamed-em, milstein or tamed-milstein)")]
pub struct UnknownScheme(pub String);

impl FromStr for SchemeKind {
    type Err = UnknownScheme;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| UnknownScheme(s.to_string()))
    }
}

/// Path explosion; data for divergence studies rather than a failure.
#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("state norm {norm} crossed the overflow guard")]
pub struct Overflow {
    pub norm: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemeError {
    #[error("time {t} outside [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },
    #[error("time {t} lies after the explosion of the path")]
    AfterExplosion { t: f64 },
}

/// Arguments of the one-step map at step `k`.
#[derive(Debug, Clone, Copy)]
pub struct StepStates<'a> {
    /// `Y_k`
    pub current: &'a [f64],
    /// `Y_{k-m}`
    pub delayed: &'a [f64],
    /// `Y_{k-2m}`
    pub delayed2: &'a [f64],
    /// `Y_{k+1-m}`
    pub next_delayed: &'a [f64],
}

/// Step size with the taming factors precomputed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSize {
    pub dt: f64,
    pub dt_pow_alpha: f64,
    /// `Δ^{-α}`
    pub clamp: f64,
}

impl StepSize {
    pub fn new(dt: f64, alpha: f64) -> Self {
        Self { dt, dt_pow_alpha: dt.powf(alpha), clamp: dt.powf(-alpha) }
    }
}

/// Scratch buffers reused across steps of a path.
#[derive(Debug, Clone)]
pub struct StepWorkspace {
    d_next: Vec<f64>,
    d_delayed: Vec<f64>,
    drift: Vec<f64>,
    sigma: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl StepWorkspace {
    pub fn new(dim: usize) -> Self {
        let z = vec![0.0; dim];
        Self {
            d_next: z.clone(),
            d_delayed: z.clone(),
            drift: z.clone(),
            sigma: z.clone(),
            s1: z.clone(),
            s2: z,
        }
    }
}

pub fn step_tamed_milstein(
    coeffs: &CoefficientSet,
    states: &StepStates<'_>,
    inc: Increment,
    dt: f64,
    alpha: f64,
) -> Result<Vec<f64>, Overflow> {
    step_baseline(SchemeKind::TamedMilstein, coeffs, states, inc, dt, alpha)
}

pub fn step_baseline(
    kind: SchemeKind,
    coeffs: &CoefficientSet,
    states: &StepStates<'_>,
    inc: Increment,
    dt: f64,
    alpha: f64,
) -> Result<Vec<f64>, Overflow> {
    let mut out = vec![0.0; coeffs.dim()];
    let mut ws = StepWorkspace::new(coeffs.dim());
    kind.step_into(coeffs, states, inc, &StepSize::new(dt, alpha), &mut ws, &mut out)?;
    Ok(out)
}

/// Discrete solution `Y_k` for `k = -2m ..= M`, truncated at an explosion.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: GridSpec,
    pub dim: usize,
    /// Row-major states starting at `k = -2m`.
    states: Vec<f64>,
    pub exploded: bool,
    /// Index of the first step whose state crossed the guard.
    pub explosion_step: Option<usize>,
}

impl Trajectory {
    fn offset(&self) -> isize {
        2 * self.grid.m as isize
    }

    /// Largest `k` with a stored state.
    pub fn last_index(&self) -> isize {
        (self.states.len() / self.dim) as isize - 1 - self.offset()
    }

    pub fn state(&self, k: isize) -> Option<&[f64]> {
        let row = k + self.offset();
        if row < 0 || k > self.last_index() {
            return None;
        }
        let start = row as usize * self.dim;
        Some(&self.states[start..start + self.dim])
    }

    /// States `Y_0, Y_1, ...` up to the last stored node.
    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.states[self.offset() as usize * self.dim..].chunks_exact(self.dim)
    }

    /// Multiplies every stored state by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self { states: self.states.iter().map(|v| v * c).collect(), ..self.clone() }
    }
}

/// Runs the recursion from the initial segment over all steps of `grid`.
///
/// # Panics
///
/// If `grid` does not match the problem's delay and horizon, or `inc` was
/// built on a different number of steps.
pub fn simulate_path(
    problem: &NsddeProblem,
    grid: &GridSpec,
    inc: &StepIncrements,
    kind: SchemeKind,
    alpha: f64,
) -> Trajectory {
    assert_eq!(grid.delta * num_rational::Ratio::from_integer(grid.m as i64), problem.delay);
    assert_eq!(grid.horizon(), problem.horizon);
    assert_eq!(inc.len(), grid.steps, "increments built on a different grid");

    let n = problem.dim();
    let m = grid.m;
    let mut states = vec![0.0; (2 * m + grid.steps + 1) * n];
    for (row, chunk) in states.chunks_exact_mut(n).take(2 * m + 1).enumerate() {
        let t = grid.node_time(row as isize - 2 * m as isize);
        problem.evaluate_segment_into(t, chunk).expect("grid node inside the extended segment");
    }

    let step = StepSize::new(grid.dt(), alpha);
    let mut ws = StepWorkspace::new(n);
    let mut out = vec![0.0; n];
    let mut explosion_step = None;
    for k in 0..grid.steps {
        // Row of Y_k is k + 2m.
        let row = k + 2 * m;
        let (past, future) = states.split_at_mut((row + 1) * n);
        let at = |r: usize| &past[r * n..(r + 1) * n];
        let st = StepStates {
            current: at(row),
            delayed: at(row - m),
            delayed2: at(row - 2 * m),
            next_delayed: at(row + 1 - m),
        };
        match kind.step_into(&problem.coefficients, &st, inc.get(k), &step, &mut ws, &mut out) {
            Ok(()) => future[..n].copy_from_slice(&out),
            Err(_) => {
                explosion_step = Some(k + 1);
                break;
            }
        }
    }
    if let Some(j) = explosion_step {
        states.truncate((j + 2 * m) * n);
    }
    Trajectory { grid: *grid, dim: n, states, exploded: explosion_step.is_some(), explosion_step }
}

/// Piecewise-constant interpolant `ȳ(t) = Y_k` on `[t_k, t_{k+1})`, with
/// `ȳ(T) = Y_M`.
pub fn step_process_lookup(traj: &Trajectory, t: f64) -> Result<&[f64], SchemeError> {
    let horizon = crate::problem::rational_to_f64(traj.grid.horizon());
    if !(t >= 0.0 && t <= horizon) {
        return Err(SchemeError::OutOfRange { t, horizon });
    }
    let mut k = ((t / traj.grid.dt()).floor() as usize).min(traj.grid.steps);
    if k < traj.grid.steps && traj.grid.node_time(k as isize + 1) <= t {
        k += 1;
    }
    while k > 0 && traj.grid.node_time(k as isize) > t {
        k -= 1;
    }
    traj.state(k as isize).ok_or(SchemeError::AfterExplosion { t })
}
