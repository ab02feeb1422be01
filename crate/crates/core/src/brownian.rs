//! Brownian driver: grids, finest-resolution paths, and per-step increments
//! `(ΔB_k, l1_k, l2_k)` aggregated from one shared fine path.
//!
//! Fine increments are drawn from a ChaCha8 stream keyed by
//! `(seed, path_index)` and rounded to the lattice `2^-36 ℤ`. Every partial
//! sum of such values is exact in `f64` while `Σ|ΔB| < 2^17`, so coarse
//! increments are independent of the aggregation order: a `2Δ` bin is
//! bit-identical to the sum of its two `Δ` halves.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::problem::{rational_to_f64, Rational};

const LATTICE: f64 = 1.0 / (1u64 << 36) as f64;
const EXACT_SUM_LIMIT: f64 = (1u64 << 17) as f64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("horizon {horizon} is not an integer multiple of the step {step}")]
    GridMismatch { step: Rational, horizon: Rational },
    #[error("step {0} must lie in (0, 1)")]
    BadStep(Rational),
    #[error("fine step {fine} does not divide coarse step {coarse}, or horizons differ")]
    ResolutionMismatch { fine: Rational, coarse: Rational },
    #[error("step index {k} outside 0..{steps}")]
    IndexOutOfRange { k: usize, steps: usize },
    #[error("path too long for exact lattice summation")]
    LatticeOverflow,
}

/// Uniform grid with `τ = mΔ` and `T = MΔ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub delta: Rational,
    /// Steps per delay.
    pub m: usize,
    /// Steps over the horizon.
    pub steps: usize,
}

impl GridSpec {
    pub fn dt(&self) -> f64 {
        rational_to_f64(self.delta)
    }

    pub fn horizon(&self) -> Rational {
        self.delta * Rational::from_integer(self.steps as i64)
    }

    /// `t_k = kΔ` for `k ∈ [-2m, M]`, materialized from the exact rational.
    pub fn node_time(&self, k: isize) -> f64 {
        rational_to_f64(self.delta * Rational::from_integer(k as i64))
    }
}

/// Grid with `Δ = τ / m`.
pub fn build_grid(delay: Rational, horizon: Rational, m: usize) -> Result<GridSpec, GridError> {
    if m == 0 {
        return Err(GridError::BadStep(delay));
    }
    let delta = delay / Rational::from_integer(m as i64);
    if delta <= Rational::from_integer(0) || delta >= Rational::from_integer(1) {
        return Err(GridError::BadStep(delta));
    }
    let ratio = horizon / delta;
    if !ratio.is_integer() || *ratio.numer() <= 0 {
        return Err(GridError::GridMismatch { step: delta, horizon });
    }
    Ok(GridSpec { delta, m, steps: *ratio.numer() as usize })
}

/// Grid with `Δ = τ / 2^exponent`.
pub fn dyadic_grid(delay: Rational, horizon: Rational, exponent: u32) -> Result<GridSpec, GridError> {
    build_grid(delay, horizon, 1usize << exponent)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineBrownianPath {
    pub fine_delta: Rational,
    /// `N(0, δ)` increments over `[0, T]`; `B(t) = 0` for `t ≤ 0`.
    pub increments: Vec<f64>,
}

impl FineBrownianPath {
    pub fn horizon(&self) -> Rational {
        self.fine_delta * Rational::from_integer(self.increments.len() as i64)
    }

    /// `B(T)` as the ascending sum of all increments.
    pub fn terminal_value(&self) -> f64 {
        ordered_sum(&self.increments)
    }
}

/// Ascending sum starting from the first element.
#[inline]
fn ordered_sum(xs: &[f64]) -> f64 {
    match xs.split_first() {
        Some((first, rest)) => rest.iter().fold(*first, |acc, x| acc + x),
        None => 0.0,
    }
}

/// Deterministic generator for path `path_index` of the family `seed`.
pub fn path_rng(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

pub fn sample_fine_path(
    seed: u64,
    path_index: u64,
    horizon: Rational,
    fine_delta: Rational,
) -> Result<FineBrownianPath, GridError> {
    let ratio = horizon / fine_delta;
    if fine_delta <= Rational::from_integer(0) || !ratio.is_integer() || *ratio.numer() <= 0 {
        return Err(GridError::BadStep(fine_delta));
    }
    let n = *ratio.numer() as usize;
    let scale = rational_to_f64(fine_delta).sqrt();
    let mut rng = path_rng(seed, path_index);
    let mut abs_total = 0.0;
    let increments: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let v = (z * scale / LATTICE).round() * LATTICE;
            abs_total += v.abs();
            v
        })
        .collect();
    if abs_total >= EXACT_SUM_LIMIT {
        return Err(GridError::LatticeOverflow);
    }
    Ok(FineBrownianPath { fine_delta, increments })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Increment {
    pub db: f64,
    pub l1: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepIncrements {
    pub dt: f64,
    pub db: Vec<f64>,
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
}

impl StepIncrements {
    pub fn len(&self) -> usize {
        self.db.len()
    }

    pub fn is_empty(&self) -> bool {
        self.db.is_empty()
    }

    #[inline]
    pub fn get(&self, k: usize) -> Increment {
        Increment { db: self.db[k], l1: self.l1[k], l2: self.l2[k] }
    }
}

/// Fine steps per coarse step.
pub fn refinement(fine: &FineBrownianPath, grid: &GridSpec) -> Result<usize, GridError> {
    let ratio = grid.delta / fine.fine_delta;
    if !ratio.is_integer() || fine.horizon() != grid.horizon() {
        return Err(GridError::ResolutionMismatch { fine: fine.fine_delta, coarse: grid.delta });
    }
    Ok(*ratio.numer() as usize)
}

pub fn coarsen_increments(fine: &FineBrownianPath, grid: &GridSpec) -> Result<StepIncrements, GridError> {
    let r = refinement(fine, grid)?;
    let dt = grid.dt();
    let db: Vec<f64> = fine.increments.chunks_exact(r).map(ordered_sum).collect();
    let l1 = db.iter().map(|b| (b * b - dt) / 2.0).collect();
    let l2 = (0..grid.steps).map(|k| l2_unchecked(fine, grid, r, k)).collect();
    Ok(StepIncrements { dt, db, l1, l2 })
}

/// `l2_k = Σ_j (B(t_k + jδ - τ) - B(t_k - τ)) (B(t_k + (j+1)δ) - B(t_k + jδ))`.
pub fn compute_l2(fine: &FineBrownianPath, grid: &GridSpec, k: usize) -> Result<f64, GridError> {
    let r = refinement(fine, grid)?;
    if k >= grid.steps {
        return Err(GridError::IndexOutOfRange { k, steps: grid.steps });
    }
    Ok(l2_unchecked(fine, grid, r, k))
}

fn l2_unchecked(fine: &FineBrownianPath, grid: &GridSpec, r: usize, k: usize) -> f64 {
    // The delayed window starts at fine index (k - m) r; it is nonpositive
    // in time for k < m, where B vanishes.
    if k < grid.m {
        return 0.0;
    }
    let delayed = &fine.increments[(k - grid.m) * r..(k - grid.m + 1) * r];
    let current = &fine.increments[k * r..(k + 1) * r];
    let mut lagged = 0.0;
    let mut acc = 0.0;
    for (d, c) in delayed.iter().zip(current) {
        acc += lagged * c;
        lagged += d;
    }
    acc
}
