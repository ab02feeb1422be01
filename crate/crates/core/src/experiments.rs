//! Coupled-path Monte Carlo experiments.
//!
//! Every path index `i` owns one fine Brownian path at resolution
//! `δ = τ / 2^ref_exponent`; all coarse grids and the reference solution are
//! driven by increments aggregated from it. Per-path results are gathered in
//! path order and reduced sequentially, so reports are bit-identical for any
//! worker count.

use thiserror::Error;

use crate::brownian::{coarsen_increments, dyadic_grid, sample_fine_path, FineBrownianPath, GridError, GridSpec};
use crate::exec::{map_indexed, Execution};
use crate::problem::{norm, NsddeProblem, Rational};
use crate::schemes::{simulate_path, SchemeKind, StepSize, Trajectory};
use crate::taming::tame_in_place;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("at least 2 paths are required, got {0}")]
    InsufficientPaths(usize),
    #[error("reference exponent {reference} must be at least the coarse exponent {coarse}")]
    ReferenceTooCoarse { reference: u32, coarse: u32 },
    #[error("no coarse step exponents given")]
    NoExponents,
    #[error("moment order p = {0} must be positive")]
    BadMoment(f64),
    #[error("taming exponent {0} outside (0, 1/2]")]
    BadAlpha(f64),
    #[error("radii must be positive and ascending")]
    BadRadii,
    #[error("fewer than two usable rows for {0}")]
    DegenerateFit(SchemeKind),
}

/// Settings shared by every Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarlo {
    pub paths: usize,
    pub alpha: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl MonteCarlo {
    pub fn new(paths: usize, seed: u64) -> Self {
        Self { paths, alpha: 0.5, seed, execution: Execution::default() }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    fn check(&self, min_paths: usize) -> Result<(), ExperimentError> {
        if self.paths < min_paths {
            return Err(ExperimentError::InsufficientPaths(self.paths));
        }
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return Err(ExperimentError::BadAlpha(self.alpha));
        }
        Ok(())
    }

    fn fine_path(&self, problem: &NsddeProblem, exponent: u32, index: usize) -> Result<FineBrownianPath, GridError> {
        let delta = problem.delay / Rational::from_integer(1i64 << exponent);
        sample_fine_path(self.seed, index as u64, problem.horizon, delta)
    }
}

/// Sample mean and standard error, accumulated in index order.
fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().fold(0.0, |a, x| a + x) / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = samples.iter().fold(0.0, |a, x| a + (x - mean) * (x - mean)) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// `(mean S)^{1/p}` and its delta-method standard error for per-path samples
/// `S_i = sup_k |e_k|^p`.
pub fn aggregate_lp(samples: &[f64], p: f64) -> (f64, f64) {
    let (mean, se) = mean_and_stderr(samples);
    let estimate = mean.powf(1.0 / p);
    let stderr = if mean > 0.0 { se * mean.powf(1.0 / p - 1.0) / p } else { 0.0 };
    (estimate, stderr)
}

/// `max_k |x_ref(t_k) - Y_k|^p` over the nodes of `coarse`, where the
/// reference lives on a grid `stride` times finer. `None` if either
/// trajectory exploded.
pub fn sup_error_p(reference: &Trajectory, stride: usize, coarse: &Trajectory, p: f64) -> Option<f64> {
    if reference.exploded || coarse.exploded {
        return None;
    }
    let mut diff = vec![0.0; coarse.dim];
    let worst = coarse
        .nodes()
        .zip(reference.nodes().step_by(stride))
        .map(|(y, x)| {
            diff.iter_mut().zip(x.iter().zip(y)).for_each(|(d, (a, b))| *d = a - b);
            norm(&diff)
        })
        .fold(0.0, f64::max);
    Some(worst.powf(p))
}

fn exploded_fraction(outcomes: &[Option<f64>]) -> f64 {
    outcomes.iter().filter(|o| o.is_none()).count() as f64 / outcomes.len() as f64
}

fn finite_samples(outcomes: &[Option<f64>]) -> Vec<f64> {
    outcomes.iter().flatten().copied().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub scheme: SchemeKind,
    pub exponent: u32,
    pub dt: f64,
    pub paths: usize,
    pub p: f64,
    pub error: f64,
    pub stderr: f64,
    pub exploded_fraction: f64,
}

impl ConvergenceRow {
    /// Rows with exploded paths are flagged unreliable.
    pub fn reliable(&self) -> bool {
        self.exploded_fraction == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Fitted log-log slope per scheme, `None` when the fit is degenerate.
    pub slopes: Vec<(SchemeKind, Option<f64>)>,
}

impl ConvergenceReport {
    pub fn rows_for(&self, scheme: SchemeKind) -> impl Iterator<Item = &ConvergenceRow> + '_ {
        self.rows.iter().filter(move |r| r.scheme == scheme)
    }

    pub fn slope(&self, scheme: SchemeKind) -> Option<f64> {
        self.slopes.iter().find(|(s, _)| *s == scheme).and_then(|(_, v)| *v)
    }
}

fn check_exponents(m_exponents: &[u32], ref_exponent: u32) -> Result<(), ExperimentError> {
    let coarse = *m_exponents.iter().max().ok_or(ExperimentError::NoExponents)?;
    if coarse > ref_exponent {
        return Err(ExperimentError::ReferenceTooCoarse { reference: ref_exponent, coarse });
    }
    Ok(())
}

fn grids(problem: &NsddeProblem, exponents: &[u32]) -> Result<Vec<GridSpec>, GridError> {
    exponents.iter().map(|&e| dyadic_grid(problem.delay, problem.horizon, e)).collect()
}

/// Strong `L^p` error of each scheme against a tamed Milstein reference on
/// the finest grid, for every `Δ = τ / 2^e` with `e` in `m_exponents`.
///
/// A coarse exponent equal to `ref_exponent` reproduces the reference and
/// has error exactly zero.
pub fn run_strong_convergence(
    problem: &NsddeProblem,
    schemes: &[SchemeKind],
    m_exponents: &[u32],
    ref_exponent: u32,
    p: f64,
    mc: &MonteCarlo,
) -> Result<ConvergenceReport, ExperimentError> {
    mc.check(2)?;
    check_exponents(m_exponents, ref_exponent)?;
    if p.is_nan() || p <= 0.0 {
        return Err(ExperimentError::BadMoment(p));
    }
    let ref_grid = dyadic_grid(problem.delay, problem.horizon, ref_exponent)?;
    let coarse_grids = grids(problem, m_exponents)?;
    mc.fine_path(problem, ref_exponent, 0)?;

    let per_path: Vec<Vec<Option<f64>>> = map_indexed(mc.execution, mc.paths, |i| {
        let fine = mc.fine_path(problem, ref_exponent, i).expect("validated fine grid");
        let ref_inc = coarsen_increments(&fine, &ref_grid).expect("validated reference grid");
        let reference = simulate_path(problem, &ref_grid, &ref_inc, SchemeKind::TamedMilstein, mc.alpha);
        let mut out = Vec::with_capacity(schemes.len() * coarse_grids.len());
        for grid in &coarse_grids {
            let inc = coarsen_increments(&fine, grid).expect("validated coarse grid");
            let stride = ref_grid.steps / grid.steps;
            for &scheme in schemes {
                let traj = simulate_path(problem, grid, &inc, scheme, mc.alpha);
                out.push(sup_error_p(&reference, stride, &traj, p));
            }
        }
        out
    });

    let mut rows = Vec::new();
    for (s_idx, &scheme) in schemes.iter().enumerate() {
        for (g_idx, (grid, &exponent)) in coarse_grids.iter().zip(m_exponents).enumerate() {
            let col = g_idx * schemes.len() + s_idx;
            let outcomes: Vec<Option<f64>> = per_path.iter().map(|v| v[col]).collect();
            let (error, stderr) = aggregate_lp(&finite_samples(&outcomes), p);
            rows.push(ConvergenceRow {
                scheme,
                exponent,
                dt: grid.dt(),
                paths: mc.paths,
                p,
                error,
                stderr,
                exploded_fraction: exploded_fraction(&outcomes),
            });
        }
    }
    let mut report = ConvergenceReport { rows, slopes: Vec::new() };
    report.slopes = schemes.iter().map(|&s| (s, estimate_order(&report, s).ok())).collect();
    Ok(report)
}

/// Least-squares slope of `ln(error)` against `ln(Δ)`.
pub fn estimate_order(report: &ConvergenceReport, scheme: SchemeKind) -> Result<f64, ExperimentError> {
    let pts: Vec<(f64, f64)> = report
        .rows_for(scheme)
        .filter(|r| r.error > 0.0 && r.error.is_finite())
        .map(|r| (r.dt.ln(), r.error.ln()))
        .collect();
    let distinct = pts.iter().any(|(x, _)| *x != pts[0].0);
    if pts.len() < 2 || !distinct {
        return Err(ExperimentError::DegenerateFit(scheme));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// True when each value is below its predecessor up to `sigmas` pooled
/// standard errors.
pub fn decreasing_within(values: &[(f64, f64)], sigmas: f64) -> bool {
    values.windows(2).all(|w| {
        let ((a, sa), (b, sb)) = (w[0], w[1]);
        let slack = sigmas * (sa * sa + sb * sb).sqrt();
        b < a + if slack.is_finite() { slack } else { 0.0 }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentRow {
    pub scheme: SchemeKind,
    pub exponent: u32,
    pub dt: f64,
    pub p: f64,
    pub sup_moment: f64,
    pub stderr: f64,
    pub exploded_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub rows: Vec<MomentRow>,
}

/// `E[max_{0≤k≤M} |Y_k|^p]` per scheme and step, exploded paths excluded.
///
/// Iterated integrals are resolved on the sub-grid `τ / 2^fine_exponent`.
pub fn estimate_sup_moment(
    problem: &NsddeProblem,
    schemes: &[SchemeKind],
    m_exponents: &[u32],
    fine_exponent: u32,
    p: f64,
    mc: &MonteCarlo,
) -> Result<MomentReport, ExperimentError> {
    mc.check(2)?;
    check_exponents(m_exponents, fine_exponent)?;
    if p.is_nan() || p <= 0.0 {
        return Err(ExperimentError::BadMoment(p));
    }
    let coarse_grids = grids(problem, m_exponents)?;
    mc.fine_path(problem, fine_exponent, 0)?;

    let per_path: Vec<Vec<Option<f64>>> = map_indexed(mc.execution, mc.paths, |i| {
        let fine = mc.fine_path(problem, fine_exponent, i).expect("validated fine grid");
        let mut out = Vec::new();
        for grid in &coarse_grids {
            let inc = coarsen_increments(&fine, grid).expect("validated coarse grid");
            for &scheme in schemes {
                let traj = simulate_path(problem, grid, &inc, scheme, mc.alpha);
                out.push((!traj.exploded).then(|| sup_norm(&traj).powf(p)));
            }
        }
        out
    });

    let mut rows = Vec::new();
    for (s_idx, &scheme) in schemes.iter().enumerate() {
        for (g_idx, (grid, &exponent)) in coarse_grids.iter().zip(m_exponents).enumerate() {
            let col = g_idx * schemes.len() + s_idx;
            let outcomes: Vec<Option<f64>> = per_path.iter().map(|v| v[col]).collect();
            let (sup_moment, stderr) = mean_and_stderr(&finite_samples(&outcomes));
            rows.push(MomentRow {
                scheme,
                exponent,
                dt: grid.dt(),
                p,
                sup_moment,
                stderr,
                exploded_fraction: exploded_fraction(&outcomes),
            });
        }
    }
    Ok(MomentReport { rows })
}

/// `max_{k ≥ 0} |Y_k|` over the stored nodes; infinite if the path exploded.
pub fn sup_norm(traj: &Trajectory) -> f64 {
    if traj.exploded {
        return f64::INFINITY;
    }
    traj.nodes().map(norm).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub exponent: u32,
    pub dt: f64,
    pub p: f64,
    pub gap: f64,
    pub stderr: f64,
    pub exploded_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
}

/// `max_k max_j |y(t_k + jδ) - Y_k|^p` for one path, with the continuous
/// tamed Milstein interpolant evaluated on the fine sub-grid.
///
/// Inside a step the coefficients are frozen at `(Y_k, Y_{k-m}, Y_{k-2m})`
/// and the neutral term at `D(Y_{k-m})`, so the right endpoint is the left
/// limit `y(t_{k+1}-)`.
pub fn path_interpolation_gap(
    problem: &NsddeProblem,
    traj: &Trajectory,
    fine: &FineBrownianPath,
    alpha: f64,
    p: f64,
) -> Result<f64, GridError> {
    let grid = traj.grid;
    let r = crate::brownian::refinement(fine, &grid)?;
    let n = traj.dim;
    let c = &problem.coefficients;
    let step = StepSize::new(grid.dt(), alpha);
    let delta = crate::problem::rational_to_f64(fine.fine_delta);
    let (mut b, mut sigma, mut s1, mut s2, mut diff) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut worst: f64 = 0.0;
    for k in 0..grid.steps {
        let ki = k as isize;
        let m = grid.m as isize;
        let (y, yd, yd2) = (traj.state(ki).unwrap(), traj.state(ki - m).unwrap(), traj.state(ki - 2 * m).unwrap());
        c.drift(y, yd, &mut b);
        tame_in_place(&mut b, step.dt_pow_alpha, step.clamp);
        c.diffusion(y, yd, &mut sigma);
        c.sigma1_sigma(y, yd, &mut s1);
        c.sigma2_sigma(y, yd, yd, yd2, &mut s2);

        let current = &fine.increments[k * r..(k + 1) * r];
        let delayed = (k >= grid.m).then(|| &fine.increments[(k - grid.m) * r..(k - grid.m + 1) * r]);
        let (mut w, mut w_delayed, mut l2) = (0.0, 0.0, 0.0);
        for (j, dbj) in current.iter().enumerate() {
            l2 += w_delayed * dbj;
            w += dbj;
            if let Some(d) = delayed {
                w_delayed += d[j];
            }
            let elapsed = (j + 1) as f64 * delta;
            let l1 = (w * w - elapsed) / 2.0;
            for i in 0..n {
                diff[i] = b[i] * elapsed + sigma[i] * w + s1[i] * l1 + s2[i] * l2;
            }
            worst = worst.max(norm(&diff));
        }
    }
    Ok(worst.powf(p))
}

pub fn estimate_interpolation_gap(
    problem: &NsddeProblem,
    m_exponents: &[u32],
    ref_exponent: u32,
    p: f64,
    mc: &MonteCarlo,
) -> Result<GapReport, ExperimentError> {
    mc.check(2)?;
    check_exponents(m_exponents, ref_exponent)?;
    if p.is_nan() || p <= 0.0 {
        return Err(ExperimentError::BadMoment(p));
    }
    let coarse_grids = grids(problem, m_exponents)?;
    mc.fine_path(problem, ref_exponent, 0)?;

    let per_path: Vec<Vec<Option<f64>>> = map_indexed(mc.execution, mc.paths, |i| {
        let fine = mc.fine_path(problem, ref_exponent, i).expect("validated fine grid");
        coarse_grids
            .iter()
            .map(|grid| {
                let inc = coarsen_increments(&fine, grid).expect("validated coarse grid");
                let traj = simulate_path(problem, grid, &inc, SchemeKind::TamedMilstein, mc.alpha);
                if traj.exploded {
                    None
                } else {
                    Some(path_interpolation_gap(problem, &traj, &fine, mc.alpha, p).expect("validated grid"))
                }
            })
            .collect()
    });

    let rows = coarse_grids
        .iter()
        .zip(m_exponents)
        .enumerate()
        .map(|(g, (grid, &exponent))| {
            let outcomes: Vec<Option<f64>> = per_path.iter().map(|v| v[g]).collect();
            let (gap, stderr) = mean_and_stderr(&finite_samples(&outcomes));
            GapRow { exponent, dt: grid.dt(), p, gap, stderr, exploded_fraction: exploded_fraction(&outcomes) }
        })
        .collect();
    Ok(GapReport { rows })
}

/// Which solution a stopping time refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitSubject {
    /// Fine-grid reference, stopping time `τ_R`.
    Reference,
    /// Coarse scheme, stopping time `ρ_R`.
    Scheme,
}

impl ExitSubject {
    pub fn label(self) -> &'static str {
        match self {
            ExitSubject::Reference => "tau_R",
            ExitSubject::Scheme => "rho_R",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExitRow {
    pub which: ExitSubject,
    pub radius: f64,
    pub prob: f64,
    /// `R² · prob`
    pub scaled: f64,
    /// Binomial standard error of `scaled`.
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExitReport {
    pub rows: Vec<ExitRow>,
}

impl ExitReport {
    pub fn rows_for(&self, which: ExitSubject) -> impl Iterator<Item = &ExitRow> + '_ {
        self.rows.iter().filter(move |r| r.which == which)
    }

    /// `R² P(R) ≤ factor · R₀² P(R₀) + sigmas · pooled stderr` for every
    /// radius, where `R₀` is the smallest radius.
    pub fn scaled_bounded(&self, which: ExitSubject, factor: f64, sigmas: f64) -> bool {
        let rows: Vec<&ExitRow> = self.rows_for(which).collect();
        let Some(first) = rows.first() else { return true };
        rows.iter().all(|r| {
            let pooled = (first.stderr * first.stderr + r.stderr * r.stderr).sqrt();
            r.scaled <= factor * first.scaled + sigmas * pooled
        })
    }
}

/// Fraction of paths whose supremum norm reaches each radius, for both the
/// fine reference and the coarse scheme. Exploded paths count as exits.
pub fn estimate_exit_probability(
    problem: &NsddeProblem,
    scheme: SchemeKind,
    m_exponent: u32,
    ref_exponent: u32,
    radii: &[f64],
    mc: &MonteCarlo,
) -> Result<ExitReport, ExperimentError> {
    mc.check(1)?;
    check_exponents(&[m_exponent], ref_exponent)?;
    if radii.iter().any(|r| r.is_nan() || *r <= 0.0) || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ExperimentError::BadRadii);
    }
    let grid = dyadic_grid(problem.delay, problem.horizon, m_exponent)?;
    let ref_grid = dyadic_grid(problem.delay, problem.horizon, ref_exponent)?;
    mc.fine_path(problem, ref_exponent, 0)?;

    let sups: Vec<(f64, f64)> = map_indexed(mc.execution, mc.paths, |i| {
        let fine = mc.fine_path(problem, ref_exponent, i).expect("validated fine grid");
        let ref_inc = coarsen_increments(&fine, &ref_grid).expect("validated reference grid");
        let reference = simulate_path(problem, &ref_grid, &ref_inc, SchemeKind::TamedMilstein, mc.alpha);
        let inc = coarsen_increments(&fine, &grid).expect("validated coarse grid");
        let traj = simulate_path(problem, &grid, &inc, scheme, mc.alpha);
        (sup_norm(&reference), sup_norm(&traj))
    });

    let n = mc.paths as f64;
    let mut rows = Vec::new();
    for which in [ExitSubject::Reference, ExitSubject::Scheme] {
        for &radius in radii {
            let hits = sups
                .iter()
                .filter(|(r, s)| match which {
                    ExitSubject::Reference => *r >= radius,
                    ExitSubject::Scheme => *s >= radius,
                })
                .count();
            let prob = hits as f64 / n;
            let scaled = radius * radius * prob;
            let stderr = radius * radius * (prob * (1.0 - prob) / n).sqrt();
            rows.push(ExitRow { which, radius, prob, scaled, stderr });
        }
    }
    Ok(ExitReport { rows })
}
