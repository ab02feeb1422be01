//! Sampling-based estimates of the structural constants of a problem.
//!
//! All estimates are maxima over a finite sample and therefore lower bounds
//! of the true suprema. Samples are triples `(x, y, z)` with each component
//! in the ball of radius `R`: the origin and the axis points `±R e_i` of each
//! component first, then uniform draws. Every sample is paired with its
//! successor and with six perturbations (one component moved by `10⁻³` or
//! `10⁻¹`), so difference quotients see both local and medium scales.
//!
//! Points are generated sequentially from one stream, so a larger sample
//! count extends the smaller sample set and estimates never decrease.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::brownian::path_rng;
use crate::exec::{map_indexed, Execution};
use crate::problem::{norm, CoefficientSet, InitialSegment, NsddeProblem};
use crate::taming::taming_gap;

const PERTURBATIONS: [f64; 2] = [1e-3, 1e-1];

/// Stream ids separating the checker's draws from Brownian paths.
const POINT_STREAM: u64 = 0xA55E_0001;
const SEGMENT_STREAM: u64 = 0xA55E_0002;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Sampling {
    pub fn new(radius: f64, samples: usize, seed: u64) -> Self {
        Self { radius, samples, seed, execution: Execution::default() }
    }

    pub fn with_radius(self, radius: f64) -> Self {
        Self { radius, ..self }
    }
}

/// A sample point: `x`, `y` and the second delay `z`, each in `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl Triple {
    fn parts(&self) -> [&Vec<f64>; 3] {
        [&self.x, &self.y, &self.z]
    }
}

fn uniform_in_ball(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    if dim == 1 {
        return vec![radius * (2.0 * rng.random::<f64>() - 1.0)];
    }
    let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let len = norm(&dir);
    let scale = radius * rng.random::<f64>().powf(1.0 / dim as f64) / len;
    dir.into_iter().map(|v| v * scale).collect()
}

fn unit_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    if dim == 1 {
        return vec![if rng.random::<bool>() { 1.0 } else { -1.0 }];
    }
    let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let len = norm(&dir);
    dir.into_iter().map(|v| v / len).collect()
}

/// Base points plus their perturbed partners.
struct SampleSet {
    points: Vec<Triple>,
    /// `perturbed[i]` holds the six partners of `points[i]`.
    perturbed: Vec<Vec<Triple>>,
}

impl SampleSet {
    fn generate(dim: usize, s: &Sampling) -> Self {
        let r = s.radius;
        let zero = vec![0.0; dim];
        let mut points = vec![Triple { x: zero.clone(), y: zero.clone(), z: zero.clone() }];
        for slot in 0..3 {
            for i in 0..dim {
                for sign in [1.0, -1.0] {
                    let mut parts = [zero.clone(), zero.clone(), zero.clone()];
                    parts[slot][i] = sign * r;
                    let [x, y, z] = parts;
                    points.push(Triple { x, y, z });
                }
            }
        }
        let axis = points;
        let count = s.samples.max(1);

        // Each point draws its own partners before the next point is drawn,
        // which keeps smaller sample sets a prefix of larger ones.
        let mut rng = path_rng(s.seed, POINT_STREAM);
        let mut points = Vec::with_capacity(count);
        let mut perturbed = Vec::with_capacity(count);
        for i in 0..count {
            let p = match axis.get(i) {
                Some(a) => a.clone(),
                None => Triple {
                    x: uniform_in_ball(&mut rng, dim, r),
                    y: uniform_in_ball(&mut rng, dim, r),
                    z: uniform_in_ball(&mut rng, dim, r),
                },
            };
            let mut partners = Vec::with_capacity(6);
            for h in PERTURBATIONS {
                for slot in 0..3 {
                    let dir = unit_direction(&mut rng, dim);
                    let mut q = p.clone();
                    let part = match slot {
                        0 => &mut q.x,
                        1 => &mut q.y,
                        _ => &mut q.z,
                    };
                    let base = part.clone();
                    part.iter_mut().zip(&dir).for_each(|(v, d)| *v += h * d);
                    if norm(part) > r {
                        part.iter_mut().zip(base.iter().zip(&dir)).for_each(|(v, (b, d))| *v = b - h * d);
                    }
                    partners.push(q);
                }
            }
            points.push(p);
            perturbed.push(partners);
        }
        Self { points, perturbed }
    }

    /// Pairs `(a, b)` probed by difference quotients, in a fixed order.
    fn pairs(&self) -> Vec<(&Triple, &Triple)> {
        let mut out = Vec::with_capacity(self.points.len() * 7);
        for (i, p) in self.points.iter().enumerate() {
            if let Some(next) = self.points.get(i + 1) {
                out.push((p, next));
            }
            out.extend(self.perturbed[i].iter().map(|q| (p, q)));
        }
        out
    }
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == 1 {
        return (a[0] - b[0]).abs();
    }
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

fn max_reduce(values: Vec<f64>) -> f64 {
    values.into_iter().filter(|v| !v.is_nan()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Witness {
    /// `|D(x) - D(y)| ≥ |x - y|`
    Contraction { x: Vec<f64>, y: Vec<f64> },
    /// `(x - D(y))ᵀ b + (p-1)/2 |σ|² > K1 (1 + |x|² + |y|²)`
    Khasminskii { x: Vec<f64>, y: Vec<f64>, k1: f64, p: f64 },
}

impl Witness {
    /// Re-evaluates the attached inequality.
    pub fn still_violates(&self, coeffs: &CoefficientSet) -> bool {
        match self {
            Witness::Contraction { x, y } => contraction_ratio(coeffs, x, y) >= 1.0,
            Witness::Khasminskii { x, y, k1, p } => khasminskii_lhs(coeffs, x, y, *p) > k1 * (1.0 + sq(x) + sq(y)),
        }
    }
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

fn contraction_ratio(coeffs: &CoefficientSet, x: &[f64], y: &[f64]) -> f64 {
    let n = coeffs.dim();
    let (mut dx, mut dy) = (vec![0.0; n], vec![0.0; n]);
    coeffs.neutral(x, &mut dx);
    coeffs.neutral(y, &mut dy);
    let denom = diff_norm(x, y);
    if denom == 0.0 {
        return f64::NAN;
    }
    diff_norm(&dx, &dy) / denom
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionCheck {
    pub kappa_hat: f64,
    pub pass: bool,
    pub violations: Vec<Witness>,
}

/// Largest sampled `|D(x) - D(y)| / |x - y|`; passes when below 1 and
/// `D(0) = 0`.
pub fn check_contraction(coeffs: &CoefficientSet, s: &Sampling) -> ContractionCheck {
    let set = SampleSet::generate(coeffs.dim(), s);
    let pairs = set.pairs();
    let ratios = map_indexed(s.execution, pairs.len(), |i| contraction_ratio(coeffs, &pairs[i].0.x, &pairs[i].1.x));
    let violations = pairs
        .iter()
        .zip(&ratios)
        .filter(|(_, r)| **r >= 1.0)
        .map(|((a, b), _)| Witness::Contraction { x: a.x.clone(), y: b.x.clone() })
        .collect();
    let kappa_hat = max_reduce(ratios);
    let mut origin = vec![0.0; coeffs.dim()];
    coeffs.neutral(&vec![0.0; coeffs.dim()], &mut origin);
    ContractionCheck { kappa_hat, pass: kappa_hat < 1.0 && norm(&origin) == 0.0, violations }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzCheck {
    /// Joint estimate for `b` and `σ`.
    pub k_r_hat: f64,
    /// Joint estimate for `σ₁σ(x, y)` and `σ₂(x, y) σ(y, z)`.
    pub kbar_r_hat: f64,
}

/// Sampled difference quotients of `b`, `σ` and the Milstein products, the
/// latter in the form the one-step map evaluates them.
pub fn check_local_lipschitz(coeffs: &CoefficientSet, s: &Sampling) -> LipschitzCheck {
    let set = SampleSet::generate(coeffs.dim(), s);
    let pairs = set.pairs();
    let n = coeffs.dim();
    let quotients = map_indexed(s.execution, pairs.len(), |i| {
        let (a, b) = pairs[i];
        let (mut fa, mut fb) = (vec![0.0; n], vec![0.0; n]);
        let d2 = diff_norm(&a.x, &b.x) + diff_norm(&a.y, &b.y);
        let d3 = d2 + diff_norm(&a.z, &b.z);
        let q = |fa: &[f64], fb: &[f64], d: f64| if d > 0.0 { diff_norm(fa, fb) / d } else { f64::NAN };

        coeffs.drift(&a.x, &a.y, &mut fa);
        coeffs.drift(&b.x, &b.y, &mut fb);
        let qb = q(&fa, &fb, d2);
        coeffs.diffusion(&a.x, &a.y, &mut fa);
        coeffs.diffusion(&b.x, &b.y, &mut fb);
        let qs = q(&fa, &fb, d2);
        coeffs.sigma1_sigma(&a.x, &a.y, &mut fa);
        coeffs.sigma1_sigma(&b.x, &b.y, &mut fb);
        let q1 = q(&fa, &fb, d2);
        coeffs.sigma2_sigma(&a.x, &a.y, &a.y, &a.z, &mut fa);
        coeffs.sigma2_sigma(&b.x, &b.y, &b.y, &b.z, &mut fb);
        let q2 = q(&fa, &fb, d3);
        (max_reduce(vec![qb, qs]), max_reduce(vec![q1, q2]))
    });
    LipschitzCheck {
        k_r_hat: max_reduce(quotients.iter().map(|q| q.0).collect()),
        kbar_r_hat: max_reduce(quotients.iter().map(|q| q.1).collect()),
    }
}

/// `G(x, y) = (x - D(y))ᵀ b(x, y) + (p-1)/2 |σ(x, y)|²`
pub fn khasminskii_lhs(coeffs: &CoefficientSet, x: &[f64], y: &[f64], p: f64) -> f64 {
    let n = coeffs.dim();
    let (mut d, mut b, mut s) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    coeffs.neutral(y, &mut d);
    coeffs.drift(x, y, &mut b);
    coeffs.diffusion(x, y, &mut s);
    let inner: f64 = (0..n).map(|i| (x[i] - d[i]) * b[i]).sum();
    inner + (p - 1.0) / 2.0 * sq(&s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KhasminskiiCheck {
    pub radius: f64,
    /// `max G / (1 + |x|² + |y|²)` over the sample.
    pub k1_hat: f64,
    pub ok: bool,
}

pub fn check_khasminskii(coeffs: &CoefficientSet, p: f64, s: &Sampling) -> KhasminskiiCheck {
    let set = SampleSet::generate(coeffs.dim(), s);
    let ratios = map_indexed(s.execution, set.points.len(), |i| {
        let t = &set.points[i];
        khasminskii_lhs(coeffs, &t.x, &t.y, p) / (1.0 + sq(&t.x) + sq(&t.y))
    });
    let k1_hat = ratios.into_iter().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    KhasminskiiCheck { radius: s.radius, k1_hat, ok: k1_hat.is_finite() }
}

/// `K1_hat` over an ascending ladder of radii. Each rung includes the
/// samples of the smaller balls, so the estimates are non-decreasing.
pub fn khasminskii_ladder(coeffs: &CoefficientSet, p: f64, radii: &[f64], s: &Sampling) -> Vec<KhasminskiiCheck> {
    let mut running = 0.0f64;
    radii
        .iter()
        .map(|&r| {
            let check = check_khasminskii(coeffs, p, &s.with_radius(r));
            running = running.max(check.k1_hat);
            KhasminskiiCheck { k1_hat: running, ..check }
        })
        .collect()
}

/// Heuristic Khasminskii pass: the ladder estimate grows by less than `factor`
/// between consecutive radii.
pub fn ladder_stabilizes(ladder: &[KhasminskiiCheck], factor: f64) -> bool {
    ladder.windows(2).all(|w| w[1].k1_hat <= factor * w[0].k1_hat.max(f64::MIN_POSITIVE))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TamingGapRow {
    pub dt: f64,
    /// `max |b - b_h|` over the sample.
    pub gap: f64,
    /// `gap / Δ`
    pub n_r_hat: f64,
    /// `gap / Δ^α`
    pub n_r_alpha_hat: f64,
}

pub fn check_taming_gap(coeffs: &CoefficientSet, dts: &[f64], alpha: f64, s: &Sampling) -> Vec<TamingGapRow> {
    let set = SampleSet::generate(coeffs.dim(), s);
    let n = coeffs.dim();
    let drifts: Vec<Vec<f64>> = map_indexed(s.execution, set.points.len(), |i| {
        let mut b = vec![0.0; n];
        coeffs.drift(&set.points[i].x, &set.points[i].y, &mut b);
        b
    });
    dts.iter()
        .map(|&dt| {
            let gap = max_reduce(drifts.iter().map(|b| taming_gap(b, dt, alpha).unwrap_or(f64::NAN)).collect());
            TamingGapRow { dt, gap, n_r_hat: gap / dt, n_r_alpha_hat: gap / dt.powf(alpha) }
        })
        .collect()
}

/// Largest sampled `|ξ(t) - ξ(s)| / |t - s|` on `[-τ, 0]`.
pub fn estimate_segment_lipschitz(segment: &InitialSegment, delay: f64, dim: usize, samples: usize, seed: u64) -> f64 {
    let mut rng = path_rng(seed, SEGMENT_STREAM);
    let (mut a, mut b) = (vec![0.0; dim], vec![0.0; dim]);
    let mut best = 0.0f64;
    for _ in 0..samples {
        let t = -delay * rng.random::<f64>();
        for h in [1e-4 * delay, 1e-2 * delay, delay * rng.random::<f64>()] {
            let s = if t + h <= 0.0 { t + h } else { t - h };
            segment.eval_raw(t, &mut a);
            segment.eval_raw(s, &mut b);
            if s != t {
                best = best.max(diff_norm(&a, &b) / (t - s).abs());
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub radius: f64,
    pub samples: usize,
    pub theta_hat: f64,
    pub kappa_hat: f64,
    pub contraction_pass: bool,
    pub k_r_hat: f64,
    pub kbar_r_hat: f64,
    pub khasminskii_ok: bool,
    pub k1_hat: f64,
    /// Whether the declared `K1` dominates every sampled point.
    pub declared_k1_holds: bool,
    pub taming_gaps: Vec<TamingGapRow>,
    pub violations: Vec<Witness>,
}

/// Runs every check on the ball of radius `s.radius`.
pub fn check_assumptions(problem: &NsddeProblem, s: &Sampling, dts: &[f64], alpha: f64) -> AssumptionReport {
    let c = &problem.coefficients;
    let contraction = check_contraction(c, s);
    let lipschitz = check_local_lipschitz(c, s);
    let kh = check_khasminskii(c, problem.khasminskii_p, s);
    let theta_hat = estimate_segment_lipschitz(&problem.segment, problem.delay_f64(), problem.dim(), s.samples, s.seed);

    let set = SampleSet::generate(c.dim(), s);
    let (k1, p) = (problem.khasminskii_k1, problem.khasminskii_p);
    let mut violations = contraction.violations;
    violations.extend(
        set.points
            .iter()
            .map(|t| Witness::Khasminskii { x: t.x.clone(), y: t.y.clone(), k1, p })
            .filter(|w| w.still_violates(c)),
    );
    let declared_k1_holds = !violations.iter().any(|w| matches!(w, Witness::Khasminskii { .. }));

    AssumptionReport {
        radius: s.radius,
        samples: s.samples,
        theta_hat,
        kappa_hat: contraction.kappa_hat,
        contraction_pass: contraction.pass,
        k_r_hat: lipschitz.k_r_hat,
        kbar_r_hat: lipschitz.kbar_r_hat,
        khasminskii_ok: kh.ok,
        k1_hat: kh.k1_hat,
        declared_k1_holds,
        taming_gaps: check_taming_gap(c, dts, alpha, s),
        violations,
    }
}

/// Sample points in the ball, exposed for property checks.
pub fn sample_points(dim: usize, s: &Sampling) -> Vec<Triple> {
    SampleSet::generate(dim, s).points
}

impl Triple {
    pub fn max_norm(&self) -> f64 {
        self.parts().iter().map(|v| norm(v)).fold(0.0, f64::max)
    }
}
