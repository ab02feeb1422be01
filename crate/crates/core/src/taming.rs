//! Drift taming `b_h = b / (1 + Δ^α |b|)`.

use thiserror::Error;

use crate::problem::norm;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum TamingError {
    #[error("non-finite drift value")]
    NonFiniteInput,
    #[error("step {0} outside (0, 1)")]
    BadStep(f64),
    #[error("taming exponent {0} outside (0, 1/2]")]
    BadExponent(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TamedDriftValue {
    pub value: Vec<f64>,
    /// `|b|` before taming.
    pub raw_norm: f64,
}

fn check_params(dt: f64, alpha: f64) -> Result<(), TamingError> {
    if !(dt > 0.0 && dt < 1.0) {
        return Err(TamingError::BadStep(dt));
    }
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(TamingError::BadExponent(alpha));
    }
    Ok(())
}

/// Tames `b_val` in place given `Δ^α` and `Δ^{-α}` and returns `|b|`.
///
/// Rounding can push `|b_h|` an ulp above `min(Δ^{-α}, |b|)`; the result is
/// nudged back so the bound holds exactly in floating point.
#[inline]
pub(crate) fn tame_in_place(b: &mut [f64], dt_pow_alpha: f64, clamp: f64) -> f64 {
    let raw = norm(b);
    if raw == 0.0 {
        return raw;
    }
    let scale = 1.0 / (1.0 + dt_pow_alpha * raw);
    b.iter_mut().for_each(|v| *v *= scale);
    let bound = clamp.min(raw);
    let mut n = norm(b);
    while n > bound {
        let shrink = (bound / n) * (1.0 - f64::EPSILON);
        b.iter_mut().for_each(|v| *v *= shrink);
        n = norm(b);
    }
    raw
}

pub fn tame_drift(b_val: &[f64], dt: f64, alpha: f64) -> Result<TamedDriftValue, TamingError> {
    check_params(dt, alpha)?;
    if b_val.iter().any(|v| !v.is_finite()) {
        return Err(TamingError::NonFiniteInput);
    }
    let mut value = b_val.to_vec();
    let raw_norm = tame_in_place(&mut value, dt.powf(alpha), dt.powf(-alpha));
    Ok(TamedDriftValue { value, raw_norm })
}

/// `|b - b_h| = Δ^α |b|² / (1 + Δ^α |b|)`.
pub fn taming_gap(b_val: &[f64], dt: f64, alpha: f64) -> Result<f64, TamingError> {
    check_params(dt, alpha)?;
    if b_val.iter().any(|v| !v.is_finite()) {
        return Err(TamingError::NonFiniteInput);
    }
    let c = dt.powf(alpha);
    let n = norm(b_val);
    Ok(c * n * n / (1.0 + c * n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const NEAR_ONE: f64 = 1.0 - f64::EPSILON;

    #[test]
    fn zero_is_fixed() {
        let t = tame_drift(&[0.0, 0.0], 0.1, 0.5).unwrap();
        assert_eq!(t.value, vec![0.0, 0.0]);
        assert_eq!(t.raw_norm, 0.0);
        assert_eq!(taming_gap(&[0.0], 0.1, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn unit_step_limit() {
        let t = tame_drift(&[3.0], NEAR_ONE, 0.5).unwrap();
        assert!((t.value[0] - 0.75).abs() < 1e-12);
        let gap = taming_gap(&[1.0], NEAR_ONE, 0.5).unwrap();
        assert!((gap - 0.5).abs() < 1e-12);
        let tamed = tame_drift(&[1.0], NEAR_ONE, 0.5).unwrap().value[0];
        assert!((gap - (1.0 - tamed)).abs() < 1e-12);
    }

    #[test]
    fn huge_drift_is_clamped() {
        let t = tame_drift(&[1e6], 0.01, 0.5).unwrap();
        assert!(t.value[0].abs() <= 10.0);
        assert!(t.value[0] > 9.99);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(tame_drift(&[f64::NAN], 0.1, 0.5), Err(TamingError::NonFiniteInput));
        assert_eq!(taming_gap(&[f64::INFINITY], 0.1, 0.5), Err(TamingError::NonFiniteInput));
        assert_eq!(tame_drift(&[1.0], 1.0, 0.5), Err(TamingError::BadStep(1.0)));
        assert_eq!(tame_drift(&[1.0], 0.1, 0.6), Err(TamingError::BadExponent(0.6)));
    }

    #[test]
    fn gap_strictly_increasing_in_step() {
        let b = [2.5, -1.0];
        let mut last = 0.0;
        for i in 1..100 {
            let g = taming_gap(&b, i as f64 / 100.0, 0.3).unwrap();
            assert!(g > last);
            last = g;
        }
    }

    fn drift_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e9..1e9f64, 1..4)
    }

    proptest! {
        #[test]
        fn norm_bound_holds(b in drift_vec(), dt in 1e-6..0.999f64, alpha in 1e-3..=0.5f64) {
            let t = tame_drift(&b, dt, alpha).unwrap();
            prop_assert!(norm(&t.value) <= dt.powf(-alpha).min(norm(&b)));
        }

        #[test]
        fn direction_is_preserved(b in drift_vec(), dt in 1e-6..0.999f64, alpha in 1e-3..=0.5f64) {
            let t = tame_drift(&b, dt, alpha).unwrap();
            let lambda = if norm(&b) == 0.0 { 1.0 } else { norm(&t.value) / norm(&b) };
            prop_assert!(lambda > 0.0 && lambda <= 1.0);
            for (v, w) in t.value.iter().zip(&b) {
                prop_assert!((v - lambda * w).abs() <= 1e-9 * w.abs().max(1.0));
            }
        }

        #[test]
        fn gap_matches_formula_and_bound(b in drift_vec(), dt in 1e-6..0.999f64, alpha in 1e-3..=0.5f64) {
            let t = tame_drift(&b, dt, alpha).unwrap();
            let diff: Vec<f64> = b.iter().zip(&t.value).map(|(x, y)| x - y).collect();
            let gap = taming_gap(&b, dt, alpha).unwrap();
            let n = norm(&b);
            prop_assert!((norm(&diff) - gap).abs() <= 1e-9 * n.max(1.0));
            prop_assert!(gap <= dt.powf(alpha) * n * n);
        }
    }
}
