use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_CALIBRATION_POINTS: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("need at least {min} calibration points, got {got}")]
    TooFew { min: usize, got: usize },
    #[error("calibration inputs differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("non-finite value in calibration inputs")]
    NonFinite,
}

/// Empirical error distribution of the forecaster on held-out windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Ascending `|y - ŷ|`.
    pub abs_errors: Vec<f64>,
    /// Ascending `y - ŷ`.
    pub signed_errors: Vec<f64>,
    pub eps90: f64,
}

/// Nearest-rank percentile of ascending `sorted`: the value at rank ⌈p·n⌉.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let rank = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

impl Calibration {
    pub fn from_errors(truth: &[f64], pred: &[f64]) -> Result<Self, CalibrationError> {
        if truth.len() != pred.len() {
            return Err(CalibrationError::Length(truth.len(), pred.len()));
        }
        if truth.len() < MIN_CALIBRATION_POINTS {
            return Err(CalibrationError::TooFew {
                min: MIN_CALIBRATION_POINTS,
                got: truth.len(),
            });
        }
        let mut signed: Vec<f64> = truth.iter().zip(pred).map(|(y, p)| y - p).collect();
        if signed.iter().any(|e| !e.is_finite()) {
            return Err(CalibrationError::NonFinite);
        }
        signed.sort_by(f64::total_cmp);
        let mut abs: Vec<f64> = signed.iter().map(|e| e.abs()).collect();
        abs.sort_by(f64::total_cmp);
        let eps90 = nearest_rank(&abs, 0.9);
        Ok(Calibration {
            abs_errors: abs,
            signed_errors: signed,
            eps90,
        })
    }

    /// Empirical CDF of signed errors at `x`: fraction of errors ≤ x.
    pub fn cdf(&self, x: f64) -> f64 {
        let n = self.signed_errors.partition_point(|&e| e <= x);
        n as f64 / self.signed_errors.len() as f64
    }

    /// Probability that the leak begins within `horizon` hours given point
    /// estimate `estimate`, i.e. `P(y ≤ T) = F(T − ŷ)`.
    pub fn prob_within(&self, estimate: f64, horizon: f64) -> f64 {
        self.cdf(horizon - estimate)
    }

    /// `[ŷ − eps90, ŷ + eps90]` clipped at zero.
    pub fn interval(&self, estimate: f64) -> (f64, f64) {
        ((estimate - self.eps90).max(0.0), estimate + self.eps90)
    }
}

/// Fraction of `(y, ŷ)` pairs with `|y − ŷ| ≤ eps90`.
pub fn coverage(cal: &Calibration, truth: &[f64], pred: &[f64]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hit = truth
        .iter()
        .zip(pred)
        .filter(|(y, p)| (*y - *p).abs() <= cal.eps90)
        .count();
    hit as f64 / truth.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cal_with(errors: &[f64]) -> Calibration {
        let pred = vec![0.0; errors.len()];
        Calibration::from_errors(errors, &pred).unwrap()
    }

    #[test]
    fn nearest_rank_of_one_to_ten() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 0.9), 9.0);
        assert_eq!(nearest_rank(&v, 0.91), 10.0);
        assert_eq!(nearest_rank(&v, 0.0), 1.0);
        assert_eq!(nearest_rank(&v, 1.0), 10.0);
    }

    #[test]
    fn constant_errors_give_that_constant() {
        let cal = cal_with(&[0.7; 60]);
        assert_eq!(cal.eps90, 0.7);
    }

    #[test]
    fn cdf_bounds() {
        let errors: Vec<f64> = (0..100).map(|i| f64::from(i) / 10.0 - 5.0).collect();
        let cal = cal_with(&errors);
        let est = 2.0;
        assert_eq!(cal.prob_within(est, est + 5.0), 1.0);
        assert_eq!(cal.prob_within(est, est - 5.01), 0.0);
    }

    #[test]
    fn symmetric_errors_give_ninety_percent_at_eps90() {
        let errors: Vec<f64> = (0..1000)
            .map(|i| {
                let u = (f64::from(i) + 0.5) / 1000.0;
                2.0 * u - 1.0
            })
            .collect();
        let cal = cal_with(&errors);
        let p = cal.prob_within(2.0, 2.0 + cal.eps90);
        assert!((p - 0.95).abs() < 0.01, "{p}");
        // two-sided band holds 90%
        let band = cal.prob_within(2.0, 2.0 + cal.eps90) - cal.prob_within(2.0, 2.0 - cal.eps90);
        assert!((band - 0.90).abs() < 0.01);
    }

    #[test]
    fn too_few_points() {
        assert_eq!(
            Calibration::from_errors(&[1.0; 10], &[1.0; 10]).unwrap_err(),
            CalibrationError::TooFew { min: 50, got: 10 }
        );
    }

    #[test]
    fn coverage_counts_inside_band() {
        let cal = cal_with(&(1..=60).map(f64::from).collect::<Vec<_>>());
        assert_eq!(cal.eps90, 54.0);
        assert_eq!(coverage(&cal, &[0.0, 0.0], &[54.0, 54.5]), 0.5);
    }

    proptest! {
        #[test]
        fn prob_within_monotone_and_order_free(
            mut errors in prop::collection::vec(-10.0f64..10.0, 50..120),
            est in 0.0f64..8.0,
            a in 0.0f64..20.0,
            b in 0.0f64..20.0,
        ) {
            let cal = cal_with(&errors);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (plo, phi) = (cal.prob_within(est, lo), cal.prob_within(est, hi));
            prop_assert!(plo <= phi);
            prop_assert!((0.0..=1.0).contains(&plo) && (0.0..=1.0).contains(&phi));
            errors.reverse();
            let rev = cal_with(&errors);
            prop_assert_eq!(rev.prob_within(est, lo), plo);
            prop_assert_eq!(rev.eps90, cal.eps90);
        }
    }
}
