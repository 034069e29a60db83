use super::metrics::{Confusion, Scores};
use crate::forecaster::Calibration;
use crate::model::{Episode, RackId, NANOS_PER_HOUR, NANOS_PER_MINUTE};
use serde::{Deserialize, Serialize};

fn ns_to_minutes(ns: i64) -> f64 {
    ns as f64 / NANOS_PER_MINUTE as f64
}

fn hours_ns(h: f64) -> i64 {
    (h * NANOS_PER_HOUR as f64).round() as i64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLatency {
    pub event_id: u64,
    /// Minutes from onset to the first positive inside the episode.
    pub minutes: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorEval {
    pub confusion: Confusion,
    pub scores: Scores,
    pub latencies: Vec<EpisodeLatency>,
    /// Fraction of episodes first detected within one minute of onset.
    pub within_one_minute: f64,
}

/// Confusion over every reading plus per-episode detection latency.
/// `samples` are `(timestamp, truth, predicted)` for one rack, time-ordered.
pub fn evaluate_detector(samples: &[(i64, bool, bool)], events: &[Episode]) -> DetectorEval {
    let confusion = Confusion::from_pairs(samples.iter().map(|&(_, t, p)| (t, p)));
    let latencies: Vec<EpisodeLatency> = events
        .iter()
        .map(|e| EpisodeLatency {
            event_id: e.id,
            minutes: samples
                .iter()
                .find(|&&(ts, t, p)| t && p && e.is_active_at(ts))
                .map(|&(ts, ..)| ns_to_minutes(ts - e.onset)),
        })
        .collect();
    let fast = latencies
        .iter()
        .filter(|l| l.minutes.is_some_and(|m| m <= 1.0))
        .count();
    DetectorEval {
        confusion,
        scores: confusion.scores(),
        within_one_minute: if latencies.is_empty() {
            0.0
        } else {
            fast as f64 / latencies.len() as f64
        },
        latencies,
    }
}

/// One issued forecast with its ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub issued_at: i64,
    pub estimate: f64,
    /// True time-to-leak in hours, capped at the horizon.
    pub truth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracySpec {
    pub level: f64,
    pub horizon_hours: f64,
    pub tolerance_hours: f64,
}

/// Per-event accuracy: for each episode, the first forecast in the lookback
/// whose `prob_within(horizon)` reaches `level` must have been issued between
/// `horizon - tolerance` and `horizon + tolerance` before onset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastAccuracy {
    pub spec: AccuracySpec,
    pub events: usize,
    pub hits: usize,
    pub accuracy: f64,
    /// Lead time in hours at the first qualifying forecast per event.
    pub leads: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FalsePositiveRate {
    pub threshold: f64,
    pub horizon_hours: f64,
    /// Forecasts with no onset inside the horizon.
    pub negatives: usize,
    /// Of those, forecasts whose probability reached the threshold.
    pub false_alarms: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecasterEval {
    pub windows: usize,
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Windows with `0 < truth < horizon`.
    pub uncensored: usize,
    pub uncensored_mse: f64,
    pub eps90: f64,
    /// Fraction of uncensored windows with `|truth − estimate| ≤ eps90`.
    pub coverage: f64,
    pub accuracy: Vec<ForecastAccuracy>,
    pub false_positive: FalsePositiveRate,
}

pub const DEFAULT_ACCURACY_SPECS: [AccuracySpec; 2] = [
    AccuracySpec {
        level: 0.9,
        horizon_hours: 2.0,
        tolerance_hours: 0.5,
    },
    AccuracySpec {
        level: 0.8,
        horizon_hours: 4.0,
        tolerance_hours: 0.75,
    },
];

pub const FP_THRESHOLD: f64 = 0.9;
pub const FP_HORIZON_HOURS: f64 = 4.0;

fn mean_sq(pairs: impl Iterator<Item = f64>) -> (f64, usize) {
    let (s, n) = pairs.fold((0.0, 0usize), |(s, n), d| (s + d * d, n + 1));
    (if n == 0 { 0.0 } else { s / n as f64 }, n)
}

pub fn forecast_accuracy(
    points: &[ForecastPoint],
    cal: &Calibration,
    events: &[Episode],
    spec: AccuracySpec,
    lookback_hours: f64,
) -> ForecastAccuracy {
    let leads: Vec<Option<f64>> = events
        .iter()
        .map(|e| {
            let from = e.onset - hours_ns(lookback_hours);
            points
                .iter()
                .filter(|p| p.issued_at >= from && p.issued_at < e.onset)
                .find(|p| cal.prob_within(p.estimate, spec.horizon_hours) >= spec.level)
                .map(|p| (e.onset - p.issued_at) as f64 / NANOS_PER_HOUR as f64)
        })
        .collect();
    let hits = leads
        .iter()
        .flatten()
        .filter(|&&lead| (lead - spec.horizon_hours).abs() <= spec.tolerance_hours + 1e-9)
        .count();
    ForecastAccuracy {
        spec,
        events: events.len(),
        hits,
        accuracy: if events.is_empty() {
            0.0
        } else {
            hits as f64 / events.len() as f64
        },
        leads,
    }
}

pub fn false_positive_rate(
    points: &[ForecastPoint],
    cal: &Calibration,
    threshold: f64,
    horizon_hours: f64,
) -> FalsePositiveRate {
    let negatives: Vec<&ForecastPoint> = points.iter().filter(|p| p.truth > horizon_hours).collect();
    let false_alarms = negatives
        .iter()
        .filter(|p| cal.prob_within(p.estimate, horizon_hours) >= threshold)
        .count();
    FalsePositiveRate {
        threshold,
        horizon_hours,
        negatives: negatives.len(),
        false_alarms,
        rate: if negatives.is_empty() {
            0.0
        } else {
            false_alarms as f64 / negatives.len() as f64
        },
    }
}

/// Error metrics on every window, calibration coverage on the uncensored
/// ones, per-event accuracy and the false-alarm rate. `horizon` is the label cap.
pub fn evaluate_forecaster(
    points: &[ForecastPoint],
    cal: &Calibration,
    events: &[Episode],
    horizon: f64,
) -> ForecasterEval {
    let (mse, windows) = mean_sq(points.iter().map(|p| p.truth - p.estimate));
    let mae = if windows == 0 {
        0.0
    } else {
        points.iter().map(|p| (p.truth - p.estimate).abs()).sum::<f64>() / windows as f64
    };
    let unc: Vec<&ForecastPoint> = points
        .iter()
        .filter(|p| p.truth > 0.0 && p.truth < horizon)
        .collect();
    let (uncensored_mse, uncensored) = mean_sq(unc.iter().map(|p| p.truth - p.estimate));
    let covered = unc
        .iter()
        .filter(|p| (p.truth - p.estimate).abs() <= cal.eps90)
        .count();
    ForecasterEval {
        windows,
        mse,
        rmse: mse.sqrt(),
        mae,
        uncensored,
        uncensored_mse,
        eps90: cal.eps90,
        coverage: if uncensored == 0 {
            0.0
        } else {
            covered as f64 / uncensored as f64
        },
        accuracy: DEFAULT_ACCURACY_SPECS
            .iter()
            .map(|&s| forecast_accuracy(points, cal, events, s, horizon))
            .collect(),
        false_positive: false_positive_rate(points, cal, FP_THRESHOLD, FP_HORIZON_HOURS),
    }
}

/// Thresholds deciding whether an episode counts as caught.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverageRule {
    /// Forecast alerts count if fired between `max` and `min` hours before onset.
    pub forecast_min_lead_hours: f64,
    pub forecast_max_lead_hours: f64,
    /// Detection alerts count if fired within this many minutes after onset.
    pub detection_window_minutes: f64,
}

impl Default for CoverageRule {
    fn default() -> Self {
        CoverageRule {
            forecast_min_lead_hours: 2.0,
            forecast_max_lead_hours: 4.0,
            detection_window_minutes: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatchPath {
    Forecast,
    Detection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventCatch {
    pub event_id: u64,
    pub caught_by: Option<CatchPath>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratedCoverage {
    pub events: usize,
    pub coverage: f64,
    pub via_forecast: f64,
    pub via_detection: f64,
    pub per_event: Vec<EventCatch>,
}

/// An alert firing on a rack at a timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Firing {
    pub rack_id: RackId,
    pub at: i64,
}

/// Each event is credited to the earliest path that caught it; forecast
/// catches always precede onset, so they win when both paths fire.
pub fn integrated_coverage(
    forecasts: &[Firing],
    detections: &[Firing],
    events: &[Episode],
    rule: &CoverageRule,
) -> IntegratedCoverage {
    let per_event: Vec<EventCatch> = events
        .iter()
        .map(|e| {
            let lo = e.onset - hours_ns(rule.forecast_max_lead_hours);
            let hi = e.onset - hours_ns(rule.forecast_min_lead_hours);
            let by_forecast = forecasts
                .iter()
                .any(|f| f.rack_id == e.rack_id && f.at >= lo && f.at <= hi);
            let until = e.onset
                + (rule.detection_window_minutes * NANOS_PER_MINUTE as f64).round() as i64;
            let by_detection = detections
                .iter()
                .any(|d| d.rack_id == e.rack_id && d.at >= e.onset && d.at <= until);
            EventCatch {
                event_id: e.id,
                caught_by: if by_forecast {
                    Some(CatchPath::Forecast)
                } else if by_detection {
                    Some(CatchPath::Detection)
                } else {
                    None
                },
            }
        })
        .collect();
    let n = events.len();
    let frac = |path: Option<CatchPath>| -> f64 {
        if n == 0 {
            return 0.0;
        }
        let c = per_event
            .iter()
            .filter(|c| match path {
                Some(p) => c.caught_by == Some(p),
                None => c.caught_by.is_some(),
            })
            .count();
        c as f64 / n as f64
    };
    IntegratedCoverage {
        events: n,
        coverage: frac(None),
        via_forecast: frac(Some(CatchPath::Forecast)),
        via_detection: frac(Some(CatchPath::Detection)),
        per_event,
    }
}

/// Expected annual savings in kWh: `racks × rate/100 × kwh × coverage`.
pub fn energy_savings(racks: f64, incidents_per_100_racks: f64, kwh_per_incident: f64, coverage: f64) -> f64 {
    racks * incidents_per_100_racks / 100.0 * kwh_per_incident * coverage
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const H: i64 = NANOS_PER_HOUR;
    const M: i64 = NANOS_PER_MINUTE;

    fn event(id: u64, onset: i64) -> Episode {
        Episode {
            id,
            rack_id: RackId::default(),
            onset,
            end: onset + 90 * M,
        }
    }

    fn at(t: i64) -> Firing {
        Firing {
            rack_id: RackId::default(),
            at: t,
        }
    }

    fn cal(errors: &[f64]) -> Calibration {
        Calibration::from_errors(errors, &vec![0.0; errors.len()]).unwrap()
    }

    #[test]
    fn perfect_detector() {
        let ev = [event(1, 100 * M)];
        let samples: Vec<(i64, bool, bool)> = (0..300)
            .map(|m| {
                let l = ev[0].is_active_at(m * M);
                (m * M, l, l)
            })
            .collect();
        let r = evaluate_detector(&samples, &ev);
        assert_eq!(r.scores.f1, 1.0);
        assert_eq!(r.latencies[0].minutes, Some(0.0));
        assert_eq!(r.within_one_minute, 1.0);
    }

    #[test]
    fn late_detection_latency() {
        let ev = [event(1, 10 * M)];
        let samples: Vec<(i64, bool, bool)> = (0..200)
            .map(|m| {
                let l = ev[0].is_active_at(m * M);
                (m * M, l, l && m >= 13)
            })
            .collect();
        let r = evaluate_detector(&samples, &ev);
        assert_eq!(r.latencies[0].minutes, Some(3.0));
        assert_eq!(r.within_one_minute, 0.0);
    }

    #[test]
    fn oracle_forecaster_is_fully_accurate() {
        let onset = 20 * H;
        let ev = [event(1, onset)];
        let points: Vec<ForecastPoint> = (0..20 * 60)
            .map(|m| {
                let truth = (ns_to_minutes(onset - m * M) / 60.0).min(8.0);
                ForecastPoint {
                    issued_at: m * M,
                    estimate: truth,
                    truth,
                }
            })
            .collect();
        // tiny symmetric calibration errors
        let c = cal(&(0..100).map(|i| (f64::from(i) - 49.5) * 1e-4).collect::<Vec<_>>());
        let r = evaluate_forecaster(&points, &c, &ev, 8.0);
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.coverage, 1.0);
        for a in &r.accuracy {
            assert_eq!(a.accuracy, 1.0, "{a:?}");
        }
        assert_eq!(r.false_positive.false_alarms, 0);
    }

    #[test]
    fn false_alarm_counting() {
        let c = cal(&[0.0; 60]);
        let points = [
            ForecastPoint { issued_at: 0, estimate: 1.0, truth: 8.0 },
            ForecastPoint { issued_at: 1, estimate: 7.0, truth: 8.0 },
            ForecastPoint { issued_at: 2, estimate: 1.0, truth: 1.0 },
        ];
        let fp = false_positive_rate(&points, &c, 0.9, 4.0);
        assert_eq!((fp.negatives, fp.false_alarms), (2, 1));
        assert_eq!(fp.rate, 0.5);
    }

    #[test]
    fn coverage_attribution() {
        let ev = [event(1, 10 * H), event(2, 30 * H), event(3, 50 * H)];
        let f = [at(10 * H - 3 * H), at(30 * H - H)];
        let d = [at(10 * H + M), at(30 * H + 2 * M), at(50 * H + 5 * M)];
        let r = integrated_coverage(&f, &d, &ev, &CoverageRule::default());
        assert_eq!(r.per_event[0].caught_by, Some(CatchPath::Forecast));
        assert_eq!(r.per_event[1].caught_by, Some(CatchPath::Detection));
        assert_eq!(r.per_event[2].caught_by, None);
        assert!((r.coverage - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.via_forecast + r.via_detection - r.coverage).abs() < 1e-12);
    }

    #[test]
    fn coverage_single_path_and_empty() {
        let ev = [event(1, 10 * H), event(2, 30 * H)];
        let f = [at(7 * H), at(27 * H)];
        let r = integrated_coverage(&f, &[], &ev, &CoverageRule::default());
        assert_eq!((r.coverage, r.via_forecast, r.via_detection), (1.0, 1.0, 0.0));
        let empty = integrated_coverage(&[], &[], &ev, &CoverageRule::default());
        assert_eq!(empty.coverage, 0.0);
    }

    #[test]
    fn energy_arithmetic() {
        assert_eq!(energy_savings(100.0, 4.0, 600.0, 1.0), 2400.0);
        assert_eq!(energy_savings(47.0, 5.32, 600.0, 0.0), 0.0);
        let e = energy_savings(47.0, 5.32, 600.0, 0.984);
        assert!((e - 1476.24).abs() < 0.01, "{e}");
    }

    proptest! {
        #[test]
        fn adding_a_detection_never_lowers_coverage(
            onsets in prop::collection::vec(0i64..500, 1..8),
            dets in prop::collection::vec(0i64..30_000, 0..20),
            extra in 0i64..30_000,
        ) {
            let ev: Vec<Episode> = onsets.iter().enumerate()
                .map(|(i, &o)| event(i as u64, o * H / 10)).collect();
            let mut d: Vec<Firing> = dets.iter().map(|&m| at(m * M)).collect();
            let before = integrated_coverage(&[], &d, &ev, &CoverageRule::default());
            d.push(at(extra * M));
            let after = integrated_coverage(&[], &d, &ev, &CoverageRule::default());
            prop_assert!(after.coverage >= before.coverage);
            prop_assert!((0.0..=1.0).contains(&after.coverage));
        }
    }
}
