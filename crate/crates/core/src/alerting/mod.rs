//! Rule engine turning forecasts, detections and readings into debounced alerts.

mod audit;

pub use audit::{read_audit, AuditEntry, AuditLog};

use crate::model::{
    AlertPayload, AlertRecord, AlertRule, DetectionResult, ForecastResult, RackId, SensorReading,
    NANOS_PER_MINUTE,
};
use crate::tstore::{SeriesKey, Store, StoreError, WriteReport};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};
use std::io;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AlertError {
    #[error("unknown alert id {0}")]
    UnknownId(u64),
    #[error("invalid rule set: {0}")]
    Rules(String),
    #[error("audit log: {0}")]
    Audit(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleSet {
    /// ForecastProbability fires when `prob_within(horizon) > threshold`.
    pub forecast_threshold: f64,
    pub forecast_horizon_hours: f64,
    /// PressureDrop fires when pressure < `(1 − fraction) × baseline`.
    pub pressure_drop_fraction: f64,
    pub baseline_minutes: i64,
    pub debounce_minutes: i64,
    /// Raise LeakDetected on positive detections.
    pub detection_alerts: bool,
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet {
            forecast_threshold: 0.8,
            forecast_horizon_hours: 4.0,
            pressure_drop_fraction: 0.15,
            baseline_minutes: 60,
            debounce_minutes: 15,
            detection_alerts: true,
        }
    }
}

impl RuleSet {
    pub fn validate(&self) -> Result<(), AlertError> {
        let bad = |m: &str| Err(AlertError::Rules(m.into()));
        if !(self.forecast_threshold > 0.0 && self.forecast_threshold <= 1.0) {
            return bad("forecast_threshold must be in (0, 1]");
        }
        if !(self.pressure_drop_fraction > 0.0 && self.pressure_drop_fraction < 1.0) {
            return bad("pressure_drop_fraction must be in (0, 1)");
        }
        if !(self.forecast_horizon_hours > 0.0) {
            return bad("forecast_horizon_hours must be positive");
        }
        if self.baseline_minutes < 1 || self.debounce_minutes < 0 {
            return bad("baseline_minutes must be >= 1 and debounce_minutes >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "snake_case")]
pub enum Input {
    Forecast(ForecastResult),
    Detection(DetectionResult),
    Reading(SensorReading),
}

impl Input {
    pub fn rack(&self) -> &RackId {
        match self {
            Input::Forecast(f) => &f.rack_id,
            Input::Detection(d) => &d.rack_id,
            Input::Reading(r) => &r.rack_id,
        }
    }

    pub fn timestamp(&self) -> i64 {
        match self {
            Input::Forecast(f) => f.issued_at,
            Input::Detection(d) => d.issued_at,
            Input::Reading(r) => r.timestamp,
        }
    }
}

/// Where `fired_at` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    /// The triggering input's timestamp; replays are reproducible.
    Source,
    Wall,
}

fn wall_ns() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos() as i64)
}

/// Alert history shared between the engine and API handlers.
#[derive(Debug, Clone, Default)]
pub struct AlertBook(Arc<RwLock<BookState>>);

#[derive(Debug, Default)]
struct BookState {
    alerts: Vec<AlertRecord>,
    audit: Option<AuditLog>,
}

impl AlertBook {
    pub fn with_audit(audit: AuditLog) -> Self {
        AlertBook(Arc::new(RwLock::new(BookState {
            alerts: Vec::new(),
            audit: Some(audit),
        })))
    }

    fn push(&self, alert: AlertRecord) -> Result<(), AlertError> {
        let mut s = self.0.write();
        if let Some(a) = s.audit.as_mut() {
            a.fired(&alert)?;
        }
        s.alerts.push(alert);
        Ok(())
    }

    /// Marks an alert acknowledged; repeating is a no-op.
    pub fn acknowledge(&self, id: u64) -> Result<AlertRecord, AlertError> {
        let mut s = self.0.write();
        let s = &mut *s;
        let alert = s
            .alerts
            .iter_mut()
            .find(|a| a.id == id)
            .ok_or(AlertError::UnknownId(id))?;
        if !alert.acknowledged {
            alert.acknowledged = true;
            if let Some(a) = s.audit.as_mut() {
                a.acknowledged(id, wall_ns())?;
            }
        }
        Ok(alert.clone())
    }

    pub fn get(&self, id: u64) -> Option<AlertRecord> {
        self.0.read().alerts.iter().find(|a| a.id == id).cloned()
    }

    /// Alerts fired at or after `since`, oldest first.
    pub fn since(&self, since: i64) -> Vec<AlertRecord> {
        self.0
            .read()
            .alerts
            .iter()
            .filter(|a| a.fired_at >= since)
            .cloned()
            .collect()
    }

    pub fn all(&self) -> Vec<AlertRecord> {
        self.0.read().alerts.clone()
    }

    pub fn len(&self) -> usize {
        self.0.read().alerts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Rolling per-minute pressure sums for one rack.
#[derive(Debug, Default)]
struct Baseline {
    first_minute: Option<i64>,
    /// `(minute, sum, count)`, ascending.
    minutes: VecDeque<(i64, f64, u32)>,
}

impl Baseline {
    /// Mean over the `span` minutes before `minute`, once that much history exists.
    fn mean_before(&self, minute: i64, span: i64) -> Option<f64> {
        if self.first_minute? > minute - span {
            return None;
        }
        let (s, n) = self
            .minutes
            .iter()
            .filter(|(m, ..)| *m >= minute - span && *m < minute)
            .fold((0.0, 0u32), |(s, n), (_, ms, mn)| (s + ms, n + mn));
        (n > 0).then(|| s / f64::from(n))
    }

    fn add(&mut self, minute: i64, value: f64, span: i64) {
        self.first_minute.get_or_insert(minute);
        match self.minutes.back_mut() {
            Some(last) if last.0 == minute => {
                last.1 += value;
                last.2 += 1;
            }
            _ => self.minutes.push_back((minute, value, 1)),
        }
        while self.minutes.front().is_some_and(|f| f.0 < minute - span) {
            self.minutes.pop_front();
        }
    }
}

#[derive(Debug)]
pub struct AlertEngine {
    rules: RuleSet,
    clock: Clock,
    book: AlertBook,
    next_id: u64,
    last_fired: HashMap<(AlertRule, RackId), i64>,
    last_reading: HashMap<RackId, i64>,
    baselines: HashMap<RackId, Baseline>,
    dropped: u64,
}

impl AlertEngine {
    pub fn new(rules: RuleSet, clock: Clock, book: AlertBook) -> Result<Self, AlertError> {
        rules.validate()?;
        Ok(AlertEngine {
            rules,
            clock,
            next_id: book.all().iter().map(|a| a.id).max().map_or(1, |m| m + 1),
            book,
            last_fired: HashMap::new(),
            last_reading: HashMap::new(),
            baselines: HashMap::new(),
            dropped: 0,
        })
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn book(&self) -> &AlertBook {
        &self.book
    }

    /// Malformed inputs seen so far.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    fn malformed(input: &Input) -> bool {
        match input {
            Input::Forecast(f) => {
                !f.point_estimate.is_finite()
                    || f.prob_within
                        .iter()
                        .any(|(h, p)| !h.is_finite() || !(0.0..=1.0).contains(p))
            }
            Input::Detection(d) => !(0.0..=1.0).contains(&d.vote_score),
            Input::Reading(r) => r.channels().iter().any(|v| !v.is_finite()),
        }
    }

    pub fn ingest(&mut self, input: &Input) -> Result<Vec<AlertRecord>, AlertError> {
        if Self::malformed(input) {
            self.dropped += 1;
            return Ok(Vec::new());
        }
        let rack = input.rack().clone();
        let ts = input.timestamp();
        let fire = match input {
            Input::Forecast(f) => f
                .probability_at(self.rules.forecast_horizon_hours)
                .filter(|&p| p > self.rules.forecast_threshold)
                .map(|p| {
                    (
                        AlertRule::ForecastProbability,
                        AlertPayload::Forecast {
                            probability: p,
                            horizon_hours: self.rules.forecast_horizon_hours,
                            point_estimate: f.point_estimate,
                        },
                    )
                }),
            Input::Detection(d) => (self.rules.detection_alerts && d.is_leak).then_some((
                AlertRule::LeakDetected,
                AlertPayload::Detection {
                    vote_score: d.vote_score,
                },
            )),
            Input::Reading(r) => {
                if self.last_reading.get(&rack).is_some_and(|&t| ts <= t) {
                    self.dropped += 1;
                    return Ok(Vec::new());
                }
                self.last_reading.insert(rack.clone(), ts);
                let minute = ts.div_euclid(NANOS_PER_MINUTE);
                let span = self.rules.baseline_minutes;
                let base = self.baselines.entry(rack.clone()).or_default();
                let mean = base.mean_before(minute, span);
                base.add(minute, r.pressure, span);
                mean.filter(|&b| r.pressure < (1.0 - self.rules.pressure_drop_fraction) * b)
                    .map(|b| {
                        (
                            AlertRule::PressureDrop,
                            AlertPayload::Pressure {
                                pressure: r.pressure,
                                baseline: b,
                            },
                        )
                    })
            }
        };
        let Some((rule, payload)) = fire else {
            return Ok(Vec::new());
        };
        let key = (rule, rack);
        let debounce = self.rules.debounce_minutes * NANOS_PER_MINUTE;
        if self
            .last_fired
            .get(&key)
            .is_some_and(|&t| ts >= t && ts - t < debounce)
        {
            return Ok(Vec::new());
        }
        let alert = AlertRecord {
            id: self.next_id,
            rack_id: key.1.clone(),
            fired_at: match self.clock {
                Clock::Source => ts,
                Clock::Wall => wall_ns(),
            },
            source_timestamp: ts,
            rule,
            payload,
            acknowledged: false,
        };
        self.next_id += 1;
        self.last_fired.insert(key, ts);
        self.book.push(alert.clone())?;
        Ok(vec![alert])
    }
}

pub const ALERT_SERIES: &str = "alerts";

/// One point per alert in series `alerts,rack_id=..,rule=..`, valued by rule code.
pub fn persist(store: &Store, alerts: &[AlertRecord]) -> Result<WriteReport, StoreError> {
    let points: Vec<(SeriesKey, i64, f64)> = alerts
        .iter()
        .map(|a| {
            (
                SeriesKey::for_rack(ALERT_SERIES, &a.rack_id).with_tag("rule", format!("{:?}", a.rule)),
                a.source_timestamp,
                a.rule.code(),
            )
        })
        .collect();
    store.write_batch(&points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const M: i64 = NANOS_PER_MINUTE;

    fn engine() -> AlertEngine {
        AlertEngine::new(RuleSet::default(), Clock::Source, AlertBook::default()).unwrap()
    }

    fn forecast(ts: i64, p4: f64) -> Input {
        Input::Forecast(ForecastResult {
            issued_at: ts,
            rack_id: RackId::default(),
            point_estimate: 3.0,
            eps90: 0.5,
            prob_within: vec![(2.0, p4 / 2.0), (4.0, p4)],
        })
    }

    fn reading(ts: i64, pressure: f64) -> Input {
        Input::Reading(SensorReading::with_channels(
            ts,
            RackId::default(),
            [pressure, 1.5, 50.0, 25.0],
        ))
    }

    fn detection(ts: i64, leak: bool) -> Input {
        Input::Detection(DetectionResult {
            issued_at: ts,
            rack_id: RackId::default(),
            is_leak: leak,
            vote_score: if leak { 0.9 } else { 0.1 },
        })
    }

    #[test]
    fn forecast_over_threshold_fires_once() {
        let mut e = engine();
        let a = e.ingest(&forecast(0, 0.85)).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].rule, AlertRule::ForecastProbability);
        assert!(e.ingest(&forecast(5 * M, 0.9)).unwrap().is_empty());
        assert_eq!(e.ingest(&forecast(15 * M, 0.9)).unwrap().len(), 1);
        assert!(e.ingest(&forecast(40 * M, 0.8)).unwrap().is_empty());
    }

    #[test]
    fn pressure_drop_against_baseline() {
        let mut e = engine();
        for m in 0..60 {
            assert!(e.ingest(&reading(m * M, 2.0)).unwrap().is_empty());
        }
        let a = e.ingest(&reading(60 * M, 1.69)).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(
            a[0].payload,
            AlertPayload::Pressure {
                pressure: 1.69,
                baseline: 2.0
            }
        );
        let mut e = engine();
        for m in 0..60 {
            e.ingest(&reading(m * M, 2.0)).unwrap();
        }
        assert!(e.ingest(&reading(60 * M, 1.71)).unwrap().is_empty());
    }

    #[test]
    fn no_baseline_before_an_hour_of_history() {
        let mut e = engine();
        for m in 0..30 {
            e.ingest(&reading(m * M, 2.0)).unwrap();
        }
        assert!(e.ingest(&reading(30 * M, 1.0)).unwrap().is_empty());
    }

    #[test]
    fn baseline_excludes_current_minute() {
        let mut e = engine();
        for m in 0..60 {
            e.ingest(&reading(m * M, 2.0)).unwrap();
        }
        // a 1 Hz burst inside minute 60 must not drag its own baseline down
        for s in 0..60 {
            e.ingest(&reading(60 * M + s * 1_000_000_000, 1.0)).unwrap();
        }
        let payloads: Vec<AlertRecord> = e.book().all();
        assert_eq!(payloads.len(), 1);
        assert_eq!(
            payloads[0].payload,
            AlertPayload::Pressure {
                pressure: 1.0,
                baseline: 2.0
            }
        );
    }

    #[test]
    fn detections_and_acknowledgement() {
        let mut e = engine();
        assert!(e.ingest(&detection(0, false)).unwrap().is_empty());
        let a = e.ingest(&detection(M, true)).unwrap().remove(0);
        let book = e.book().clone();
        assert!(book.acknowledge(a.id).unwrap().acknowledged);
        assert!(book.acknowledge(a.id).unwrap().acknowledged);
        assert!(matches!(book.acknowledge(999), Err(AlertError::UnknownId(999))));
        assert_eq!(book.since(M).len(), 1);
        assert_eq!(book.since(M + 1).len(), 0);
    }

    #[test]
    fn malformed_inputs_are_counted() {
        let mut e = engine();
        assert!(e.ingest(&forecast(0, 1.5)).unwrap().is_empty());
        assert!(e.ingest(&reading(0, f64::NAN)).unwrap().is_empty());
        assert_eq!(e.dropped(), 2);
    }

    #[test]
    fn invalid_rules_rejected() {
        let rules = RuleSet {
            forecast_threshold: 0.0,
            ..RuleSet::default()
        };
        assert!(AlertEngine::new(rules, Clock::Source, AlertBook::default()).is_err());
        let rules = RuleSet {
            pressure_drop_fraction: 1.0,
            ..RuleSet::default()
        };
        assert!(rules.validate().is_err());
    }

    #[test]
    fn persisted_alerts_are_queryable() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let mut e = engine();
        let mut fired = e.ingest(&detection(M, true)).unwrap();
        fired.extend(e.ingest(&forecast(M, 0.95)).unwrap());
        assert_eq!(persist(&store, &fired).unwrap().written, 2);
        let key = SeriesKey::for_rack(ALERT_SERIES, &RackId::default()).with_tag("rule", "LeakDetected");
        assert_eq!(store.latest(&key), Some((M, AlertRule::LeakDetected.code())));
    }

    fn input_strategy() -> impl Strategy<Value = Vec<(i64, u8, f64)>> {
        prop::collection::vec((1i64..600, 0u8..3, 0.0f64..1.0), 1..150)
    }

    proptest! {
        #[test]
        fn every_alert_is_justified_and_debounced(steps in input_strategy()) {
            let mut e = engine();
            let mut log = Vec::new();
            let mut t = 0i64;
            for (dt, kind, v) in steps {
                t += dt * 1_000_000_000;
                let input = match kind {
                    0 => forecast(t, v),
                    1 => detection(t, v > 0.5),
                    _ => reading(t, 1.6 + 0.5 * v),
                };
                e.ingest(&input).unwrap();
                log.push(input);
            }
            let alerts = e.book().all();
            for a in &alerts {
                let src = log.iter().find(|i| i.timestamp() == a.source_timestamp && match (a.rule, i) {
                    (AlertRule::ForecastProbability, Input::Forecast(f)) => f.probability_at(4.0).unwrap() > 0.8,
                    (AlertRule::LeakDetected, Input::Detection(d)) => d.is_leak,
                    (AlertRule::PressureDrop, Input::Reading(r)) => match a.payload {
                        AlertPayload::Pressure { pressure, baseline } => r.pressure == pressure && pressure < 0.85 * baseline,
                        _ => false,
                    },
                    _ => false,
                });
                prop_assert!(src.is_some(), "unjustified {:?}", a);
            }
            for rule in [AlertRule::ForecastProbability, AlertRule::LeakDetected, AlertRule::PressureDrop] {
                let ts: Vec<i64> = alerts.iter().filter(|a| a.rule == rule).map(|a| a.source_timestamp).collect();
                prop_assert!(ts.windows(2).all(|w| w[1] - w[0] >= 15 * M));
            }
        }
    }
}
