//! Domain types shared by every stage of the pipeline.
//!
//! All quantities use fixed units: pressure in bar, flow in L/min, humidity
//! in %RH, temperature in °C, timestamps in integer nanoseconds since the
//! Unix epoch.

mod dataset;
mod line;

pub use dataset::{read_dataset, write_dataset, Dataset, DatasetError, DatasetRow, HEADER_LABELED, HEADER_UNLABELED};
pub use line::{parse_reading, quantize, serialize_reading, ParseError};

use serde::{Deserialize, Serialize};
use std::fmt;

pub const NANOS_PER_SECOND: i64 = 1_000_000_000;
pub const NANOS_PER_MINUTE: i64 = 60 * NANOS_PER_SECOND;
pub const NANOS_PER_HOUR: i64 = 60 * NANOS_PER_MINUTE;

/// Rows per input window fed to the forecaster (one per minute).
pub const WINDOW_LEN: usize = 60;
/// Channels per reading.
pub const CHANNELS: usize = 4;
/// Time-to-leak labels are censored at this many hours.
pub const DEFAULT_HORIZON_HOURS: f64 = 8.0;

/// Short rack identifier such as `R01`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RackId(String);

impl RackId {
    pub fn new(id: impl Into<String>) -> Self {
        RackId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Rack ids travel inside CSV lines and MQTT topics, so they must not
    /// contain separators or wildcards.
    pub fn is_valid(&self) -> bool {
        !self.0.is_empty()
            && self.0.len() <= 32
            && self
                .0
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    }
}

impl fmt::Display for RackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Default for RackId {
    fn default() -> Self {
        RackId::new("R01")
    }
}

/// The four monitored channels, in column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Pressure,
    Flow,
    Humidity,
    Temperature,
}

impl Channel {
    pub const ALL: [Channel; CHANNELS] = [
        Channel::Pressure,
        Channel::Flow,
        Channel::Humidity,
        Channel::Temperature,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Pressure => "pressure",
            Channel::Flow => "flow",
            Channel::Humidity => "humidity",
            Channel::Temperature => "temperature",
        }
    }

    /// Sanity envelope, deliberately wider than the operating range.
    pub fn envelope(self) -> (f64, f64) {
        match self {
            Channel::Pressure => (0.0, 5.0),
            Channel::Flow => (0.0, 10.0),
            Channel::Humidity => (0.0, 100.0),
            Channel::Temperature => (-10.0, 60.0),
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One timestamped four-channel measurement from a rack enclosure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub timestamp: i64,
    pub rack_id: RackId,
    pub pressure: f64,
    pub flow: f64,
    pub humidity: f64,
    pub temperature: f64,
}

impl SensorReading {
    pub fn channels(&self) -> [f64; CHANNELS] {
        [self.pressure, self.flow, self.humidity, self.temperature]
    }

    pub fn channel(&self, channel: Channel) -> f64 {
        self.channels()[channel.index()]
    }

    pub fn with_channels(timestamp: i64, rack_id: RackId, values: [f64; CHANNELS]) -> Self {
        SensorReading {
            timestamp,
            rack_id,
            pressure: values[0],
            flow: values[1],
            humidity: values[2],
            temperature: values[3],
        }
    }
}

/// A sanity-envelope violation found by [`validate_reading`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub channel: Channel,
    pub value: f64,
    pub min: f64,
    pub max: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} out of range: {} not in [{}, {}]",
            self.channel, self.value, self.min, self.max
        )
    }
}

/// Returns every violated sanity bound; an empty list means the reading is valid.
/// NaN values are reported as violations.
pub fn validate_reading(reading: &SensorReading) -> Vec<Violation> {
    Channel::ALL
        .iter()
        .filter_map(|&channel| {
            let value = reading.channel(channel);
            let (min, max) = channel.envelope();
            if value >= min && value <= max {
                None
            } else {
                Some(Violation {
                    channel,
                    value,
                    min,
                    max,
                })
            }
        })
        .collect()
}

/// Ground-truth leak episode injected by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakEvent {
    pub id: u64,
    pub rack_id: RackId,
    pub onset: i64,
    pub ramp_minutes: u32,
    pub duration_minutes: u32,
    pub severity: f64,
    pub steady_state: SteadyState,
}

impl LeakEvent {
    pub fn end(&self) -> i64 {
        self.onset + i64::from(self.duration_minutes) * NANOS_PER_MINUTE
    }

    pub fn is_active_at(&self, timestamp: i64) -> bool {
        timestamp >= self.onset && timestamp < self.end()
    }
}

/// Leak interval `[onset, end)` used for labeling and evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub id: u64,
    pub rack_id: RackId,
    pub onset: i64,
    pub end: i64,
}

impl Episode {
    pub fn is_active_at(&self, timestamp: i64) -> bool {
        timestamp >= self.onset && timestamp < self.end
    }
}

impl From<&LeakEvent> for Episode {
    fn from(e: &LeakEvent) -> Self {
        Episode {
            id: e.id,
            rack_id: e.rack_id.clone(),
            onset: e.onset,
            end: e.end(),
        }
    }
}

pub fn episodes_of(events: &[LeakEvent]) -> Vec<Episode> {
    events.iter().map(Episode::from).collect()
}

/// Rebuilds episodes from per-minute leak flags: each run of consecutive
/// leaking minutes on a rack is one episode ending a minute after its last row.
pub fn episodes_from_labels(readings: &[SensorReading], is_leaking: &[bool]) -> Vec<Episode> {
    let mut open: Vec<Episode> = Vec::new();
    let mut done = Vec::new();
    for (r, &leak) in readings.iter().zip(is_leaking) {
        let pos = open.iter().position(|e| e.rack_id == r.rack_id);
        match (pos, leak) {
            (Some(i), true) if open[i].end == r.timestamp => open[i].end += NANOS_PER_MINUTE,
            (Some(i), _) => {
                done.push(open.remove(i));
                if leak {
                    open.push(Episode {
                        id: 0,
                        rack_id: r.rack_id.clone(),
                        onset: r.timestamp,
                        end: r.timestamp + NANOS_PER_MINUTE,
                    });
                }
            }
            (None, true) => open.push(Episode {
                id: 0,
                rack_id: r.rack_id.clone(),
                onset: r.timestamp,
                end: r.timestamp + NANOS_PER_MINUTE,
            }),
            (None, false) => {}
        }
    }
    done.extend(open);
    done.sort_by_key(|e| (e.onset, e.rack_id.as_str().to_string()));
    for (i, e) in done.iter_mut().enumerate() {
        e.id = i as u64 + 1;
    }
    done
}

/// Target plateau values for a leak episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub pressure: f64,
    pub flow: f64,
    pub humidity: f64,
}

/// A normalized 60-minute input window with its time-to-leak label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledWindow {
    /// Timestamp of the last row in the window.
    pub end_timestamp: i64,
    /// Row-major `WINDOW_LEN x CHANNELS` z-scored values.
    pub features: Vec<f32>,
    pub time_to_leak: f64,
    pub is_leaking: bool,
}

impl LabeledWindow {
    pub fn row(&self, minute: usize) -> &[f32] {
        &self.features[minute * CHANNELS..(minute + 1) * CHANNELS]
    }

    pub fn has_shape(&self) -> bool {
        self.features.len() == WINDOW_LEN * CHANNELS
    }
}

/// Point time-to-leak estimate plus calibrated probability-within-horizon values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub issued_at: i64,
    pub rack_id: RackId,
    pub point_estimate: f64,
    pub eps90: f64,
    /// `(horizon hours, probability)` pairs in ascending horizon order.
    pub prob_within: Vec<(f64, f64)>,
}

impl ForecastResult {
    pub fn probability_at(&self, horizon_hours: f64) -> Option<f64> {
        self.prob_within
            .iter()
            .find(|(h, _)| (h - horizon_hours).abs() < 1e-9)
            .map(|&(_, p)| p)
    }
}

pub const DEFAULT_DECISION_THRESHOLD: f64 = 0.5;

/// Binary leak classification from the forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub issued_at: i64,
    pub rack_id: RackId,
    pub is_leak: bool,
    pub vote_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlertRule {
    ForecastProbability,
    PressureDrop,
    LeakDetected,
}

impl AlertRule {
    pub fn code(self) -> f64 {
        match self {
            AlertRule::ForecastProbability => 1.0,
            AlertRule::PressureDrop => 2.0,
            AlertRule::LeakDetected => 3.0,
        }
    }
}

/// Values that caused an alert to fire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlertPayload {
    Forecast {
        probability: f64,
        horizon_hours: f64,
        point_estimate: f64,
    },
    Pressure {
        pressure: f64,
        baseline: f64,
    },
    Detection {
        vote_score: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRecord {
    pub id: u64,
    pub rack_id: RackId,
    pub fired_at: i64,
    /// `issued_at` of the triggering input.
    pub source_timestamp: i64,
    pub rule: AlertRule,
    pub payload: AlertPayload,
    pub acknowledged: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reading(p: f64, f: f64, h: f64, t: f64) -> SensorReading {
        SensorReading::with_channels(0, RackId::default(), [p, f, h, t])
    }

    #[test]
    fn episodes_rebuilt_from_flags() {
        let m = NANOS_PER_MINUTE;
        let rs: Vec<SensorReading> = (0..12)
            .map(|i| SensorReading::with_channels(i * m, RackId::default(), [2.0, 1.5, 50.0, 25.0]))
            .collect();
        let flags = [false, true, true, false, false, true, true, true, false, false, true, true];
        let ep = episodes_from_labels(&rs, &flags);
        assert_eq!(ep.len(), 3);
        assert_eq!((ep[0].id, ep[0].onset, ep[0].end), (1, m, 3 * m));
        assert_eq!((ep[1].onset, ep[1].end), (5 * m, 8 * m));
        assert_eq!((ep[2].onset, ep[2].end), (10 * m, 12 * m));
        for (r, &f) in rs.iter().zip(&flags) {
            assert_eq!(ep.iter().any(|e| e.is_active_at(r.timestamp)), f);
        }
    }

    #[test]
    fn nominal_reading_is_valid() {
        assert!(validate_reading(&reading(2.0, 1.5, 50.0, 25.0)).is_empty());
    }

    #[test]
    fn negative_pressure_is_flagged() {
        let v = validate_reading(&reading(-1.0, 1.5, 50.0, 25.0));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].channel, Channel::Pressure);
    }

    #[test]
    fn humidity_above_100_is_flagged() {
        let v = validate_reading(&reading(2.0, 1.5, 120.0, 25.0));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].channel, Channel::Humidity);
        assert!(v[0].to_string().contains("humidity out of range"));
    }

    #[test]
    fn every_bad_channel_is_reported() {
        let v = validate_reading(&reading(9.0, -1.0, f64::NAN, 80.0));
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn rack_id_rules() {
        assert!(RackId::new("R01").is_valid());
        assert!(!RackId::new("a,b").is_valid());
        assert!(!RackId::new("a/b").is_valid());
        assert!(!RackId::new("").is_valid());
    }
}
