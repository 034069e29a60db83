//! Normalization and 60-minute window construction for the forecaster.

mod cache;

pub use cache::{read_cache, write_cache, CacheError, CACHE_MAGIC};

use crate::model::{
    Dataset, DatasetRow, Episode, LabeledWindow, RackId, SensorReading, CHANNELS,
    NANOS_PER_HOUR, NANOS_PER_MINUTE, WINDOW_LEN,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatError {
    #[error("need at least 2 readings to fit normalization, got {0}")]
    TooFew(usize),
    #[error("channel {channel} is constant; cannot normalize")]
    ConstantChannel { channel: &'static str },
    #[error("input is not time-ordered at position {index}")]
    NotTimeOrdered { index: usize },
    #[error("split fraction {0} must lie strictly between 0 and 1")]
    Fraction(f64),
    #[error("split leaves the {side} side empty ({total} windows)")]
    EmptySide { side: &'static str, total: usize },
}

/// Per-channel z-score parameters (population standard deviation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; CHANNELS],
    pub stddev: [f64; CHANNELS],
}

impl NormStats {
    pub fn apply(&self, values: [f64; CHANNELS]) -> [f64; CHANNELS] {
        std::array::from_fn(|c| (values[c] - self.mean[c]) / self.stddev[c])
    }

    pub fn invert(&self, z: [f64; CHANNELS]) -> [f64; CHANNELS] {
        std::array::from_fn(|c| z[c] * self.stddev[c] + self.mean[c])
    }
}

/// Fits z-score parameters on training readings only.
pub fn fit_norm(readings: &[SensorReading]) -> Result<NormStats, FeatError> {
    if readings.len() < 2 {
        return Err(FeatError::TooFew(readings.len()));
    }
    let n = readings.len() as f64;
    let mut mean = [0.0; CHANNELS];
    for r in readings {
        for (m, v) in mean.iter_mut().zip(r.channels()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; CHANNELS];
    for r in readings {
        for c in 0..CHANNELS {
            var[c] += (r.channels()[c] - mean[c]).powi(2);
        }
    }
    let mut stddev = [0.0; CHANNELS];
    for c in 0..CHANNELS {
        stddev[c] = (var[c] / n).sqrt();
        let scale = mean[c].abs().max(1.0);
        if stddev[c] <= 1e-12 * scale {
            return Err(FeatError::ConstantChannel {
                channel: crate::model::Channel::ALL[c].name(),
            });
        }
    }
    Ok(NormStats { mean, stddev })
}

/// Hours from `timestamp` to the next onset, clipped to `horizon`; zero
/// while a leak is active.
pub fn time_to_leak(events: &[Episode], timestamp: i64, horizon: f64) -> f64 {
    if events.iter().any(|e| e.is_active_at(timestamp)) {
        return 0.0;
    }
    events
        .iter()
        .filter(|e| e.onset > timestamp)
        .map(|e| (e.onset - timestamp) as f64 / NANOS_PER_HOUR as f64)
        .fold(horizon, f64::min)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowSet {
    pub windows: Vec<LabeledWindow>,
    /// Window positions dropped because they spanned a missing minute.
    pub skipped: usize,
}

fn check_ordered(readings: &[SensorReading]) -> Result<(), FeatError> {
    match readings
        .windows(2)
        .position(|p| p[1].timestamp <= p[0].timestamp)
    {
        Some(i) => Err(FeatError::NotTimeOrdered { index: i + 1 }),
        None => Ok(()),
    }
}

/// Z-scored row-major features, one row per reading.
pub fn window_features(readings: &[SensorReading], stats: &NormStats) -> Vec<f32> {
    readings
        .iter()
        .flat_map(|r| stats.apply(r.channels()).map(|z| z as f32))
        .collect()
}

/// One window per minute once 60 rows are available. Windows whose rows are
/// not consecutive minutes are skipped and counted.
pub fn make_windows(
    readings: &[SensorReading],
    events: &[Episode],
    stats: &NormStats,
    horizon: f64,
) -> Result<WindowSet, FeatError> {
    check_ordered(readings)?;
    let mut set = WindowSet::default();
    if readings.len() < WINDOW_LEN {
        return Ok(set);
    }
    // run[i] = length of the consecutive-minute run ending at i
    let mut run = vec![1usize; readings.len()];
    for i in 1..readings.len() {
        if readings[i].timestamp - readings[i - 1].timestamp == NANOS_PER_MINUTE {
            run[i] = run[i - 1] + 1;
        }
    }
    for end in WINDOW_LEN - 1..readings.len() {
        if run[end] < WINDOW_LEN {
            set.skipped += 1;
            continue;
        }
        let rows = &readings[end + 1 - WINDOW_LEN..=end];
        let ts = readings[end].timestamp;
        set.windows.push(LabeledWindow {
            end_timestamp: ts,
            features: window_features(rows, stats),
            time_to_leak: time_to_leak(events, ts, horizon),
            is_leaking: events.iter().any(|e| e.is_active_at(ts)),
        });
    }
    Ok(set)
}

/// Splits time-ordered windows at `fraction` of their count.
pub fn chronological_split(
    windows: &[LabeledWindow],
    fraction: f64,
) -> Result<(Vec<LabeledWindow>, Vec<LabeledWindow>), FeatError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(FeatError::Fraction(fraction));
    }
    if let Some(i) = windows
        .windows(2)
        .position(|p| p[1].end_timestamp <= p[0].end_timestamp)
    {
        return Err(FeatError::NotTimeOrdered { index: i + 1 });
    }
    let cut = (windows.len() as f64 * fraction).round() as usize;
    if cut == 0 {
        return Err(FeatError::EmptySide {
            side: "train",
            total: windows.len(),
        });
    }
    if cut >= windows.len() {
        return Err(FeatError::EmptySide {
            side: "validation",
            total: windows.len(),
        });
    }
    Ok((windows[..cut].to_vec(), windows[cut..].to_vec()))
}

/// Train, validation and held-out test windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Partitions {
    pub train: Vec<LabeledWindow>,
    pub validation: Vec<LabeledWindow>,
    pub test: Vec<LabeledWindow>,
}

/// Reserves windows ending in the final `holdout_minutes` of the data as the
/// test set, then splits the rest chronologically.
pub fn partition(
    windows: &[LabeledWindow],
    fraction: f64,
    holdout_minutes: i64,
) -> Result<Partitions, FeatError> {
    let Some(last) = windows.last() else {
        return Err(FeatError::EmptySide {
            side: "train",
            total: 0,
        });
    };
    let boundary = last.end_timestamp - holdout_minutes * NANOS_PER_MINUTE;
    let cut = windows.partition_point(|w| w.end_timestamp <= boundary);
    if cut == windows.len() {
        return Err(FeatError::EmptySide {
            side: "test",
            total: windows.len(),
        });
    }
    let (train, validation) = chronological_split(&windows[..cut], fraction)?;
    Ok(Partitions {
        train,
        validation,
        test: windows[cut..].to_vec(),
    })
}

/// Readings whose timestamps precede the first validation/test window, for
/// fitting normalization without looking ahead.
pub fn readings_before(readings: &[SensorReading], timestamp: i64) -> &[SensorReading] {
    let end = readings.partition_point(|r| r.timestamp <= timestamp);
    &readings[..end]
}

/// Labeled CSV export: each window's final row in raw units with its labels.
pub fn windows_to_dataset(windows: &[LabeledWindow], stats: &NormStats, rack: &RackId) -> Dataset {
    let rows = windows
        .iter()
        .map(|w| {
            let last: [f64; CHANNELS] =
                std::array::from_fn(|c| f64::from(w.row(WINDOW_LEN - 1)[c]));
            DatasetRow {
                reading: SensorReading::with_channels(
                    w.end_timestamp,
                    rack.clone(),
                    stats.invert(last).map(crate::model::quantize),
                ),
                is_leaking: w.is_leaking,
                time_to_leak: Some(crate::model::quantize(w.time_to_leak)),
            }
        })
        .collect();
    Dataset {
        comments: vec![format!("windows={} len={WINDOW_LEN}", windows.len())],
        rows,
    }
}
