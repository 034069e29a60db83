use crate::model::{Channel, RackId};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gaussian parameters for one channel under normal operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub mean: f64,
    pub stddev: f64,
}

/// Closed interval `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub low: f64,
    pub high: f64,
}

impl Band {
    pub fn new(low: f64, high: f64) -> Self {
        Band { low, high }
    }

    pub fn lerp(&self, t: f64) -> f64 {
        self.low + (self.high - self.low) * t
    }
}

/// Relative shifts reached by the slow seal-degradation drift at leak onset.
/// Signs are applied by the generator (pressure and flow fall, humidity rises).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecursorShift {
    pub pressure: f64,
    pub flow: f64,
    pub humidity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub duration_minutes: u32,
    /// Timestamp of the first reading.
    pub start_ns: i64,
    pub rack_id: RackId,
    pub pressure: ChannelSpec,
    pub flow: ChannelSpec,
    pub humidity: ChannelSpec,
    pub temperature: ChannelSpec,
    /// Target fraction of leaking minutes.
    pub leak_fraction: f64,
    pub ramp_minutes: u32,
    /// Range the per-episode duration is drawn from before rescaling to hit
    /// `leak_fraction`.
    pub episode_minutes: (u32, u32),
    /// Per-episode position inside the steady-state bands, 0 = mildest edge,
    /// 1 = most severe edge.
    pub depth_range: (f64, f64),
    /// Absolute leak plateau pressure, bar.
    pub pressure_band: Band,
    /// Relative humidity increase at the leak plateau.
    pub humidity_rise: Band,
    /// Relative flow reduction at the leak plateau.
    pub flow_drop: Band,
    /// Fraction of the pressure drop that happens in the onset minute.
    pub pressure_onset_step: f64,
    /// Fraction of the humidity rise that happens in the onset minute.
    pub humidity_onset_step: f64,
    /// Minutes after onset before flow starts to fall further.
    pub flow_lag_minutes: u32,
    pub flow_ramp_minutes: u32,
    /// Length of the degradation drift preceding onset.
    pub precursor_minutes: u32,
    pub precursor: PrecursorShift,
    /// Linear return to baseline after repair.
    pub recovery_minutes: u32,
    /// Temperature drift during a sustained leak, °C per hour.
    pub temp_drift_per_hour: f64,
    /// Sustained-leak minutes before temperature starts drifting.
    pub thermal_lag_minutes: u32,
}

/// 2025-01-01T00:00:00Z
pub const DEFAULT_START_NS: i64 = 1_735_689_600_000_000_000;

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 42,
            duration_minutes: 10_080,
            start_ns: DEFAULT_START_NS,
            rack_id: RackId::default(),
            pressure: ChannelSpec {
                mean: 2.0,
                stddev: 0.05,
            },
            flow: ChannelSpec {
                mean: 1.5,
                stddev: 0.03,
            },
            humidity: ChannelSpec {
                mean: 50.0,
                stddev: 2.0,
            },
            temperature: ChannelSpec {
                mean: 25.0,
                stddev: 0.3,
            },
            leak_fraction: 0.05,
            ramp_minutes: 30,
            episode_minutes: (60, 110),
            depth_range: (0.4, 1.0),
            pressure_band: Band::new(1.7, 1.9),
            humidity_rise: Band::new(0.10, 0.20),
            flow_drop: Band::new(0.10, 0.25),
            pressure_onset_step: 0.5,
            humidity_onset_step: 1.0,
            flow_lag_minutes: 15,
            flow_ramp_minutes: 60,
            precursor_minutes: 480,
            precursor: PrecursorShift {
                pressure: 0.015,
                flow: 0.08,
                humidity: 0.02,
            },
            recovery_minutes: 5,
            temp_drift_per_hour: 0.1,
            thermal_lag_minutes: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{channel} stddev must be > 0, got {value}")]
    NonPositiveStddev { channel: Channel, value: f64 },
    #[error("leak_fraction must be in [0, 0.5), got {0}")]
    LeakFraction(f64),
    #[error("{name} band must satisfy low < high, got [{low}, {high}]")]
    BandOrder {
        name: &'static str,
        low: f64,
        high: f64,
    },
    #[error(
        "{channel} leak band overlaps the normal ±3σ envelope: mildest plateau {plateau} \
         vs envelope [{lo}, {hi}]"
    )]
    Inseparable {
        channel: Channel,
        plateau: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid parameter {name}: {reason}")]
    Invalid { name: &'static str, reason: String },
    #[error("rack id {0:?} is not a valid identifier")]
    RackId(String),
}

impl SimConfig {
    pub fn channel(&self, channel: Channel) -> ChannelSpec {
        match channel {
            Channel::Pressure => self.pressure,
            Channel::Flow => self.flow,
            Channel::Humidity => self.humidity,
            Channel::Temperature => self.temperature,
        }
    }

    pub fn means(&self) -> [f64; 4] {
        Channel::ALL.map(|c| self.channel(c).mean)
    }

    pub fn stddevs(&self) -> [f64; 4] {
        Channel::ALL.map(|c| self.channel(c).stddev)
    }

    /// Leak plateau values `[pressure, flow, humidity]` at the given band depth.
    pub fn plateau_at_depth(&self, depth: f64) -> [f64; 3] {
        [
            // low pressure is the severe edge
            self.pressure_band.high - (self.pressure_band.high - self.pressure_band.low) * depth,
            self.flow.mean * (1.0 - self.flow_drop.lerp(depth)),
            self.humidity.mean * (1.0 + self.humidity_rise.lerp(depth)),
        ]
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for channel in Channel::ALL {
            let spec = self.channel(channel);
            if !(spec.stddev > 0.0) {
                return Err(ConfigError::NonPositiveStddev {
                    channel,
                    value: spec.stddev,
                });
            }
        }
        if !(0.0..0.5).contains(&self.leak_fraction) {
            return Err(ConfigError::LeakFraction(self.leak_fraction));
        }
        for (name, band) in [
            ("pressure_band", self.pressure_band),
            ("humidity_rise", self.humidity_rise),
            ("flow_drop", self.flow_drop),
        ] {
            if !(band.low < band.high) {
                return Err(ConfigError::BandOrder {
                    name,
                    low: band.low,
                    high: band.high,
                });
            }
        }
        if !self.rack_id.is_valid() {
            return Err(ConfigError::RackId(self.rack_id.to_string()));
        }
        let invalid = |name, reason: &str| ConfigError::Invalid {
            name,
            reason: reason.to_string(),
        };
        if self.duration_minutes == 0 {
            return Err(invalid("duration_minutes", "must be positive"));
        }
        if self.ramp_minutes == 0 || self.flow_ramp_minutes == 0 || self.recovery_minutes == 0 {
            return Err(invalid("ramp_minutes", "ramps must be positive"));
        }
        let (lo, hi) = self.episode_minutes;
        if lo == 0 || lo > hi {
            return Err(invalid("episode_minutes", "need 0 < min <= max"));
        }
        if lo < self.ramp_minutes {
            return Err(invalid("episode_minutes", "episodes shorter than the ramp"));
        }
        let (dlo, dhi) = self.depth_range;
        if !(0.0..=1.0).contains(&dlo) || !(0.0..=1.0).contains(&dhi) || dlo > dhi {
            return Err(invalid("depth_range", "need 0 <= min <= max <= 1"));
        }
        for (name, v) in [
            ("pressure_onset_step", self.pressure_onset_step),
            ("humidity_onset_step", self.humidity_onset_step),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(name, "must lie in [0, 1]"));
            }
        }
        if self.temp_drift_per_hour < 0.0 {
            return Err(invalid("temp_drift_per_hour", "must be >= 0"));
        }
        // The mildest plateau an episode can reach must sit outside the
        // normal ±3σ envelope, otherwise leak and normal are inseparable.
        let mild = self.plateau_at_depth(dlo);
        for (channel, plateau) in [
            (Channel::Pressure, mild[0]),
            (Channel::Flow, mild[1]),
            (Channel::Humidity, mild[2]),
        ] {
            let spec = self.channel(channel);
            let (lo, hi) = (spec.mean - 3.0 * spec.stddev, spec.mean + 3.0 * spec.stddev);
            if plateau >= lo && plateau <= hi {
                return Err(ConfigError::Inseparable {
                    channel,
                    plateau,
                    lo,
                    hi,
                });
            }
        }
        Ok(())
    }
}
