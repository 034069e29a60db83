use super::config::{ConfigError, SimConfig};
use super::profile::Episode;
use crate::model::{
    quantize, Dataset, DatasetRow, LeakEvent, SensorReading, NANOS_PER_HOUR,
    NANOS_PER_MINUTE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Algorithm recorded in dataset headers. Streams: 0 = episode schedule,
/// 1 = sensor noise, 2 = live stream noise.
pub const PRNG_NAME: &str = "ChaCha8Rng (rand_chacha), stream-split per purpose";

const SCHEDULE_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub config: SimConfig,
    pub readings: Vec<SensorReading>,
    pub is_leaking: Vec<bool>,
    pub events: Vec<LeakEvent>,
}

impl SimOutput {
    pub fn leaking_minutes(&self) -> usize {
        self.is_leaking.iter().filter(|&&l| l).count()
    }

    /// Labeled dataset with the config and PRNG recorded as header comments.
    pub fn to_dataset(&self, horizon_hours: f64) -> Dataset {
        let labels = time_to_leak_labels(&self.readings, &self.is_leaking, horizon_hours);
        let rows = self
            .readings
            .iter()
            .zip(&self.is_leaking)
            .zip(labels)
            .map(|((reading, &is_leaking), ttl)| DatasetRow {
                reading: reading.clone(),
                is_leaking,
                time_to_leak: Some(quantize(ttl)),
            })
            .collect();
        Dataset {
            comments: vec![
                "coolguard dataset v1".to_string(),
                format!("prng={PRNG_NAME}"),
                format!("horizon_h={horizon_hours}"),
                format!(
                    "config={}",
                    serde_json::to_string(&self.config).expect("config serializes")
                ),
            ],
            rows,
        }
    }
}

/// Hours until the next leak onset at each reading, clipped to `horizon`;
/// zero while leaking. Onsets are the first minute of each leaking run.
pub fn time_to_leak_labels(readings: &[SensorReading], is_leaking: &[bool], horizon: f64) -> Vec<f64> {
    let mut labels = vec![horizon; readings.len()];
    let mut next_onset: Option<i64> = None;
    for i in (0..readings.len()).rev() {
        if is_leaking[i] {
            labels[i] = 0.0;
            if i == 0 || !is_leaking[i - 1] {
                next_onset = Some(readings[i].timestamp);
            }
        } else if let Some(onset) = next_onset {
            let hours = (onset - readings[i].timestamp) as f64 / NANOS_PER_HOUR as f64;
            labels[i] = hours.min(horizon);
        }
    }
    labels
}

/// Minute-resolution telemetry with Gaussian normal operation and scheduled
/// leak episodes. Deterministic for a fixed config.
pub fn generate_dataset(cfg: &SimConfig) -> Result<SimOutput, ConfigError> {
    cfg.validate()?;
    let episodes = schedule_episodes(cfg);
    let n = cfg.duration_minutes as usize;
    let means = cfg.means();
    let stddevs = cfg.stddevs();
    let mut noise = rng_for(cfg.seed, NOISE_STREAM);
    let mut readings = Vec::with_capacity(n);
    let mut is_leaking = Vec::with_capacity(n);

    for minute in 0..n {
        let ts = cfg.start_ns + minute as i64 * NANOS_PER_MINUTE;
        let mut values = [0.0; 4];
        for c in 0..4 {
            let z: f64 = noise.sample(StandardNormal);
            values[c] = means[c] + stddevs[c] * z;
        }
        let mut leaking = false;
        for ep in &episodes {
            if ts < ep.first_affected() || ts >= ep.last_affected(cfg) {
                continue;
            }
            let d = ep.deviation(cfg, ts);
            for c in 0..4 {
                values[c] += d[c];
            }
            leaking |= ep.event.is_active_at(ts);
        }
        readings.push(SensorReading::with_channels(
            ts,
            cfg.rack_id.clone(),
            values.map(quantize),
        ));
        is_leaking.push(leaking);
    }

    Ok(SimOutput {
        config: cfg.clone(),
        readings,
        is_leaking,
        events: episodes.into_iter().map(|e| e.event).collect(),
    })
}

/// Spreads episodes evenly over the run with jittered onsets so every part
/// of a chronological split sees leaks.
pub(crate) fn schedule_episodes(cfg: &SimConfig) -> Vec<Episode> {
    let total = cfg.duration_minutes as f64;
    let target = (cfg.leak_fraction * total).round() as i64;
    if target == 0 {
        return Vec::new();
    }
    let mut rng = rng_for(cfg.seed, SCHEDULE_STREAM);
    let (dmin, dmax) = cfg.episode_minutes;
    let mean_len = f64::from(dmin + dmax) / 2.0;
    let count = ((target as f64 / mean_len).round() as usize).max(1);

    let raw: Vec<f64> = (0..count)
        .map(|_| rng.random_range(f64::from(dmin)..=f64::from(dmax)))
        .collect();
    let scale = target as f64 / raw.iter().sum::<f64>();
    let mut durations: Vec<i64> = raw.iter().map(|d| (d * scale).round() as i64).collect();
    let residual = target - durations.iter().sum::<i64>();
    if let Some(last) = durations.last_mut() {
        *last += residual;
    }

    let mut episodes = Vec::with_capacity(count);
    let mut earliest = 0i64;
    for (k, &duration) in durations.iter().enumerate() {
        let jitter: f64 = rng.random_range(-0.3..0.3);
        let depth: f64 = rng.random_range(cfg.depth_range.0..=cfg.depth_range.1);
        let centre = (k as f64 + 0.5 + jitter) / count as f64 * total;
        let duration = duration.max(1);
        let onset = (centre as i64).max(earliest).min(total as i64 - duration);
        if onset < earliest {
            break;
        }
        let ramp = cfg.ramp_minutes.min(duration as u32);
        episodes.push(Episode::new(
            cfg,
            k as u64 + 1,
            cfg.rack_id.clone(),
            cfg.start_ns + onset * NANOS_PER_MINUTE,
            ramp,
            duration as u32,
            1.0,
            depth,
            cfg.precursor_minutes,
        ));
        earliest = onset + duration + i64::from(cfg.recovery_minutes) + 1;
    }
    episodes
}

pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}
