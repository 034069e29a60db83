//! Per-minute leak signature.
//!
//! Relative to onset (minute 0) an episode has four phases:
//!
//! ```text
//!   -precursor .. 0      linear seal-degradation drift (mostly flow)
//!   0 .. duration        leak: humidity jumps, pressure steps then ramps,
//!                        flow lags then ramps, temperature drifts after a lag
//!   duration .. +recovery linear return to baseline after repair
//! ```
//!
//! Deviations from overlapping episodes add.

use super::config::SimConfig;
use crate::model::{LeakEvent, RackId, SteadyState, NANOS_PER_MINUTE};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Episode {
    pub event: LeakEvent,
    /// Plateau deviation from baseline `[pressure, flow, humidity]`.
    plateau: [f64; 3],
    /// Drift reached at onset `[pressure, flow, humidity]`.
    precursor: [f64; 3],
    precursor_minutes: u32,
}

impl Episode {
    /// `depth` picks the point inside the steady-state bands; `severity`
    /// scales both the plateau and the precursor toward baseline.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cfg: &SimConfig,
        id: u64,
        rack_id: RackId,
        onset: i64,
        ramp_minutes: u32,
        duration_minutes: u32,
        severity: f64,
        depth: f64,
        precursor_minutes: u32,
    ) -> Self {
        let [p, f, h] = cfg.plateau_at_depth(depth);
        let plateau = [
            severity * (p - cfg.pressure.mean),
            severity * (f - cfg.flow.mean),
            severity * (h - cfg.humidity.mean),
        ];
        let precursor = [
            -severity * cfg.precursor.pressure * cfg.pressure.mean,
            -severity * cfg.precursor.flow * cfg.flow.mean,
            severity * cfg.precursor.humidity * cfg.humidity.mean,
        ];
        let steady_state = SteadyState {
            pressure: cfg.pressure.mean + plateau[0],
            flow: cfg.flow.mean + plateau[1],
            humidity: cfg.humidity.mean + plateau[2],
        };
        Episode {
            event: LeakEvent {
                id,
                rack_id,
                onset,
                ramp_minutes,
                duration_minutes,
                severity,
                steady_state,
            },
            plateau,
            precursor: if precursor_minutes == 0 {
                [0.0; 3]
            } else {
                precursor
            },
            precursor_minutes,
        }
    }

    pub fn first_affected(&self) -> i64 {
        self.event.onset - i64::from(self.precursor_minutes) * NANOS_PER_MINUTE
    }

    pub fn last_affected(&self, cfg: &SimConfig) -> i64 {
        self.event.end() + i64::from(cfg.recovery_minutes) * NANOS_PER_MINUTE
    }

    /// Deviation `[pressure, flow, humidity, temperature]` at `timestamp`.
    pub fn deviation(&self, cfg: &SimConfig, timestamp: i64) -> [f64; 4] {
        let offset = (timestamp - self.event.onset).div_euclid(NANOS_PER_MINUTE);
        self.deviation_at_minute(cfg, offset)
    }

    fn deviation_at_minute(&self, cfg: &SimConfig, k: i64) -> [f64; 4] {
        let duration = i64::from(self.event.duration_minutes);
        let recovery = i64::from(cfg.recovery_minutes);
        if k < 0 {
            let lead = -k;
            let span = i64::from(self.precursor_minutes);
            if lead > span || span == 0 {
                return [0.0; 4];
            }
            let g = 1.0 - lead as f64 / span as f64;
            return [
                g * self.precursor[0],
                g * self.precursor[1],
                g * self.precursor[2],
                0.0,
            ];
        }
        if k < duration {
            return self.leak_deviation(cfg, k);
        }
        if k < duration + recovery {
            let last = self.leak_deviation(cfg, duration - 1);
            let remaining = 1.0 - (k - duration + 1) as f64 / recovery as f64;
            return last.map(|d| d * remaining);
        }
        [0.0; 4]
    }

    fn leak_deviation(&self, cfg: &SimConfig, k: i64) -> [f64; 4] {
        let ramp = f64::from(self.event.ramp_minutes.max(1));
        let step_ramp = |step: f64| (step + (1.0 - step) * (k + 1) as f64 / ramp).min(1.0);
        let flow_lag = i64::from(cfg.flow_lag_minutes);
        let flow_frac = if k < flow_lag {
            0.0
        } else {
            ((k - flow_lag + 1) as f64 / f64::from(cfg.flow_ramp_minutes)).min(1.0)
        };
        let toward = |from: f64, to: f64, frac: f64| from + (to - from) * frac;
        let thermal = (k - i64::from(cfg.thermal_lag_minutes)).max(0) as f64;
        [
            toward(
                self.precursor[0],
                self.plateau[0],
                step_ramp(cfg.pressure_onset_step),
            ),
            toward(self.precursor[1], self.plateau[1], flow_frac),
            toward(
                self.precursor[2],
                self.plateau[2],
                step_ramp(cfg.humidity_onset_step),
            ),
            self.event.severity * cfg.temp_drift_per_hour * thermal / 60.0,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn episode(severity: f64) -> (SimConfig, Episode) {
        let cfg = SimConfig::default();
        let ep = Episode::new(
            &cfg,
            1,
            RackId::default(),
            1_000 * NANOS_PER_MINUTE,
            30,
            120,
            severity,
            1.0,
            480,
        );
        (cfg, ep)
    }

    fn at(cfg: &SimConfig, ep: &Episode, minute: i64) -> [f64; 4] {
        ep.deviation(cfg, (1_000 + minute) * NANOS_PER_MINUTE)
    }

    #[test]
    fn plateau_reached_after_ramps() {
        let (cfg, ep) = episode(1.0);
        let d = at(&cfg, &ep, 100);
        assert!((d[0] - (1.7 - 2.0)).abs() < 1e-12);
        assert!((d[2] - 10.0).abs() < 1e-12);
        assert!((d[1] - (-0.25 * 1.5)).abs() < 1e-12);
    }

    #[test]
    fn zero_outside_the_episode() {
        let (cfg, ep) = episode(1.0);
        assert_eq!(at(&cfg, &ep, -481), [0.0; 4]);
        assert_eq!(at(&cfg, &ep, 120 + 5), [0.0; 4]);
    }

    #[test]
    fn precursor_grows_linearly() {
        let (cfg, ep) = episode(1.0);
        let early = at(&cfg, &ep, -360)[1];
        let late = at(&cfg, &ep, -120)[1];
        assert!(late < early && early < 0.0);
        let expected = -0.08 * 1.5 * (1.0 - 120.0 / 480.0);
        assert!((late - expected).abs() < 1e-12);
    }

    #[test]
    fn temperature_has_no_step_at_onset() {
        let (cfg, ep) = episode(1.0);
        for k in -5..=cfg.thermal_lag_minutes as i64 {
            assert_eq!(at(&cfg, &ep, k)[3], 0.0);
        }
        let d = at(&cfg, &ep, 119)[3];
        let expected = 0.1 * (119 - 60) as f64 / 60.0;
        assert!((d - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_severity_is_a_no_op() {
        let (cfg, ep) = episode(0.0);
        for k in -500..200 {
            assert_eq!(at(&cfg, &ep, k), [0.0; 4]);
        }
        assert_eq!(ep.event.steady_state.pressure, cfg.pressure.mean);
    }

    #[test]
    fn recovery_returns_to_baseline() {
        let (cfg, ep) = episode(1.0);
        let last = at(&cfg, &ep, 119)[0];
        let mid = at(&cfg, &ep, 121)[0];
        assert!(mid > last && mid < 0.0);
        assert_eq!(at(&cfg, &ep, 124)[0], 0.0);
    }
}
