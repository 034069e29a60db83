//! Real-time (or accelerated) emission of simulated readings.
//!
//! A clock thread produces one reading per simulated second and pushes it
//! into a bounded ring buffer; an emitter thread drains the buffer into the
//! sink. When the sink falls behind, the oldest buffered readings are dropped
//! and counted so the clock never blocks.

use super::config::{ConfigError, SimConfig};
use super::generate::{rng_for, schedule_episodes, standard_normal};
use super::profile::Episode;
use crate::model::{quantize, LeakEvent, SensorReading, NANOS_PER_MINUTE, NANOS_PER_SECOND};
use parking_lot::{Condvar, Mutex};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};
use thiserror::Error;

const LIVE_NOISE_STREAM: u64 = 2;
pub const DEFAULT_BUFFER: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamOptions {
    /// Simulated seconds per wall-clock second; must be >= 1.
    pub speedup: f64,
    pub buffer_capacity: usize,
    /// Stop after this many simulated seconds.
    pub max_seconds: Option<u64>,
    /// Replay the config's own leak schedule in addition to injected leaks.
    pub natural_leaks: bool,
}

impl Default for StreamOptions {
    fn default() -> Self {
        StreamOptions {
            speedup: 1.0,
            buffer_capacity: DEFAULT_BUFFER,
            max_seconds: None,
            natural_leaks: false,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StreamError {
    #[error("speedup must be >= 1, got {0}")]
    Speedup(f64),
    #[error("buffer capacity must be positive")]
    Buffer,
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error, PartialEq)]
pub enum InjectError {
    #[error("leak {active_id} is still active on this rack")]
    Overlap { active_id: u64 },
    #[error("severity must be in (0, 1], got {0}")]
    Severity(f64),
    #[error("need 0 < ramp_minutes <= duration_minutes, got ramp {ramp} duration {duration}")]
    Timing { ramp: u32, duration: u32 },
    #[error("stream has stopped")]
    Stopped,
}

/// Minute-level signal source shared by the clock and the controller.
pub(crate) struct LiveSimulator {
    cfg: SimConfig,
    rng: ChaCha8Rng,
    natural: Vec<Episode>,
    injected: Vec<Episode>,
    cached_minute: Option<(i64, [f64; 4])>,
    next_id: u64,
}

impl LiveSimulator {
    pub fn new(cfg: SimConfig, natural_leaks: bool) -> Self {
        let natural = if natural_leaks {
            schedule_episodes(&cfg)
        } else {
            Vec::new()
        };
        LiveSimulator {
            rng: rng_for(cfg.seed, LIVE_NOISE_STREAM),
            next_id: natural.len() as u64 + 1,
            natural,
            injected: Vec::new(),
            cached_minute: None,
            cfg,
        }
    }

    /// Reading at `second` seconds after start; the minute's value repeats
    /// for every second inside that minute.
    pub fn reading_at(&mut self, second: u64) -> SensorReading {
        let minute = (second / 60) as i64;
        let values = match self.cached_minute {
            Some((m, v)) if m == minute => v,
            _ => {
                let v = self.minute_values(minute);
                self.cached_minute = Some((minute, v));
                v
            }
        };
        SensorReading::with_channels(
            self.cfg.start_ns + second as i64 * NANOS_PER_SECOND,
            self.cfg.rack_id.clone(),
            values,
        )
    }

    fn minute_values(&mut self, minute: i64) -> [f64; 4] {
        let ts = self.cfg.start_ns + minute * NANOS_PER_MINUTE;
        let means = self.cfg.means();
        let stddevs = self.cfg.stddevs();
        let mut values = [0.0; 4];
        for c in 0..4 {
            values[c] = means[c] + stddevs[c] * standard_normal(&mut self.rng);
        }
        for ep in self.natural.iter().chain(&self.injected) {
            if ts >= ep.first_affected() && ts < ep.last_affected(&self.cfg) {
                let d = ep.deviation(&self.cfg, ts);
                for c in 0..4 {
                    values[c] += d[c];
                }
            }
        }
        values.map(quantize)
    }

    pub fn is_leaking_at(&self, ts: i64) -> bool {
        self.natural
            .iter()
            .chain(&self.injected)
            .any(|e| e.event.is_active_at(ts))
    }

    /// Schedules a leak whose onset is the next minute boundary after `now`
    /// plus `lead_minutes` of precursor drift.
    pub fn inject(
        &mut self,
        now: i64,
        severity: f64,
        ramp_minutes: u32,
        duration_minutes: u32,
        lead_minutes: u32,
    ) -> Result<LeakEvent, InjectError> {
        if !(severity > 0.0 && severity <= 1.0) {
            return Err(InjectError::Severity(severity));
        }
        if ramp_minutes == 0 || ramp_minutes > duration_minutes {
            return Err(InjectError::Timing {
                ramp: ramp_minutes,
                duration: duration_minutes,
            });
        }
        if let Some(active) = self.injected.iter().find(|e| now < e.event.end()) {
            return Err(InjectError::Overlap {
                active_id: active.event.id,
            });
        }
        let since_start = (now - self.cfg.start_ns).max(0);
        let next_minute = (since_start + NANOS_PER_MINUTE - 1) / NANOS_PER_MINUTE;
        let onset =
            self.cfg.start_ns + (next_minute + i64::from(lead_minutes)) * NANOS_PER_MINUTE;
        let ep = Episode::new(
            &self.cfg,
            self.next_id,
            self.cfg.rack_id.clone(),
            onset,
            ramp_minutes,
            duration_minutes,
            severity,
            1.0,
            lead_minutes,
        );
        self.next_id += 1;
        let event = ep.event.clone();
        // the current minute may already be cached without the new episode
        if let Some((m, _)) = self.cached_minute {
            if self.cfg.start_ns + m * NANOS_PER_MINUTE >= ep.first_affected() {
                self.cached_minute = None;
            }
        }
        self.injected.push(ep);
        Ok(event)
    }

    pub fn events(&self) -> Vec<LeakEvent> {
        self.natural
            .iter()
            .chain(&self.injected)
            .map(|e| e.event.clone())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamStats {
    pub produced: u64,
    pub emitted: u64,
    pub dropped: u64,
}

struct Shared {
    sim: Mutex<LiveSimulator>,
    buffer: Mutex<VecDeque<SensorReading>>,
    ready: Condvar,
    pause_lock: Mutex<()>,
    unpaused: Condvar,
    paused: AtomicBool,
    stopped: AtomicBool,
    clock_done: AtomicBool,
    sim_second: AtomicU64,
    produced: AtomicU64,
    emitted: AtomicU64,
    dropped: AtomicU64,
    start_ns: i64,
}

/// Controller for a running stream. Dropping the handle stops the stream.
pub struct StreamHandle {
    shared: Arc<Shared>,
    clock: Option<JoinHandle<()>>,
    emitter: Option<JoinHandle<()>>,
}

/// Starts emitting readings into `sink`. The sink runs on the emitter
/// thread only.
pub fn stream<F>(cfg: SimConfig, options: StreamOptions, sink: F) -> Result<StreamHandle, StreamError>
where
    F: FnMut(SensorReading) + Send + 'static,
{
    if !(options.speedup >= 1.0) {
        return Err(StreamError::Speedup(options.speedup));
    }
    if options.buffer_capacity == 0 {
        return Err(StreamError::Buffer);
    }
    cfg.validate()?;
    let shared = Arc::new(Shared {
        start_ns: cfg.start_ns,
        sim: Mutex::new(LiveSimulator::new(cfg, options.natural_leaks)),
        buffer: Mutex::new(VecDeque::with_capacity(options.buffer_capacity)),
        ready: Condvar::new(),
        pause_lock: Mutex::new(()),
        unpaused: Condvar::new(),
        paused: AtomicBool::new(false),
        stopped: AtomicBool::new(false),
        clock_done: AtomicBool::new(false),
        sim_second: AtomicU64::new(0),
        produced: AtomicU64::new(0),
        emitted: AtomicU64::new(0),
        dropped: AtomicU64::new(0),
    });

    let clock = {
        let shared = Arc::clone(&shared);
        thread::Builder::new()
            .name("sim-clock".into())
            .spawn(move || run_clock(&shared, &options))
            .expect("spawn clock thread")
    };
    let emitter = {
        let shared = Arc::clone(&shared);
        thread::Builder::new()
            .name("sim-emitter".into())
            .spawn(move || run_emitter(&shared, sink))
            .expect("spawn emitter thread")
    };
    Ok(StreamHandle {
        shared,
        clock: Some(clock),
        emitter: Some(emitter),
    })
}

fn run_clock(shared: &Shared, options: &StreamOptions) {
    let mut second = 0u64;
    let mut origin = Instant::now();
    let mut origin_second = 0u64;
    loop {
        if shared.stopped.load(Ordering::Acquire) {
            break;
        }
        if shared.paused.load(Ordering::Acquire) {
            let mut guard = shared.pause_lock.lock();
            while shared.paused.load(Ordering::Acquire) && !shared.stopped.load(Ordering::Acquire) {
                shared.unpaused.wait_for(&mut guard, Duration::from_millis(50));
            }
            origin = Instant::now();
            origin_second = second;
            continue;
        }
        if options.max_seconds.is_some_and(|max| second >= max) {
            break;
        }
        let due = origin + Duration::from_secs_f64((second - origin_second) as f64 / options.speedup);
        let now = Instant::now();
        if due > now {
            thread::sleep((due - now).min(Duration::from_millis(20)));
            continue;
        }
        let reading = shared.sim.lock().reading_at(second);
        {
            let mut buf = shared.buffer.lock();
            if buf.len() >= options.buffer_capacity {
                buf.pop_front();
                shared.dropped.fetch_add(1, Ordering::Relaxed);
            }
            buf.push_back(reading);
        }
        shared.produced.fetch_add(1, Ordering::Relaxed);
        shared.ready.notify_one();
        second += 1;
        shared.sim_second.store(second, Ordering::Release);
    }
    shared.clock_done.store(true, Ordering::Release);
    shared.ready.notify_all();
}

fn run_emitter<F: FnMut(SensorReading)>(shared: &Shared, mut sink: F) {
    let mut batch = Vec::new();
    loop {
        {
            let mut buf = shared.buffer.lock();
            while buf.is_empty() {
                if shared.clock_done.load(Ordering::Acquire) || shared.stopped.load(Ordering::Acquire) {
                    return;
                }
                shared.ready.wait_for(&mut buf, Duration::from_millis(50));
            }
            batch.extend(buf.drain(..));
        }
        for reading in batch.drain(..) {
            sink(reading);
            shared.emitted.fetch_add(1, Ordering::Relaxed);
        }
    }
}

impl StreamHandle {
    pub fn pause(&self) {
        self.shared.paused.store(true, Ordering::Release);
    }

    pub fn resume(&self) {
        let _guard = self.shared.pause_lock.lock();
        self.shared.paused.store(false, Ordering::Release);
        self.shared.unpaused.notify_all();
    }

    pub fn is_paused(&self) -> bool {
        self.shared.paused.load(Ordering::Acquire)
    }

    /// Simulated time of the next reading to be produced.
    pub fn simulated_now(&self) -> i64 {
        self.shared.start_ns + self.shared.sim_second.load(Ordering::Acquire) as i64 * NANOS_PER_SECOND
    }

    pub fn inject_leak(
        &self,
        severity: f64,
        ramp_minutes: u32,
        duration_minutes: u32,
    ) -> Result<LeakEvent, InjectError> {
        self.inject_leak_with_lead(severity, ramp_minutes, duration_minutes, 0)
    }

    pub fn inject_leak_with_lead(
        &self,
        severity: f64,
        ramp_minutes: u32,
        duration_minutes: u32,
        lead_minutes: u32,
    ) -> Result<LeakEvent, InjectError> {
        if self.shared.stopped.load(Ordering::Acquire) {
            return Err(InjectError::Stopped);
        }
        let now = self.simulated_now();
        self.shared
            .sim
            .lock()
            .inject(now, severity, ramp_minutes, duration_minutes, lead_minutes)
    }

    pub fn events(&self) -> Vec<LeakEvent> {
        self.shared.sim.lock().events()
    }

    pub fn is_leaking_at(&self, ts: i64) -> bool {
        self.shared.sim.lock().is_leaking_at(ts)
    }

    pub fn stats(&self) -> StreamStats {
        StreamStats {
            produced: self.shared.produced.load(Ordering::Relaxed),
            emitted: self.shared.emitted.load(Ordering::Relaxed),
            dropped: self.shared.dropped.load(Ordering::Relaxed),
        }
    }

    pub fn is_finished(&self) -> bool {
        self.emitter.as_ref().is_none_or(|h| h.is_finished())
    }

    /// Blocks until a bounded stream has emitted everything.
    pub fn join(mut self) -> StreamStats {
        self.join_threads();
        self.stats()
    }

    pub fn stop(mut self) -> StreamStats {
        self.signal_stop();
        self.join_threads();
        self.stats()
    }

    fn signal_stop(&self) {
        self.shared.stopped.store(true, Ordering::Release);
        self.resume();
        self.shared.ready.notify_all();
    }

    fn join_threads(&mut self) {
        if let Some(h) = self.clock.take() {
            let _ = h.join();
        }
        if let Some(h) = self.emitter.take() {
            let _ = h.join();
        }
    }
}

impl Drop for StreamHandle {
    fn drop(&mut self) {
        if self.clock.is_some() || self.emitter.is_some() {
            self.signal_stop();
            self.join_threads();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::mpsc;

    fn collect(options: StreamOptions) -> (StreamHandle, mpsc::Receiver<(Instant, SensorReading)>) {
        let (tx, rx) = mpsc::channel();
        let handle = stream(SimConfig::default(), options, move |r| {
            let _ = tx.send((Instant::now(), r));
        })
        .unwrap();
        (handle, rx)
    }

    #[test]
    fn rejects_slowdown() {
        let err = stream(
            SimConfig::default(),
            StreamOptions {
                speedup: 0.5,
                ..StreamOptions::default()
            },
            |_| {},
        )
        .err()
        .unwrap();
        assert_eq!(err, StreamError::Speedup(0.5));
    }

    #[test]
    fn accelerated_hour_arrives_on_schedule() {
        let start = Instant::now();
        let (handle, rx) = collect(StreamOptions {
            speedup: 3_600.0,
            max_seconds: Some(3_600),
            ..StreamOptions::default()
        });
        let stats = handle.join();
        let elapsed = start.elapsed();
        assert_eq!(stats.emitted, 3_600);
        assert_eq!(stats.dropped, 0);
        assert!(elapsed >= Duration::from_millis(950), "{elapsed:?}");
        assert!(elapsed < Duration::from_secs(3), "{elapsed:?}");
        let received: Vec<_> = rx.try_iter().collect();
        assert_eq!(received.len(), 3_600);
        assert!(received.windows(2).all(|w| w[0].1.timestamp < w[1].1.timestamp));
        // one value per minute, repeated every second
        assert_eq!(received[0].1.pressure, received[59].1.pressure);
        assert_ne!(received[59].1.pressure, received[60].1.pressure);
    }

    #[test]
    fn paused_stream_emits_nothing() {
        let (handle, rx) = collect(StreamOptions {
            speedup: 1_000.0,
            ..StreamOptions::default()
        });
        thread::sleep(Duration::from_millis(100));
        handle.pause();
        thread::sleep(Duration::from_millis(60));
        let before = handle.stats().emitted;
        thread::sleep(Duration::from_millis(200));
        assert_eq!(handle.stats().emitted, before);
        handle.resume();
        thread::sleep(Duration::from_millis(100));
        assert!(handle.stats().emitted > before);
        handle.stop();
        drop(rx);
    }

    #[test]
    fn sixty_per_second_never_drops() {
        let (handle, _rx) = collect(StreamOptions {
            speedup: 60.0,
            max_seconds: Some(180),
            ..StreamOptions::default()
        });
        let stats = handle.join();
        assert_eq!(stats.emitted, 180);
        assert_eq!(stats.dropped, 0);
    }

    #[test]
    fn slow_sink_drops_oldest() {
        let (tx, rx) = mpsc::channel();
        let handle = stream(
            SimConfig::default(),
            StreamOptions {
                speedup: 1e6,
                buffer_capacity: 10,
                max_seconds: Some(2_000),
                ..StreamOptions::default()
            },
            move |r| {
                thread::sleep(Duration::from_micros(200));
                let _ = tx.send(r.timestamp);
            },
        )
        .unwrap();
        let stats = handle.join();
        assert!(stats.dropped > 0);
        assert_eq!(stats.emitted + stats.dropped, stats.produced);
        let ts: Vec<i64> = rx.try_iter().collect();
        assert!(ts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn real_time_jitter_is_small() {
        let (handle, rx) = collect(StreamOptions {
            speedup: 1.0,
            max_seconds: Some(3),
            ..StreamOptions::default()
        });
        handle.join();
        let got: Vec<_> = rx.try_iter().collect();
        assert_eq!(got.len(), 3);
        let t0 = got[0].0;
        for (i, (at, _)) in got.iter().enumerate() {
            let expected = Duration::from_secs(i as u64);
            let actual = at.duration_since(t0);
            let jitter = actual.abs_diff(expected);
            assert!(jitter < Duration::from_millis(10), "jitter {jitter:?} at {i}");
        }
    }

    #[test]
    fn injection_rules() {
        let mut sim = LiveSimulator::new(SimConfig::default(), false);
        let start = SimConfig::default().start_ns;
        let ev = sim.inject(start + 30 * NANOS_PER_SECOND, 1.0, 30, 120, 0).unwrap();
        assert_eq!(ev.onset, start + NANOS_PER_MINUTE);
        assert!(ev.steady_state.pressure <= 0.85 * 2.0);
        let err = sim.inject(start + 40 * NANOS_PER_SECOND, 0.5, 10, 60, 0).unwrap_err();
        assert_eq!(err, InjectError::Overlap { active_id: ev.id });
        assert_eq!(
            sim.inject(start, 0.0, 10, 60, 0).unwrap_err(),
            InjectError::Severity(0.0)
        );
        // after the first leak ends a new one is accepted
        let later = ev.end() + NANOS_PER_SECOND;
        assert!(sim.inject(later, 0.5, 10, 60, 0).is_ok());
    }

    #[test]
    fn injected_leak_shows_in_readings() {
        let mut sim = LiveSimulator::new(SimConfig::default(), false);
        let start = SimConfig::default().start_ns;
        let _ = sim.reading_at(0);
        sim.inject(start, 1.0, 30, 120, 0).unwrap();
        let at_plateau = sim.reading_at(60 * 90);
        assert!(at_plateau.pressure < 1.85, "{}", at_plateau.pressure);
        assert!(at_plateau.humidity > 54.0, "{}", at_plateau.humidity);
        assert!(sim.is_leaking_at(start + 90 * NANOS_PER_MINUTE));
    }

    #[test]
    fn tiny_severity_is_nearly_baseline() {
        let mut sim = LiveSimulator::new(SimConfig::default(), false);
        let ev = sim
            .inject(SimConfig::default().start_ns, 1e-9, 30, 120, 0)
            .unwrap();
        assert!((ev.steady_state.pressure - 2.0).abs() < 1e-8);
        assert!((ev.steady_state.humidity - 50.0).abs() < 1e-6);
    }
}
