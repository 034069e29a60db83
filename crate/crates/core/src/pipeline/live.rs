use super::{EventBus, PipelineConfig, PipelineError, ServiceEvent, TrainedModels};
use crate::alerting::{self, AlertBook, AlertEngine, AuditLog, Clock, Input};
use crate::analytics::EvalReport;
use crate::forecaster::nearest_rank;
use crate::model::{
    AlertRecord, Channel, DetectionResult, ForecastResult, LeakEvent, RackId, SensorReading,
    NANOS_PER_MINUTE, WINDOW_LEN,
};
use crate::simgen::{self, InjectError, StreamHandle, StreamOptions, StreamStats, DEFAULT_BUFFER};
use crate::stream::{Broker, BrokerConfig, Deduper, Qos, RecvError, Subscription, TELEMETRY_FILTER};
use crate::tstore::{SeriesKey, Store, StoreError};
use crossbeam_channel::{bounded, Receiver, RecvTimeoutError, Sender};
use log::{error, warn};
use parking_lot::{Mutex, RwLock};
use serde::Serialize;
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

pub const CHANNEL_SERIES: [&str; 4] = ["pressure", "flow", "humidity", "temperature"];
pub const FORECAST_SERIES: &str = "forecast_hours";
pub const DETECTION_SERIES: &str = "leak_vote";

const POLL: Duration = Duration::from_millis(50);
const FLUSH_EVERY: Duration = Duration::from_millis(100);
const FLUSH_POINTS: usize = 2048;
const LATENCY_SAMPLES: usize = 200_000;

/// Rolling record of the most recent latency samples.
pub struct LatencyLog {
    samples: Mutex<VecDeque<f64>>,
    count: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LatencySummary {
    pub count: u64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl Default for LatencyLog {
    fn default() -> Self {
        LatencyLog {
            samples: Mutex::new(VecDeque::new()),
            count: AtomicU64::new(0),
        }
    }
}

impl LatencyLog {
    pub fn record(&self, d: Duration) {
        let mut s = self.samples.lock();
        if s.len() == LATENCY_SAMPLES {
            s.pop_front();
        }
        s.push_back(d.as_secs_f64() * 1e3);
        self.count.fetch_add(1, Ordering::Relaxed);
    }

    pub fn summary(&self) -> LatencySummary {
        let mut v: Vec<f64> = self.samples.lock().iter().copied().collect();
        if v.is_empty() {
            return LatencySummary::default();
        }
        v.sort_by(f64::total_cmp);
        LatencySummary {
            count: self.count.load(Ordering::Relaxed),
            p50_ms: nearest_rank(&v, 0.50),
            p95_ms: nearest_rank(&v, 0.95),
            p99_ms: nearest_rank(&v, 0.99),
            max_ms: v[v.len() - 1],
        }
    }
}

#[derive(Default)]
pub struct ServiceMetrics {
    /// Publish to subscriber receipt.
    pub transport: LatencyLog,
    /// Publish to the alert decision for the reading's detection.
    pub end_to_end: LatencyLog,
    /// Publish to alert emission, for readings that fired an alert.
    pub alert_latency: LatencyLog,
    pub received: AtomicU64,
    pub duplicates: AtomicU64,
    pub malformed: AtomicU64,
    pub publish_errors: AtomicU64,
    pub stored_points: AtomicU64,
    pub store_errors: AtomicU64,
    pub forecasts: AtomicU64,
    pub detections: AtomicU64,
    pub alerts: AtomicU64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSnapshot {
    pub simulator: StreamStats,
    pub received: u64,
    pub duplicates: u64,
    pub malformed: u64,
    pub publish_errors: u64,
    pub stored_points: u64,
    pub store_errors: u64,
    pub forecasts: u64,
    pub detections: u64,
    pub alerts: u64,
    pub transport: LatencySummary,
    pub end_to_end: LatencySummary,
    pub alert_latency: LatencySummary,
}

fn load(c: &AtomicU64) -> u64 {
    c.load(Ordering::Relaxed)
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

impl ServiceMetrics {
    fn snapshot(&self, simulator: StreamStats) -> MetricsSnapshot {
        MetricsSnapshot {
            simulator,
            received: load(&self.received),
            duplicates: load(&self.duplicates),
            malformed: load(&self.malformed),
            publish_errors: load(&self.publish_errors),
            stored_points: load(&self.stored_points),
            store_errors: load(&self.store_errors),
            forecasts: load(&self.forecasts),
            detections: load(&self.detections),
            alerts: load(&self.alerts),
            transport: self.transport.summary(),
            end_to_end: self.end_to_end.summary(),
            alert_latency: self.alert_latency.summary(),
        }
    }
}

enum StoreWork {
    Reading(SensorReading),
    Forecast(ForecastResult),
    Detection(DetectionResult),
    Alert(AlertRecord),
}

struct AlertWork {
    input: Input,
    sent_at: Instant,
}

/// Minute samples of one rack feeding the forecaster.
#[derive(Default)]
struct MinuteBuffer {
    last_minute: Option<i64>,
    rows: VecDeque<SensorReading>,
}

impl MinuteBuffer {
    /// Takes the first reading of each minute; a skipped minute restarts the window.
    fn push(&mut self, r: &SensorReading) -> bool {
        let minute = r.timestamp.div_euclid(NANOS_PER_MINUTE);
        match self.last_minute {
            Some(m) if m == minute => return false,
            Some(m) if m + 1 != minute => self.rows.clear(),
            _ => {}
        }
        self.last_minute = Some(minute);
        if self.rows.len() == WINDOW_LEN {
            self.rows.pop_front();
        }
        let mut row = r.clone();
        row.timestamp = minute * NANOS_PER_MINUTE;
        self.rows.push_back(row);
        self.rows.len() == WINDOW_LEN
    }
}

/// The live pipeline: simulator, broker, and the ingest, store, inference
/// and alert stages connected by bounded queues.
pub struct Service {
    cfg: PipelineConfig,
    broker: Broker,
    sim: Mutex<Option<StreamHandle>>,
    last_stats: Mutex<StreamStats>,
    store: Arc<Store>,
    book: AlertBook,
    latest: Arc<RwLock<BTreeMap<RackId, ForecastResult>>>,
    bus: EventBus,
    metrics: Arc<ServiceMetrics>,
    report: RwLock<Option<EvalReport>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    stop: Arc<AtomicBool>,
}

fn spawn(name: &str, f: impl FnOnce() + Send + 'static) -> Result<JoinHandle<()>, PipelineError> {
    Ok(thread::Builder::new().name(name.into()).spawn(f)?)
}

impl Service {
    /// Opens the store and audit log, starts every stage and then the
    /// simulator. `max_seconds` bounds the simulated stream.
    pub fn start(
        cfg: PipelineConfig,
        models: TrainedModels,
        max_seconds: Option<u64>,
    ) -> Result<Service, PipelineError> {
        cfg.validate()?;
        let store = Arc::new(Store::open(&cfg.store_dir)?);
        if let Some(dir) = cfg.audit_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let book = AlertBook::with_audit(AuditLog::open(&cfg.audit_path)?);
        let broker = Broker::start(BrokerConfig::default());
        let sub = broker.subscribe(TELEMETRY_FILTER)?;
        let bus = EventBus::new(cfg.client_buffer);
        let metrics = Arc::new(ServiceMetrics::default());
        let latest = Arc::new(RwLock::new(BTreeMap::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let models = Arc::new(models);
        let engine = AlertEngine::new(cfg.rules.clone(), Clock::Source, book.clone())?;

        let cap = cfg.queue_capacity;
        let (infer_tx, infer_rx) = bounded(cap);
        let (store_tx, store_rx) = bounded(cap);
        let (alert_tx, alert_rx) = bounded(cap);

        let mut threads = vec![
            spawn("ingest", {
                let (metrics, stop) = (metrics.clone(), stop.clone());
                move || ingest_stage(sub, infer_tx, &metrics, &stop)
            })?,
            spawn("infer", {
                let (store_tx, bus, metrics, latest) =
                    (store_tx.clone(), bus.clone(), metrics.clone(), latest.clone());
                move || infer_stage(&models, infer_rx, store_tx, alert_tx, &bus, &metrics, &latest)
            })?,
            spawn("alert", {
                let (bus, metrics) = (bus.clone(), metrics.clone());
                move || alert_stage(engine, alert_rx, store_tx, &bus, &metrics)
            })?,
            spawn("store", {
                let (store, metrics) = (store.clone(), metrics.clone());
                move || store_stage(&store, store_rx, &metrics)
            })?,
        ];

        let publisher = broker.publisher();
        let publish_metrics = metrics.clone();
        let sim = simgen::stream(
            cfg.sim.clone(),
            StreamOptions {
                speedup: cfg.speedup,
                buffer_capacity: DEFAULT_BUFFER,
                max_seconds,
                natural_leaks: cfg.natural_leaks,
            },
            move |r| {
                if let Err(e) = publisher.publish_reading(&r, Qos::AtLeastOnce) {
                    warn!("publish failed: {e}");
                    bump(&publish_metrics.publish_errors);
                }
            },
        );
        let sim = match sim {
            Ok(s) => s,
            Err(e) => {
                stop.store(true, Ordering::Release);
                broker.shutdown();
                threads.drain(..).for_each(|t| drop(t.join()));
                return Err(e.into());
            }
        };
        Ok(Service {
            cfg,
            broker,
            sim: Mutex::new(Some(sim)),
            last_stats: Mutex::default(),
            store,
            book,
            latest,
            bus,
            metrics,
            report: RwLock::new(None),
            threads: Mutex::new(threads),
            stop,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn book(&self) -> &AlertBook {
        &self.book
    }

    pub fn bus(&self) -> &EventBus {
        &self.bus
    }

    pub fn broker(&self) -> &Broker {
        &self.broker
    }

    pub fn latest_forecast(&self, rack: &RackId) -> Option<ForecastResult> {
        self.latest.read().get(rack).cloned()
    }

    pub fn latest_forecasts(&self) -> Vec<ForecastResult> {
        self.latest.read().values().cloned().collect()
    }

    pub fn report(&self) -> Option<EvalReport> {
        self.report.read().clone()
    }

    pub fn set_report(&self, report: EvalReport) {
        *self.report.write() = Some(report);
    }

    pub fn acknowledge(&self, id: u64) -> Result<AlertRecord, PipelineError> {
        let alert = self.book.acknowledge(id)?;
        self.bus.publish(ServiceEvent::Acknowledged(alert.clone()));
        Ok(alert)
    }

    fn with_sim<T>(&self, f: impl FnOnce(&StreamHandle) -> T) -> Option<T> {
        self.sim.lock().as_ref().map(f)
    }

    /// Schedules a leak. Onset follows `lead_minutes` of seal-degradation
    /// drift, by default the simulator's precursor length, so the injected
    /// episode has the same shape as a generated one. `Some(0)` gives a
    /// sudden leak starting at the next minute.
    pub fn inject_leak(
        &self,
        severity: f64,
        ramp_minutes: u32,
        duration_minutes: u32,
        lead_minutes: Option<u32>,
    ) -> Result<LeakEvent, InjectError> {
        let lead = lead_minutes.unwrap_or(self.cfg.sim.precursor_minutes);
        self.with_sim(|s| s.inject_leak_with_lead(severity, ramp_minutes, duration_minutes, lead))
            .unwrap_or(Err(InjectError::Stopped))
    }

    /// Natural and injected leaks so far.
    pub fn events(&self) -> Vec<LeakEvent> {
        self.with_sim(StreamHandle::events).unwrap_or_default()
    }

    pub fn simulated_now(&self) -> Option<i64> {
        self.with_sim(StreamHandle::simulated_now)
    }

    pub fn is_finished(&self) -> bool {
        self.with_sim(StreamHandle::is_finished).unwrap_or(true)
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        let sim = self.with_sim(StreamHandle::stats).unwrap_or(*self.last_stats.lock());
        self.metrics.snapshot(sim)
    }

    /// Stops the simulator, waits for in-flight messages to be acknowledged,
    /// drains every stage and closes the broker. Idempotent.
    pub fn shutdown(&self) -> MetricsSnapshot {
        if let Some(sim) = self.sim.lock().take() {
            *self.last_stats.lock() = sim.stop();
        }
        let deadline = Instant::now() + Duration::from_secs(10);
        while self.broker.inflight() > 0 && Instant::now() < deadline {
            thread::sleep(Duration::from_millis(5));
        }
        self.stop.store(true, Ordering::Release);
        for t in self.threads.lock().drain(..) {
            if t.join().is_err() {
                error!("pipeline stage panicked");
            }
        }
        self.broker.shutdown();
        self.metrics()
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn ingest_stage(
    sub: Subscription,
    out: Sender<(SensorReading, Instant)>,
    metrics: &ServiceMetrics,
    stop: &AtomicBool,
) {
    let mut dedup = Deduper::default();
    loop {
        let d = match sub.recv_timeout(POLL) {
            Ok(d) => d,
            Err(RecvError::Timeout) if !stop.load(Ordering::Acquire) => continue,
            Err(_) => return,
        };
        metrics.transport.record(d.latency());
        if !dedup.first_time(&d.envelope) {
            bump(&metrics.duplicates);
            d.ack();
            continue;
        }
        match d.envelope.reading() {
            Ok(r) => {
                bump(&metrics.received);
                if out.send((r, d.envelope.sent_at)).is_err() {
                    return;
                }
            }
            Err(e) => {
                warn!("dropping malformed payload on {}: {e}", d.envelope.topic);
                bump(&metrics.malformed);
            }
        }
        d.ack();
    }
}

fn infer_stage(
    models: &TrainedModels,
    input: Receiver<(SensorReading, Instant)>,
    store: Sender<StoreWork>,
    alerts: Sender<AlertWork>,
    bus: &EventBus,
    metrics: &ServiceMetrics,
    latest: &RwLock<BTreeMap<RackId, ForecastResult>>,
) {
    let mut buffers: HashMap<RackId, MinuteBuffer> = HashMap::new();
    for (r, sent_at) in input {
        bus.publish(ServiceEvent::Reading(r.clone()));
        let mut work = vec![Input::Reading(r.clone())];
        let _ = store.send(StoreWork::Reading(r.clone()));
        match models.detector.detect(&r) {
            Ok(d) => {
                bump(&metrics.detections);
                bus.publish(ServiceEvent::Detection(d.clone()));
                let _ = store.send(StoreWork::Detection(d.clone()));
                work.push(Input::Detection(d));
            }
            Err(e) => warn!("detection skipped at {}: {e}", r.timestamp),
        }
        let buf = buffers.entry(r.rack_id.clone()).or_default();
        if buf.push(&r) {
            let rows: Vec<SensorReading> = buf.rows.iter().cloned().collect();
            match models.forecaster.predict_readings(&rows) {
                Ok(est) => {
                    let f = models.forecaster.result(r.timestamp, r.rack_id.clone(), est);
                    bump(&metrics.forecasts);
                    latest.write().insert(r.rack_id.clone(), f.clone());
                    bus.publish(ServiceEvent::Forecast(f.clone()));
                    let _ = store.send(StoreWork::Forecast(f.clone()));
                    work.push(Input::Forecast(f));
                }
                Err(e) => warn!("forecast skipped at {}: {e}", r.timestamp),
            }
        }
        for input in work {
            if alerts.send(AlertWork { input, sent_at }).is_err() {
                return;
            }
        }
    }
}

fn alert_stage(
    mut engine: AlertEngine,
    input: Receiver<AlertWork>,
    store: Sender<StoreWork>,
    bus: &EventBus,
    metrics: &ServiceMetrics,
) {
    for AlertWork { input, sent_at } in input {
        match engine.ingest(&input) {
            Ok(fired) => {
                for a in fired {
                    metrics.alert_latency.record(sent_at.elapsed());
                    bump(&metrics.alerts);
                    bus.publish(ServiceEvent::Alert(a.clone()));
                    let _ = store.send(StoreWork::Alert(a));
                }
            }
            Err(e) => error!("alert engine: {e}"),
        }
        if matches!(input, Input::Detection(_)) {
            metrics.end_to_end.record(sent_at.elapsed());
        }
    }
}

fn points_of(work: StoreWork, points: &mut Vec<(SeriesKey, i64, f64)>, alerts: &mut Vec<AlertRecord>) {
    match work {
        StoreWork::Reading(r) => {
            for (c, name) in Channel::ALL.iter().zip(CHANNEL_SERIES) {
                points.push((SeriesKey::for_rack(name, &r.rack_id), r.timestamp, r.channel(*c)));
            }
        }
        StoreWork::Forecast(f) => points.push((
            SeriesKey::for_rack(FORECAST_SERIES, &f.rack_id),
            f.issued_at,
            f.point_estimate,
        )),
        StoreWork::Detection(d) => points.push((
            SeriesKey::for_rack(DETECTION_SERIES, &d.rack_id),
            d.issued_at,
            d.vote_score,
        )),
        StoreWork::Alert(a) => alerts.push(a),
    }
}

fn store_stage(store: &Store, input: Receiver<StoreWork>, metrics: &ServiceMetrics) {
    let mut points = Vec::new();
    let mut alerts = Vec::new();
    let mut last_flush = Instant::now();
    let flush = |points: &mut Vec<(SeriesKey, i64, f64)>, alerts: &mut Vec<AlertRecord>| {
        let record = |res: Result<crate::tstore::WriteReport, StoreError>| match res {
            Ok(rep) => {
                metrics.stored_points.fetch_add(rep.written as u64, Ordering::Relaxed);
                if !rep.rejected.is_empty() {
                    warn!("store rejected {} points", rep.rejected.len());
                }
            }
            Err(e) => {
                error!("store write failed: {e}");
                bump(&metrics.store_errors);
            }
        };
        if !points.is_empty() {
            record(store.write_batch(points));
            points.clear();
        }
        if !alerts.is_empty() {
            record(alerting::persist(store, alerts));
            alerts.clear();
        }
    };
    loop {
        match input.recv_deadline(last_flush + FLUSH_EVERY) {
            Ok(w) => {
                points_of(w, &mut points, &mut alerts);
                if points.len() < FLUSH_POINTS {
                    continue;
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => {
                flush(&mut points, &mut alerts);
                return;
            }
        }
        flush(&mut points, &mut alerts);
        last_flush = Instant::now();
    }
}

/// Joins the four channel series of a rack into readings with `from <= t < to`.
pub fn query_readings(
    store: &Store,
    rack: &RackId,
    from: i64,
    to: i64,
) -> Result<Vec<SensorReading>, StoreError> {
    let series = CHANNEL_SERIES
        .iter()
        .map(|name| Ok(store.query_range(&SeriesKey::for_rack(*name, rack), from, to, None)?.points))
        .collect::<Result<Vec<_>, StoreError>>()?;
    let lookup = |c: usize, ts: i64| {
        let pts = &series[c];
        pts.binary_search_by_key(&ts, |p| p.0).ok().map(|i| pts[i].1)
    };
    Ok(series[0]
        .iter()
        .filter_map(|&(ts, pressure)| {
            Some(SensorReading::with_channels(
                ts,
                rack.clone(),
                [pressure, lookup(1, ts)?, lookup(2, ts)?, lookup(3, ts)?],
            ))
        })
        .collect())
}
