use super::topic::{telemetry_topic, validate_topic, TopicError, TopicFilter};
use crate::model::{parse_reading, serialize_reading, ParseError, SensorReading};
use parking_lot::{Condvar, Mutex};
use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::thread;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Qos {
    AtMostOnce = 0,
    AtLeastOnce = 1,
}

/// Exponential backoff between redeliveries of an unacknowledged message.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub factor: f64,
    pub cap: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            base: Duration::from_millis(100),
            factor: 2.0,
            cap: Duration::from_secs(5),
        }
    }
}

impl RetryPolicy {
    /// Wait before retry number `attempt` (0 = first retry).
    pub fn delay(&self, attempt: u32) -> Duration {
        let scaled = self.base.as_secs_f64() * self.factor.powi(attempt.min(64) as i32);
        Duration::from_secs_f64(scaled.min(self.cap.as_secs_f64()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrokerConfig {
    pub retry: RetryPolicy,
    /// Messages a publisher may hold while the broker is down.
    pub offline_buffer: usize,
    /// Granularity of the retry scan.
    pub tick: Duration,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        BrokerConfig {
            retry: RetryPolicy::default(),
            offline_buffer: 10_000,
            tick: Duration::from_millis(5),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StreamError {
    #[error(transparent)]
    Topic(#[from] TopicError),
    #[error("broker unreachable and offline buffer full ({capacity} messages)")]
    BufferFull { capacity: usize },
    #[error("broker has shut down")]
    Shutdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RecvError {
    #[error("timed out waiting for a message")]
    Timeout,
    #[error("subscription closed")]
    Closed,
}

/// A routed message. Redeliveries keep `message_id` and `sent_at` and set `duplicate`.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub topic: String,
    pub payload: String,
    pub qos: Qos,
    pub publisher: u64,
    pub message_id: u64,
    pub duplicate: bool,
    pub sent_at: Instant,
}

impl Envelope {
    pub fn key(&self) -> (u64, u64) {
        (self.publisher, self.message_id)
    }

    pub fn reading(&self) -> Result<SensorReading, ParseError> {
        parse_reading(&self.payload)
    }
}

#[derive(Debug, Default)]
struct Completion {
    done: Mutex<bool>,
    cond: Condvar,
}

impl Completion {
    fn complete(&self) {
        *self.done.lock() = true;
        self.cond.notify_all();
    }
}

/// Resolves once every matching subscription has acknowledged (QoS 1) or
/// the message has been routed (QoS 0).
#[derive(Debug, Clone)]
pub struct DeliveryReceipt {
    pub message_id: u64,
    completion: Arc<Completion>,
}

impl DeliveryReceipt {
    pub fn is_complete(&self) -> bool {
        *self.completion.done.lock()
    }

    pub fn wait(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut done = self.completion.done.lock();
        while !*done {
            if self.completion.cond.wait_until(&mut done, deadline).timed_out() {
                return *done;
            }
        }
        true
    }
}

struct Inflight {
    envelope: Envelope,
    attempts: u32,
    next_retry: Instant,
    completion: Arc<Completion>,
}

#[derive(Default)]
struct PublisherState {
    inflight: BTreeMap<u64, Inflight>,
    offline: VecDeque<(Envelope, Arc<Completion>)>,
}

/// Client-side session state. Survives broker restarts.
struct PublisherShared {
    id: u64,
    next_message: AtomicU64,
    state: Mutex<PublisherState>,
}

struct SubQueue {
    id: u64,
    filter: TopicFilter,
    queue: Mutex<SubQueueState>,
    cond: Condvar,
}

#[derive(Default)]
struct SubQueueState {
    items: VecDeque<(Envelope, u64)>,
    closed: bool,
}

struct BrokerState {
    up: bool,
    shutdown: bool,
    epoch: u64,
    next_sub: u64,
    next_publisher: u64,
    subs: Vec<Arc<SubQueue>>,
    publishers: Vec<Weak<PublisherShared>>,
    /// QoS 1 messages routed in this epoch, mapped to subscriptions still owing an ack.
    awaiting: HashMap<(u64, u64), HashSet<u64>>,
}

struct Inner {
    config: BrokerConfig,
    state: Mutex<BrokerState>,
    wake: Condvar,
}

enum Routed {
    Complete,
    Awaiting,
}

impl Inner {
    /// Pushes to every matching subscription, or to the ones still owing an
    /// ack if this is a redelivery within the same epoch.
    fn route(&self, state: &mut BrokerState, envelope: &Envelope) -> Routed {
        let key = envelope.key();
        let targets: Vec<&Arc<SubQueue>> = match state.awaiting.get(&key) {
            Some(pending) => state.subs.iter().filter(|s| pending.contains(&s.id)).collect(),
            None => state
                .subs
                .iter()
                .filter(|s| s.filter.matches(&envelope.topic))
                .collect(),
        };
        let ids: HashSet<u64> = targets.iter().map(|s| s.id).collect();
        for sub in targets {
            let mut q = sub.queue.lock();
            q.items.push_back((envelope.clone(), state.epoch));
            sub.cond.notify_one();
        }
        if envelope.qos == Qos::AtLeastOnce && !ids.is_empty() {
            state.awaiting.insert(key, ids);
            Routed::Awaiting
        } else {
            Routed::Complete
        }
    }

    fn send(
        &self,
        state: &mut BrokerState,
        ps: &mut PublisherState,
        envelope: Envelope,
        completion: Arc<Completion>,
    ) {
        match self.route(state, &envelope) {
            Routed::Complete => completion.complete(),
            Routed::Awaiting => {
                let next_retry = Instant::now() + self.config.retry.delay(0);
                ps.inflight.insert(
                    envelope.message_id,
                    Inflight {
                        envelope,
                        attempts: 0,
                        next_retry,
                        completion,
                    },
                );
            }
        }
    }

    fn flush_offline(&self, state: &mut BrokerState, ps: &mut PublisherState) {
        while let Some((envelope, completion)) = ps.offline.pop_front() {
            self.send(state, ps, envelope, completion);
        }
    }

    fn publisher(&self, state: &BrokerState, id: u64) -> Option<Arc<PublisherShared>> {
        state
            .publishers
            .iter()
            .filter_map(Weak::upgrade)
            .find(|p| p.id == id)
    }

    fn settle(&self, state: &mut BrokerState, key: (u64, u64)) {
        state.awaiting.remove(&key);
        if let Some(publisher) = self.publisher(state, key.0) {
            if let Some(done) = publisher.state.lock().inflight.remove(&key.1) {
                done.completion.complete();
            }
        }
    }

    fn ack(&self, sub: u64, epoch: u64, key: (u64, u64)) {
        let mut state = self.state.lock();
        if !state.up || state.epoch != epoch {
            return;
        }
        let settled = match state.awaiting.get_mut(&key) {
            Some(pending) => {
                pending.remove(&sub);
                pending.is_empty()
            }
            None => false,
        };
        if settled {
            self.settle(&mut state, key);
        }
    }

    fn drop_subscription(&self, sub: u64) {
        let mut state = self.state.lock();
        state.subs.retain(|s| s.id != sub);
        let emptied: Vec<(u64, u64)> = state
            .awaiting
            .iter_mut()
            .filter_map(|(key, pending)| {
                (pending.remove(&sub) && pending.is_empty()).then_some(*key)
            })
            .collect();
        for key in emptied {
            self.settle(&mut state, key);
        }
    }

    /// One pass of the retry loop: flush offline buffers, redeliver overdue messages.
    fn retry_due(&self) {
        let mut state = self.state.lock();
        if !state.up {
            return;
        }
        state.publishers.retain(|w| w.strong_count() > 0);
        let publishers: Vec<Arc<PublisherShared>> =
            state.publishers.iter().filter_map(Weak::upgrade).collect();
        let now = Instant::now();
        for publisher in publishers {
            let mut ps = publisher.state.lock();
            self.flush_offline(&mut state, &mut ps);
            let due: Vec<u64> = ps
                .inflight
                .iter()
                .filter(|(_, m)| m.next_retry <= now)
                .map(|(&id, _)| id)
                .collect();
            for id in due {
                let mut envelope = ps.inflight[&id].envelope.clone();
                envelope.duplicate = true;
                let routed = self.route(&mut state, &envelope);
                let entry = ps.inflight.get_mut(&id).expect("due id present");
                match routed {
                    Routed::Complete => {
                        let done = ps.inflight.remove(&id).expect("due id present");
                        done.completion.complete();
                    }
                    Routed::Awaiting => {
                        entry.attempts += 1;
                        entry.next_retry = now + self.config.retry.delay(entry.attempts);
                    }
                }
            }
        }
    }
}

/// In-process pub/sub broker with QoS 0/1 delivery. Cheap to clone.
#[derive(Clone)]
pub struct Broker {
    inner: Arc<Inner>,
}

impl Broker {
    pub fn start(config: BrokerConfig) -> Self {
        let inner = Arc::new(Inner {
            config,
            state: Mutex::new(BrokerState {
                up: true,
                shutdown: false,
                epoch: 0,
                next_sub: 0,
                next_publisher: 0,
                subs: Vec::new(),
                publishers: Vec::new(),
                awaiting: HashMap::new(),
            }),
            wake: Condvar::new(),
        });
        let weak = Arc::downgrade(&inner);
        let tick = inner.config.tick;
        thread::Builder::new()
            .name("broker-retry".into())
            .spawn(move || retry_loop(weak, tick))
            .expect("spawn retry thread");
        Broker { inner }
    }

    pub fn subscribe(&self, filter: &str) -> Result<Subscription, StreamError> {
        let filter = TopicFilter::parse(filter)?;
        let mut state = self.inner.state.lock();
        if state.shutdown {
            return Err(StreamError::Shutdown);
        }
        state.next_sub += 1;
        let queue = Arc::new(SubQueue {
            id: state.next_sub,
            filter,
            queue: Mutex::new(SubQueueState::default()),
            cond: Condvar::new(),
        });
        state.subs.push(queue.clone());
        Ok(Subscription {
            queue,
            broker: Arc::downgrade(&self.inner),
        })
    }

    pub fn publisher(&self) -> Publisher {
        let mut state = self.inner.state.lock();
        state.next_publisher += 1;
        let shared = Arc::new(PublisherShared {
            id: state.next_publisher,
            next_message: AtomicU64::new(1),
            state: Mutex::new(PublisherState::default()),
        });
        state.publishers.push(Arc::downgrade(&shared));
        Publisher {
            shared,
            broker: self.inner.clone(),
        }
    }

    pub fn is_up(&self) -> bool {
        self.inner.state.lock().up
    }

    /// Simulates a broker crash: queued deliveries and ack bookkeeping are
    /// lost. Sessions (subscriptions, publisher inflight) survive.
    pub fn kill(&self) {
        let mut state = self.inner.state.lock();
        state.up = false;
        state.epoch += 1;
        state.awaiting.clear();
        for sub in &state.subs {
            sub.queue.lock().items.clear();
        }
    }

    /// Brings the broker back; publishers immediately resend everything unacknowledged.
    pub fn restart(&self) {
        let mut state = self.inner.state.lock();
        state.up = true;
        let now = Instant::now();
        for publisher in state.publishers.iter().filter_map(Weak::upgrade) {
            for m in publisher.state.lock().inflight.values_mut() {
                m.next_retry = now;
            }
        }
        drop(state);
        self.inner.wake.notify_all();
    }

    /// Stops the retry thread and closes all subscriptions.
    pub fn shutdown(&self) {
        let mut state = self.inner.state.lock();
        state.shutdown = true;
        state.up = false;
        for sub in state.subs.drain(..) {
            let mut q = sub.queue.lock();
            q.closed = true;
            sub.cond.notify_all();
        }
        drop(state);
        self.inner.wake.notify_all();
    }

    pub fn inflight(&self) -> usize {
        let state = self.inner.state.lock();
        state
            .publishers
            .iter()
            .filter_map(Weak::upgrade)
            .map(|p| {
                let ps = p.state.lock();
                ps.inflight.len() + ps.offline.len()
            })
            .sum()
    }
}

fn retry_loop(weak: Weak<Inner>, tick: Duration) {
    loop {
        let Some(inner) = weak.upgrade() else { return };
        {
            let mut state = inner.state.lock();
            if state.shutdown {
                return;
            }
            inner.wake.wait_for(&mut state, tick);
            if state.shutdown {
                return;
            }
        }
        inner.retry_due();
    }
}

pub struct Publisher {
    shared: Arc<PublisherShared>,
    broker: Arc<Inner>,
}

impl Publisher {
    pub fn id(&self) -> u64 {
        self.shared.id
    }

    pub fn publish(
        &self,
        topic: &str,
        payload: impl Into<String>,
        qos: Qos,
    ) -> Result<DeliveryReceipt, StreamError> {
        validate_topic(topic)?;
        let mut state = self.broker.state.lock();
        if state.shutdown {
            return Err(StreamError::Shutdown);
        }
        let mut ps = self.shared.state.lock();
        let capacity = self.broker.config.offline_buffer;
        if !state.up && ps.offline.len() >= capacity {
            return Err(StreamError::BufferFull { capacity });
        }
        let message_id = self.shared.next_message.fetch_add(1, Ordering::Relaxed);
        let envelope = Envelope {
            topic: topic.to_string(),
            payload: payload.into(),
            qos,
            publisher: self.shared.id,
            message_id,
            duplicate: false,
            sent_at: Instant::now(),
        };
        let completion = Arc::new(Completion::default());
        let receipt = DeliveryReceipt {
            message_id,
            completion: completion.clone(),
        };
        if state.up {
            self.broker.flush_offline(&mut state, &mut ps);
            self.broker.send(&mut state, &mut ps, envelope, completion);
        } else {
            ps.offline.push_back((envelope, completion));
        }
        Ok(receipt)
    }

    /// Publishes a reading on its rack's telemetry topic in the line format.
    pub fn publish_reading(
        &self,
        reading: &SensorReading,
        qos: Qos,
    ) -> Result<DeliveryReceipt, StreamError> {
        self.publish(
            &telemetry_topic(&reading.rack_id),
            serialize_reading(reading),
            qos,
        )
    }

    /// Messages not yet acknowledged, including the offline buffer.
    pub fn pending(&self) -> usize {
        let ps = self.shared.state.lock();
        ps.inflight.len() + ps.offline.len()
    }
}

/// A message handed to a subscriber. QoS 1 deliveries must be acked.
pub struct Delivery {
    pub envelope: Envelope,
    sub: u64,
    epoch: u64,
    broker: Weak<Inner>,
}

impl std::fmt::Debug for Delivery {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Delivery")
            .field("envelope", &self.envelope)
            .field("epoch", &self.epoch)
            .finish()
    }
}

impl Delivery {
    pub fn ack(&self) {
        if self.envelope.qos == Qos::AtMostOnce {
            return;
        }
        if let Some(inner) = self.broker.upgrade() {
            inner.ack(self.sub, self.epoch, self.envelope.key());
        }
    }

    pub fn latency(&self) -> Duration {
        self.envelope.sent_at.elapsed()
    }
}

/// Per-filter delivery queue consumed by a single thread.
pub struct Subscription {
    queue: Arc<SubQueue>,
    broker: Weak<Inner>,
}

impl Subscription {
    pub fn filter(&self) -> &TopicFilter {
        &self.queue.filter
    }

    fn wrap(&self, (envelope, epoch): (Envelope, u64)) -> Delivery {
        Delivery {
            envelope,
            sub: self.queue.id,
            epoch,
            broker: self.broker.clone(),
        }
    }

    pub fn try_recv(&self) -> Option<Delivery> {
        let item = self.queue.queue.lock().items.pop_front();
        item.map(|i| self.wrap(i))
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<Delivery, RecvError> {
        let deadline = Instant::now() + timeout;
        let mut q = self.queue.queue.lock();
        loop {
            if let Some(item) = q.items.pop_front() {
                drop(q);
                return Ok(self.wrap(item));
            }
            if q.closed {
                return Err(RecvError::Closed);
            }
            if self.queue.cond.wait_until(&mut q, deadline).timed_out() && q.items.is_empty() {
                return Err(if q.closed {
                    RecvError::Closed
                } else {
                    RecvError::Timeout
                });
            }
        }
    }

    pub fn recv(&self) -> Result<Delivery, RecvError> {
        loop {
            match self.recv_timeout(Duration::from_secs(3600)) {
                Err(RecvError::Timeout) => continue,
                other => return other,
            }
        }
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        if let Some(inner) = self.broker.upgrade() {
            inner.drop_subscription(self.queue.id);
        }
    }
}

/// Consumer-side duplicate filter turning at-least-once into exactly-once effects.
#[derive(Debug, Default)]
pub struct Deduper {
    seen: HashSet<(u64, u64)>,
}

impl Deduper {
    /// True the first time a `(publisher, message_id)` pair is observed.
    pub fn first_time(&mut self, envelope: &Envelope) -> bool {
        self.seen.insert(envelope.key())
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RackId;
    use crate::stream::topic::TELEMETRY_FILTER;

    const WAIT: Duration = Duration::from_secs(2);

    fn fast() -> BrokerConfig {
        BrokerConfig {
            retry: RetryPolicy {
                base: Duration::from_millis(20),
                factor: 2.0,
                cap: Duration::from_millis(200),
            },
            ..BrokerConfig::default()
        }
    }

    #[test]
    fn backoff_doubles_to_cap() {
        let p = RetryPolicy::default();
        let ms: Vec<u128> = (0..8).map(|a| p.delay(a).as_millis()).collect();
        assert_eq!(ms, vec![100, 200, 400, 800, 1600, 3200, 5000, 5000]);
    }

    #[test]
    fn wildcard_receives_both_racks() {
        let broker = Broker::start(BrokerConfig::default());
        let sub = broker.subscribe(TELEMETRY_FILTER).unwrap();
        let p = broker.publisher();
        p.publish("dc/A/telemetry", "a", Qos::AtMostOnce).unwrap();
        p.publish("dc/B/telemetry", "b", Qos::AtMostOnce).unwrap();
        p.publish("dc/B/alerts", "x", Qos::AtMostOnce).unwrap();
        let got: Vec<String> = (0..2)
            .map(|_| sub.recv_timeout(WAIT).unwrap().envelope.topic)
            .collect();
        assert_eq!(got, vec!["dc/A/telemetry", "dc/B/telemetry"]);
        assert!(sub.try_recv().is_none());
    }

    #[test]
    fn per_publisher_fifo() {
        let broker = Broker::start(BrokerConfig::default());
        let sub = broker.subscribe("dc/+/telemetry").unwrap();
        let p = broker.publisher();
        for i in 1..=100 {
            p.publish("dc/R01/telemetry", i.to_string(), Qos::AtMostOnce)
                .unwrap();
        }
        let ids: Vec<u64> = (0..100)
            .map(|_| sub.recv_timeout(WAIT).unwrap().envelope.message_id)
            .collect();
        assert_eq!(ids, (1..=100).collect::<Vec<_>>());
    }

    #[test]
    fn qos1_completes_only_after_ack() {
        let broker = Broker::start(fast());
        let sub = broker.subscribe("dc/+/telemetry").unwrap();
        let p = broker.publisher();
        let receipt = p.publish("dc/R01/telemetry", "x", Qos::AtLeastOnce).unwrap();
        let d = sub.recv_timeout(WAIT).unwrap();
        assert!(!receipt.wait(Duration::from_millis(50)));
        d.ack();
        assert!(receipt.wait(WAIT));
        assert_eq!(p.pending(), 0);
    }

    #[test]
    fn unacked_message_is_redelivered_with_same_id() {
        let broker = Broker::start(fast());
        let sub = broker.subscribe("dc/+/telemetry").unwrap();
        let p = broker.publisher();
        let receipt = p.publish("dc/R01/telemetry", "x", Qos::AtLeastOnce).unwrap();
        let first = sub.recv_timeout(WAIT).unwrap();
        let second = sub.recv_timeout(WAIT).unwrap();
        assert_eq!(first.envelope.message_id, second.envelope.message_id);
        assert!(second.envelope.duplicate);
        let mut dedupe = Deduper::default();
        assert!(dedupe.first_time(&first.envelope));
        assert!(!dedupe.first_time(&second.envelope));
        second.ack();
        assert!(receipt.wait(WAIT));
    }

    #[test]
    fn every_subscription_must_ack() {
        let broker = Broker::start(fast());
        let a = broker.subscribe("dc/+/telemetry").unwrap();
        let b = broker.subscribe("dc/#").unwrap();
        let p = broker.publisher();
        let receipt = p.publish("dc/R01/telemetry", "x", Qos::AtLeastOnce).unwrap();
        a.recv_timeout(WAIT).unwrap().ack();
        assert!(!receipt.wait(Duration::from_millis(30)));
        b.recv_timeout(WAIT).unwrap().ack();
        assert!(receipt.wait(WAIT));
    }

    #[test]
    fn dropping_a_subscription_releases_its_acks() {
        let broker = Broker::start(fast());
        let sub = broker.subscribe("dc/+/telemetry").unwrap();
        let p = broker.publisher();
        let receipt = p.publish("dc/R01/telemetry", "x", Qos::AtLeastOnce).unwrap();
        drop(sub);
        assert!(receipt.wait(WAIT));
    }

    #[test]
    fn no_subscribers_completes_immediately() {
        let broker = Broker::start(fast());
        let p = broker.publisher();
        let receipt = p.publish("dc/R01/telemetry", "x", Qos::AtLeastOnce).unwrap();
        assert!(receipt.is_complete());
    }

    #[test]
    fn offline_buffer_is_bounded_then_flushed() {
        let broker = Broker::start(BrokerConfig {
            offline_buffer: 3,
            ..fast()
        });
        let sub = broker.subscribe("dc/+/telemetry").unwrap();
        let p = broker.publisher();
        broker.kill();
        for _ in 0..3 {
            p.publish("dc/R01/telemetry", "x", Qos::AtLeastOnce).unwrap();
        }
        assert_eq!(
            p.publish("dc/R01/telemetry", "x", Qos::AtLeastOnce).unwrap_err(),
            StreamError::BufferFull { capacity: 3 }
        );
        broker.restart();
        let ids: Vec<u64> = (0..3)
            .map(|_| {
                let d = sub.recv_timeout(WAIT).unwrap();
                d.ack();
                d.envelope.message_id
            })
            .collect();
        assert_eq!(ids, vec![1, 2, 3]);
    }

    #[test]
    fn restart_mid_stream_loses_nothing() {
        let broker = Broker::start(fast());
        let sub = broker.subscribe("dc/+/telemetry").unwrap();
        let p = broker.publisher();
        let consumer = thread::spawn(move || {
            let mut seen = Deduper::default();
            while seen.len() < 1_000 {
                match sub.recv_timeout(Duration::from_secs(10)) {
                    Ok(d) => {
                        seen.first_time(&d.envelope);
                        d.ack();
                    }
                    Err(e) => panic!("consumer stalled at {}: {e}", seen.len()),
                }
            }
            seen.len()
        });
        let mut receipts = Vec::new();
        for i in 0..1_000 {
            if i == 400 {
                broker.kill();
            }
            if i == 600 {
                broker.restart();
            }
            receipts.push(p.publish("dc/R01/telemetry", "x", Qos::AtLeastOnce).unwrap());
        }
        assert_eq!(consumer.join().unwrap(), 1_000);
        assert!(receipts.iter().all(|r| r.wait(Duration::from_secs(5))));
    }

    #[test]
    fn readings_round_trip_through_the_line_format() {
        let broker = Broker::start(BrokerConfig::default());
        let sub = broker.subscribe(TELEMETRY_FILTER).unwrap();
        let p = broker.publisher();
        let r = SensorReading::with_channels(5, RackId::new("R02"), [2.0, 1.5, 50.0, 25.0]);
        p.publish_reading(&r, Qos::AtMostOnce).unwrap();
        let d = sub.recv_timeout(WAIT).unwrap();
        assert_eq!(d.envelope.topic, "dc/R02/telemetry");
        assert_eq!(d.envelope.reading().unwrap(), r);
    }

    #[test]
    fn shutdown_closes_subscribers() {
        let broker = Broker::start(BrokerConfig::default());
        let sub = broker.subscribe(TELEMETRY_FILTER).unwrap();
        broker.shutdown();
        assert_eq!(sub.recv_timeout(WAIT).unwrap_err(), RecvError::Closed);
        let p = broker.publisher();
        assert_eq!(
            p.publish("dc/R01/telemetry", "x", Qos::AtMostOnce).unwrap_err(),
            StreamError::Shutdown
        );
    }
}
