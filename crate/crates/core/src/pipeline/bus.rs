use crate::model::{AlertRecord, DetectionResult, ForecastResult, SensorReading};
use crossbeam_channel::{bounded, Receiver, Sender, TrySendError};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::time::Duration;

/// One message on the live event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "snake_case")]
pub enum ServiceEvent {
    Reading(SensorReading),
    Forecast(ForecastResult),
    Detection(DetectionResult),
    Alert(AlertRecord),
    Acknowledged(AlertRecord),
}

struct Slot {
    tx: Sender<Arc<ServiceEvent>>,
    /// Publisher-side handle used to evict the oldest event when full.
    rx: Receiver<Arc<ServiceEvent>>,
    alive: Weak<AtomicU64>,
}

/// Fan-out to any number of subscribers, each with its own bounded buffer.
/// A slow subscriber loses its oldest events; publishers never block.
#[derive(Clone)]
pub struct EventBus {
    slots: Arc<Mutex<Vec<Slot>>>,
    capacity: usize,
}

pub struct BusSubscriber {
    rx: Receiver<Arc<ServiceEvent>>,
    dropped: Arc<AtomicU64>,
}

impl EventBus {
    pub fn new(capacity: usize) -> Self {
        EventBus {
            slots: Arc::default(),
            capacity: capacity.max(1),
        }
    }

    pub fn subscribe(&self) -> BusSubscriber {
        let (tx, rx) = bounded(self.capacity);
        let dropped = Arc::new(AtomicU64::new(0));
        self.slots.lock().push(Slot {
            tx,
            rx: rx.clone(),
            alive: Arc::downgrade(&dropped),
        });
        BusSubscriber { rx, dropped }
    }

    pub fn subscribers(&self) -> usize {
        self.slots.lock().iter().filter(|s| s.alive.strong_count() > 0).count()
    }

    pub fn publish(&self, event: ServiceEvent) {
        let event = Arc::new(event);
        let mut slots = self.slots.lock();
        slots.retain(|s| s.alive.strong_count() > 0);
        for slot in slots.iter() {
            let mut item = event.clone();
            loop {
                match slot.tx.try_send(item) {
                    Ok(()) => break,
                    Err(TrySendError::Full(back)) => {
                        if slot.rx.try_recv().is_ok() {
                            if let Some(d) = slot.alive.upgrade() {
                                d.fetch_add(1, Ordering::Relaxed);
                            }
                        }
                        item = back;
                    }
                    Err(TrySendError::Disconnected(_)) => break,
                }
            }
        }
    }
}

impl BusSubscriber {
    pub fn try_recv(&self) -> Option<Arc<ServiceEvent>> {
        self.rx.try_recv().ok()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<Arc<ServiceEvent>> {
        self.rx.recv_timeout(timeout).ok()
    }

    /// Events evicted because this subscriber fell behind.
    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }
}
