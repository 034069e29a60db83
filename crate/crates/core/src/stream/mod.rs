//! At-least-once pub/sub transport between the simulator, the store and the models.
//!
//! The in-process [`Broker`] is always available. With the `mqtt-bridge`
//! feature and `COOLGUARD_MQTT_URL` set, telemetry is mirrored to an
//! external MQTT 3.1.1 broker as well.

mod broker;
#[cfg(feature = "mqtt-bridge")]
pub mod bridge;
mod topic;

pub use broker::{
    Broker, BrokerConfig, Deduper, Delivery, DeliveryReceipt, Envelope, Publisher, Qos,
    RecvError, RetryPolicy, StreamError, Subscription,
};
pub use topic::{
    rack_of_topic, telemetry_topic, validate_topic, TopicError, TopicFilter, TELEMETRY_FILTER,
};
