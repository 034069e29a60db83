//! Mirrors local telemetry to an external MQTT 3.1.1 broker (QoS 1, plain TCP).

use super::broker::{Broker, RecvError, StreamError};
use super::topic::TELEMETRY_FILTER;
use rumqttc::{Client, Connection, MqttOptions, QoS};
use std::thread::{self, JoinHandle};
use std::time::Duration;
use thiserror::Error;

pub const MQTT_URL_ENV: &str = "COOLGUARD_MQTT_URL";

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("bad MQTT url {url:?}: expected mqtt://host[:port]")]
    Url { url: String },
    #[error(transparent)]
    Stream(#[from] StreamError),
}

/// `mqtt://host:port` or `host:port` to `(host, port)`; port defaults to 1883.
pub fn parse_url(url: &str) -> Result<(String, u16), BridgeError> {
    let bad = || BridgeError::Url {
        url: url.to_string(),
    };
    let rest = url.strip_prefix("mqtt://").unwrap_or(url);
    let rest = rest.trim_end_matches('/');
    let (host, port) = match rest.rsplit_once(':') {
        Some((h, p)) => (h, p.parse().map_err(|_| bad())?),
        None => (rest, 1883),
    };
    if host.is_empty() || host.contains('/') {
        return Err(bad());
    }
    Ok((host.to_string(), port))
}

pub struct MqttBridge {
    forward: JoinHandle<()>,
    events: JoinHandle<()>,
}

impl MqttBridge {
    /// Starts the bridge if `COOLGUARD_MQTT_URL` is set.
    pub fn from_env(broker: &Broker) -> Result<Option<MqttBridge>, BridgeError> {
        match std::env::var(MQTT_URL_ENV) {
            Ok(url) if !url.is_empty() => MqttBridge::start(broker, &url).map(Some),
            _ => Ok(None),
        }
    }

    pub fn start(broker: &Broker, url: &str) -> Result<MqttBridge, BridgeError> {
        let (host, port) = parse_url(url)?;
        let mut options = MqttOptions::new("coolguard-bridge", host, port);
        options.set_keep_alive(Duration::from_secs(30));
        let (client, connection) = Client::new(options, 1_000);
        let sub = broker.subscribe(TELEMETRY_FILTER)?;
        let forward = thread::Builder::new()
            .name("mqtt-forward".into())
            .spawn(move || loop {
                match sub.recv() {
                    Ok(d) => {
                        let env = &d.envelope;
                        if client
                            .publish(env.topic.clone(), QoS::AtLeastOnce, false, env.payload.clone())
                            .is_ok()
                        {
                            d.ack();
                        }
                    }
                    Err(RecvError::Closed) | Err(RecvError::Timeout) => return,
                }
            })
            .expect("spawn bridge thread");
        let events = thread::Builder::new()
            .name("mqtt-events".into())
            .spawn(move || drive(connection))
            .expect("spawn bridge thread");
        Ok(MqttBridge { forward, events })
    }

    pub fn join(self) {
        let _ = self.forward.join();
        let _ = self.events.join();
    }
}

fn drive(mut connection: Connection) {
    for event in connection.iter() {
        if let Err(e) = event {
            log::warn!("mqtt bridge: {e}");
            thread::sleep(Duration::from_secs(1));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_forms() {
        assert_eq!(parse_url("mqtt://localhost:1884").unwrap(), ("localhost".into(), 1884));
        assert_eq!(parse_url("broker.local").unwrap(), ("broker.local".into(), 1883));
        assert!(parse_url("mqtt://:x").is_err());
        assert!(parse_url("mqtt://").is_err());
    }
}
