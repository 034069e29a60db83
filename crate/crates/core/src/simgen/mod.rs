//! Synthetic liquid-cooling telemetry: batch dataset generation with
//! injected cold-plate leak episodes, and a paced live stream that accepts
//! operator-triggered leaks.

mod config;
mod generate;
mod live;
mod profile;

pub use config::{Band, ChannelSpec, ConfigError, PrecursorShift, SimConfig, DEFAULT_START_NS};
pub use generate::{generate_dataset, time_to_leak_labels, SimOutput, PRNG_NAME};
pub use live::{stream, InjectError, StreamError, StreamHandle, StreamOptions, StreamStats, DEFAULT_BUFFER};
