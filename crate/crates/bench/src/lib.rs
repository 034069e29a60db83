//! Criterion benchmarks live in `benches/`. Shared fixtures are here.

use coolguard::simgen::{generate_dataset, SimConfig, SimOutput};

/// One simulated day with the default leak profile.
pub fn one_day(seed: u64) -> SimOutput {
    let cfg = SimConfig {
        seed,
        duration_minutes: 1440,
        ..SimConfig::default()
    };
    generate_dataset(&cfg).expect("default config is valid")
}
