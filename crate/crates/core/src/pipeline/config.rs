use super::PipelineError;
use crate::alerting::RuleSet;
use crate::analytics::CoverageRule;
use crate::detector::ForestConfig;
use crate::forecaster::TrainConfig;
use crate::model::{CHANNELS, DEFAULT_HORIZON_HOURS};
use crate::simgen::SimConfig;
use serde::{Deserialize, Serialize};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub forest: ForestConfig,
    pub rules: RuleSet,
    pub coverage: CoverageRule,
    pub horizon_hours: f64,
    pub train_fraction: f64,
    /// Final minutes of the dataset held out as the test day.
    pub holdout_minutes: i64,
    pub cv_folds: usize,
    pub dataset_path: PathBuf,
    pub forecaster_path: PathBuf,
    pub detector_path: PathBuf,
    pub store_dir: PathBuf,
    pub audit_path: PathBuf,
    pub bind: String,
    /// Simulated seconds per wall second for `serve`.
    pub speedup: f64,
    /// Replay the simulator's own leak schedule while serving.
    pub natural_leaks: bool,
    /// Capacity of each inter-stage queue.
    pub queue_capacity: usize,
    /// Events buffered per WebSocket client before the oldest is dropped.
    pub client_buffer: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sim: SimConfig::default(),
            train: TrainConfig::default(),
            forest: ForestConfig::default(),
            rules: RuleSet::default(),
            coverage: CoverageRule::default(),
            horizon_hours: DEFAULT_HORIZON_HOURS,
            train_fraction: 0.8,
            holdout_minutes: 1440,
            cv_folds: 5,
            dataset_path: PathBuf::from("data/telemetry.csv"),
            forecaster_path: PathBuf::from("models/forecaster.json"),
            detector_path: PathBuf::from("models/detector.json"),
            store_dir: PathBuf::from("data/tstore"),
            audit_path: PathBuf::from("data/alerts.jsonl"),
            bind: "127.0.0.1:8080".into(),
            speedup: 1.0,
            natural_leaks: false,
            queue_capacity: 4096,
            client_buffer: 1024,
        }
    }
}

fn invalid(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.sim.validate().map_err(|e| invalid(format!("sim: {e}")))?;
        self.rules.validate().map_err(|e| invalid(e.to_string()))?;
        if !(self.horizon_hours > 0.0 && self.horizon_hours.is_finite()) {
            return Err(invalid(format!("horizon_hours must be positive, got {}", self.horizon_hours)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(invalid(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.holdout_minutes <= 0 {
            return Err(invalid("holdout_minutes must be positive"));
        }
        if self.cv_folds < 2 {
            return Err(invalid(format!("cv_folds must be at least 2, got {}", self.cv_folds)));
        }
        if self.forest.n_trees == 0 || self.forest.max_depth == 0 {
            return Err(invalid("forest needs n_trees > 0 and max_depth > 0"));
        }
        if self.forest.features.is_empty() || self.forest.features.iter().any(|&f| f >= CHANNELS) {
            return Err(invalid(format!("forest.features {:?} out of range", self.forest.features)));
        }
        let c = &self.coverage;
        if !(0.0 <= c.forecast_min_lead_hours
            && c.forecast_min_lead_hours <= c.forecast_max_lead_hours
            && c.detection_window_minutes >= 0.0)
        {
            return Err(invalid("coverage windows must be non-negative and ordered"));
        }
        if !(self.speedup >= 1.0 && self.speedup.is_finite()) {
            return Err(invalid(format!("speedup must be >= 1, got {}", self.speedup)));
        }
        if self.queue_capacity == 0 || self.client_buffer == 0 {
            return Err(invalid("queue_capacity and client_buffer must be positive"));
        }
        self.bind
            .parse::<SocketAddr>()
            .map_err(|e| invalid(format!("bind {:?}: {e}", self.bind)))?;
        Ok(())
    }
}
