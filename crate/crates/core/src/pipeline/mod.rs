//! Wiring: offline training and replay, and the live four-stage service.

mod bus;
mod config;
mod fit;
mod live;
mod replay;

pub use bus::{BusSubscriber, EventBus, ServiceEvent};
pub use config::PipelineConfig;
pub use fit::{fit_models, single_rack, study_detector, FitOutput, TrainedModels};
pub use live::{
    query_readings, LatencyLog, LatencySummary, MetricsSnapshot, Service, ServiceMetrics,
    CHANNEL_SERIES, DETECTION_SERIES, FORECAST_SERIES,
};
pub use replay::{replay, replay_dataset, ReplayOutput};

use crate::alerting::AlertError;
use crate::analytics::StatsError;
use crate::detector::DetectError;
use crate::featlab::FeatError;
use crate::forecaster::{CalibrationError, ForecastError, TrainError};
use crate::model::DatasetError;
use crate::simgen::StreamError as SimStreamError;
use crate::stream::StreamError;
use crate::tstore::StoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Features(#[from] FeatError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Alert(#[from] AlertError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Broker(#[from] StreamError),
    #[error(transparent)]
    Simulator(#[from] SimStreamError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
