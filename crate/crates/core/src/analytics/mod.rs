//! Exploration statistics, evaluation metrics and energy arithmetic.

mod eval;
mod metrics;
mod stats;

pub use eval::{
    energy_savings, evaluate_detector, evaluate_forecaster, false_positive_rate, forecast_accuracy,
    integrated_coverage, AccuracySpec, CatchPath, CoverageRule, DetectorEval, EpisodeLatency,
    EventCatch, FalsePositiveRate, Firing, ForecastAccuracy, ForecastPoint, ForecasterEval,
    IntegratedCoverage, DEFAULT_ACCURACY_SPECS, FP_HORIZON_HOURS, FP_THRESHOLD,
};
pub use metrics::{Confusion, Scores};
pub use stats::{cohen_d, explore, pearson, welch_t, ChannelContrast, Exploration, StatsError, WelchT};

use crate::model::Channel;
use serde::{Deserialize, Serialize};

pub const REPORT_VERSION: u32 = 1;

/// Everything `evaluate` and `replay` report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub exploration: Option<Exploration>,
    pub detector: Option<DetectorEval>,
    pub forecaster: Option<ForecasterEval>,
    pub integrated: Option<IntegratedCoverage>,
    pub study: Option<DetectorStudy>,
    /// Alerts fired during a replay, by rule.
    pub alert_counts: Vec<(String, usize)>,
}

impl Default for EvalReport {
    fn default() -> Self {
        EvalReport {
            version: REPORT_VERSION,
            exploration: None,
            detector: None,
            forecaster: None,
            integrated: None,
            study: None,
            alert_counts: Vec::new(),
        }
    }
}

/// Cross-validated F1 of a forest restricted to `channels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub channels: Vec<Channel>,
    pub f1: f64,
}

/// Cross-validation, importances and channel ablations of the detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorStudy {
    pub folds: usize,
    pub cv: Confusion,
    pub cv_scores: Scores,
    pub importances: Vec<(Channel, f64)>,
    pub ablations: Vec<Ablation>,
}
