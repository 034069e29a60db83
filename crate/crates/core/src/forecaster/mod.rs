//! LSTM time-to-leak regression with calibrated probability-within-horizon output.

mod calibration;
pub mod gradcheck;
pub mod lstm;
mod train;

pub use calibration::{coverage, nearest_rank, Calibration, CalibrationError, MIN_CALIBRATION_POINTS};
pub use lstm::{Lstm, LstmShape, Params};
pub use train::{mse, predict_many, train, Adam, EpochStats, TrainConfig, TrainError, TrainingCurve, MIN_TRAIN_WINDOWS};

use crate::featlab::{window_features, NormStats};
use crate::model::{ForecastResult, LabeledWindow, RackId, SensorReading, CHANNELS, WINDOW_LEN};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io;
use std::path::Path;
use thiserror::Error;

/// Horizons (hours) reported in every [`ForecastResult`].
pub const FORECAST_HORIZONS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

pub const CHECKPOINT_FORMAT: &str = "coolguard-lstm";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("window has {got} values, expected {expected}")]
    WindowShape { expected: usize, got: usize },
    #[error("need {WINDOW_LEN} readings for a window, got {0}")]
    TooFewReadings(usize),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("checkpoint io: {0}")]
    Io(#[from] io::Error),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// A trained model with its normalization and calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecaster {
    pub model: Lstm<f32>,
    pub norm: NormStats,
    pub calibration: Calibration,
    pub horizon_hours: f64,
}

/// Windows whose label is strictly inside `(0, horizon)`: the uncensored
/// pre-onset windows on which forecast error is meaningful.
pub fn uncensored(windows: &[LabeledWindow], horizon: f64) -> Vec<&LabeledWindow> {
    windows
        .iter()
        .filter(|w| w.time_to_leak > 0.0 && w.time_to_leak < horizon)
        .collect()
}

/// Error distribution of `model` on the uncensored validation windows.
pub fn calibrate(
    model: &Lstm<f32>,
    windows: &[LabeledWindow],
    horizon: f64,
) -> Result<Calibration, CalibrationError> {
    let pick = uncensored(windows, horizon);
    let inputs: Vec<&[f32]> = pick.iter().map(|w| w.features.as_slice()).collect();
    let truth: Vec<f64> = pick.iter().map(|w| w.time_to_leak).collect();
    Calibration::from_errors(&truth, &predict_many(model, &inputs))
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    dims: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    shape: LstmShape,
    parameter_count: usize,
    tensors: Vec<TensorInfo>,
    horizon_hours: f64,
    norm: NormStats,
    calibration: Calibration,
    weights: Vec<f32>,
}

impl Forecaster {
    pub fn predict_window(&self, features: &[f32]) -> Result<f64, ForecastError> {
        let expected = WINDOW_LEN * CHANNELS;
        if features.len() != expected {
            return Err(ForecastError::WindowShape {
                expected,
                got: features.len(),
            });
        }
        Ok(predict_many(&self.model, &[features])[0])
    }

    /// Point estimate from the last 60 raw readings.
    pub fn predict_readings(&self, readings: &[SensorReading]) -> Result<f64, ForecastError> {
        if readings.len() < WINDOW_LEN {
            return Err(ForecastError::TooFewReadings(readings.len()));
        }
        let tail = &readings[readings.len() - WINDOW_LEN..];
        self.predict_window(&window_features(tail, &self.norm))
    }

    pub fn result(&self, issued_at: i64, rack_id: RackId, estimate: f64) -> ForecastResult {
        ForecastResult {
            issued_at,
            rack_id,
            point_estimate: estimate,
            eps90: self.calibration.eps90,
            prob_within: FORECAST_HORIZONS
                .iter()
                .map(|&h| (h, self.calibration.prob_within(estimate, h)))
                .collect(),
        }
    }

    pub fn forecast(&self, readings: &[SensorReading]) -> Result<ForecastResult, ForecastError> {
        let estimate = self.predict_readings(readings)?;
        let last = readings.last().expect("length checked");
        Ok(self.result(last.timestamp, last.rack_id.clone(), estimate))
    }

    pub fn to_json(&self) -> Result<String, ForecastError> {
        let shape = self.model.shape();
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            shape,
            parameter_count: shape.parameter_count(),
            tensors: shape
                .tensors()
                .into_iter()
                .map(|(name, dims)| TensorInfo {
                    name: name.into(),
                    dims,
                })
                .collect(),
            horizon_hours: self.horizon_hours,
            norm: self.norm,
            calibration: self.calibration.clone(),
            weights: self.model.params.data.clone(),
        };
        Ok(serde_json::to_string(&ckpt)?)
    }

    pub fn from_json(text: &str) -> Result<Forecaster, ForecastError> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        let bad = |m: String| Err(ForecastError::Checkpoint(m));
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return bad(format!("unsupported format {} v{}", ckpt.format, ckpt.version));
        }
        let expected = ckpt.shape.parameter_count();
        if ckpt.parameter_count != expected || ckpt.weights.len() != expected {
            return bad(format!(
                "shape {:?} needs {expected} weights, manifest says {}, file has {}",
                ckpt.shape,
                ckpt.parameter_count,
                ckpt.weights.len()
            ));
        }
        let manifest: Vec<(String, Vec<usize>)> =
            ckpt.tensors.into_iter().map(|t| (t.name, t.dims)).collect();
        let derived: Vec<(String, Vec<usize>)> = ckpt
            .shape
            .tensors()
            .into_iter()
            .map(|(n, d)| (n.to_string(), d))
            .collect();
        if manifest != derived {
            return bad("tensor manifest does not match shape".into());
        }
        if ckpt.weights.iter().any(|w| !w.is_finite()) {
            return bad("non-finite weight".into());
        }
        Ok(Forecaster {
            model: Lstm::new(Params {
                shape: ckpt.shape,
                data: ckpt.weights,
            }),
            norm: ckpt.norm,
            calibration: ckpt.calibration,
            horizon_hours: ckpt.horizon_hours,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ForecastError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Forecaster, ForecastError> {
        Forecaster::from_json(&fs::read_to_string(path)?)
    }
}
