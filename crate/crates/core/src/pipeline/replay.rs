use super::fit::single_rack;
use super::{PipelineConfig, PipelineError, TrainedModels};
use crate::alerting::{AlertBook, AlertEngine, Clock, Input};
use crate::analytics::{
    evaluate_detector, evaluate_forecaster, explore, integrated_coverage, EvalReport, Firing,
    ForecastPoint,
};
use crate::featlab::{time_to_leak, window_features};
use crate::forecaster::predict_many;
use crate::model::{
    episodes_from_labels, AlertRecord, AlertRule, Dataset, DetectionResult, ForecastResult,
    SensorReading, NANOS_PER_MINUTE, WINDOW_LEN,
};
use rayon::prelude::*;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutput {
    pub report: EvalReport,
    pub alerts: Vec<AlertRecord>,
    pub forecasts: Vec<ForecastResult>,
    pub detections: Vec<DetectionResult>,
}

/// End indices of every complete run of `WINDOW_LEN` consecutive minutes.
fn window_ends(readings: &[SensorReading]) -> Vec<usize> {
    let mut run = 0usize;
    let mut ends = Vec::new();
    for i in 0..readings.len() {
        run = if i > 0 && readings[i].timestamp - readings[i - 1].timestamp == NANOS_PER_MINUTE {
            run + 1
        } else {
            1
        };
        if run >= WINDOW_LEN {
            ends.push(i);
        }
    }
    ends
}

/// Replays labeled minute readings through both models and the alert
/// engine on the source clock. Deterministic: identical input gives an
/// identical report.
pub fn replay(
    readings: &[SensorReading],
    is_leaking: &[bool],
    models: &TrainedModels,
    cfg: &PipelineConfig,
) -> Result<ReplayOutput, PipelineError> {
    let rack = single_rack(readings)?.clone();
    if readings.len() != is_leaking.len() {
        return Err(PipelineError::Input(format!(
            "{} readings but {} labels",
            readings.len(),
            is_leaking.len()
        )));
    }
    if let Some(i) = readings
        .windows(2)
        .position(|p| p[1].timestamp <= p[0].timestamp)
    {
        return Err(PipelineError::Input(format!("readings not time-ordered at row {}", i + 1)));
    }
    let fc = &models.forecaster;
    let episodes = episodes_from_labels(readings, is_leaking);

    let detections = readings
        .par_iter()
        .map(|r| models.detector.detect(r))
        .collect::<Result<Vec<_>, _>>()?;

    let ends = window_ends(readings);
    let features: Vec<Vec<f32>> = ends
        .par_iter()
        .map(|&i| window_features(&readings[i + 1 - WINDOW_LEN..=i], &fc.norm))
        .collect();
    let inputs: Vec<&[f32]> = features.iter().map(Vec::as_slice).collect();
    let estimates = predict_many(&fc.model, &inputs);
    let mut forecast_at: BTreeMap<usize, ForecastResult> = ends
        .iter()
        .zip(&estimates)
        .map(|(&i, &e)| (i, fc.result(readings[i].timestamp, rack.clone(), e)))
        .collect();

    let mut engine = AlertEngine::new(cfg.rules.clone(), Clock::Source, AlertBook::default())?;
    let mut alerts = Vec::new();
    let mut forecasts = Vec::with_capacity(forecast_at.len());
    for (i, r) in readings.iter().enumerate() {
        alerts.extend(engine.ingest(&Input::Reading(r.clone()))?);
        alerts.extend(engine.ingest(&Input::Detection(detections[i].clone()))?);
        if let Some(f) = forecast_at.remove(&i) {
            alerts.extend(engine.ingest(&Input::Forecast(f.clone()))?);
            forecasts.push(f);
        }
    }

    let h = cfg.horizon_hours;
    let points: Vec<ForecastPoint> = forecasts
        .iter()
        .map(|f| ForecastPoint {
            issued_at: f.issued_at,
            estimate: f.point_estimate,
            truth: time_to_leak(&episodes, f.issued_at, h),
        })
        .collect();
    let samples: Vec<(i64, bool, bool)> = readings
        .iter()
        .zip(is_leaking)
        .zip(&detections)
        .map(|((r, &t), d)| (r.timestamp, t, d.is_leak))
        .collect();
    let firing = |pick: &dyn Fn(AlertRule) -> bool| -> Vec<Firing> {
        alerts
            .iter()
            .filter(|a| pick(a.rule))
            .map(|a| Firing {
                rack_id: a.rack_id.clone(),
                at: a.source_timestamp,
            })
            .collect()
    };
    let ahead = firing(&|r| r == AlertRule::ForecastProbability);
    let realtime = firing(&|r| r != AlertRule::ForecastProbability);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for a in &alerts {
        *counts.entry(format!("{:?}", a.rule)).or_default() += 1;
    }

    let report = EvalReport {
        exploration: explore(readings, is_leaking).ok(),
        detector: Some(evaluate_detector(&samples, &episodes)),
        forecaster: (!points.is_empty())
            .then(|| evaluate_forecaster(&points, &fc.calibration, &episodes, h)),
        integrated: Some(integrated_coverage(&ahead, &realtime, &episodes, &cfg.coverage)),
        alert_counts: counts.into_iter().collect(),
        ..EvalReport::default()
    };
    Ok(ReplayOutput {
        report,
        alerts,
        forecasts,
        detections,
    })
}

/// Replays a dataset using its `is_leaking` column as ground truth.
pub fn replay_dataset(
    dataset: &Dataset,
    models: &TrainedModels,
    cfg: &PipelineConfig,
) -> Result<ReplayOutput, PipelineError> {
    if dataset.rows.is_empty() {
        return Err(PipelineError::Input("dataset has no rows".into()));
    }
    let readings: Vec<SensorReading> = dataset.rows.iter().map(|r| r.reading.clone()).collect();
    let labels: Vec<bool> = dataset.rows.iter().map(|r| r.is_leaking).collect();
    replay(&readings, &labels, models, cfg)
}
