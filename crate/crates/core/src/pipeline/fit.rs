use super::{PipelineConfig, PipelineError};
use crate::analytics::{
    evaluate_detector, evaluate_forecaster, explore, Ablation, DetectorStudy, EvalReport,
    ForecastPoint,
};
use crate::detector::{self, ablate, cross_validate, ForestModel};
use crate::featlab::{fit_norm, make_windows, partition, readings_before, NormStats};
use crate::forecaster::{self, calibrate, predict_many, Forecaster, TrainingCurve};
use crate::model::{episodes_from_labels, Channel, Episode, RackId, SensorReading, NANOS_PER_MINUTE};
use log::info;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    pub forecaster: Forecaster,
    pub detector: ForestModel,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub models: TrainedModels,
    pub curve: TrainingCurve,
    /// Readings after this timestamp form the test day.
    pub test_after: i64,
    /// Scores on the held-out test day.
    pub report: EvalReport,
}

/// The rack shared by every reading, or an error for empty or mixed input.
pub fn single_rack(readings: &[SensorReading]) -> Result<&RackId, PipelineError> {
    let first = readings
        .first()
        .ok_or_else(|| PipelineError::Input("no readings".into()))?;
    match readings.iter().find(|r| r.rack_id != first.rack_id) {
        Some(other) => Err(PipelineError::Input(format!(
            "expected one rack, found {} and {}",
            first.rack_id, other.rack_id
        ))),
        None => Ok(&first.rack_id),
    }
}

fn check_labels(readings: &[SensorReading], is_leaking: &[bool]) -> Result<(), PipelineError> {
    if readings.len() != is_leaking.len() {
        return Err(PipelineError::Input(format!(
            "{} readings but {} labels",
            readings.len(),
            is_leaking.len()
        )));
    }
    single_rack(readings).map(|_| ())
}

/// Trains the forecaster on the chronological train split, calibrates it on
/// validation and fits the forest on everything before the test day.
pub fn fit_models(
    readings: &[SensorReading],
    is_leaking: &[bool],
    cfg: &PipelineConfig,
) -> Result<FitOutput, PipelineError> {
    check_labels(readings, is_leaking)?;
    let episodes = episodes_from_labels(readings, is_leaking);
    let h = cfg.horizon_hours;

    // Window end times do not depend on scaling, so a unit pass finds the
    // last training timestamp before the real statistics are fitted.
    let unit = NormStats {
        mean: [0.0; 4],
        stddev: [1.0; 4],
    };
    let probe = partition(
        &make_windows(readings, &episodes, &unit, h)?.windows,
        cfg.train_fraction,
        cfg.holdout_minutes,
    )?;
    let train_end = probe.train.last().map(|w| w.end_timestamp).unwrap_or(i64::MIN);
    let test_after = probe.test[0].end_timestamp - NANOS_PER_MINUTE;
    drop(probe);

    let norm = fit_norm(readings_before(readings, train_end))?;
    let parts = partition(
        &make_windows(readings, &episodes, &norm, h)?.windows,
        cfg.train_fraction,
        cfg.holdout_minutes,
    )?;
    info!(
        "windows: {} train, {} validation, {} test",
        parts.train.len(),
        parts.validation.len(),
        parts.test.len()
    );
    let (model, curve) = forecaster::train(&parts.train, &parts.validation, &cfg.train)?;
    info!(
        "forecaster: {} epochs in {:.1} s, best validation MSE {:.4}",
        curve.epochs.len(),
        curve.epochs.iter().map(|e| e.seconds).sum::<f64>(),
        curve.best_val_mse
    );
    let calibration = calibrate(&model, &parts.validation, h)?;
    let forecaster = Forecaster {
        model,
        norm,
        calibration,
        horizon_hours: h,
    };

    let fit_rows = readings_before(readings, test_after).len();
    let (x, y) = detector::training_set(&readings[..fit_rows], &is_leaking[..fit_rows]);
    let forest = detector::fit(&x, &y, &cfg.forest)?;
    info!("detector: {} trees, train F1 {:.3}", forest.trees.len(), forest.train_scores.f1);

    let inputs: Vec<&[f32]> = parts.test.iter().map(|w| w.features.as_slice()).collect();
    let points: Vec<ForecastPoint> = parts
        .test
        .iter()
        .zip(predict_many(&forecaster.model, &inputs))
        .map(|(w, estimate)| ForecastPoint {
            issued_at: w.end_timestamp,
            estimate,
            truth: w.time_to_leak,
        })
        .collect();
    let test_rows = &readings[fit_rows..];
    let samples: Vec<(i64, bool, bool)> = test_rows
        .iter()
        .zip(&is_leaking[fit_rows..])
        .zip(forest.predict_many(&x_of(test_rows)))
        .map(|((r, &t), p)| (r.timestamp, t, p))
        .collect();
    let test_episodes: Vec<Episode> = episodes
        .iter()
        .filter(|e| e.onset > test_after)
        .cloned()
        .collect();
    let report = EvalReport {
        exploration: explore(readings, is_leaking).ok(),
        detector: Some(evaluate_detector(&samples, &test_episodes)),
        forecaster: Some(evaluate_forecaster(
            &points,
            &forecaster.calibration,
            &test_episodes,
            h,
        )),
        ..EvalReport::default()
    };
    Ok(FitOutput {
        models: TrainedModels {
            forecaster,
            detector: forest,
        },
        curve,
        test_after,
        report,
    })
}

fn x_of(readings: &[SensorReading]) -> Vec<[f64; 4]> {
    readings.iter().map(SensorReading::channels).collect()
}

/// Channel subsets whose cross-validated F1 the study reports.
const ABLATIONS: [&[Channel]; 2] = [
    &[Channel::Pressure, Channel::Humidity],
    &[Channel::Pressure, Channel::Flow, Channel::Humidity],
];

/// K-fold cross-validation, importances of a forest fitted on all rows and
/// the channel ablations.
pub fn study_detector(
    readings: &[SensorReading],
    is_leaking: &[bool],
    cfg: &PipelineConfig,
) -> Result<DetectorStudy, PipelineError> {
    check_labels(readings, is_leaking)?;
    let (x, y) = detector::training_set(readings, is_leaking);
    let k = cfg.cv_folds;
    let cv = cross_validate(&x, &y, &cfg.forest, k)?;
    let full = detector::fit(&x, &y, &cfg.forest)?;
    let ablations = ABLATIONS
        .iter()
        .map(|chs| {
            let idx: Vec<usize> = chs.iter().map(|c| c.index()).collect();
            Ok(Ablation {
                channels: chs.to_vec(),
                f1: ablate(&x, &y, &idx, &cfg.forest, k)?,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(DetectorStudy {
        folds: k,
        cv: cv.pooled,
        cv_scores: cv.pooled.scores(),
        importances: Channel::ALL
            .iter()
            .map(|&c| (c, full.importances[c.index()]))
            .collect(),
        ablations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reading(rack: &str, minute: i64) -> SensorReading {
        SensorReading::with_channels(minute * NANOS_PER_MINUTE, RackId::new(rack), [2.0, 30.0, 50.0, 25.0])
    }

    #[test]
    fn single_rack_rejects_mixed_and_empty() {
        assert!(single_rack(&[]).is_err());
        let mixed = [reading("R01", 0), reading("R02", 1)];
        assert!(matches!(single_rack(&mixed), Err(PipelineError::Input(_))));
        let one = [reading("R01", 0), reading("R01", 1)];
        assert_eq!(single_rack(&one).unwrap().as_str(), "R01");
    }

    #[test]
    fn label_length_mismatch_is_input_error() {
        let rows = [reading("R01", 0), reading("R01", 1)];
        let cfg = PipelineConfig::default();
        assert!(matches!(
            fit_models(&rows, &[false], &cfg),
            Err(PipelineError::Input(_))
        ));
    }
}
