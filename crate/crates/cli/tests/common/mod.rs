#![allow(dead_code)]

use coolguard::detector::ForestConfig;
use coolguard::forecaster::{LstmShape, TrainConfig};
use coolguard::pipeline::{fit_models, PipelineConfig, TrainedModels};
use coolguard::simgen::generate_dataset;
use std::path::Path;

/// Three simulated days and small models so training takes seconds.
pub fn tiny_config(dir: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.sim.duration_minutes = 3 * 1440;
    cfg.holdout_minutes = 720;
    cfg.train = TrainConfig {
        shape: LstmShape {
            input: 4,
            hidden1: 8,
            hidden2: 8,
        },
        max_epochs: 2,
        ..TrainConfig::default()
    };
    cfg.forest = ForestConfig {
        n_trees: 10,
        ..ForestConfig::default()
    };
    cfg.dataset_path = dir.join("data/telemetry.csv");
    cfg.forecaster_path = dir.join("models/forecaster.json");
    cfg.detector_path = dir.join("models/detector.json");
    cfg.store_dir = dir.join("tstore");
    cfg.audit_path = dir.join("alerts.jsonl");
    cfg.bind = "127.0.0.1:0".into();
    cfg
}

pub fn tiny_models(cfg: &PipelineConfig) -> TrainedModels {
    let sim = generate_dataset(&cfg.sim).unwrap();
    fit_models(&sim.readings, &sim.is_leaking, cfg).unwrap().models
}

pub fn save_models(cfg: &PipelineConfig, models: &TrainedModels) {
    std::fs::create_dir_all(cfg.forecaster_path.parent().unwrap()).unwrap();
    models.forecaster.save(&cfg.forecaster_path).unwrap();
    models.detector.save(&cfg.detector_path).unwrap();
}

pub fn write_config(dir: &Path, cfg: &PipelineConfig) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}
