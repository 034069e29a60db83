use coolguard::alerting::{read_audit, AuditEntry};
use coolguard::detector::{ForestConfig, ForestModel};
use coolguard::forecaster::{Forecaster, LstmShape, TrainConfig};
use coolguard::pipeline::{fit_models, query_readings, replay, PipelineConfig, PipelineError, Service, TrainedModels};
use coolguard::simgen::{generate_dataset, SimConfig};
use coolguard::tstore::Store;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

fn small_config(dir: &Path) -> PipelineConfig {
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
    cfg.store_dir = dir.join("tstore");
    cfg.audit_path = dir.join("audit/alerts.jsonl");
    cfg
}

fn models() -> &'static TrainedModels {
    static MODELS: OnceLock<TrainedModels> = OnceLock::new();
    MODELS.get_or_init(|| {
        let cfg = small_config(Path::new("."));
        let sim = generate_dataset(&cfg.sim).unwrap();
        fit_models(&sim.readings, &sim.is_leaking, &cfg).unwrap().models
    })
}

#[test]
fn replay_is_deterministic_and_survives_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let sim = generate_dataset(&SimConfig { seed: 9, ..cfg.sim.clone() }).unwrap();
    let a = replay(&sim.readings, &sim.is_leaking, models(), &cfg).unwrap();
    let b = replay(&sim.readings, &sim.is_leaking, models(), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.detections.len(), sim.readings.len());
    assert_eq!(a.forecasts.len(), sim.readings.len() - 59);
    assert!(a.alerts.windows(2).all(|w| w[0].source_timestamp <= w[1].source_timestamp));

    models().forecaster.save(dir.path().join("f.json")).unwrap();
    models().detector.save(dir.path().join("d.json")).unwrap();
    let loaded = TrainedModels {
        forecaster: Forecaster::load(dir.path().join("f.json")).unwrap(),
        detector: ForestModel::load(dir.path().join("d.json")).unwrap(),
    };
    assert_eq!(replay(&sim.readings, &sim.is_leaking, &loaded, &cfg).unwrap(), a);
}

#[test]
fn replay_rejects_bad_input() {
    let cfg = small_config(Path::new("."));
    let sim = generate_dataset(&SimConfig { duration_minutes: 200, ..cfg.sim.clone() }).unwrap();
    let short = &sim.is_leaking[..10];
    assert!(matches!(
        replay(&sim.readings, short, models(), &cfg),
        Err(PipelineError::Input(_))
    ));
    let mut shuffled = sim.readings.clone();
    shuffled.swap(3, 4);
    assert!(matches!(
        replay(&shuffled, &sim.is_leaking, models(), &cfg),
        Err(PipelineError::Input(m)) if m.contains("row 4")
    ));
}

#[test]
fn live_service_stores_every_reading_and_audits_alerts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.speedup = 900.0;
    let rack = cfg.sim.rack_id.clone();
    let store_dir = cfg.store_dir.clone();
    let audit = cfg.audit_path.clone();
    let service = Service::start(cfg, models().clone(), Some(3 * 3600)).unwrap();
    let deadline = Instant::now() + Duration::from_secs(60);
    while service.simulated_now().is_none() {
        std::thread::sleep(Duration::from_millis(20));
    }
    service.inject_leak(1.0, 1, 30, Some(0)).unwrap();
    while !service.is_finished() {
        assert!(Instant::now() < deadline, "stream did not finish");
        std::thread::sleep(Duration::from_millis(50));
    }
    let m = service.shutdown();
    assert_eq!(m.simulator.emitted, 3 * 3600);
    assert_eq!(m.received, m.simulator.emitted);
    assert_eq!(m.detections, m.received);
    assert_eq!((m.malformed, m.publish_errors, m.store_errors), (0, 0, 0));
    // forecasts start once an hour of minutes is buffered
    assert_eq!(m.forecasts, 3 * 60 - 59);
    assert!(m.alerts > 0);

    let alerts = service.book().since(i64::MIN);
    drop(service);
    let fired = read_audit(&audit)
        .unwrap()
        .into_iter()
        .filter(|e| matches!(e, AuditEntry::Fired { .. }))
        .count();
    assert_eq!(fired, alerts.len());
    let store = Store::open(&store_dir).unwrap();
    assert_eq!(query_readings(&store, &rack, i64::MIN, i64::MAX).unwrap().len(), 3 * 3600);
}
