use crate::{api, tables};
use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use coolguard::analytics::EvalReport;
use coolguard::detector::ForestModel;
use coolguard::forecaster::Forecaster;
use coolguard::model::{read_dataset, serialize_reading, write_dataset, Dataset};
use coolguard::pipeline::{
    fit_models, replay_dataset, study_detector, PipelineConfig, PipelineError, Service,
    TrainedModels,
};
use coolguard::simgen::{self, generate_dataset, StreamOptions, DEFAULT_BUFFER};
use coolguard::stream::{Broker, BrokerConfig, Qos, RecvError, TELEMETRY_FILTER};
use coolguard::NANOS_PER_MINUTE;
use log::info;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "coolguard", version, about = "Coolant-leak forecasting and detection pipeline")]
pub struct Cli {
    /// Pipeline config (JSON); missing fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled telemetry dataset, or stream it live with --publish.
    Simulate(SimulateArgs),
    /// Train the forecaster and detector and write their checkpoints.
    Train(TrainArgs),
    /// Replay a dataset and run the detector study; writes JSON plus CSV tables.
    Evaluate(EvaluateArgs),
    /// Run the live pipeline and the HTTP/WebSocket API.
    Serve(ServeArgs),
    /// Replay a dataset through the inference path at full speed.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub days: Option<f64>,
    /// Dataset path; with --publish, where line-format readings go (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub speedup: Option<f64>,
    /// Stream readings through the broker in real time instead of writing a file.
    #[arg(long)]
    pub publish: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Also write the held-out test-day report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Report path (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for the CSV tables.
    #[arg(long)]
    pub tables: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Stop after this many simulated seconds.
    #[arg(long)]
    pub max_seconds: Option<u64>,
    /// Report served at /api/v1/report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub speedup: Option<f64>,
    #[arg(long)]
    pub bind: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) | PipelineError::Input(_) | PipelineError::Dataset(_) => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Runtime(other.into()),
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Simulate(a) => simulate(&mut cfg, a),
        Command::Train(a) => train(&cfg, a),
        Command::Evaluate(a) => evaluate(&cfg, a),
        Command::Serve(a) => serve(&mut cfg, a),
        Command::Replay(a) => replay(&cfg, a),
    }
}

fn create_parent(path: &Path) -> io::Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => std::fs::create_dir_all(d),
        _ => Ok(()),
    }
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            create_parent(p)?;
            Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            ))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_report(path: Option<&Path>, report: &EvalReport) -> anyhow::Result<()> {
    let mut out = output(path)?;
    serde_json::to_writer_pretty(&mut out, report)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    let file = File::open(path).map_err(|e| {
        invalid(format!(
            "cannot open dataset {}: {e}; generate one with `coolguard simulate`",
            path.display()
        ))
    })?;
    read_dataset(BufReader::new(file)).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// Both checkpoints named in the config, or a message saying how to make them.
pub fn load_models(cfg: &PipelineConfig) -> Result<TrainedModels, CliError> {
    let hint = "run `coolguard train` with the same --config first";
    let forecaster = Forecaster::load(&cfg.forecaster_path).map_err(|e| {
        invalid(format!(
            "cannot load forecaster checkpoint {}: {e}; {hint}",
            cfg.forecaster_path.display()
        ))
    })?;
    let detector = ForestModel::load(&cfg.detector_path).map_err(|e| {
        invalid(format!(
            "cannot load detector model {}: {e}; {hint}",
            cfg.detector_path.display()
        ))
    })?;
    Ok(TrainedModels {
        forecaster,
        detector,
    })
}

fn simulate(cfg: &mut PipelineConfig, a: SimulateArgs) -> Result<(), CliError> {
    if let Some(seed) = a.seed {
        cfg.sim.seed = seed;
    }
    if let Some(days) = a.days {
        if !(days > 0.0) {
            return Err(invalid(format!("--days must be positive, got {days}")));
        }
        cfg.sim.duration_minutes = (days * 1440.0).round() as u32;
    }
    if let Some(s) = a.speedup {
        cfg.speedup = s;
    }
    cfg.validate()?;
    if a.publish {
        return publish(cfg, a.out.as_deref());
    }
    if a.speedup.is_some() {
        return Err(invalid("--speedup only applies with --publish"));
    }
    let sim = generate_dataset(&cfg.sim).map_err(|e| invalid(e.to_string()))?;
    let path = a.out.unwrap_or_else(|| cfg.dataset_path.clone());
    let mut out = output(Some(&path))?;
    write_dataset(&mut out, &sim.to_dataset(cfg.horizon_hours)).context("writing dataset")?;
    info!(
        "wrote {} readings ({} leaking, {} episodes) to {}",
        sim.readings.len(),
        sim.leaking_minutes(),
        sim.events.len(),
        path.display()
    );
    Ok(())
}

/// Streams the simulator through the in-process broker at the configured
/// speedup and prints what a subscriber receives.
fn publish(cfg: &PipelineConfig, out: Option<&Path>) -> Result<(), CliError> {
    let broker = Broker::start(BrokerConfig::default());
    let sub = broker.subscribe(TELEMETRY_FILTER).context("subscribing")?;
    #[cfg(feature = "mqtt-bridge")]
    let _bridge = coolguard::stream::bridge::MqttBridge::from_env(&broker).context("mqtt bridge")?;
    let publisher = broker.publisher();
    let handle = simgen::stream(
        cfg.sim.clone(),
        StreamOptions {
            speedup: cfg.speedup,
            buffer_capacity: DEFAULT_BUFFER,
            max_seconds: Some(u64::from(cfg.sim.duration_minutes) * 60),
            natural_leaks: true,
        },
        move |r| {
            if let Err(e) = publisher.publish_reading(&r, Qos::AtLeastOnce) {
                log::warn!("publish failed: {e}");
            }
        },
    )
    .map_err(|e| invalid(e.to_string()))?;
    let mut sink = output(out)?;
    loop {
        match sub.recv_timeout(Duration::from_millis(100)) {
            Ok(d) => {
                d.ack();
                if let Ok(r) = d.envelope.reading() {
                    writeln!(sink, "{}", serialize_reading(&r)).context("writing reading")?;
                }
            }
            Err(RecvError::Timeout) if handle.is_finished() && broker.inflight() == 0 => break,
            Err(RecvError::Timeout) => {}
            Err(RecvError::Closed) => break,
        }
    }
    sink.flush().context("flushing output")?;
    let stats = handle.join();
    broker.shutdown();
    info!("emitted {} readings, dropped {}", stats.emitted, stats.dropped);
    Ok(())
}

fn split_rows(ds: &Dataset) -> (Vec<coolguard::SensorReading>, Vec<bool>) {
    ds.rows.iter().map(|r| (r.reading.clone(), r.is_leaking)).unzip()
}

fn train(cfg: &PipelineConfig, a: TrainArgs) -> Result<(), CliError> {
    let path = a.data.unwrap_or_else(|| cfg.dataset_path.clone());
    let ds = load_dataset(&path)?;
    let (readings, labels) = split_rows(&ds);
    let out = fit_models(&readings, &labels, cfg)?;
    for p in [&cfg.forecaster_path, &cfg.detector_path] {
        create_parent(p).with_context(|| format!("creating directory for {}", p.display()))?;
    }
    out.models
        .forecaster
        .save(&cfg.forecaster_path)
        .context("saving forecaster")?;
    out.models
        .detector
        .save(&cfg.detector_path)
        .context("saving detector")?;
    let curve_path = cfg.forecaster_path.with_extension("curve.json");
    std::fs::write(&curve_path, serde_json::to_string_pretty(&out.curve).context("curve")?)
        .context("writing training curve")?;
    info!(
        "saved {} and {}; test day starts after {}",
        cfg.forecaster_path.display(),
        cfg.detector_path.display(),
        out.test_after / NANOS_PER_MINUTE
    );
    write_report(a.report.as_deref(), &out.report)?;
    Ok(())
}

fn evaluate(cfg: &PipelineConfig, a: EvaluateArgs) -> Result<(), CliError> {
    let models = load_models(cfg)?;
    let path = a.data.unwrap_or_else(|| cfg.dataset_path.clone());
    let ds = load_dataset(&path)?;
    let mut report = replay_dataset(&ds, &models, cfg)?.report;
    let (readings, labels) = split_rows(&ds);
    report.study = Some(study_detector(&readings, &labels, cfg)?);
    write_report(a.out.as_deref(), &report)?;
    if let Some(dir) = a.tables {
        let names = tables::write_tables(&dir, &report).context("writing tables")?;
        info!("wrote {} to {}", names.join(", "), dir.display());
    }
    Ok(())
}

fn replay(cfg: &PipelineConfig, a: ReplayArgs) -> Result<(), CliError> {
    let models = load_models(cfg)?;
    let ds = load_dataset(&a.data)?;
    let out = replay_dataset(&ds, &models, cfg)?;
    write_report(a.out.as_deref(), &out.report)?;
    Ok(())
}

fn serve(cfg: &mut PipelineConfig, a: ServeArgs) -> Result<(), CliError> {
    if let Some(s) = a.speedup {
        cfg.speedup = s;
    }
    if let Some(b) = a.bind {
        cfg.bind = b;
    }
    cfg.validate()?;
    let models = load_models(cfg)?;
    let report = match &a.report {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| invalid(format!("cannot read report {}: {e}", p.display())))?;
            Some(
                serde_json::from_str::<EvalReport>(&text)
                    .map_err(|e| invalid(format!("{}: {e}", p.display())))?,
            )
        }
        None => None,
    };
    let runtime = tokio::runtime::Runtime::new().context("starting async runtime")?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&cfg.bind)
            .await
            .with_context(|| format!("binding {}", cfg.bind))?;
        let service = Arc::new(Service::start(cfg.clone(), models, a.max_seconds)?);
        if let Some(r) = report {
            service.set_report(r);
        }
        info!("serving on http://{}{}", listener.local_addr().context("local address")?, api::API_PREFIX);
        let app = api::router(service.clone());
        let watcher = service.clone();
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let finished = async {
                    while !watcher.is_finished() {
                        tokio::time::sleep(Duration::from_millis(200)).await;
                    }
                };
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => info!("interrupted"),
                    _ = finished => info!("simulation finished"),
                }
            })
            .await
            .context("http server")?;
        let snapshot = service.shutdown();
        println!("{}", serde_json::to_string_pretty(&snapshot).context("metrics")?);
        Ok::<(), CliError>(())
    })
}
