//! JSON over HTTP plus one WebSocket event stream, all under `/api/v1`.

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use coolguard::alerting::AlertError;
use coolguard::pipeline::{query_readings, BusSubscriber, PipelineError, Service};
use coolguard::simgen::InjectError;
use coolguard::{RackId, NANOS_PER_HOUR};
use serde::Deserialize;
use serde_json::json;
use std::sync::Arc;
use std::time::Duration;

pub const API_PREFIX: &str = "/api/v1";

/// How often a WebSocket client's buffer is drained.
const PUSH_INTERVAL: Duration = Duration::from_millis(20);

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(service: Arc<Service>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/readings", get(readings))
        .route("/forecast/latest", get(latest_forecast))
        .route("/alerts", get(alerts))
        .route("/alerts/{id}/ack", post(acknowledge))
        .route("/scenario/leak", post(inject_leak))
        .route("/report", get(report))
        .route("/metrics", get(metrics))
        .route("/stream", get(stream));
    Router::new().nest(API_PREFIX, api).with_state(service)
}

fn rack_or_default(service: &Service, rack: Option<String>) -> Result<RackId, ApiError> {
    let rack = rack.map_or_else(|| service.config().sim.rack_id.clone(), RackId::new);
    if rack.is_valid() {
        Ok(rack)
    } else {
        Err(ApiError::new(StatusCode::BAD_REQUEST, format!("invalid rack id {rack:?}")))
    }
}

async fn health(State(s): State<Arc<Service>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "simulated_now": s.simulated_now(),
        "finished": s.is_finished(),
    }))
}

#[derive(Debug, Deserialize)]
pub struct ReadingsQuery {
    pub rack: Option<String>,
    pub from: Option<i64>,
    pub to: Option<i64>,
}

/// Readings with `from <= timestamp < to`; without `from`, the hour before `to`
/// (or before the newest reading).
async fn readings(
    State(s): State<Arc<Service>>,
    Query(q): Query<ReadingsQuery>,
) -> ApiResult<Vec<coolguard::SensorReading>> {
    let rack = rack_or_default(&s, q.rack)?;
    let to = q.to.unwrap_or(i64::MAX);
    let from = match q.from {
        Some(f) => f,
        None => {
            let newest = s
                .store()
                .latest(&coolguard::tstore::SeriesKey::for_rack("pressure", &rack))
                .map_or(0, |p| p.0);
            newest.min(to).saturating_sub(NANOS_PER_HOUR - 1)
        }
    };
    if from > to {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("from {from} is after to {to}"),
        ));
    }
    query_readings(s.store(), &rack, from, to)
        .map(Json)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

#[derive(Debug, Deserialize)]
pub struct RackQuery {
    pub rack: Option<String>,
}

async fn latest_forecast(
    State(s): State<Arc<Service>>,
    Query(q): Query<RackQuery>,
) -> ApiResult<coolguard::ForecastResult> {
    let rack = rack_or_default(&s, q.rack)?;
    s.latest_forecast(&rack).map(Json).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            format!("no forecast for {rack} yet; the first needs 60 minutes of readings"),
        )
    })
}

#[derive(Debug, Deserialize)]
pub struct SinceQuery {
    pub since: Option<i64>,
}

async fn alerts(
    State(s): State<Arc<Service>>,
    Query(q): Query<SinceQuery>,
) -> Json<Vec<coolguard::AlertRecord>> {
    Json(s.book().since(q.since.unwrap_or(i64::MIN)))
}

async fn acknowledge(
    State(s): State<Arc<Service>>,
    Path(id): Path<u64>,
) -> ApiResult<coolguard::AlertRecord> {
    s.acknowledge(id).map(Json).map_err(|e| match e {
        PipelineError::Alert(AlertError::UnknownId(_)) => {
            ApiError::new(StatusCode::NOT_FOUND, e.to_string())
        }
        other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeakRequest {
    pub severity: f64,
    pub ramp_minutes: u32,
    pub duration_minutes: u32,
    /// Degradation drift before onset; defaults to the simulator's precursor.
    #[serde(default)]
    pub lead_minutes: Option<u32>,
}

async fn inject_leak(
    State(s): State<Arc<Service>>,
    Json(req): Json<LeakRequest>,
) -> Result<(StatusCode, Json<coolguard::LeakEvent>), ApiError> {
    match s.inject_leak(req.severity, req.ramp_minutes, req.duration_minutes, req.lead_minutes) {
        Ok(event) => Ok((StatusCode::CREATED, Json(event))),
        Err(e) => {
            let status = match e {
                InjectError::Overlap { .. } => StatusCode::CONFLICT,
                InjectError::Severity(_) | InjectError::Timing { .. } => StatusCode::BAD_REQUEST,
                InjectError::Stopped => StatusCode::SERVICE_UNAVAILABLE,
            };
            Err(ApiError::new(status, e.to_string()))
        }
    }
}

async fn report(State(s): State<Arc<Service>>) -> ApiResult<coolguard::analytics::EvalReport> {
    s.report().map(Json).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "no report loaded; start serve with --report FILE",
        )
    })
}

async fn metrics(State(s): State<Arc<Service>>) -> Json<coolguard::pipeline::MetricsSnapshot> {
    Json(s.metrics())
}

async fn stream(ws: WebSocketUpgrade, State(s): State<Arc<Service>>) -> Response {
    let sub = s.bus().subscribe();
    ws.on_upgrade(move |socket| pump(socket, sub))
}

/// Forwards bus events as JSON text frames until the client goes away. A
/// slow client only loses its own oldest events.
async fn pump(mut socket: WebSocket, sub: BusSubscriber) {
    let mut tick = tokio::time::interval(PUSH_INTERVAL);
    loop {
        tokio::select! {
            msg = socket.recv() => match msg {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => return,
                Some(Ok(_)) => {}
            },
            _ = tick.tick() => {
                while let Some(event) = sub.try_recv() {
                    let Ok(text) = serde_json::to_string(&*event) else { continue };
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        return;
                    }
                }
            }
        }
    }
}
