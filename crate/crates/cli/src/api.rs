//! Control and telemetry HTTP API.

use std::collections::VecDeque;
use std::convert::Infallible;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use micromano::hag::{HagError, Policy};
use micromano::mano::{ManoError, PlacementConstraints};
use micromano::sdn::{MeasureConfig, SdnError};
use micromano::sim::{ms, SimTime};
use micromano::telemetry::{Aggregation, AuthStatus, Metric, MetricSample, RejectedSample, TelemetryError};
use micromano::world::{FeedEvent, WorldError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::engine::{Engine, Stopped};

pub const SECRET_HEADER: &str = "x-micromano-secret";

#[derive(Clone)]
struct AppState {
    engine: Engine,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    extra: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            extra: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn auth(status: AuthStatus) -> Self {
        let reason = match status {
            AuthStatus::Ok => "ok",
            AuthStatus::Expired => "expired",
            AuthStatus::Unknown => "unknown",
        };
        Self {
            extra: Some(json!({ "auth": reason })),
            ..Self::new(StatusCode::UNAUTHORIZED, "auth_required", format!("token {reason}"))
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "message": self.message });
        if let (Some(Value::Object(extra)), Value::Object(b)) = (self.extra, &mut body) {
            b.extend(extra);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<Stopped> for ApiError {
    fn from(e: Stopped) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "stopped", e.to_string())
    }
}

impl From<WorldError> for ApiError {
    fn from(e: WorldError) -> Self {
        use StatusCode as S;
        let msg = e.to_string();
        let (status, code) = match &e {
            WorldError::Mano(m) => match m {
                ManoError::UnknownNsd(_) | ManoError::UnknownInstance(_) => (S::NOT_FOUND, "not_found"),
                ManoError::Infeasible(_) => (S::CONFLICT, "infeasible"),
                ManoError::InvalidState { .. } => (S::CONFLICT, "invalid_state"),
                ManoError::InvalidRequest(_) => (S::BAD_REQUEST, "bad_request"),
                _ => (S::CONFLICT, "orchestration_failed"),
            },
            WorldError::Sdn(SdnError::UnknownLink(_)) => (S::NOT_FOUND, "not_found"),
            WorldError::Sdn(_) => (S::CONFLICT, "sdn_error"),
            WorldError::Hag(HagError::UnknownPath(_)) => (S::NOT_FOUND, "not_found"),
            WorldError::Hag(HagError::InvalidConfig(_)) => (S::BAD_REQUEST, "bad_request"),
            WorldError::Hag(_) => (S::CONFLICT, "hag_error"),
            WorldError::Telemetry(TelemetryError::AuthRequired(s)) => return ApiError::auth(*s),
            WorldError::Telemetry(TelemetryError::EmptyRange) => (S::NOT_FOUND, "empty_range"),
            WorldError::Telemetry(_) => (S::BAD_REQUEST, "bad_request"),
            WorldError::UnknownPath(_) | WorldError::UnknownSession(_) | WorldError::UnknownCollector(_) => {
                (S::NOT_FOUND, "not_found")
            }
            WorldError::NotDeployed(_) => (S::CONFLICT, "not_deployed"),
            WorldError::Duplicate(_) => (S::CONFLICT, "duplicate"),
            WorldError::InvalidRequest(_) => (S::BAD_REQUEST, "bad_request"),
        };
        ApiError::new(status, code, msg)
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// `Json` with rejections rendered as JSON errors.
pub struct Body<T>(pub T);

impl<S, T> FromRequest<S> for Body<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e @ JsonRejection::MissingJsonContentType(_)) => Err(ApiError::new(
                StatusCode::UNSUPPORTED_MEDIA_TYPE,
                "unsupported_media_type",
                e.body_text(),
            )),
            Err(e) => Err(ApiError::bad_request(e.body_text())),
        }
    }
}

pub fn router(engine: Engine, secret: Option<String>) -> Router {
    let app = Router::new()
        .route("/clock", get(clock).post(set_clock))
        .route("/catalog", get(catalog))
        .route("/topology", get(topology))
        .route("/snapshot", get(snapshot))
        .route("/ns", get(list_ns).post(create_ns))
        .route("/ns/{id}", get(get_ns).delete(delete_ns))
        .route("/ns/{id}/scale", post(scale_ns))
        .route("/ns/{id}/migrate", post(migrate_ns))
        .route("/sdn/paths/{id}/measure", get(measure))
        .route("/sdn/links/{id}/{dir}", post(set_link))
        .route("/telemetry/signup", post(signup))
        .route("/telemetry/ingest", post(ingest))
        .route("/telemetry/query", get(query))
        .route("/telemetry/collectors", get(collectors))
        .route("/telemetry/collectors/{id}/crash", post(crash_collector))
        .route("/hag/sessions", get(list_sessions).post(open_session))
        .route("/hag/sessions/{id}/send", post(hag_send))
        .route("/hag/sessions/{id}/path/{pid}/{dir}", post(hag_path))
        .route("/hag/sessions/{id}/stats", get(hag_stats))
        .route("/events/stream", get(events))
        .with_state(AppState { engine });
    match secret {
        Some(s) => app.layer(middleware::from_fn_with_state(s, require_secret)),
        None => app,
    }
}

async fn require_secret(State(secret): State<String>, req: Request, next: Next) -> Response {
    let given = req.headers().get(SECRET_HEADER).and_then(|v| v.to_str().ok());
    if given == Some(secret.as_str()) {
        next.run(req).await
    } else {
        ApiError::new(StatusCode::FORBIDDEN, "forbidden", format!("missing or wrong {SECRET_HEADER}")).into_response()
    }
}

fn up_down(dir: &str) -> ApiResult<bool> {
    match dir {
        "up" => Ok(true),
        "down" => Ok(false),
        other => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("expected up or down, got {other:?}"),
        )),
    }
}

fn bearer(headers: &HeaderMap) -> Option<String> {
    let raw = headers.get(header::AUTHORIZATION)?.to_str().ok()?.trim();
    Some(raw.strip_prefix("Bearer ").unwrap_or(raw).trim().to_string())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClockRequest {
    paused: Option<bool>,
    pace: Option<f64>,
    advance_ms: Option<u64>,
}

async fn clock(State(s): State<AppState>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.engine.call(|sim| sim.clock()).await?))
}

async fn set_clock(State(s): State<AppState>, Body(req): Body<ClockRequest>) -> ApiResult<impl IntoResponse> {
    if req.pace.is_some_and(|p| !p.is_finite() || p < 0.0) {
        return Err(ApiError::bad_request("pace must be a finite non-negative number"));
    }
    let state = s
        .engine
        .call(move |sim| {
            if let Some(p) = req.pace {
                sim.set_pace(p);
            }
            if let Some(p) = req.paused {
                sim.set_paused(p);
            }
            if let Some(d) = req.advance_ms {
                sim.advance(ms(d));
            }
            sim.clock()
        })
        .await?;
    Ok(Json(state))
}

async fn catalog(State(s): State<AppState>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.engine.call(|sim| sim.world.mano().catalogue().list_services()).await?))
}

async fn snapshot(State(s): State<AppState>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.engine.call(|sim| sim.world.snapshot()).await?))
}

async fn topology(State(s): State<AppState>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.engine.call(|sim| sim.world.topology()).await?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateNs {
    nsd: String,
    #[serde(default)]
    alias: Option<String>,
    #[serde(default)]
    constraints: PlacementConstraints,
}

async fn list_ns(State(s): State<AppState>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.engine.call(|sim| sim.world.instance_states()).await?))
}

async fn create_ns(State(s): State<AppState>, Body(req): Body<CreateNs>) -> ApiResult<impl IntoResponse> {
    let view = s
        .engine
        .call(move |sim| {
            let id = sim.world.instantiate(&req.nsd, &req.constraints, req.alias.as_deref())?;
            sim.world.ns_view(&id)
        })
        .await??;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_ns(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.engine.call(move |sim| sim.world.ns_view(&id)).await??))
}

async fn delete_ns(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let state = s.engine.call(move |sim| sim.world.terminate(&id)).await??;
    Ok((StatusCode::ACCEPTED, Json(json!({ "state": state }))))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScaleNs {
    vnf: String,
    delta: i32,
}

async fn scale_ns(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Body(req): Body<ScaleNs>,
) -> ApiResult<impl IntoResponse> {
    let view = s
        .engine
        .call(move |sim| {
            sim.world.scale(&id, &req.vnf, req.delta)?;
            sim.world.ns_view(&id)
        })
        .await??;
    Ok((StatusCode::ACCEPTED, Json(view)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MigrateNs {
    vnf: String,
    to: String,
}

async fn migrate_ns(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Body(req): Body<MigrateNs>,
) -> ApiResult<impl IntoResponse> {
    let view = s
        .engine
        .call(move |sim| {
            sim.world.migrate(&id, &req.vnf, &req.to)?;
            sim.world.ns_view(&id)
        })
        .await??;
    Ok((StatusCode::ACCEPTED, Json(view)))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasureQuery {
    probes: Option<u32>,
    burst_us: Option<u64>,
}

async fn measure(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<MeasureQuery>,
) -> ApiResult<impl IntoResponse> {
    let mut cfg = MeasureConfig::default();
    if let Some(p) = q.probes {
        cfg.probes = p.clamp(1, 1000);
    }
    if let Some(b) = q.burst_us {
        cfg.burst_us = b.min(1_000_000);
    }
    Ok(Json(s.engine.call(move |sim| sim.world.measure(&id, &cfg)).await??))
}

async fn set_link(
    State(s): State<AppState>,
    Path((id, dir)): Path<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    let up = up_down(&dir)?;
    let link = id.clone();
    s.engine.call(move |sim| sim.world.set_link(&id, up)).await??;
    Ok(Json(json!({ "link": link, "up": up })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Signup {
    client_name: String,
}

#[derive(Debug, Serialize)]
struct SignupResponse {
    token: String,
    token_id: String,
    client_name: String,
    issued_at: SimTime,
    expires_at: SimTime,
}

async fn signup(State(s): State<AppState>, Body(req): Body<Signup>) -> ApiResult<impl IntoResponse> {
    if req.client_name.trim().is_empty() {
        return Err(ApiError::bad_request("client_name must not be empty"));
    }
    let t = s.engine.call(move |sim| sim.world.signup(&req.client_name)).await??;
    Ok((
        StatusCode::CREATED,
        Json(SignupResponse {
            token: t.bearer(),
            token_id: t.token_id,
            client_name: t.client_name,
            issued_at: t.issued_at,
            expires_at: t.expires_at,
        }),
    ))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum IngestBody {
    Batch { samples: Vec<Value> },
    List(Vec<Value>),
}

async fn ingest(
    State(s): State<AppState>,
    headers: HeaderMap,
    Body(body): Body<IngestBody>,
) -> ApiResult<impl IntoResponse> {
    let token = bearer(&headers).ok_or(ApiError::auth(AuthStatus::Unknown))?;
    let items = match body {
        IngestBody::Batch { samples } | IngestBody::List(samples) => samples,
    };
    let mut samples = Vec::with_capacity(items.len());
    let mut positions = Vec::with_capacity(items.len());
    let mut undecodable = Vec::new();
    for (index, v) in items.into_iter().enumerate() {
        match serde_json::from_value::<MetricSample>(v) {
            Ok(sample) => {
                samples.push(sample);
                positions.push(index);
            }
            Err(e) => undecodable.push(RejectedSample {
                index,
                reason: format!("malformed sample: {e}"),
            }),
        }
    }
    let mut report = s
        .engine
        .call(move |sim| match sim.world.authenticate(&token) {
            AuthStatus::Ok => Ok(sim.world.ingest(&samples)),
            other => Err(ApiError::auth(other)),
        })
        .await??;
    for r in &mut report.rejected {
        r.index = positions[r.index];
    }
    report.rejected.extend(undecodable);
    report.rejected.sort_by_key(|r| r.index);
    Ok(Json(report))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryParams {
    source: String,
    metric: Metric,
    #[serde(default)]
    t0: SimTime,
    t1: Option<SimTime>,
    #[serde(default = "raw")]
    agg: Aggregation,
}

fn raw() -> Aggregation {
    Aggregation::Raw
}

async fn query(
    State(s): State<AppState>,
    headers: HeaderMap,
    q: Result<Query<QueryParams>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let token = bearer(&headers);
    // Authenticate before looking at parameters so nothing leaks through errors.
    let status = match &token {
        Some(t) => {
            let t = t.clone();
            s.engine.call(move |sim| sim.world.authenticate(&t)).await?
        }
        None => AuthStatus::Unknown,
    };
    if status != AuthStatus::Ok {
        return Err(ApiError::auth(status));
    }
    let Query(q) = q.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let result = s
        .engine
        .call(move |sim| {
            let t1 = q.t1.unwrap_or_else(|| sim.world.now());
            sim.world.query(token.as_deref(), &q.source, q.metric, q.t0, t1, q.agg)
        })
        .await??;
    Ok(Json(result))
}

async fn collectors(State(s): State<AppState>) -> ApiResult<impl IntoResponse> {
    let v = s
        .engine
        .call(|sim| {
            json!({
                "collectors": sim.world.supervisor().collectors().collect::<Vec<_>>(),
                "events": sim.world.supervisor_events(),
            })
        })
        .await?;
    Ok(Json(v))
}

async fn crash_collector(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let c = id.clone();
    s.engine.call(move |sim| sim.world.crash_collector(&id)).await??;
    Ok((StatusCode::ACCEPTED, Json(json!({ "collector": c }))))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OpenSession {
    #[serde(default)]
    session: Option<String>,
    paths: Vec<String>,
    #[serde(default = "default_policy")]
    policy: Policy,
}

fn default_policy() -> Policy {
    Policy::MinRtt
}

async fn list_sessions(State(s): State<AppState>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.engine.call(|sim| sim.world.sessions().keys().cloned().collect::<Vec<_>>()).await?))
}

async fn open_session(State(s): State<AppState>, Body(req): Body<OpenSession>) -> ApiResult<impl IntoResponse> {
    let stats = s
        .engine
        .call(move |sim| {
            let id = sim.world.hag_open(req.session.as_deref(), &req.paths, req.policy)?;
            sim.world.hag_stats(&id)
        })
        .await??;
    Ok((StatusCode::CREATED, Json(stats)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SendBytes {
    bytes: u64,
}

async fn hag_send(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Body(req): Body<SendBytes>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.engine.call(move |sim| sim.world.hag_send(&id, req.bytes)).await??))
}

async fn hag_path(
    State(s): State<AppState>,
    Path((id, pid, dir)): Path<(String, String, String)>,
) -> ApiResult<impl IntoResponse> {
    let up = up_down(&dir)?;
    let stats = s
        .engine
        .call(move |sim| {
            sim.world.hag_path(&id, &pid, up)?;
            sim.world.hag_stats(&id)
        })
        .await??;
    Ok(Json(stats))
}

async fn hag_stats(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.engine.call(move |sim| sim.world.hag_stats(&id)).await??))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StreamParams {
    after: Option<u64>,
    /// Stop after the backlog instead of waiting for new events.
    #[serde(default = "yes")]
    follow: bool,
    limit: Option<usize>,
}

fn yes() -> bool {
    true
}

struct Cursor {
    engine: Engine,
    rx: tokio::sync::watch::Receiver<u64>,
    after: u64,
    buf: VecDeque<FeedEvent>,
    follow: bool,
    remaining: Option<usize>,
}

async fn events(
    State(s): State<AppState>,
    headers: HeaderMap,
    Query(p): Query<StreamParams>,
) -> ApiResult<Response> {
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse().ok());
    let cursor = Cursor {
        rx: s.engine.subscribe(),
        engine: s.engine,
        after: p.after.or(resume).unwrap_or(0),
        buf: VecDeque::new(),
        follow: p.follow,
        remaining: p.limit,
    };
    let stream = futures::stream::unfold(cursor, |mut c| async move {
        loop {
            if c.remaining == Some(0) {
                return None;
            }
            if let Some(ev) = c.buf.pop_front() {
                c.after = ev.id;
                c.remaining = c.remaining.map(|r| r - 1);
                let mut line = serde_json::to_string(&ev).expect("events serialize");
                line.push('\n');
                return Some((Ok::<_, Infallible>(line), c));
            }
            c.rx.borrow_and_update();
            let after = c.after;
            let batch = c.engine.call(move |sim| sim.world.feed_since(after)).await.ok()?;
            if batch.is_empty() {
                if !c.follow {
                    return None;
                }
                c.rx.changed().await.ok()?;
                continue;
            }
            c.buf.extend(batch);
        }
    });
    let mut resp = axum::body::Body::from_stream(stream).into_response();
    resp.headers_mut()
        .insert(header::CONTENT_TYPE, HeaderValue::from_static("application/x-ndjson"));
    resp.headers_mut()
        .insert(header::CACHE_CONTROL, HeaderValue::from_static("no-cache"));
    Ok(resp)
}
