//! HTTP routes. JSON everywhere except the CSV export, the calendar feed
//! and the metrics text.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, SecondsFormat, Utc};
use forge_judge_core::analytics::{export_csv, ical_feed, Course, CourseVisibility};
use forge_judge_core::feedback::{FeedbackTree, Status};
use forge_judge_core::repo::{Activity, ActivityId, ActivityKind, WebhookError, SIGNATURE_HEADER};
use forge_judge_core::scheduler::{
    EnqueueError, LifecycleCounts, NewSubmission, SubmissionFilter, SubmissionId, SubmissionRecord,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::services::Services;
use crate::tokens::{ApiToken, Scope};

/// How a route is protected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Guard {
    Token(Scope),
    /// Body authenticated by an HMAC signature header.
    Signature,
    Public,
}

pub struct RouteInfo {
    pub method: Method,
    pub path: &'static str,
    pub guard: Guard,
}

macro_rules! route {
    ($m:ident, $p:expr, $g:expr) => {
        RouteInfo {
            method: Method::$m,
            path: $p,
            guard: $g,
        }
    };
}

/// Every route the service exposes.
pub fn routes() -> Vec<RouteInfo> {
    vec![
        route!(POST, "/api/submissions", Guard::Token(Scope::Submit)),
        route!(GET, "/api/submissions/{id}", Guard::Token(Scope::Read)),
        route!(GET, "/api/activities", Guard::Token(Scope::Read)),
        route!(GET, "/api/activities/{id}", Guard::Token(Scope::Read)),
        route!(GET, "/api/courses/{id}", Guard::Token(Scope::Read)),
        route!(GET, "/api/courses/{id}/export.csv", Guard::Token(Scope::Admin)),
        route!(POST, "/webhooks/{repo_id}", Guard::Signature),
        route!(GET, "/courses/{id}/calendar.ics", Guard::Public),
        route!(GET, "/health", Guard::Public),
        route!(GET, "/metrics", Guard::Public),
    ]
}

// Fixed one-minute windows per token.
#[derive(Default)]
struct RateLimiter {
    windows: Mutex<HashMap<String, (i64, u32)>>,
}

impl RateLimiter {
    fn admit(&self, token_id: &str, limit: u32, now: DateTime<Utc>) -> bool {
        let minute = now.timestamp().div_euclid(60);
        let mut windows = self.windows.lock().unwrap_or_else(|p| p.into_inner());
        let slot = windows.entry(token_id.to_string()).or_insert((minute, 0));
        if slot.0 != minute {
            *slot = (minute, 0);
        }
        if slot.1 >= limit {
            return false;
        }
        slot.1 += 1;
        true
    }
}

pub struct AppState {
    pub services: Services,
    limiter: RateLimiter,
}

pub fn router(services: Services) -> Router {
    let state = Arc::new(AppState {
        services,
        limiter: RateLimiter::default(),
    });
    Router::new()
        .route("/api/submissions", post(create_submission))
        .route("/api/submissions/{id}", get(get_submission))
        .route("/api/activities", get(list_activities))
        .route("/api/activities/{id}", get(get_activity))
        .route("/api/courses/{id}", get(get_course))
        .route("/api/courses/{id}/export.csv", get(export_course))
        .route("/webhooks/{repo_id}", post(webhook))
        .route("/courses/{id}/calendar.ics", get(calendar))
        .route("/health", get(health))
        .route("/metrics", get(metrics))
        .with_state(state)
}

#[derive(Debug)]
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

    fn not_found(what: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("{what} not found"))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        tracing::error!("{e}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal error")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn authenticate(state: &AppState, headers: &HeaderMap, scope: Scope) -> ApiResult<ApiToken> {
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Token "))
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "missing API token"))?;
    let token = state
        .services
        .tokens
        .authenticate(presented.trim())
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "invalid API token"))?;
    if !token.allows(scope) {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            format!("token lacks the '{}' scope", scope.as_str()),
        ));
    }
    Ok(token)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)
}

fn iso(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubmissionRequest {
    activity_id: String,
    course_id: String,
    series_id: String,
    code: String,
}

async fn create_submission(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let token = authenticate(&state, &headers, Scope::Submit)?;
    let req: SubmissionRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("invalid request: {e}")))?;
    let settings = &state.services.settings;
    if !state
        .limiter
        .admit(&token.id, settings.rate_limit_per_minute, Utc::now())
    {
        return Err(ApiError::new(StatusCode::TOO_MANY_REQUESTS, "submission rate limit reached"));
    }
    let activity_id = ActivityId(req.activity_id.clone());
    if state.services.content.registry().get(&activity_id).is_none() {
        return Err(ApiError::not_found(format_args!("activity {}", req.activity_id)));
    }
    let course = settings
        .course(&req.course_id)
        .ok_or_else(|| ApiError::not_found(format_args!("course {}", req.course_id)))?;
    let series = course
        .series(&req.series_id)
        .ok_or_else(|| ApiError::not_found(format_args!("series {}", req.series_id)))?;
    if !series.activities.contains(&activity_id) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "activity is not part of this series",
        ));
    }
    let submission = NewSubmission {
        user_id: token.principal.clone(),
        course_id: req.course_id,
        series_id: req.series_id,
        activity_id,
        natural_language: settings.language_of(&token.principal),
        code: req.code.into_bytes(),
    };
    let scheduler = Arc::clone(&state.services.scheduler);
    let record = blocking(move || scheduler.enqueue(submission))
        .await?
        .map_err(|e| match e {
            EnqueueError::UnknownActivity(_) => ApiError::not_found(e),
            EnqueueError::NotAnExercise(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
            EnqueueError::TooLarge { .. } => ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, e.to_string()),
            EnqueueError::Store(e) => ApiError::internal(e),
        })?;
    Ok((
        StatusCode::CREATED,
        [(header::LOCATION, format!("/api/submissions/{}", record.id))],
        Json(json!({ "id": record.id, "lifecycle": record.lifecycle })),
    )
        .into_response())
}

#[derive(Serialize)]
struct SubmissionDoc {
    id: SubmissionId,
    user_id: String,
    course_id: String,
    series_id: String,
    activity_id: String,
    lifecycle: &'static str,
    attempt_count: u32,
    submitted_at: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    started_at: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    assessed_at: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    result_status: Option<Status>,
    code: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    feedback: Option<FeedbackTree>,
}

fn submission_doc(r: SubmissionRecord, admin: bool) -> SubmissionDoc {
    SubmissionDoc {
        id: r.id,
        user_id: r.user_id,
        course_id: r.course_id,
        series_id: r.series_id,
        activity_id: r.activity_id.0,
        lifecycle: r.lifecycle.as_str(),
        attempt_count: r.attempt_count,
        submitted_at: iso(r.submitted_at),
        started_at: r.started_at.map(iso),
        assessed_at: r.assessed_at.map(iso),
        result_status: r.result_status,
        code: String::from_utf8_lossy(&r.code).into_owned(),
        feedback: r
            .feedback
            .map(|f| if admin { f } else { f.without_staff_messages() }),
    }
}

async fn get_submission(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Json<SubmissionDoc>> {
    let token = authenticate(&state, &headers, Scope::Read)?;
    let id: u64 = id
        .parse()
        .map_err(|_| ApiError::not_found(format_args!("submission {id}")))?;
    let store = Arc::clone(state.services.scheduler.store());
    let record = blocking(move || store.get(SubmissionId(id)))
        .await?
        .map_err(ApiError::internal)?
        .ok_or_else(|| ApiError::not_found(format_args!("submission {id}")))?;
    if !token.is_admin() && record.user_id != token.principal {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "not your submission"));
    }
    Ok(Json(submission_doc(record, token.is_admin())))
}

#[derive(Serialize)]
struct ActivityDoc {
    id: String,
    name: String,
    #[serde(rename = "type")]
    kind: ActivityKind,
    repository: String,
    path: String,
    access: forge_judge_core::repo::Access,
    labels: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    programming_language: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    boilerplate: Option<String>,
    descriptions: BTreeMap<String, forge_judge_core::repo::Description>,
}

fn activity_doc(a: &Activity) -> ActivityDoc {
    ActivityDoc {
        id: a.id.0.clone(),
        name: a.name.clone(),
        kind: a.kind,
        repository: a.repo_id.clone(),
        path: a.rel_path.clone(),
        access: a.access,
        labels: a.labels.iter().cloned().collect(),
        programming_language: a.programming_language().map(str::to_string),
        boilerplate: a.config.as_ref().and_then(|c| c.boilerplate.clone()),
        descriptions: a.descriptions.clone(),
    }
}

#[derive(Deserialize)]
struct ActivityQuery {
    label: Option<String>,
    repository: Option<String>,
}

async fn list_activities(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Query(q): Query<ActivityQuery>,
) -> ApiResult<Json<Vec<ActivityDoc>>> {
    let token = authenticate(&state, &headers, Scope::Read)?;
    let docs = state
        .services
        .content
        .registry()
        .all()
        .iter()
        .filter(|a| token.is_admin() || a.access == forge_judge_core::repo::Access::Public)
        .filter(|a| q.label.as_ref().is_none_or(|l| a.labels.contains(l)))
        .filter(|a| q.repository.as_ref().is_none_or(|r| &a.repo_id == r))
        .map(|a| activity_doc(a))
        .collect();
    Ok(Json(docs))
}

async fn get_activity(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Json<ActivityDoc>> {
    authenticate(&state, &headers, Scope::Read)?;
    let activity = state
        .services
        .content
        .registry()
        .get(&ActivityId(id.clone()))
        .ok_or_else(|| ApiError::not_found(format_args!("activity {id}")))?;
    Ok(Json(activity_doc(&activity)))
}

#[derive(Deserialize)]
struct CourseQuery {
    series_token: Option<String>,
}

fn visible_course<'a>(state: &'a AppState, id: &str, admin: bool) -> ApiResult<&'a Course> {
    state
        .services
        .settings
        .course(id)
        .filter(|c| admin || c.visibility == CourseVisibility::Public)
        .ok_or_else(|| ApiError::not_found(format_args!("course {id}")))
}

async fn get_course(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<CourseQuery>,
) -> ApiResult<Json<serde_json::Value>> {
    let token = authenticate(&state, &headers, Scope::Read)?;
    let course = visible_course(&state, &id, token.is_admin())?;
    let registry = state.services.content.registry();
    let series: Vec<_> = course
        .series
        .iter()
        .filter(|s| token.is_admin() || s.accessible_with(q.series_token.as_deref()))
        .map(|s| {
            let activities: Vec<_> = s
                .activities
                .iter()
                .map(|a| match registry.get(a) {
                    Some(act) => serde_json::to_value(activity_doc(&act)).unwrap_or_default(),
                    None => json!({ "id": a.0, "missing": true }),
                })
                .collect();
            json!({
                "id": s.id,
                "name": s.name,
                "deadline": s.deadline.map(iso),
                "visible": s.visible,
                "activities": activities,
            })
        })
        .collect();
    Ok(Json(json!({
        "id": course.id,
        "name": course.name,
        "timezone": course.timezone,
        "series": series,
    })))
}

#[derive(Deserialize)]
struct ExportQuery {
    series: Option<String>,
    user: Option<String>,
    from: Option<DateTime<Utc>>,
    until: Option<DateTime<Utc>>,
}

async fn export_course(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Response> {
    authenticate(&state, &headers, Scope::Admin)?;
    visible_course(&state, &id, true)?;
    let filter = SubmissionFilter {
        course_id: Some(id),
        series_id: q.series,
        user_id: q.user,
        activity_id: None,
        from: q.from,
        until: q.until,
    };
    let store = Arc::clone(state.services.scheduler.store());
    let rows = blocking(move || store.list(&filter))
        .await?
        .map_err(ApiError::internal)?;
    let csv = export_csv(&rows, state.services.settings.pseudonym_key.as_bytes());
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

async fn calendar(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let course = visible_course(&state, &id, false)?;
    // Derived from the content so regenerating an unchanged course yields
    // identical bytes.
    let dtstamp = course
        .series
        .iter()
        .filter_map(|s| s.deadline)
        .max()
        .unwrap_or(DateTime::UNIX_EPOCH);
    Ok((
        [(header::CONTENT_TYPE, "text/calendar; charset=utf-8")],
        ical_feed(course, dtstamp),
    )
        .into_response())
}

async fn webhook(
    State(state): State<Arc<AppState>>,
    Path(repo_id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let signature = headers
        .get(SIGNATURE_HEADER)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("");
    let needs_sync = state
        .services
        .content
        .verify_webhook(&repo_id, &body, signature)
        .map_err(|e| match e {
            WebhookError::UnknownRepo(_) => ApiError::not_found(e),
            WebhookError::BadSignature => ApiError::new(StatusCode::UNAUTHORIZED, e.to_string()),
            WebhookError::BadPayload(_) => ApiError::new(StatusCode::BAD_REQUEST, e.to_string()),
        })?;
    if needs_sync {
        let content = Arc::clone(&state.services.content);
        let repo = repo_id.clone();
        tokio::task::spawn_blocking(move || match content.sync(&repo) {
            Ok(r) => tracing::info!(repo = %repo, added = r.added.len(), updated = r.updated.len(), removed = r.removed.len(), "webhook sync"),
            Err(e) => tracing::error!(repo = %repo, "webhook sync failed: {e}"),
        });
    }
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "repository": repo_id, "sync": if needs_sync { "scheduled" } else { "skipped" } })),
    )
        .into_response())
}

async fn counts(state: &AppState) -> ApiResult<LifecycleCounts> {
    let scheduler = Arc::clone(&state.services.scheduler);
    blocking(move || scheduler.counts()).await?.map_err(ApiError::internal)
}

async fn health(State(state): State<Arc<AppState>>) -> ApiResult<Json<serde_json::Value>> {
    let c = counts(&state).await?;
    Ok(Json(json!({
        "status": "ok",
        "queue_depth": c.queued,
        "running": c.running,
        "assessed": c.assessed,
    })))
}

async fn metrics(State(state): State<Arc<AppState>>) -> ApiResult<Response> {
    let c = counts(&state).await?;
    let mut out = String::new();
    out.push_str("# HELP forge_submissions Submissions per lifecycle state.\n# TYPE forge_submissions gauge\n");
    for (state, n) in [("queued", c.queued), ("running", c.running), ("assessed", c.assessed)] {
        out.push_str(&format!("forge_submissions{{lifecycle=\"{state}\"}} {n}\n"));
    }
    out.push_str("# HELP forge_results Assessed submissions per status.\n# TYPE forge_results gauge\n");
    for status in Status::ALL {
        let n = c.by_status.get(&status).copied().unwrap_or(0);
        out.push_str(&format!("forge_results{{status=\"{}\"}} {n}\n", status.as_str()));
    }
    out.push_str("# HELP forge_queue_depth Submissions waiting for a worker.\n# TYPE forge_queue_depth gauge\n");
    out.push_str(&format!("forge_queue_depth {}\n", c.queued));
    Ok(([(header::CONTENT_TYPE, "text/plain; version=0.0.4")], out).into_response())
}
