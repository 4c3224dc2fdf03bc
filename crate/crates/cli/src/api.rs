//! JSON API behind the reviewer dashboard.
//!
//! Read endpoints never modify the store. The only write is adjudication,
//! which appends to the audit log.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use aibom_core::agents::bus::{Adjudication, AdjudicationAction, DriftAdvisory, DriftSignal, Incident};
use aibom_core::canonical::to_canonical_bytes;
use aibom_core::compliance::{self, default_ruleset};
use aibom_core::redact::{apply_manifest, redact};
use aibom_core::snapshot::diff_components;
use aibom_core::store::{two_party_authorized, AdjudicationOutcome, AdjudicationRecord, StoredSession, MANIFEST_FILE};
use aibom_core::vex::DecisionStep;
use aibom_core::{
    AgentMessage, AibomDocument, ComplianceResult, EvaluationContext, Payload, RedactionManifest, SnapshotDiff, Store,
    StoreError, VexAssertion, ViewTier,
};

/// Header carrying one auditor token; send it twice for auditor views.
pub const AUDITOR_TOKEN_HEADER: &str = "x-auditor-token";

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    store: Store,
    ctx: EvaluationContext,
    auditor_tokens: Vec<String>,
    default_tier: ViewTier,
}

impl AppState {
    pub fn new(store: Store, ctx: EvaluationContext, auditor_tokens: Vec<String>, default_tier: ViewTier) -> Self {
        Self {
            inner: Arc::new(Inner {
                store,
                ctx,
                auditor_tokens,
                default_tier,
            }),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", get(list_sessions))
        .route("/sessions/{id}", get(session_view))
        .route("/sessions/{id}/diff", get(session_diff))
        .route("/sessions/{id}/vex", get(session_vex))
        .route("/sessions/{id}/compliance", get(session_compliance))
        .route("/sessions/{id}/messages", get(session_messages))
        .route("/sessions/{id}/adjudicate", post(adjudicate))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::SessionNotFound(_) => StatusCode::NOT_FOUND,
            StoreError::AdjudicationRejected(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn internal(e: impl ToString) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

enum Located {
    Sealed(Box<StoredSession>),
    FailClosed(Box<Incident>),
}

fn locate(store: &Store, id: &str) -> Result<Located, ApiError> {
    if let Some(incident) = store.incident(id)? {
        return Ok(Located::FailClosed(Box::new(incident)));
    }
    Ok(Located::Sealed(Box::new(store.load(id)?)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    /// `sealed` or `fail-closed`.
    pub status: String,
    pub workload_id: Option<String>,
    pub timestamp: String,
    pub composite_hash: Option<String>,
    pub retention_class: Option<String>,
    pub reason: Option<String>,
}

async fn list_sessions(State(state): State<AppState>) -> Result<Json<Vec<SessionSummary>>, ApiError> {
    let store = &state.inner.store;
    let mut out = Vec::new();
    for row in store.sessions()? {
        let workload_id = store.load(&row.session_id).ok().and_then(|s| s.record().ok()).map(|r| r.workload_id);
        out.push(SessionSummary {
            session_id: row.session_id,
            status: "sealed".into(),
            workload_id,
            timestamp: row.timestamp,
            composite_hash: Some(row.composite_hash),
            retention_class: serde_json::to_value(row.retention_class)
                .ok()
                .and_then(|v| v.as_str().map(String::from)),
            reason: None,
        });
    }
    for row in store.incidents()? {
        out.push(SessionSummary {
            session_id: row.session_id,
            status: "fail-closed".into(),
            workload_id: Some(row.workload_id),
            timestamp: row.timestamp,
            composite_hash: None,
            retention_class: None,
            reason: Some(row.reason),
        });
    }
    Ok(Json(out))
}

#[derive(Debug, Deserialize)]
struct TierQuery {
    tier: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub view_tier: ViewTier,
    pub document: AibomDocument,
    pub redaction_manifest: RedactionManifest,
    pub integrity_problems: Vec<String>,
}

async fn session_view(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<TierQuery>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let inner = &state.inner;
    let tier = match query.tier.as_deref() {
        None => inner.default_tier,
        Some(t) => t.parse().map_err(|e: String| ApiError(StatusCode::BAD_REQUEST, e))?,
    };
    if tier.is_full() {
        let presented: Vec<&str> = headers
            .get_all(AUDITOR_TOKEN_HEADER)
            .iter()
            .filter_map(|v| v.to_str().ok())
            .collect();
        if !two_party_authorized(&presented, &inner.auditor_tokens) {
            return Err(ApiError(
                StatusCode::FORBIDDEN,
                "full views need two distinct authorised auditor tokens".into(),
            ));
        }
    }
    let stored = match locate(&inner.store, &id)? {
        Located::Sealed(s) => s,
        Located::FailClosed(incident) => {
            return Ok((
                StatusCode::CONFLICT,
                Json(json!({
                    "error": format!("session {id} failed closed; no sealed document exists"),
                    "incident": incident,
                })),
            )
                .into_response())
        }
    };
    let doc = stored.document().map_err(internal)?;
    let integrity_problems = inner.store.integrity_problems(&stored);
    let (document, redaction_manifest) = if tier.is_full() {
        (doc, RedactionManifest::new(tier, vec![]))
    } else {
        let (view, manifest) = redact(&doc, tier);
        let stored_manifest: RedactionManifest = stored.parse(MANIFEST_FILE).map_err(internal)?;
        if stored_manifest != manifest {
            return Err(internal(format!("{MANIFEST_FILE} does not match a fresh redaction")));
        }
        let replayed = apply_manifest(&doc, &manifest).map_err(internal)?;
        if to_canonical_bytes(&replayed).map_err(internal)? != to_canonical_bytes(&view).map_err(internal)? {
            return Err(internal("redaction manifest does not reproduce the reviewer view"));
        }
        (view, manifest)
    };
    Ok(Json(SessionView {
        session_id: id,
        view_tier: tier,
        document,
        redaction_manifest,
        integrity_problems,
    })
    .into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DriftEvent {
    pub seq: u64,
    pub at: u64,
    pub signal: DriftSignal,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DiffView {
    pub session_id: String,
    /// Baseline fragment against the sealed document, or the reconciliation
    /// diff recorded with a fail-closed incident.
    pub diff: Option<SnapshotDiff>,
    pub drift_signals: Vec<DriftEvent>,
    pub drift_advisory: Option<DriftAdvisory>,
}

async fn session_diff(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<DiffView>, ApiError> {
    let store = &state.inner.store;
    let located = locate(store, &id)?;
    let messages = store.messages(&id)?;
    let mut baseline = None;
    let mut drift_advisory = None;
    let mut drift_signals = Vec::new();
    for m in &messages {
        match &m.body {
            Payload::BaselineSbomFragment(f) => baseline = Some(f.components.clone()),
            Payload::BaselineDriftAdvisory(a) => drift_advisory = Some(a.clone()),
            Payload::RuntimeDriftSignal(s) => drift_signals.push(DriftEvent {
                seq: m.seq,
                at: m.at,
                signal: s.clone(),
            }),
            _ => {}
        }
    }
    let diff = match located {
        Located::FailClosed(incident) => incident.diff,
        Located::Sealed(stored) => {
            let doc = stored.document().map_err(internal)?;
            Some(diff_components(&baseline.unwrap_or_default(), &doc.components))
        }
    };
    Ok(Json(DiffView {
        session_id: id,
        diff,
        drift_signals,
        drift_advisory,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VexEntry {
    pub seq: u64,
    pub assertion: VexAssertion,
    pub step: DecisionStep,
    pub confidence: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VexView {
    pub session_id: String,
    pub assertions: Vec<VexEntry>,
    pub compliance_advisories: Vec<serde_json::Value>,
}

async fn session_vex(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<VexView>, ApiError> {
    let mut assertions = Vec::new();
    let mut compliance_advisories = Vec::new();
    for m in state.inner.store.messages(&id)? {
        match m.body {
            Payload::VexAssertionMsg(v) => assertions.push(VexEntry {
                seq: m.seq,
                assertion: v.assertion,
                step: v.step,
                confidence: v.confidence,
            }),
            Payload::ComplianceAdvisory(c) => compliance_advisories.push(serde_json::to_value(c).map_err(internal)?),
            _ => {}
        }
    }
    Ok(Json(VexView {
        session_id: id,
        assertions,
        compliance_advisories,
    }))
}

async fn session_compliance(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Vec<ComplianceResult>>, ApiError> {
    let inner = &state.inner;
    compliance::evaluate(&default_ruleset(), &inner.store, &id, &inner.ctx)
        .map(Json)
        .map_err(|e| match e {
            compliance::ComplianceError::Store(s) => s.into(),
            other => internal(other),
        })
}

async fn session_messages(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Vec<AgentMessage>>, ApiError> {
    Ok(Json(state.inner.store.messages(&id)?))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjudicateRequest {
    pub action: AdjudicationAction,
    pub reviewer_pseudonym: String,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AdjudicateResponse {
    /// `recorded` or `already-adjudicated`.
    pub state: String,
    pub record: AdjudicationRecord,
}

async fn adjudicate(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<AdjudicateRequest>,
) -> Result<(StatusCode, Json<AdjudicateResponse>), ApiError> {
    if req.reviewer_pseudonym.trim().is_empty() {
        return Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, "reviewer_pseudonym is required".into()));
    }
    let adjudication = Adjudication {
        action: req.action,
        reviewer_pseudonym: req.reviewer_pseudonym,
        note: req.note,
        recorded_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
    };
    let (status, state_name, record) = match state.inner.store.adjudicate(&id, adjudication)? {
        AdjudicationOutcome::Recorded(r) => (StatusCode::CREATED, "recorded", r),
        AdjudicationOutcome::AlreadyRecorded(r) => (StatusCode::OK, "already-adjudicated", r),
    };
    Ok((
        status,
        Json(AdjudicateResponse {
            state: state_name.into(),
            record,
        }),
    ))
}
