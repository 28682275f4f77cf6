// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

use std::time::Duration;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::{AgentStatus, AuditRecord, Verifier, VerifierError};
use crate::api::{check_bearer, ApiClient, ApiError, ClientError};
use crate::pod::PodRef;
use crate::policy::PolicyBundle;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnrollRequest {
    pub agent_id: String,
    pub bundle: PolicyBundle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval_ms: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResetRequest {
    pub agent_id: String,
    /// `node` or `pod/<uid>`.
    pub scope: PodRef,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatusDocument {
    pub agents: Vec<AgentStatus>,
}

#[derive(Debug, Deserialize)]
struct AuditQuery {
    #[serde(default)]
    since: u64,
}

#[derive(Clone)]
struct VerifierState {
    verifier: Verifier,
    token: String,
}

impl From<VerifierError> for ApiError {
    fn from(e: VerifierError) -> Self {
        let status = match e {
            VerifierError::UnknownAgent(_) | VerifierError::NotEnrolled(_) => StatusCode::NOT_FOUND,
            VerifierError::Directory(_) | VerifierError::Connect(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.kind(), e.to_string())
    }
}

/// `POST /v1/enroll`, `GET /v1/status[/{id}]`, `POST /v1/reset`,
/// `GET /v1/audit?since=<ms>`.
pub fn router(verifier: Verifier, token: impl Into<String>) -> Router {
    Router::new()
        .route("/v1/enroll", post(http_enroll))
        .route("/v1/status", get(http_status_all))
        .route("/v1/status/{id}", get(http_status))
        .route("/v1/reset", post(http_reset))
        .route("/v1/audit", get(http_audit))
        .route("/v1/health", get(|| async { Json(crate::api::Health { ok: true }) }))
        .with_state(VerifierState {
            verifier,
            token: token.into(),
        })
}

async fn http_enroll(
    State(st): State<VerifierState>,
    headers: HeaderMap,
    Json(req): Json<EnrollRequest>,
) -> Result<Json<AgentStatus>, ApiError> {
    check_bearer(&headers, &st.token)?;
    let interval = req.interval_ms.map(Duration::from_millis);
    if interval.is_some_and(|d| d.is_zero()) {
        return Err(ApiError::bad_request(
            "invalid-interval",
            "interval_ms must be positive",
        ));
    }
    Ok(Json(
        st.verifier.enroll_agent(&req.agent_id, req.bundle, interval).await?,
    ))
}

async fn http_status_all(
    State(st): State<VerifierState>,
    headers: HeaderMap,
) -> Result<Json<StatusDocument>, ApiError> {
    check_bearer(&headers, &st.token)?;
    Ok(Json(StatusDocument {
        agents: st.verifier.all_status(),
    }))
}

async fn http_status(
    State(st): State<VerifierState>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<AgentStatus>, ApiError> {
    check_bearer(&headers, &st.token)?;
    Ok(Json(st.verifier.get_status(&id)?))
}

async fn http_reset(
    State(st): State<VerifierState>,
    headers: HeaderMap,
    Json(req): Json<ResetRequest>,
) -> Result<Json<AgentStatus>, ApiError> {
    check_bearer(&headers, &st.token)?;
    Ok(Json(st.verifier.reset_trust(&req.agent_id, &req.scope).await?))
}

async fn http_audit(
    State(st): State<VerifierState>,
    headers: HeaderMap,
    Query(q): Query<AuditQuery>,
) -> Result<Json<Vec<AuditRecord>>, ApiError> {
    check_bearer(&headers, &st.token)?;
    Ok(Json(st.verifier.audit().since(q.since)))
}

#[derive(Debug, Clone)]
pub struct VerifierClient {
    api: ApiClient,
}

impl VerifierClient {
    pub fn new(base: impl Into<String>, token: Option<String>) -> Self {
        VerifierClient {
            api: ApiClient::new(base, token),
        }
    }

    pub async fn enroll(&self, req: &EnrollRequest) -> Result<AgentStatus, ClientError> {
        self.api.post("/v1/enroll", req).await
    }

    pub async fn status(&self, agent_id: &str) -> Result<AgentStatus, ClientError> {
        self.api.get(&format!("/v1/status/{agent_id}")).await
    }

    pub async fn status_all(&self) -> Result<StatusDocument, ClientError> {
        self.api.get("/v1/status").await
    }

    pub async fn reset(&self, agent_id: &str, scope: &PodRef) -> Result<AgentStatus, ClientError> {
        self.api
            .post(
                "/v1/reset",
                &ResetRequest {
                    agent_id: agent_id.to_string(),
                    scope: scope.clone(),
                },
            )
            .await
    }

    pub async fn audit(&self, since: u64) -> Result<Vec<AuditRecord>, ClientError> {
        self.api.get(&format!("/v1/audit?since={since}")).await
    }
}
