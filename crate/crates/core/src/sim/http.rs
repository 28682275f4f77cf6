// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use super::{Cluster, InjectOutcome, PodInfo, RemediationOutcome, RestartNotice, SimError, TamperScenario};
use crate::api::{check_bearer, ApiClient, ApiError, ClientError};
use crate::policy::{ExcludeRule, PolicyBundle};
use crate::verifier::RemediationEvent;

#[derive(Clone)]
struct SimState {
    cluster: Cluster,
    token: String,
}

impl From<SimError> for ApiError {
    fn from(e: SimError) -> Self {
        let status = match e {
            SimError::UnknownPod(_) | SimError::UnknownNode(_) => StatusCode::NOT_FOUND,
            SimError::NoSink(_) | SimError::Delivery { .. } => StatusCode::BAD_GATEWAY,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.kind(), e.to_string())
    }
}

#[derive(Debug, Deserialize)]
struct BundleQuery {
    /// Node-scope exclude regex.
    #[serde(default)]
    exclude: Option<String>,
}

/// `POST /v1/remediate` (the verifier webhook), `POST /v1/inject`,
/// `GET /v1/pods`, `GET /v1/notices`, `GET /v1/bundle/{node}`.
pub fn router(cluster: Cluster, token: impl Into<String>) -> Router {
    Router::new()
        .route("/v1/remediate", post(http_remediate))
        .route("/v1/inject", post(http_inject))
        .route("/v1/pods", get(http_pods))
        .route("/v1/notices", get(http_notices))
        .route("/v1/bundle/{node}", get(http_bundle))
        .route("/v1/health", get(|| async { Json(crate::api::Health { ok: true }) }))
        .with_state(SimState {
            cluster,
            token: token.into(),
        })
}

async fn http_remediate(
    State(st): State<SimState>,
    headers: HeaderMap,
    Json(ev): Json<RemediationEvent>,
) -> Result<Json<RemediationOutcome>, ApiError> {
    check_bearer(&headers, &st.token)?;
    Ok(Json(st.cluster.handle_remediation(&ev).await))
}

async fn http_inject(
    State(st): State<SimState>,
    headers: HeaderMap,
    Json(s): Json<TamperScenario>,
) -> Result<Json<InjectOutcome>, ApiError> {
    check_bearer(&headers, &st.token)?;
    Ok(Json(st.cluster.inject(&s).await?))
}

async fn http_pods(State(st): State<SimState>, headers: HeaderMap) -> Result<Json<Vec<PodInfo>>, ApiError> {
    check_bearer(&headers, &st.token)?;
    Ok(Json(st.cluster.pods()))
}

async fn http_notices(State(st): State<SimState>, headers: HeaderMap) -> Result<Json<Vec<RestartNotice>>, ApiError> {
    check_bearer(&headers, &st.token)?;
    Ok(Json(st.cluster.notices()))
}

async fn http_bundle(
    State(st): State<SimState>,
    headers: HeaderMap,
    UrlPath(node): UrlPath<String>,
    Query(q): Query<BundleQuery>,
) -> Result<Json<PolicyBundle>, ApiError> {
    check_bearer(&headers, &st.token)?;
    let exclude: Vec<ExcludeRule> = q.exclude.into_iter().map(ExcludeRule::regex).collect();
    Ok(Json(st.cluster.golden_bundle(&node, &exclude)?))
}

#[derive(Debug, Clone)]
pub struct SimClient {
    api: ApiClient,
}

impl SimClient {
    pub fn new(base: impl Into<String>, token: Option<String>) -> Self {
        SimClient {
            api: ApiClient::new(base, token),
        }
    }

    pub async fn inject(&self, scenario: &TamperScenario) -> Result<InjectOutcome, ClientError> {
        self.api.post("/v1/inject", scenario).await
    }

    pub async fn pods(&self) -> Result<Vec<PodInfo>, ClientError> {
        self.api.get("/v1/pods").await
    }

    pub async fn notices(&self) -> Result<Vec<RestartNotice>, ClientError> {
        self.api.get("/v1/notices").await
    }

    pub async fn bundle(&self, node: &str, exclude: Option<&str>) -> Result<PolicyBundle, ClientError> {
        let path = match exclude {
            Some(re) => {
                let mut s = url_escape(re);
                s.insert_str(0, "?exclude=");
                format!("/v1/bundle/{node}{s}")
            }
            None => format!("/v1/bundle/{node}"),
        };
        self.api.get(&path).await
    }
}

fn url_escape(s: &str) -> String {
    let mut out = String::new();
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-_.~".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}
