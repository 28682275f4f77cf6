// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

//! Identity registry pinning agent IDs to their EK/AK material.
//!
//! Records are persisted as one JSON object per line; every write replaces
//! the file atomically (write to a temporary sibling, then rename).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use async_trait::async_trait;
use axum::extract::{Path as UrlPath, State};
use axum::http::{HeaderMap, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::api::{check_bearer, now_ms, ApiClient, ApiError, ClientError};
use crate::tpm::{verify_ak_certificate, AkCertificate, EkCertificate, PublicKey};

/// Registration message sent by an agent. Keys and signatures are base64.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrationRequest {
    pub agent_id: String,
    pub ek_public: PublicKey,
    pub ek_cert: EkCertificate,
    pub ak_public: PublicKey,
    pub ak_cert: AkCertificate,
    /// Base URL where the agent serves quotes.
    #[serde(default)]
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityRecord {
    pub agent_id: String,
    pub ek_public: PublicKey,
    pub ek_cert: EkCertificate,
    pub ak_public: PublicKey,
    pub ak_cert: AkCertificate,
    #[serde(default)]
    pub endpoint: Option<String>,
    pub registered_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegisterOutcome {
    Created,
    Unchanged,
    Updated,
}

#[derive(Debug, Error)]
pub enum RegistrarError {
    #[error("invalid-ak-cert: {0}")]
    InvalidAkCert(String),
    #[error("invalid-ek-cert: {0}")]
    InvalidEkCert(String),
    #[error("conflict: agent `{0}` is pinned to different keys")]
    Conflict(String),
    #[error("invalid agent id `{0}`")]
    InvalidId(String),
    #[error("storage: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt store line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

impl RegistrarError {
    pub fn kind(&self) -> &'static str {
        match self {
            RegistrarError::InvalidAkCert(_) => "invalid-ak-cert",
            RegistrarError::InvalidEkCert(_) => "invalid-ek-cert",
            RegistrarError::Conflict(_) => "conflict",
            RegistrarError::InvalidId(_) => "invalid-id",
            RegistrarError::Io(_) | RegistrarError::Corrupt { .. } => "storage",
        }
    }
}

type Records = BTreeMap<String, IdentityRecord>;

pub struct Registrar {
    path: Option<PathBuf>,
    records: RwLock<Arc<Records>>,
    write_lock: Mutex<()>,
}

impl std::fmt::Debug for Registrar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registrar")
            .field("path", &self.path)
            .finish_non_exhaustive()
    }
}

impl Registrar {
    pub fn in_memory() -> Self {
        Registrar {
            path: None,
            records: RwLock::new(Arc::new(Records::new())),
            write_lock: Mutex::new(()),
        }
    }

    /// Opens (or creates) a file-backed store.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, RegistrarError> {
        let path = path.as_ref().to_path_buf();
        let mut records = Records::new();
        match std::fs::read_to_string(&path) {
            Ok(text) => {
                for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                    let rec: IdentityRecord = serde_json::from_str(line).map_err(|e| RegistrarError::Corrupt {
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                    records.insert(rec.agent_id.clone(), rec);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        Ok(Registrar {
            path: Some(path),
            records: RwLock::new(Arc::new(records)),
            write_lock: Mutex::new(()),
        })
    }

    fn snapshot(&self) -> Arc<Records> {
        self.records.read().expect("registrar lock").clone()
    }

    fn persist(&self, records: &Records) -> Result<(), RegistrarError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            for rec in records.values() {
                serde_json::to_writer(&mut f, rec).map_err(std::io::Error::other)?;
                f.write_all(b"\n")?;
            }
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn register_agent(&self, req: RegistrationRequest) -> Result<RegisterOutcome, RegistrarError> {
        if req.agent_id.is_empty() || req.agent_id.contains('/') {
            return Err(RegistrarError::InvalidId(req.agent_id));
        }
        if req.ek_cert.ek_public != req.ek_public {
            return Err(RegistrarError::InvalidEkCert(
                "certificate is for a different key".into(),
            ));
        }
        req.ek_cert
            .verify()
            .map_err(|e| RegistrarError::InvalidEkCert(e.to_string()))?;
        if req.ak_cert.ak_public != req.ak_public {
            return Err(RegistrarError::InvalidAkCert(
                "certificate is for a different key".into(),
            ));
        }
        verify_ak_certificate(&req.ak_cert, &req.ek_public)
            .map_err(|e| RegistrarError::InvalidAkCert(e.to_string()))?;

        let _guard = self.write_lock.lock().expect("registrar write lock");
        let current = self.snapshot();
        let outcome = match current.get(&req.agent_id) {
            Some(existing) if existing.ek_public != req.ek_public || existing.ak_public != req.ak_public => {
                return Err(RegistrarError::Conflict(req.agent_id));
            }
            Some(existing) if existing.endpoint == req.endpoint => return Ok(RegisterOutcome::Unchanged),
            Some(_) => RegisterOutcome::Updated,
            None => RegisterOutcome::Created,
        };
        let mut next = (*current).clone();
        let registered_at = current
            .get(&req.agent_id)
            .map(|r| r.registered_at)
            .unwrap_or_else(now_ms);
        next.insert(
            req.agent_id.clone(),
            IdentityRecord {
                agent_id: req.agent_id,
                ek_public: req.ek_public,
                ek_cert: req.ek_cert,
                ak_public: req.ak_public,
                ak_cert: req.ak_cert,
                endpoint: req.endpoint,
                registered_at,
            },
        );
        self.persist(&next)?;
        *self.records.write().expect("registrar lock") = Arc::new(next);
        Ok(outcome)
    }

    pub fn lookup_agent(&self, agent_id: &str) -> Option<IdentityRecord> {
        self.snapshot().get(agent_id).cloned()
    }

    /// Administrative removal; the only way to unpin an agent's keys.
    pub fn delete_agent(&self, agent_id: &str) -> Result<bool, RegistrarError> {
        let _guard = self.write_lock.lock().expect("registrar write lock");
        let current = self.snapshot();
        if !current.contains_key(agent_id) {
            return Ok(false);
        }
        let mut next = (*current).clone();
        next.remove(agent_id);
        self.persist(&next)?;
        *self.records.write().expect("registrar lock") = Arc::new(next);
        Ok(true)
    }

    pub fn agent_ids(&self) -> Vec<String> {
        self.snapshot().keys().cloned().collect()
    }
}

/// Read access to registered identities, local or remote.
#[async_trait]
pub trait IdentityDirectory: Send + Sync {
    async fn lookup(&self, agent_id: &str) -> Result<Option<IdentityRecord>, ClientError>;
}

#[async_trait]
impl IdentityDirectory for Registrar {
    async fn lookup(&self, agent_id: &str) -> Result<Option<IdentityRecord>, ClientError> {
        Ok(self.lookup_agent(agent_id))
    }
}

#[derive(Debug, Clone)]
pub struct RegistrarClient {
    api: ApiClient,
}

impl RegistrarClient {
    pub fn new(base: impl Into<String>, token: Option<String>) -> Self {
        RegistrarClient {
            api: ApiClient::new(base, token),
        }
    }

    pub async fn register(&self, req: &RegistrationRequest) -> Result<RegisterOutcome, ClientError> {
        let resp: RegisterResponse = self.api.post("/v1/agents", req).await?;
        Ok(resp.outcome)
    }

    pub async fn delete(&self, agent_id: &str) -> Result<(), ClientError> {
        let _: serde_json::Value = self.api.delete(&format!("/v1/agents/{agent_id}")).await?;
        Ok(())
    }
}

#[async_trait]
impl IdentityDirectory for RegistrarClient {
    async fn lookup(&self, agent_id: &str) -> Result<Option<IdentityRecord>, ClientError> {
        match self.api.get(&format!("/v1/agents/{agent_id}")).await {
            Ok(r) => Ok(Some(r)),
            Err(ClientError::Status { status: 404, .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterResponse {
    pub outcome: RegisterOutcome,
}

#[derive(Clone)]
struct RegistrarState {
    registrar: Arc<Registrar>,
    token: String,
    admin_token: String,
}

/// `POST /v1/agents`, `GET /v1/agents/{id}`, `DELETE /v1/agents/{id}`.
pub fn router(registrar: Arc<Registrar>, token: impl Into<String>, admin_token: impl Into<String>) -> Router {
    Router::new()
        .route("/v1/agents", post(http_register))
        .route("/v1/agents/{id}", get(http_lookup).delete(http_delete))
        .route("/v1/health", get(|| async { Json(crate::api::Health { ok: true }) }))
        .with_state(RegistrarState {
            registrar,
            token: token.into(),
            admin_token: admin_token.into(),
        })
}

async fn http_register(
    State(st): State<RegistrarState>,
    headers: HeaderMap,
    Json(req): Json<RegistrationRequest>,
) -> Result<Json<RegisterResponse>, ApiError> {
    check_bearer(&headers, &st.token)?;
    match st.registrar.register_agent(req) {
        Ok(outcome) => Ok(Json(RegisterResponse { outcome })),
        Err(e) => {
            let status = match e {
                RegistrarError::Conflict(_) => StatusCode::CONFLICT,
                RegistrarError::Io(_) | RegistrarError::Corrupt { .. } => StatusCode::INTERNAL_SERVER_ERROR,
                _ => StatusCode::BAD_REQUEST,
            };
            Err(ApiError::new(status, e.kind(), e.to_string()))
        }
    }
}

async fn http_lookup(
    State(st): State<RegistrarState>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<IdentityRecord>, ApiError> {
    check_bearer(&headers, &st.token)?;
    st.registrar
        .lookup_agent(&id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("agent `{id}` is not registered")))
}

async fn http_delete(
    State(st): State<RegistrarState>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    if st.admin_token.is_empty() {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "forbidden",
            "no admin token configured",
        ));
    }
    check_bearer(&headers, &st.admin_token)?;
    match st.registrar.delete_agent(&id) {
        Ok(true) => Ok(Json(serde_json::json!({ "deleted": id }))),
        Ok(false) => Err(ApiError::not_found(format!("agent `{id}` is not registered"))),
        Err(e) => Err(ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            e.kind(),
            e.to_string(),
        )),
    }
}
