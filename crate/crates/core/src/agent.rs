// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

//! Per-node attestation agent.
//!
//! The agent owns the node's emulated TPM and measurement list. Event
//! ingest and quote generation share one lock, so a report's log snapshot
//! and its quote always describe the same PCR state.

use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use axum::extract::{Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::api::{check_bearer, ApiClient, ApiError, ClientError, Health};
use crate::digest::DigestValue;
use crate::ima::{self, FileEvent, MeasurementEntry, MeasurementLog, TemplateName};
use crate::registrar::{RegisterOutcome, RegistrarClient, RegistrationRequest};
use crate::tpm::{composite_digest, PcrSelection, Quote, Tpm, TpmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcrValue {
    pub index: u8,
    pub value: DigestValue,
}

/// Quote plus the measurement-list segment starting at `offset`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrityReport {
    pub agent_id: String,
    #[serde(with = "hex_bytes")]
    pub nonce: Vec<u8>,
    pub quote: Quote,
    /// Values of the quoted registers, ascending index.
    pub pcrs: Vec<PcrValue>,
    pub offset: usize,
    /// Segment in ascii measurement-list form.
    #[serde(with = "ascii_entries")]
    pub entries: Vec<MeasurementEntry>,
    pub total_count: usize,
}

impl IntegrityReport {
    pub fn pcr(&self, index: u8) -> Option<DigestValue> {
        self.pcrs.iter().find(|p| p.index == index).map(|p| p.value)
    }

    /// Whether `pcrs` hashes to the quoted composite.
    pub fn pcrs_match_quote(&self) -> bool {
        let indices: Vec<u8> = self.pcrs.iter().map(|p| p.index).collect();
        let expected: Vec<u8> = self.quote.pcr_selection.indices().collect();
        indices == expected && composite_digest(self.pcrs.iter().map(|p| p.value)) == self.quote.composite_digest
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        hex::decode(String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

mod ascii_entries {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::ima::{emit_entries, parse_ascii, MeasurementEntry};

    pub fn serialize<S: Serializer>(v: &[MeasurementEntry], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&emit_entries(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<MeasurementEntry>, D::Error> {
        let text = String::deserialize(d)?;
        parse_ascii(&text)
            .map(|log| log.entries().to_vec())
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AgentError {
    #[error("offset {offset} beyond log count {count}")]
    OffsetOutOfRange { offset: usize, count: usize },
    #[error(transparent)]
    Tpm(#[from] TpmError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentConfig {
    pub agent_id: String,
    pub node_name: String,
    pub registrar: Option<String>,
    pub listen: Option<String>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub api_token: String,
}

struct AgentState {
    tpm: Tpm,
    log: MeasurementLog,
}

pub struct Agent {
    agent_id: String,
    node_name: String,
    state: Mutex<AgentState>,
}

impl std::fmt::Debug for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Agent")
            .field("agent_id", &self.agent_id)
            .field("node_name", &self.node_name)
            .finish_non_exhaustive()
    }
}

impl Agent {
    /// Boots an agent: seeds PCRs 0..7 and records `boot_aggregate`.
    pub fn new(agent_id: impl Into<String>, node_name: impl Into<String>, seed: Option<u64>) -> Self {
        let mut tpm = Tpm::new(seed);
        let mut log = MeasurementLog::new();
        ima::seed_boot_pcrs(tpm.bank_mut(), seed.unwrap_or_else(rand::random)).expect("boot PCRs in range");
        log.append_boot_aggregate(tpm.bank_mut());
        Agent {
            agent_id: agent_id.into(),
            node_name: node_name.into(),
            state: Mutex::new(AgentState { tpm, log }),
        }
    }

    pub fn from_config(cfg: &AgentConfig) -> Self {
        Self::new(cfg.agent_id.clone(), cfg.node_name.clone(), cfg.seed)
    }

    pub fn agent_id(&self) -> &str {
        &self.agent_id
    }

    pub fn node_name(&self) -> &str {
        &self.node_name
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, AgentState> {
        self.state.lock().expect("agent state lock")
    }

    /// Measures the event with the pod-aware template. Returns the new
    /// entry, or `None` if the content was already measured.
    pub fn ingest_event(&self, event: &FileEvent) -> Result<Option<MeasurementEntry>, ima::TemplateError> {
        let mut st = self.lock();
        let AgentState { tpm, log } = &mut *st;
        log.append_measurement(tpm.bank_mut(), event, TemplateName::ImaCgn)
    }

    pub fn handle_quote_request(
        &self,
        nonce: &[u8],
        selection: PcrSelection,
        offset: usize,
    ) -> Result<IntegrityReport, AgentError> {
        let st = self.lock();
        let count = st.log.count();
        let entries = st
            .log
            .segment(offset)
            .ok_or(AgentError::OffsetOutOfRange { offset, count })?
            .to_vec();
        let quote = st.tpm.quote(nonce, selection)?;
        let pcrs = st
            .tpm
            .bank()
            .selected(selection)
            .into_iter()
            .map(|(index, value)| PcrValue { index, value })
            .collect();
        Ok(IntegrityReport {
            agent_id: self.agent_id.clone(),
            nonce: nonce.to_vec(),
            quote,
            pcrs,
            offset,
            entries,
            total_count: count,
        })
    }

    pub fn registration(&self, endpoint: Option<String>) -> RegistrationRequest {
        let st = self.lock();
        let ek = st.tpm.endorsement();
        let ak = st.tpm.attestation();
        RegistrationRequest {
            agent_id: self.agent_id.clone(),
            ek_public: ek.public(),
            ek_cert: ek.ek_cert.clone(),
            ak_public: ak.public(),
            ak_cert: ak.ak_cert.clone(),
            endpoint,
        }
    }

    pub async fn register(
        &self,
        registrar: &RegistrarClient,
        endpoint: Option<String>,
    ) -> Result<RegisterOutcome, ClientError> {
        registrar.register(&self.registration(endpoint)).await
    }

    pub fn log_snapshot(&self) -> MeasurementLog {
        self.lock().log.clone()
    }

    pub fn log_count(&self) -> usize {
        self.lock().log.count()
    }

    pub fn pcr(&self, index: u8) -> Result<DigestValue, TpmError> {
        self.lock().tpm.bank().read(index)
    }

    /// Read-only access to the TPM and log under the agent lock.
    pub fn with_state<R>(&self, f: impl FnOnce(&Tpm, &MeasurementLog) -> R) -> R {
        let st = self.lock();
        f(&st.tpm, &st.log)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum FetchError {
    #[error("agent unreachable: {0}")]
    Unreachable(String),
    #[error("offset out of range (agent has {count} entries)")]
    OffsetOutOfRange { count: usize },
    #[error("agent error: {0}")]
    Rejected(String),
}

/// Where the verifier gets integrity reports from.
#[async_trait]
pub trait AgentEndpoint: Send + Sync {
    async fn fetch_report(
        &self,
        nonce: &[u8],
        selection: PcrSelection,
        offset: usize,
    ) -> Result<IntegrityReport, FetchError>;
}

#[async_trait]
impl AgentEndpoint for Agent {
    async fn fetch_report(
        &self,
        nonce: &[u8],
        selection: PcrSelection,
        offset: usize,
    ) -> Result<IntegrityReport, FetchError> {
        self.handle_quote_request(nonce, selection, offset)
            .map_err(|e| match e {
                AgentError::OffsetOutOfRange { count, .. } => FetchError::OffsetOutOfRange { count },
                other => FetchError::Rejected(other.to_string()),
            })
    }
}

#[derive(Debug, Clone)]
pub struct AgentClient {
    api: ApiClient,
}

impl AgentClient {
    pub fn new(base: impl Into<String>, token: Option<String>) -> Self {
        AgentClient {
            api: ApiClient::new(base, token).with_timeout(std::time::Duration::from_secs(3)),
        }
    }

    pub async fn post_event(&self, event: &FileEvent) -> Result<EventResponse, ClientError> {
        self.api.post("/v1/events", event).await
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        self.api.get("/v1/health").await
    }
}

#[async_trait]
impl AgentEndpoint for AgentClient {
    async fn fetch_report(
        &self,
        nonce: &[u8],
        selection: PcrSelection,
        offset: usize,
    ) -> Result<IntegrityReport, FetchError> {
        let path = format!(
            "/v1/quote?nonce={}&mask={}&offset={offset}",
            hex::encode(nonce),
            selection.to_hex()
        );
        self.api.get(&path).await.map_err(|e| match e {
            ClientError::Transport(m) => FetchError::Unreachable(m),
            ClientError::Status { kind, message, .. } if kind == "offset-out-of-range" => {
                let count = message.rsplit(' ').next().and_then(|c| c.parse().ok()).unwrap_or(0);
                FetchError::OffsetOutOfRange { count }
            }
            other => FetchError::Rejected(other.to_string()),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventResponse {
    pub appended: bool,
    pub count: usize,
}

#[derive(Debug, Deserialize)]
struct QuoteParams {
    nonce: String,
    mask: String,
    #[serde(default)]
    offset: usize,
}

#[derive(Clone)]
struct AgentHttpState {
    agent: Arc<Agent>,
    token: String,
}

/// `GET /v1/quote`, `POST /v1/events`, `GET /v1/health`.
pub fn router(agent: Arc<Agent>, token: impl Into<String>) -> Router {
    Router::new()
        .route("/v1/quote", get(http_quote))
        .route("/v1/events", post(http_event))
        .route("/v1/health", get(|| async { Json(Health { ok: true }) }))
        .with_state(AgentHttpState {
            agent,
            token: token.into(),
        })
}

async fn http_quote(
    State(st): State<AgentHttpState>,
    headers: HeaderMap,
    Query(q): Query<QuoteParams>,
) -> Result<Json<IntegrityReport>, ApiError> {
    check_bearer(&headers, &st.token)?;
    let nonce = hex::decode(&q.nonce).map_err(|e| ApiError::bad_request("bad-nonce", e.to_string()))?;
    let selection = PcrSelection::from_hex(&q.mask).map_err(|e| ApiError::bad_request("bad-mask", e.to_string()))?;
    st.agent
        .handle_quote_request(&nonce, selection, q.offset)
        .map(Json)
        .map_err(|e| match e {
            AgentError::OffsetOutOfRange { count, .. } => ApiError::new(
                StatusCode::RANGE_NOT_SATISFIABLE,
                "offset-out-of-range",
                format!("log count {count}"),
            ),
            AgentError::Tpm(t) => ApiError::bad_request("bad-quote-request", t.to_string()),
        })
}

async fn http_event(
    State(st): State<AgentHttpState>,
    headers: HeaderMap,
    Json(ev): Json<FileEvent>,
) -> Result<Json<EventResponse>, ApiError> {
    check_bearer(&headers, &st.token)?;
    let appended = st
        .agent
        .ingest_event(&ev)
        .map_err(|e| ApiError::bad_request("bad-event", e.to_string()))?
        .is_some();
    Ok(Json(EventResponse {
        appended,
        count: st.agent.log_count(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ima::replay;
    use crate::pod::{parse_cgroup_path, PodRef};
    use crate::tpm::{verify_quote, IMA_PCR};

    fn event(path: &str, cg: &str) -> FileEvent {
        FileEvent {
            path: path.into(),
            content_digest: DigestValue::of(path.as_bytes()),
            cgpath: cg.into(),
            timestamp: 0,
        }
    }

    #[test]
    fn fresh_agent_reports_boot_aggregate() {
        let agent = Agent::new("w1", "worker1", Some(1));
        let r = agent
            .handle_quote_request(b"nonce-123", PcrSelection::ima_only(), 0)
            .unwrap();
        assert_eq!(r.entries.len(), 1);
        assert!(r.entries[0].is_boot_aggregate());
        assert_eq!(r.total_count, 1);
        assert_eq!(replay(&r.entries, DigestValue::ZERO).unwrap(), r.pcr(IMA_PCR).unwrap());
        assert!(r.pcrs_match_quote());

        let empty = agent
            .handle_quote_request(b"nonce-456", PcrSelection::ima_only(), 1)
            .unwrap();
        assert!(empty.entries.is_empty());
        let ak = agent.registration(None).ak_public;
        assert!(verify_quote(&empty.quote, &ak, b"nonce-456").is_ok());
        assert_eq!(empty.quote.composite_digest, r.quote.composite_digest);
        assert_ne!(empty.quote.signature, r.quote.signature);

        assert_eq!(
            agent.handle_quote_request(b"nonce-789", PcrSelection::ima_only(), 2),
            Err(AgentError::OffsetOutOfRange { offset: 2, count: 1 })
        );
    }

    #[test]
    fn ingest_attribution_and_dedup() {
        let agent = Agent::new("w1", "worker1", Some(1));
        let uid = "3b4c9f2a-1d2e-4f5a-8b6c-7d8e9f0a1b2c";
        let pod_ev = event("/usr/bin/curl", &format!("/kubepods/besteffort/pod{uid}/c"));
        let e = agent.ingest_event(&pod_ev).unwrap().unwrap();
        assert_eq!(e.template_name(), TemplateName::ImaCgn);
        assert!(matches!(
            parse_cgroup_path(e.data.cgpath().unwrap()),
            PodRef::Pod { .. }
        ));
        assert!(agent.ingest_event(&pod_ev).unwrap().is_none());

        let host = agent
            .ingest_event(&event("/usr/bin/kubelet", "/system.slice/kubelet.service"))
            .unwrap()
            .unwrap();
        assert_eq!(parse_cgroup_path(host.data.cgpath().unwrap()), PodRef::NodeScope);
        assert_eq!(agent.log_count(), 3);
    }

    #[test]
    fn snapshot_is_consistent_under_concurrent_ingest() {
        let agent = Arc::new(Agent::new("w1", "worker1", Some(3)));
        let writer = {
            let agent = agent.clone();
            std::thread::spawn(move || {
                for i in 0..2000 {
                    agent.ingest_event(&event(&format!("/usr/bin/f{i}"), "/")).unwrap();
                }
            })
        };
        let (mut running, mut offset) = (DigestValue::ZERO, 0);
        for i in 0..1000u32 {
            let nonce = format!("nonce-{i:08}");
            let r = agent
                .handle_quote_request(nonce.as_bytes(), PcrSelection::ima_only(), offset)
                .unwrap();
            assert_eq!(r.total_count, offset + r.entries.len());
            running = replay(&r.entries, running).unwrap();
            assert_eq!(running, r.pcr(IMA_PCR).unwrap());
            assert!(r.pcrs_match_quote());
            offset = r.total_count;
        }
        writer.join().unwrap();
    }

    #[test]
    fn report_wire_round_trip() {
        let agent = Agent::new("w1", "worker1", Some(1));
        agent.ingest_event(&event("/opt/my app", "/kubepods/x y")).unwrap();
        let r = agent
            .handle_quote_request(b"nonce-123", PcrSelection::ima_only(), 0)
            .unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<IntegrityReport>(&json).unwrap(), r);
    }
}
