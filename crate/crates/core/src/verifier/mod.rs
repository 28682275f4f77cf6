// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

//! Continuous attestation engine.
//!
//! Each enrolled agent has a session polled on its own task. A cycle runs
//! three checks strictly in order and stops at the first failure:
//!
//! 1. the quote verifies under the registered AK and carries the fresh nonce;
//! 2. the new log segment replays from the session's running PCR value to
//!    the quoted PCR 10;
//! 3. the segment is evaluated against the policy and trust is derived.

mod audit;
mod http;
mod remediation;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::{Arc, Mutex, RwLock, Weak};
use std::time::Duration;

use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::task::JoinHandle;

use crate::agent::{AgentClient, AgentEndpoint, FetchError, IntegrityReport};
use crate::api::{now_ms, ClientError};
use crate::digest::DigestValue;
use crate::ima::replay;
use crate::pod::{PodRef, PodUid};
use crate::policy::{
    derive_trust, transitions, CompiledPolicy, PolicyBundle, PolicyError, TrustDelta, TrustKind, TrustMap, ViolationKey,
};
use crate::registrar::{IdentityDirectory, IdentityRecord};
use crate::tpm::{verify_ak_certificate, verify_quote, PublicKey, IMA_PCR};

pub use audit::{AuditLog, AuditOutcome, AuditRecord};
pub use http::{router, EnrollRequest, ResetRequest, StatusDocument, VerifierClient};
pub use remediation::{deliver_with_retry, RemediationEvent, RemediationSink, RetryPolicy, WebhookSink};

pub const DEFAULT_INTERVAL: Duration = Duration::from_secs(2);
pub const DEFAULT_UNREACHABLE_GRACE: u32 = 5;
pub const NONCE_LEN: usize = 20;

#[derive(Debug, Clone)]
pub struct VerifierConfig {
    pub default_interval: Duration,
    /// Consecutive missed polls tolerated before the node turns Untrusted.
    pub unreachable_grace: u32,
    pub retry: RetryPolicy,
    /// Start a polling task on enrollment. Tests drive cycles by hand.
    pub auto_poll: bool,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            default_interval: DEFAULT_INTERVAL,
            unreachable_grace: DEFAULT_UNREACHABLE_GRACE,
            retry: RetryPolicy::default(),
            auto_poll: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum VerifierError {
    #[error("agent `{0}` is not registered")]
    UnknownAgent(String),
    #[error("agent `{0}` is not enrolled")]
    NotEnrolled(String),
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("registrar: {0}")]
    Directory(#[from] ClientError),
    #[error("registered identity is invalid: {0}")]
    Identity(String),
    #[error("cannot reach agent: {0}")]
    Connect(String),
    #[error("unknown scope {0}")]
    UnknownScope(PodRef),
}

impl VerifierError {
    pub fn kind(&self) -> &'static str {
        match self {
            VerifierError::UnknownAgent(_) | VerifierError::NotEnrolled(_) => "not-found",
            VerifierError::Policy(_) => "invalid-policy",
            VerifierError::Directory(_) => "registrar",
            VerifierError::Identity(_) => "invalid-identity",
            VerifierError::Connect(_) => "connect",
            VerifierError::UnknownScope(_) => "unknown-scope",
        }
    }
}

/// Resolves a registered identity to something that serves reports.
pub trait AgentConnector: Send + Sync {
    fn connect(&self, record: &IdentityRecord) -> Result<Arc<dyn AgentEndpoint>, String>;
}

/// Connects over HTTP to the endpoint stored at registration.
#[derive(Debug, Clone, Default)]
pub struct HttpConnector {
    pub token: Option<String>,
}

impl AgentConnector for HttpConnector {
    fn connect(&self, record: &IdentityRecord) -> Result<Arc<dyn AgentEndpoint>, String> {
        let endpoint = record
            .endpoint
            .as_ref()
            .ok_or_else(|| format!("agent `{}` registered without an endpoint", record.agent_id))?;
        Ok(Arc::new(AgentClient::new(endpoint.clone(), self.token.clone())))
    }
}

/// In-process agents keyed by agent id.
#[derive(Default)]
pub struct LocalConnector {
    agents: RwLock<HashMap<String, Arc<dyn AgentEndpoint>>>,
}

impl LocalConnector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, agent_id: impl Into<String>, endpoint: Arc<dyn AgentEndpoint>) {
        self.agents
            .write()
            .expect("connector lock")
            .insert(agent_id.into(), endpoint);
    }
}

impl AgentConnector for LocalConnector {
    fn connect(&self, record: &IdentityRecord) -> Result<Arc<dyn AgentEndpoint>, String> {
        self.agents
            .read()
            .expect("connector lock")
            .get(&record.agent_id)
            .cloned()
            .ok_or_else(|| format!("no local agent `{}`", record.agent_id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentStatus {
    pub agent_id: String,
    pub trust: TrustMap,
    pub last_outcome: Option<AuditOutcome>,
    pub last_cycle_at: Option<u64>,
    pub verified_count: usize,
    pub cycles: u64,
    /// Number of times check (c) ran for this session.
    pub policy_evaluations: u64,
    pub consecutive_misses: u32,
    pub interval_ms: u64,
    #[serde(default)]
    pub pod_labels: BTreeMap<PodUid, String>,
}

impl AgentStatus {
    pub fn label(&self, scope: &PodRef) -> String {
        match scope {
            PodRef::NodeScope => "node".to_string(),
            PodRef::Pod { uid } => self.pod_labels.get(uid).cloned().unwrap_or_else(|| uid.to_string()),
        }
    }

    pub fn pod_by_label(&self, label: &str) -> Option<&PodUid> {
        self.pod_labels.iter().find(|(_, l)| *l == label).map(|(u, _)| u)
    }
}

/// Verifier-side state for one enrolled agent.
#[derive(Debug)]
pub struct AgentSession {
    pub agent_id: String,
    pub policy: CompiledPolicy,
    pub running_pcr: DigestValue,
    pub verified_count: usize,
    pub trust: TrustMap,
    pub interval: Duration,
    ak_public: PublicKey,
    outstanding_nonce: Option<Vec<u8>>,
    consecutive_misses: u32,
    seen_violations: HashSet<ViolationKey>,
    policy_evaluations: u64,
    cycles: u64,
    last_outcome: Option<AuditOutcome>,
    last_cycle_at: Option<u64>,
    /// Bumped on every reset of a scope; an Untrusted transition is
    /// remediated once per (scope, epoch).
    reset_epochs: HashMap<PodRef, u64>,
    remediated: HashSet<(PodRef, u64)>,
}

impl AgentSession {
    fn status(&self) -> AgentStatus {
        AgentStatus {
            agent_id: self.agent_id.clone(),
            trust: self.trust.clone(),
            last_outcome: self.last_outcome,
            last_cycle_at: self.last_cycle_at,
            verified_count: self.verified_count,
            cycles: self.cycles,
            policy_evaluations: self.policy_evaluations,
            consecutive_misses: self.consecutive_misses,
            interval_ms: self.interval.as_millis() as u64,
            pod_labels: self.policy.bundle().pod_labels.clone(),
        }
    }

    pub fn outstanding_nonce(&self) -> Option<&[u8]> {
        self.outstanding_nonce.as_deref()
    }
}

struct SessionSlot {
    session: tokio::sync::Mutex<AgentSession>,
    status: RwLock<AgentStatus>,
    endpoint: Arc<dyn AgentEndpoint>,
    poller: Mutex<Option<JoinHandle<()>>>,
}

impl Drop for SessionSlot {
    fn drop(&mut self) {
        if let Some(h) = self.poller.get_mut().ok().and_then(|p| p.take()) {
            h.abort();
        }
    }
}

struct Inner {
    config: VerifierConfig,
    directory: Arc<dyn IdentityDirectory>,
    connector: Arc<dyn AgentConnector>,
    sessions: RwLock<BTreeMap<String, Arc<SessionSlot>>>,
    audit: AuditLog,
    sink: Option<Arc<dyn RemediationSink>>,
    emitted: Mutex<Vec<RemediationEvent>>,
}

#[derive(Clone)]
pub struct Verifier {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Verifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Verifier")
            .field("config", &self.inner.config)
            .finish_non_exhaustive()
    }
}

enum CycleFailure {
    Quote(String),
    Replay(String),
}

impl Verifier {
    pub fn new(
        config: VerifierConfig,
        directory: Arc<dyn IdentityDirectory>,
        connector: Arc<dyn AgentConnector>,
        audit: AuditLog,
        sink: Option<Arc<dyn RemediationSink>>,
    ) -> Self {
        Verifier {
            inner: Arc::new(Inner {
                config,
                directory,
                connector,
                sessions: RwLock::new(BTreeMap::new()),
                audit,
                sink,
                emitted: Mutex::new(Vec::new()),
            }),
        }
    }

    pub fn config(&self) -> &VerifierConfig {
        &self.inner.config
    }

    pub fn audit(&self) -> &AuditLog {
        &self.inner.audit
    }

    /// Every remediation event emitted so far, in order.
    pub fn remediation_events(&self) -> Vec<RemediationEvent> {
        self.inner.emitted.lock().expect("emitted lock").clone()
    }

    fn slot(&self, agent_id: &str) -> Result<Arc<SessionSlot>, VerifierError> {
        self.inner
            .sessions
            .read()
            .expect("sessions lock")
            .get(agent_id)
            .cloned()
            .ok_or_else(|| VerifierError::NotEnrolled(agent_id.to_string()))
    }

    /// Creates (or replaces) the session for `agent_id`.
    ///
    /// Re-enrolling replaces the policy and restarts log replay from offset
    /// 0. The node state and the states of pods that stay registered carry
    /// over; pods dropped from the registered set are treated as retired
    /// and their entries are skipped.
    pub async fn enroll_agent(
        &self,
        agent_id: &str,
        bundle: PolicyBundle,
        interval: Option<Duration>,
    ) -> Result<AgentStatus, VerifierError> {
        let record = self
            .inner
            .directory
            .lookup(agent_id)
            .await?
            .ok_or_else(|| VerifierError::UnknownAgent(agent_id.to_string()))?;
        if record.ak_cert.ak_public != record.ak_public {
            return Err(VerifierError::Identity("AK certificate names a different key".into()));
        }
        verify_ak_certificate(&record.ak_cert, &record.ek_public)
            .map_err(|e| VerifierError::Identity(e.to_string()))?;
        let endpoint = self.inner.connector.connect(&record).map_err(VerifierError::Connect)?;

        let previous = self.slot(agent_id).ok();
        let (retired, trust, reset_epochs, remediated) = match &previous {
            Some(prev) => {
                let s = prev.session.lock().await;
                let mut retired: BTreeSet<PodUid> = s.policy.retired_pods().clone();
                retired.extend(s.policy.registered_pods().iter().cloned());
                (
                    retired,
                    s.trust.rebind(&bundle.registered_pods),
                    s.reset_epochs.clone(),
                    s.remediated.clone(),
                )
            }
            None => (
                BTreeSet::new(),
                TrustMap::for_pods(&bundle.registered_pods),
                HashMap::new(),
                HashSet::new(),
            ),
        };
        let policy = CompiledPolicy::compile(&bundle, retired)?;
        let interval = interval.unwrap_or(self.inner.config.default_interval);
        let session = AgentSession {
            agent_id: agent_id.to_string(),
            policy,
            running_pcr: DigestValue::ZERO,
            verified_count: 0,
            trust,
            interval,
            ak_public: record.ak_public,
            outstanding_nonce: None,
            consecutive_misses: 0,
            seen_violations: HashSet::new(),
            policy_evaluations: 0,
            cycles: 0,
            last_outcome: None,
            last_cycle_at: None,
            reset_epochs,
            remediated,
        };
        let status = session.status();
        let slot = Arc::new(SessionSlot {
            session: tokio::sync::Mutex::new(session),
            status: RwLock::new(status.clone()),
            endpoint,
            poller: Mutex::new(None),
        });
        self.inner
            .sessions
            .write()
            .expect("sessions lock")
            .insert(agent_id.to_string(), slot.clone());
        if let Some(prev) = previous {
            if let Some(h) = prev.poller.lock().expect("poller lock").take() {
                h.abort();
            }
        }
        self.inner.audit.append(
            AuditRecord::new(agent_id, AuditOutcome::Enrolled)
                .with_detail(format!("{} registered pods", bundle.registered_pods.len())),
        );
        if self.inner.config.auto_poll {
            self.start_polling(agent_id, interval, &slot);
        }
        Ok(status)
    }

    fn start_polling(&self, agent_id: &str, interval: Duration, slot: &SessionSlot) {
        let weak: Weak<Inner> = Arc::downgrade(&self.inner);
        let id = agent_id.to_string();
        let handle = tokio::spawn(async move {
            let mut ticker = tokio::time::interval(interval);
            ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                ticker.tick().await;
                let Some(inner) = weak.upgrade() else { break };
                let v = Verifier { inner };
                if let Err(e) = v.attestation_cycle(&id).await {
                    tracing::debug!(agent = %id, "polling stopped: {e}");
                    break;
                }
            }
        });
        *slot.poller.lock().expect("poller lock") = Some(handle);
    }

    /// Stops polling and forgets the session.
    pub fn unenroll(&self, agent_id: &str) -> bool {
        self.inner
            .sessions
            .write()
            .expect("sessions lock")
            .remove(agent_id)
            .is_some()
    }

    pub fn get_status(&self, agent_id: &str) -> Result<AgentStatus, VerifierError> {
        let slot = self.slot(agent_id)?;
        let st = slot.status.read().expect("status lock").clone();
        Ok(st)
    }

    pub fn all_status(&self) -> Vec<AgentStatus> {
        let slots: Vec<Arc<SessionSlot>> = self
            .inner
            .sessions
            .read()
            .expect("sessions lock")
            .values()
            .cloned()
            .collect();
        slots
            .iter()
            .map(|s| s.status.read().expect("status lock").clone())
            .collect()
    }

    pub async fn reset_trust(&self, agent_id: &str, scope: &PodRef) -> Result<AgentStatus, VerifierError> {
        let slot = self.slot(agent_id)?;
        let mut s = slot.session.lock().await;
        let before = s.trust.clone();
        s.trust
            .reset(scope)
            .map_err(|_| VerifierError::UnknownScope(scope.clone()))?;
        *s.reset_epochs.entry(scope.clone()).or_default() += 1;
        let mut rec = AuditRecord::new(agent_id, AuditOutcome::Reset).with_detail(format!("manual reset of {scope}"));
        rec.trust_delta = transitions(&before, &s.trust);
        self.inner.audit.append(rec);
        let status = s.status();
        *slot.status.write().expect("status lock") = status.clone();
        Ok(status)
    }

    /// One challenge/verify round for `agent_id`.
    pub async fn attestation_cycle(&self, agent_id: &str) -> Result<AuditRecord, VerifierError> {
        let slot = self.slot(agent_id)?;
        let mut s = slot.session.lock().await;
        let record = self.cycle_locked(&mut s, slot.endpoint.as_ref()).await;
        *slot.status.write().expect("status lock") = s.status();
        Ok(record)
    }

    async fn cycle_locked(&self, s: &mut AgentSession, endpoint: &dyn AgentEndpoint) -> AuditRecord {
        let mut nonce = vec![0u8; NONCE_LEN];
        OsRng.fill_bytes(&mut nonce);
        s.outstanding_nonce = Some(nonce.clone());
        s.cycles += 1;
        let selection = s.policy.pcr_selection();

        let mut offset = s.verified_count;
        let mut fetched = endpoint.fetch_report(&nonce, selection, offset).await;
        if let Err(FetchError::OffsetOutOfRange { count }) = &fetched {
            tracing::warn!(agent = %s.agent_id, offset, count, "agent log shorter than verified prefix; resyncing from 0");
            s.running_pcr = DigestValue::ZERO;
            s.verified_count = 0;
            s.seen_violations.clear();
            offset = 0;
            fetched = endpoint.fetch_report(&nonce, selection, offset).await;
        }

        let now = now_ms();
        let before = s.trust.clone();
        let mut rec = AuditRecord::new(s.agent_id.clone(), AuditOutcome::Ok);
        rec.nonce = Some(hex::encode(&nonce));

        match fetched {
            Err(e) => {
                s.consecutive_misses += 1;
                rec.outcome = AuditOutcome::AgentUnreachable;
                rec.detail = Some(format!("{e} (miss {})", s.consecutive_misses));
                if s.consecutive_misses >= self.inner.config.unreachable_grace {
                    s.trust
                        .mark_node_untrusted(now, format!("unreachable: {} consecutive misses", s.consecutive_misses));
                }
            }
            Ok(report) => {
                s.consecutive_misses = 0;
                rec.composite_digest = Some(report.quote.composite_digest);
                match self.verify_and_evaluate(s, &report, &nonce, offset, now) {
                    Ok(rec_update) => {
                        rec.outcome = rec_update.0;
                        rec.new_violations = rec_update.1;
                    }
                    Err(CycleFailure::Quote(why)) => {
                        rec.outcome = AuditOutcome::QuoteInvalid;
                        s.trust.mark_node_untrusted(now, format!("quote-invalid: {why}"));
                        rec.detail = Some(why);
                    }
                    Err(CycleFailure::Replay(why)) => {
                        rec.outcome = AuditOutcome::ReplayMismatch;
                        s.trust.mark_node_untrusted(now, format!("replay-mismatch: {why}"));
                        rec.detail = Some(why);
                    }
                }
            }
        }
        s.outstanding_nonce = None;
        s.last_outcome = Some(rec.outcome);
        s.last_cycle_at = Some(now);
        rec.trust_delta = transitions(&before, &s.trust);
        let events = self.remediation_for(s, &rec.trust_delta);
        if !events.is_empty() && rec.detail.is_none() && self.inner.sink.is_none() {
            rec.detail = Some(format!("remediation (audit only): {}", summarize_events(&events)));
        }
        let rec = self.inner.audit.append(rec);
        for ev in events {
            self.emit_remediation(ev);
        }
        rec
    }

    /// Checks (a), (b), (c) in order. Policy evaluation only runs once the
    /// quote and the replay have both been accepted.
    fn verify_and_evaluate(
        &self,
        s: &mut AgentSession,
        report: &IntegrityReport,
        nonce: &[u8],
        offset: usize,
        now: u64,
    ) -> Result<(AuditOutcome, Vec<crate::policy::Violation>), CycleFailure> {
        // (a) quote signature and freshness
        if report.agent_id != s.agent_id {
            return Err(CycleFailure::Quote(format!("report from `{}`", report.agent_id)));
        }
        verify_quote(&report.quote, &s.ak_public, nonce).map_err(|r| CycleFailure::Quote(r.to_string()))?;
        if report.quote.pcr_selection != s.policy.pcr_selection() {
            return Err(CycleFailure::Quote("PCR selection differs from request".into()));
        }

        // (b) the log re-hashes to the quoted PCR 10
        if report.offset != offset || report.total_count != offset + report.entries.len() {
            return Err(CycleFailure::Replay(format!(
                "segment [{}..{}) does not match requested offset {offset}",
                report.offset, report.total_count
            )));
        }
        if !report.pcrs_match_quote() {
            return Err(CycleFailure::Replay(
                "reported PCR values do not hash to the quoted composite".into(),
            ));
        }
        let running = replay(&report.entries, s.running_pcr)
            .map_err(|e| CycleFailure::Replay(format!("entry {}: template hash mismatch", offset + e.index())))?;
        if Some(running) != report.pcr(IMA_PCR) {
            return Err(CycleFailure::Replay(format!(
                "replayed PCR 10 {running} differs from quoted value"
            )));
        }

        // (c) policy
        let eval = s.policy.evaluate_segment(offset, &report.entries);
        s.policy_evaluations += 1;
        let new_violations: Vec<_> = eval
            .all_violations()
            .filter(|v| s.seen_violations.insert(v.key()))
            .cloned()
            .collect();
        s.trust = derive_trust(&s.trust, &eval, now);
        s.running_pcr = running;
        s.verified_count = report.total_count;
        let outcome = if eval.is_clean() {
            AuditOutcome::Ok
        } else {
            AuditOutcome::PolicyViolations
        };
        Ok((outcome, new_violations))
    }

    fn remediation_for(&self, s: &mut AgentSession, delta: &[TrustDelta]) -> Vec<RemediationEvent> {
        let mut out = Vec::new();
        for d in delta.iter().filter(|d| d.to == TrustKind::Untrusted) {
            let epoch = s.reset_epochs.get(&d.scope).copied().unwrap_or(0);
            if !s.remediated.insert((d.scope.clone(), epoch)) {
                continue;
            }
            let Some(state) = s.trust.get(&d.scope) else { continue };
            let transition_at = match state {
                crate::policy::TrustState::Untrusted { since, .. } => *since,
                _ => continue,
            };
            let mut cause: Vec<String> = state.reasons().to_vec();
            cause.extend(state.violations().iter().map(|v| v.path.clone()));
            out.push(RemediationEvent {
                agent_id: s.agent_id.clone(),
                scope: d.scope.clone(),
                action: s.policy.bundle().remediation.action_for(&d.scope),
                cause: cause.join("; "),
                violations: state.violations().to_vec(),
                transition_at,
            });
        }
        out
    }

    /// Records the event and, when a webhook is configured, delivers it in
    /// the background with bounded retries. Failures end up in the audit log.
    pub fn emit_remediation(&self, event: RemediationEvent) -> Option<JoinHandle<()>> {
        self.inner.emitted.lock().expect("emitted lock").push(event.clone());
        let sink = self.inner.sink.clone()?;
        let inner = self.inner.clone();
        Some(tokio::spawn(async move {
            if let Err(e) = deliver_with_retry(sink.as_ref(), &event, inner.config.retry).await {
                inner.audit.append(
                    AuditRecord::new(event.agent_id.clone(), AuditOutcome::RemediationFailed)
                        .with_detail(format!("{} {:?}: {e}", event.scope, event.action)),
                );
            }
        }))
    }
}

fn summarize_events(events: &[RemediationEvent]) -> String {
    events
        .iter()
        .map(|e| format!("{} {:?}", e.scope, e.action))
        .collect::<Vec<_>>()
        .join(", ")
}
