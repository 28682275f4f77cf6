// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::api::now_ms;
use crate::digest::DigestValue;
use crate::policy::{TrustDelta, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditOutcome {
    Ok,
    QuoteInvalid,
    ReplayMismatch,
    PolicyViolations,
    AgentUnreachable,
    /// Operator reset of a scope.
    Reset,
    Enrolled,
    RemediationFailed,
}

impl AuditOutcome {
    /// Outcomes recorded by an attestation cycle, one per cycle.
    pub fn is_cycle(self) -> bool {
        matches!(
            self,
            AuditOutcome::Ok
                | AuditOutcome::QuoteInvalid
                | AuditOutcome::ReplayMismatch
                | AuditOutcome::PolicyViolations
                | AuditOutcome::AgentUnreachable
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub timestamp: u64,
    pub agent_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonce: Option<String>,
    pub outcome: AuditOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composite_digest: Option<DigestValue>,
    #[serde(default)]
    pub new_violations: Vec<Violation>,
    #[serde(default)]
    pub trust_delta: Vec<TrustDelta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl AuditRecord {
    pub fn new(agent_id: impl Into<String>, outcome: AuditOutcome) -> Self {
        AuditRecord {
            seq: 0,
            timestamp: 0,
            agent_id: agent_id.into(),
            nonce: None,
            outcome,
            composite_digest: None,
            new_violations: Vec::new(),
            trust_delta: Vec::new(),
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

struct AuditInner {
    records: Vec<AuditRecord>,
    last_ts: HashMap<String, u64>,
    file: Option<File>,
}

/// Append-only audit trail, optionally mirrored to a JSON-lines file.
pub struct AuditLog {
    inner: Mutex<AuditInner>,
}

impl Default for AuditLog {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl AuditLog {
    pub fn in_memory() -> Self {
        AuditLog {
            inner: Mutex::new(AuditInner {
                records: Vec::new(),
                last_ts: HashMap::new(),
                file: None,
            }),
        }
    }

    pub fn with_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let log = Self::in_memory();
        log.inner.lock().expect("audit lock").file = Some(file);
        Ok(log)
    }

    /// Stamps `seq` and a per-agent non-decreasing timestamp, then appends.
    pub fn append(&self, mut record: AuditRecord) -> AuditRecord {
        let mut inner = self.inner.lock().expect("audit lock");
        let last = inner.last_ts.get(&record.agent_id).copied().unwrap_or(0);
        record.timestamp = now_ms().max(last);
        record.seq = inner.records.len() as u64;
        inner.last_ts.insert(record.agent_id.clone(), record.timestamp);
        if let Some(f) = inner.file.as_mut() {
            let line = serde_json::to_string(&record).expect("audit record serializes");
            if let Err(e) = writeln!(f, "{line}") {
                tracing::error!("audit file write failed: {e}");
            }
        }
        inner.records.push(record.clone());
        record
    }

    pub fn since(&self, ts: u64) -> Vec<AuditRecord> {
        let inner = self.inner.lock().expect("audit lock");
        inner.records.iter().filter(|r| r.timestamp >= ts).cloned().collect()
    }

    pub fn for_agent(&self, agent_id: &str) -> Vec<AuditRecord> {
        let inner = self.inner.lock().expect("audit lock");
        inner
            .records
            .iter()
            .filter(|r| r.agent_id == agent_id)
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("audit lock").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
