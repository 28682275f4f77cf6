// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

//! Operator-side helpers behind the `podseal` tenant commands.

use std::fmt::Write as _;
use std::path::Path;

use rand::rngs::OsRng;
use rand::RngCore;
use thiserror::Error;

use crate::agent::{AgentClient, AgentEndpoint};
use crate::api::ClientError;
use crate::ima::{parse_ascii, ParseError};
use crate::pod::{PodRef, PodUid};
use crate::policy::{build_allowlist_from_log, AllowList, BundleError, PolicyBundle, TrustKind};
use crate::tpm::PcrSelection;
use crate::verifier::AgentStatus;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_UNTRUSTED: i32 = 2;
/// Nothing is Untrusted but some scope has not been judged yet.
pub const EXIT_PENDING: i32 = 3;

#[derive(Debug, Error)]
pub enum TenantError {
    #[error("{0}")]
    Client(#[from] ClientError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Bundle(#[from] BundleError),
    #[error("measurement list line {}: {}", .0.line, .0.kind)]
    Log(ParseError),
    #[error("{0}")]
    Scope(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl TenantError {
    pub fn kind(&self) -> &str {
        match self {
            TenantError::Client(e) => e.kind(),
            TenantError::Io { .. } => "io",
            TenantError::Bundle(_) => "invalid-bundle",
            TenantError::Log(_) => "invalid-log",
            TenantError::Scope(_) => "unknown-scope",
            TenantError::Usage(_) => "usage",
            TenantError::Failed(_) => "failed",
        }
    }

    /// The single line printed on failure.
    pub fn line(&self) -> String {
        let msg = match self {
            TenantError::Client(ClientError::Transport(m) | ClientError::Decode(m)) => m.clone(),
            TenantError::Client(ClientError::Status { status, message, .. }) => format!("{status} {message}"),
            other => other.to_string(),
        };
        let msg = msg.replace('\n', " ");
        format!("error: {}: {msg}", self.kind())
    }
}

pub fn read_file(path: &Path) -> Result<String, TenantError> {
    std::fs::read_to_string(path).map_err(|source| TenantError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_file(path: &Path, content: &str) -> Result<(), TenantError> {
    std::fs::write(path, content).map_err(|source| TenantError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// 0 if every scope is Trusted, 2 if any is Untrusted, 3 otherwise.
pub fn status_exit_code(statuses: &[AgentStatus]) -> i32 {
    let kinds: Vec<TrustKind> = statuses
        .iter()
        .flat_map(|s| s.trust.scopes().map(|(_, st)| st.kind()).collect::<Vec<_>>())
        .collect();
    if kinds.contains(&TrustKind::Untrusted) {
        EXIT_UNTRUSTED
    } else if kinds.iter().all(|k| *k == TrustKind::Trusted) {
        EXIT_OK
    } else {
        EXIT_PENDING
    }
}

/// One line per scope, then one `violation` line per finding and one
/// `reason` line per non-policy cause, indented under its scope.
pub fn render_table(statuses: &[AgentStatus]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:<44} {:<10} {:<10} {:>4}  LAST",
        "AGENT", "SCOPE", "NAME", "STATE", "VIOL"
    );
    for s in statuses {
        let last = s
            .last_outcome
            .map(|o| {
                serde_json::to_value(o)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default()
            })
            .unwrap_or_else(|| "-".into());
        for (scope, st) in s.trust.scopes() {
            let name = match &scope {
                PodRef::NodeScope => "-".to_string(),
                PodRef::Pod { .. } => s.label(&scope),
            };
            let _ = writeln!(
                out,
                "{:<12} {:<44} {:<10} {:<10} {:>4}  {}",
                s.agent_id,
                scope.to_string(),
                name,
                st.kind().to_string(),
                st.violations().len(),
                if scope == PodRef::NodeScope { last.as_str() } else { "" }
            );
            for v in st.violations() {
                let digest = v.observed.map(|d| d.to_hex()).unwrap_or_else(|| "-".into());
                let _ = writeln!(out, "  violation {} {} {}", v.path, v.reason.as_str(), digest);
            }
            for r in st.reasons() {
                let _ = writeln!(out, "  reason {r}");
            }
        }
    }
    out
}

pub fn render_structured(statuses: &[AgentStatus]) -> String {
    serde_json::to_string_pretty(&crate::verifier::StatusDocument {
        agents: statuses.to_vec(),
    })
    .expect("status serializes")
}

/// Accepts `node`, `pod/<uid>`, a bare UID, or a pod name known to the
/// agent's bundle.
pub fn resolve_scope(status: Option<&AgentStatus>, spec: &str) -> Result<PodRef, TenantError> {
    if let Ok(scope) = spec.parse::<PodRef>() {
        return Ok(scope);
    }
    if let Ok(uid) = spec.parse::<PodUid>() {
        return Ok(PodRef::pod(uid));
    }
    status
        .and_then(|s| s.pod_by_label(spec))
        .map(|u| PodRef::pod(u.clone()))
        .ok_or_else(|| TenantError::Scope(format!("`{spec}` is not node, a pod uid, or a known pod name")))
}

pub fn allowlist_from_ascii(text: &str, scope: &PodRef) -> Result<AllowList, TenantError> {
    let log = parse_ascii(text).map_err(TenantError::Log)?;
    Ok(build_allowlist_from_log(log.entries(), scope))
}

/// Pulls the agent's whole log. The quote is not checked: this is for
/// building golden lists from a node known to be clean.
pub async fn allowlist_from_agent(url: &str, token: Option<String>, scope: &PodRef) -> Result<AllowList, TenantError> {
    let client = AgentClient::new(url, token);
    let mut nonce = [0u8; 20];
    OsRng.fill_bytes(&mut nonce);
    let report = client
        .fetch_report(&nonce, PcrSelection::ima_only(), 0)
        .await
        .map_err(|e| TenantError::Failed(e.to_string()))?;
    Ok(build_allowlist_from_log(&report.entries, scope))
}

pub fn allowlist_to_toml(al: &AllowList) -> String {
    toml::to_string_pretty(al).expect("allowlist serializes")
}

/// Installs `al` for `scope`; pod scopes are registered, optionally named.
pub fn merge_into_bundle(bundle: &mut PolicyBundle, scope: &PodRef, al: AllowList, label: Option<&str>) {
    match scope {
        PodRef::NodeScope => bundle.node_allowlist.merge(&al),
        PodRef::Pod { uid } => {
            let mut merged = bundle.pod_allowlists.remove(uid).unwrap_or_default();
            merged.merge(&al);
            bundle.register_pod(uid.clone(), merged);
            if let Some(l) = label {
                bundle.pod_labels.insert(uid.clone(), l.to_string());
            }
        }
    }
}

/// Moves everything the bundle holds for pod `name` (a label or UID) to
/// `new_uid`. This is the manual step after a pod restarts with a new UID.
pub fn rebind_pod(bundle: &mut PolicyBundle, name: &str, new_uid: PodUid) -> Result<PodUid, TenantError> {
    let old = bundle
        .pod_labels
        .iter()
        .find(|(_, l)| *l == name)
        .map(|(u, _)| u.clone())
        .or_else(|| name.parse::<PodUid>().ok())
        .filter(|u| bundle.registered_pods.contains(u))
        .ok_or_else(|| TenantError::Scope(format!("bundle has no registered pod `{name}`")))?;
    bundle.registered_pods.remove(&old);
    bundle.registered_pods.insert(new_uid.clone());
    if let Some(al) = bundle.pod_allowlists.remove(&old) {
        bundle.pod_allowlists.insert(new_uid.clone(), al);
    }
    if let Some(r) = bundle.pod_exclude_rules.remove(&old) {
        bundle.pod_exclude_rules.insert(new_uid.clone(), r);
    }
    if let Some(a) = bundle.remediation.pods.remove(&old) {
        bundle.remediation.pods.insert(new_uid.clone(), a);
    }
    if let Some(l) = bundle.pod_labels.remove(&old) {
        bundle.pod_labels.insert(new_uid, l);
    }
    Ok(old)
}
