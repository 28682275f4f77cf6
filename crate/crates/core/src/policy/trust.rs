// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{EvaluationResult, Violation};
use crate::pod::{PodRef, PodUid};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum TrustState {
    #[default]
    Start,
    Trusted {
        since: u64,
    },
    Untrusted {
        since: u64,
        violations: Vec<Violation>,
        reasons: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrustKind {
    Start,
    Trusted,
    Untrusted,
}

impl fmt::Display for TrustKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrustKind::Start => "Start",
            TrustKind::Trusted => "Trusted",
            TrustKind::Untrusted => "Untrusted",
        })
    }
}

impl TrustState {
    pub fn kind(&self) -> TrustKind {
        match self {
            TrustState::Start => TrustKind::Start,
            TrustState::Trusted { .. } => TrustKind::Trusted,
            TrustState::Untrusted { .. } => TrustKind::Untrusted,
        }
    }

    pub fn is_trusted(&self) -> bool {
        self.kind() == TrustKind::Trusted
    }

    pub fn is_untrusted(&self) -> bool {
        self.kind() == TrustKind::Untrusted
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            TrustState::Untrusted { violations, .. } => violations,
            _ => &[],
        }
    }

    pub fn reasons(&self) -> &[String] {
        match self {
            TrustState::Untrusted { reasons, .. } => reasons,
            _ => &[],
        }
    }

    /// Moves to (or stays in) Untrusted, accumulating new findings.
    fn fail(&mut self, now: u64, new_violations: &[Violation], reason: Option<String>) {
        match self {
            TrustState::Untrusted {
                violations, reasons, ..
            } => {
                for v in new_violations {
                    if !violations.iter().any(|old| old.key() == v.key()) {
                        violations.push(v.clone());
                    }
                }
                if let Some(r) = reason {
                    if !reasons.contains(&r) {
                        reasons.push(r);
                    }
                }
            }
            _ => {
                *self = TrustState::Untrusted {
                    since: now,
                    violations: new_violations.to_vec(),
                    reasons: reason.into_iter().collect(),
                }
            }
        }
    }

    fn pass(&mut self, now: u64) {
        if let TrustState::Start = self {
            *self = TrustState::Trusted { since: now };
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrustMap {
    pub node: TrustState,
    pub pods: BTreeMap<PodUid, TrustState>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownScope(pub PodRef);

impl fmt::Display for UnknownScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown scope {}", self.0)
    }
}

impl std::error::Error for UnknownScope {}

impl TrustMap {
    pub fn for_pods<'a>(pods: impl IntoIterator<Item = &'a PodUid>) -> Self {
        TrustMap {
            node: TrustState::Start,
            pods: pods.into_iter().map(|u| (u.clone(), TrustState::Start)).collect(),
        }
    }

    pub fn get(&self, scope: &PodRef) -> Option<&TrustState> {
        match scope {
            PodRef::NodeScope => Some(&self.node),
            PodRef::Pod { uid } => self.pods.get(uid),
        }
    }

    pub fn reset(&mut self, scope: &PodRef) -> Result<(), UnknownScope> {
        let state = match scope {
            PodRef::NodeScope => &mut self.node,
            PodRef::Pod { uid } => self.pods.get_mut(uid).ok_or_else(|| UnknownScope(scope.clone()))?,
        };
        *state = TrustState::Start;
        Ok(())
    }

    pub fn mark_node_untrusted(&mut self, now: u64, reason: impl Into<String>) {
        self.node.fail(now, &[], Some(reason.into()));
    }

    /// Keeps states for pods still in `pods`, adds new ones in Start.
    pub fn rebind(&self, pods: &BTreeSet<PodUid>) -> TrustMap {
        TrustMap {
            node: self.node.clone(),
            pods: pods
                .iter()
                .map(|u| (u.clone(), self.pods.get(u).cloned().unwrap_or_default()))
                .collect(),
        }
    }

    pub fn scopes(&self) -> impl Iterator<Item = (PodRef, &TrustState)> {
        std::iter::once((PodRef::NodeScope, &self.node))
            .chain(self.pods.iter().map(|(u, s)| (PodRef::Pod { uid: u.clone() }, s)))
    }
}

/// Applies one evaluation to the previous trust map.
///
/// Node: Untrusted on any node-scope violation or any unknown pod. Pods:
/// Untrusted on their own violations only. Scopes without findings go from
/// Start to Trusted, except registered pods that produced no entries yet,
/// which stay in Start. Untrusted never reverts here.
pub fn derive_trust(previous: &TrustMap, eval: &EvaluationResult, now: u64) -> TrustMap {
    let mut next = previous.clone();

    let mut node_findings = eval.node_violations.clone();
    node_findings.extend(eval.unknown_pod_violations.iter().cloned());
    if !eval.node_violations.is_empty() {
        next.node.fail(now, &node_findings, Some("node-violations".into()));
    }
    if !eval.unknown_pods.is_empty() {
        let uids: Vec<&str> = eval.unknown_pods.iter().map(|u| u.as_str()).collect();
        next.node
            .fail(now, &node_findings, Some(format!("unknown-pod: {}", uids.join(","))));
    }
    next.node.pass(now);

    for (uid, state) in next.pods.iter_mut() {
        match eval.pod_violations.get(uid) {
            Some(vs) if !vs.is_empty() => state.fail(now, vs, Some("pod-violations".into())),
            _ if eval.observed_pods.contains(uid) => state.pass(now),
            _ => {}
        }
    }
    next
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustDelta {
    pub scope: PodRef,
    pub from: TrustKind,
    pub to: TrustKind,
}

pub fn transitions(before: &TrustMap, after: &TrustMap) -> Vec<TrustDelta> {
    let mut out = Vec::new();
    for (scope, state) in after.scopes() {
        let from = before.get(&scope).map(|s| s.kind()).unwrap_or(TrustKind::Start);
        if from != state.kind() {
            out.push(TrustDelta {
                scope,
                from,
                to: state.kind(),
            });
        }
    }
    out
}
