// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

//! Allowlist policy and the layered node/pod evaluation.

mod bundle;
mod trust;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use fancy_regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::DigestValue;
use crate::ima::MeasurementEntry;
use crate::pod::{parse_cgroup_path, PodRef, PodUid};
use crate::tpm::{PcrSelection, IMA_PCR};

pub use bundle::{BundleError, RemediationAction, RemediationPolicy};
pub use trust::{derive_trust, transitions, TrustDelta, TrustKind, TrustMap, TrustState};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("exclude rule {index} (`{pattern}`): {message}")]
    Regex {
        index: usize,
        pattern: String,
        message: String,
    },
    #[error("exclude rule {index}: keep prefix `{prefix}` is not absolute")]
    RelativePrefix { index: usize, prefix: String },
    #[error("allowlist for pod {0} but the pod is not registered")]
    UnregisteredAllowlist(PodUid),
    #[error("exclude override for pod {0} but the pod is not registered")]
    UnregisteredOverride(PodUid),
    #[error("PCR selection {0:#08x} must include PCR 10")]
    MissingImaPcr(u32),
    #[error("allowlist entry `{0}` has no digests")]
    EmptyDigestSet(String),
}

/// Path → acceptable digests.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(
    try_from = "BTreeMap<String, BTreeSet<DigestValue>>",
    into = "BTreeMap<String, BTreeSet<DigestValue>>"
)]
pub struct AllowList {
    entries: BTreeMap<String, BTreeSet<DigestValue>>,
}

impl AllowList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, digest: DigestValue) {
        self.entries.entry(path.into()).or_default().insert(digest);
    }

    pub fn with(mut self, path: impl Into<String>, digest: DigestValue) -> Self {
        self.insert(path, digest);
        self
    }

    pub fn get(&self, path: &str) -> Option<&BTreeSet<DigestValue>> {
        self.entries.get(path)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeSet<DigestValue>)> {
        self.entries.iter()
    }

    pub fn merge(&mut self, other: &AllowList) {
        for (p, ds) in &other.entries {
            self.entries.entry(p.clone()).or_default().extend(ds.iter().copied());
        }
    }
}

impl TryFrom<BTreeMap<String, BTreeSet<DigestValue>>> for AllowList {
    type Error = PolicyError;
    fn try_from(entries: BTreeMap<String, BTreeSet<DigestValue>>) -> Result<Self, PolicyError> {
        if let Some((p, _)) = entries.iter().find(|(_, ds)| ds.is_empty()) {
            return Err(PolicyError::EmptyDigestSet(p.clone()));
        }
        Ok(AllowList { entries })
    }
}

impl From<AllowList> for BTreeMap<String, BTreeSet<DigestValue>> {
    fn from(a: AllowList) -> Self {
        a.entries
    }
}

/// Excludes every path outside `/usr/bin/`.
pub const USR_BIN_ONLY: &str = "^(?!/usr/bin/).*$";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExcludeRule {
    /// Paths matching `pattern` are excluded. Lookaround is supported.
    Regex { pattern: String },
    /// Every path outside `keep_prefix` is excluded.
    PrefixInverted { keep_prefix: String },
}

impl ExcludeRule {
    pub fn regex(pattern: impl Into<String>) -> Self {
        ExcludeRule::Regex {
            pattern: pattern.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyBundle {
    #[serde(default)]
    pub node_allowlist: AllowList,
    #[serde(default)]
    pub pod_allowlists: BTreeMap<PodUid, AllowList>,
    #[serde(default)]
    pub registered_pods: BTreeSet<PodUid>,
    #[serde(default)]
    pub exclude_rules: Vec<ExcludeRule>,
    /// Replaces the global exclude rules for the listed pods.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pod_exclude_rules: BTreeMap<PodUid, Vec<ExcludeRule>>,
    #[serde(default)]
    pub pcr_selection: PcrSelection,
    #[serde(default)]
    pub remediation: RemediationPolicy,
    /// Human-readable pod names for status output.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pod_labels: BTreeMap<PodUid, String>,
}

impl PolicyBundle {
    /// Registers `uid` with `allowlist`.
    pub fn register_pod(&mut self, uid: PodUid, allowlist: AllowList) {
        self.registered_pods.insert(uid.clone());
        self.pod_allowlists.insert(uid, allowlist);
    }
}

enum CompiledRule {
    Regex(Regex),
    Prefix(String),
}

impl CompiledRule {
    fn compile(index: usize, rule: &ExcludeRule) -> Result<Self, PolicyError> {
        match rule {
            ExcludeRule::Regex { pattern } => {
                Regex::new(pattern)
                    .map(CompiledRule::Regex)
                    .map_err(|e| PolicyError::Regex {
                        index,
                        pattern: pattern.clone(),
                        message: e.to_string(),
                    })
            }
            ExcludeRule::PrefixInverted { keep_prefix } => {
                if !keep_prefix.starts_with('/') {
                    return Err(PolicyError::RelativePrefix {
                        index,
                        prefix: keep_prefix.clone(),
                    });
                }
                Ok(CompiledRule::Prefix(keep_prefix.clone()))
            }
        }
    }

    fn excludes(&self, path: &str) -> bool {
        match self {
            // A regex that hits its backtrack limit does not exclude.
            CompiledRule::Regex(re) => re.is_match(path).unwrap_or(false),
            CompiledRule::Prefix(keep) => !path.starts_with(keep.as_str()),
        }
    }
}

fn compile_rules(rules: &[ExcludeRule]) -> Result<Vec<CompiledRule>, PolicyError> {
    rules
        .iter()
        .enumerate()
        .map(|(i, r)| CompiledRule::compile(i, r))
        .collect()
}

/// Immutable, shareable form of a [`PolicyBundle`].
#[derive(Clone)]
pub struct CompiledPolicy {
    inner: Arc<CompiledInner>,
}

struct CompiledInner {
    bundle: PolicyBundle,
    global_rules: Vec<CompiledRule>,
    pod_rules: BTreeMap<PodUid, Vec<CompiledRule>>,
    retired_pods: BTreeSet<PodUid>,
}

impl std::fmt::Debug for CompiledPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CompiledPolicy")
            .field("registered_pods", &self.inner.bundle.registered_pods)
            .field("exclude_rules", &self.inner.bundle.exclude_rules)
            .finish_non_exhaustive()
    }
}

pub fn compile_policy(bundle: &PolicyBundle) -> Result<CompiledPolicy, PolicyError> {
    CompiledPolicy::compile(bundle, BTreeSet::new())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationReason {
    UnknownFile,
    DigestMismatch,
    UnknownPod,
}

impl ViolationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationReason::UnknownFile => "unknown-file",
            ViolationReason::DigestMismatch => "digest-mismatch",
            ViolationReason::UnknownPod => "unknown-pod",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub scope: PodRef,
    pub path: String,
    pub observed: Option<DigestValue>,
    pub reason: ViolationReason,
    pub entry_index: usize,
}

/// Identity used for deduplication; `entry_index` is not part of it.
pub type ViolationKey = (PodRef, String, Option<DigestValue>, ViolationReason);

impl Violation {
    pub fn key(&self) -> ViolationKey {
        (self.scope.clone(), self.path.clone(), self.observed, self.reason)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub node_violations: Vec<Violation>,
    pub pod_violations: BTreeMap<PodUid, Vec<Violation>>,
    pub unknown_pods: BTreeSet<PodUid>,
    /// First entry seen for each unknown pod, for the audit trail.
    pub unknown_pod_violations: Vec<Violation>,
    /// Registered pods with at least one attributed entry in this input.
    pub observed_pods: BTreeSet<PodUid>,
}

impl EvaluationResult {
    pub fn is_clean(&self) -> bool {
        self.node_violations.is_empty() && self.pod_violations.is_empty() && self.unknown_pods.is_empty()
    }

    pub fn all_violations(&self) -> impl Iterator<Item = &Violation> {
        self.node_violations
            .iter()
            .chain(self.pod_violations.values().flatten())
            .chain(self.unknown_pod_violations.iter())
    }

    pub fn violation_count(&self) -> usize {
        self.all_violations().count()
    }
}

impl CompiledPolicy {
    /// `retired_pods` are UIDs of pods that were registered under an earlier
    /// policy and have since been evicted; their entries are skipped.
    pub fn compile(bundle: &PolicyBundle, retired_pods: BTreeSet<PodUid>) -> Result<Self, PolicyError> {
        if let Some(uid) = bundle
            .pod_allowlists
            .keys()
            .find(|u| !bundle.registered_pods.contains(*u))
        {
            return Err(PolicyError::UnregisteredAllowlist(uid.clone()));
        }
        if let Some(uid) = bundle
            .pod_exclude_rules
            .keys()
            .find(|u| !bundle.registered_pods.contains(*u))
        {
            return Err(PolicyError::UnregisteredOverride(uid.clone()));
        }
        if !bundle.pcr_selection.contains(IMA_PCR) {
            return Err(PolicyError::MissingImaPcr(bundle.pcr_selection.mask()));
        }
        let global_rules = compile_rules(&bundle.exclude_rules)?;
        let pod_rules = bundle
            .pod_exclude_rules
            .iter()
            .map(|(u, rules)| Ok((u.clone(), compile_rules(rules)?)))
            .collect::<Result<_, PolicyError>>()?;
        let retired_pods = retired_pods
            .into_iter()
            .filter(|u| !bundle.registered_pods.contains(u))
            .collect();
        Ok(CompiledPolicy {
            inner: Arc::new(CompiledInner {
                bundle: bundle.clone(),
                global_rules,
                pod_rules,
                retired_pods,
            }),
        })
    }

    pub fn bundle(&self) -> &PolicyBundle {
        &self.inner.bundle
    }

    pub fn registered_pods(&self) -> &BTreeSet<PodUid> {
        &self.inner.bundle.registered_pods
    }

    pub fn retired_pods(&self) -> &BTreeSet<PodUid> {
        &self.inner.retired_pods
    }

    pub fn pcr_selection(&self) -> PcrSelection {
        self.inner.bundle.pcr_selection
    }

    pub fn is_excluded(&self, scope: &PodRef, path: &str) -> bool {
        let rules = scope
            .pod_uid()
            .and_then(|u| self.inner.pod_rules.get(u))
            .unwrap_or(&self.inner.global_rules);
        rules.iter().any(|r| r.excludes(path))
    }

    /// Evaluates attributed entries. Assumes the entries already passed
    /// quote and replay verification.
    pub fn evaluate_entries<'a>(
        &self,
        entries: impl IntoIterator<Item = (usize, &'a MeasurementEntry, PodRef)>,
    ) -> EvaluationResult {
        let bundle = &self.inner.bundle;
        let mut result = EvaluationResult::default();
        let mut seen: HashSet<ViolationKey> = HashSet::new();
        for (index, entry, scope) in entries {
            if entry.is_boot_aggregate() {
                continue;
            }
            let path = entry.data.path();
            let digest = *entry.data.filedata_hash();
            let allowlist = match &scope {
                PodRef::NodeScope => &bundle.node_allowlist,
                PodRef::Pod { uid } => {
                    if self.inner.retired_pods.contains(uid) {
                        continue;
                    }
                    if !bundle.registered_pods.contains(uid) {
                        if result.unknown_pods.insert(uid.clone()) {
                            result.unknown_pod_violations.push(Violation {
                                scope: scope.clone(),
                                path: path.to_string(),
                                observed: Some(digest),
                                reason: ViolationReason::UnknownPod,
                                entry_index: index,
                            });
                        }
                        continue;
                    }
                    result.observed_pods.insert(uid.clone());
                    match bundle.pod_allowlists.get(uid) {
                        Some(a) => a,
                        None => &EMPTY_ALLOWLIST,
                    }
                }
            };
            if self.is_excluded(&scope, path) {
                continue;
            }
            let reason = match allowlist.get(path) {
                None => ViolationReason::UnknownFile,
                Some(ds) if !ds.contains(&digest) => ViolationReason::DigestMismatch,
                Some(_) => continue,
            };
            let v = Violation {
                scope: scope.clone(),
                path: path.to_string(),
                observed: Some(digest),
                reason,
                entry_index: index,
            };
            if !seen.insert(v.key()) {
                continue;
            }
            match &scope {
                PodRef::NodeScope => result.node_violations.push(v),
                PodRef::Pod { uid } => result.pod_violations.entry(uid.clone()).or_default().push(v),
            }
        }
        result
    }

    /// Attributes and evaluates a log segment whose first entry has absolute
    /// index `base`.
    pub fn evaluate_segment(&self, base: usize, entries: &[MeasurementEntry]) -> EvaluationResult {
        self.evaluate_entries(entries.iter().enumerate().map(|(i, e)| (base + i, e, attribute(e))))
    }
}

static EMPTY_ALLOWLIST: AllowList = AllowList {
    entries: BTreeMap::new(),
};

/// Scope of an entry: `ima-ng` entries carry no cgroup and are node scope.
pub fn attribute(entry: &MeasurementEntry) -> PodRef {
    entry.data.cgpath().map(parse_cgroup_path).unwrap_or(PodRef::NodeScope)
}

/// Golden allowlist: every (path, digest) observed for `scope`.
pub fn build_allowlist_from_log(entries: &[MeasurementEntry], scope: &PodRef) -> AllowList {
    let mut out = AllowList::new();
    for e in entries {
        if e.is_boot_aggregate() || attribute(e) != *scope {
            continue;
        }
        out.insert(e.data.path(), *e.data.filedata_hash());
    }
    out
}

#[cfg(test)]
mod tests;
