// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

//! Attribution of cgroup paths to Kubernetes pods.
//!
//! Two kubelet layouts are recognised, anywhere in the path:
//!
//! * cgroupfs: a segment `pod<uid>`, e.g.
//!   `/kubepods/besteffort/pod3b4c9f2a-1d2e-4f5a-8b6c-7d8e9f0a1b2c/<cid>`
//! * systemd: a segment `kubepods[-<qos>]-pod<uid_with_underscores>.slice`
//!
//! Anything else, including host services, is node scope.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const UUID_LEN: usize = 36;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("`{0}` is not a pod UID")]
pub struct InvalidPodUid(pub String);

/// Canonical pod UID: lowercase, hyphenated 8-4-4-4-12.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PodUid(String);

impl PodUid {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn from_uuid(u: uuid::Uuid) -> Self {
        PodUid(u.hyphenated().to_string())
    }

    /// Underscore-separated form used in systemd slice names.
    pub fn to_systemd(&self) -> String {
        self.0.replace('-', "_")
    }
}

impl fmt::Display for PodUid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for PodUid {
    type Err = InvalidPodUid;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        normalize_pod_uid(s)
    }
}

impl TryFrom<String> for PodUid {
    type Error = InvalidPodUid;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        normalize_pod_uid(&s)
    }
}

impl From<PodUid> for String {
    fn from(u: PodUid) -> String {
        u.0
    }
}

pub fn normalize_pod_uid(raw: &str) -> Result<PodUid, InvalidPodUid> {
    let err = || InvalidPodUid(raw.to_string());
    if raw.len() != UUID_LEN {
        return Err(err());
    }
    let mut out = String::with_capacity(UUID_LEN);
    for (i, c) in raw.chars().enumerate() {
        let is_sep = matches!(i, 8 | 13 | 18 | 23);
        match c {
            '-' | '_' if is_sep => out.push('-'),
            c if !is_sep && c.is_ascii_hexdigit() => out.push(c.to_ascii_lowercase()),
            _ => return Err(err()),
        }
    }
    Ok(PodUid(out))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "lowercase")]
pub enum PodRef {
    #[serde(rename = "node")]
    NodeScope,
    Pod {
        uid: PodUid,
    },
}

impl PodRef {
    pub fn pod(uid: PodUid) -> Self {
        PodRef::Pod { uid }
    }

    pub fn pod_uid(&self) -> Option<&PodUid> {
        match self {
            PodRef::NodeScope => None,
            PodRef::Pod { uid } => Some(uid),
        }
    }
}

impl fmt::Display for PodRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PodRef::NodeScope => f.write_str("node"),
            PodRef::Pod { uid } => write!(f, "pod/{uid}"),
        }
    }
}

impl FromStr for PodRef {
    type Err = InvalidPodUid;

    /// `node` or a pod UID, optionally prefixed with `pod/`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "node" {
            return Ok(PodRef::NodeScope);
        }
        let raw = s.strip_prefix("pod/").unwrap_or(s);
        Ok(PodRef::Pod {
            uid: normalize_pod_uid(raw)?,
        })
    }
}

fn segment_uid(segment: &str) -> Option<PodUid> {
    if let Some(slice) = segment.strip_suffix(".slice") {
        if !slice.starts_with("kubepods") {
            return None;
        }
        let (_, raw) = slice.rsplit_once("-pod")?;
        return normalize_pod_uid(raw).ok();
    }
    segment.strip_prefix("pod").and_then(|raw| normalize_pod_uid(raw).ok())
}

/// Total: every string maps to exactly one scope.
pub fn parse_cgroup_path(cgpath: &str) -> PodRef {
    cgpath
        .split('/')
        .find_map(segment_uid)
        .map(|uid| PodRef::Pod { uid })
        .unwrap_or(PodRef::NodeScope)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CgroupStyle {
    #[default]
    Cgroupfs,
    Systemd,
    /// cgroupfs layout under a k3s-style orchestrator prefix.
    K3s,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QosClass {
    Guaranteed,
    Burstable,
    #[default]
    Besteffort,
}

impl QosClass {
    fn segment(self) -> Option<&'static str> {
        match self {
            QosClass::Guaranteed => None,
            QosClass::Burstable => Some("burstable"),
            QosClass::Besteffort => Some("besteffort"),
        }
    }
}

/// The cgroup path kubelet would create for a container of pod `uid`.
pub fn pod_cgroup_path(uid: &PodUid, style: CgroupStyle, qos: QosClass, container_id: &str) -> String {
    match style {
        CgroupStyle::Cgroupfs | CgroupStyle::K3s => {
            let mut p = String::new();
            if style == CgroupStyle::K3s {
                p.push_str("/rancher/k3s");
            }
            p.push_str("/kubepods");
            if let Some(q) = qos.segment() {
                p.push('/');
                p.push_str(q);
            }
            format!("{p}/pod{uid}/{container_id}")
        }
        CgroupStyle::Systemd => {
            let u = uid.to_systemd();
            match qos.segment() {
                Some(q) => format!(
                    "/kubepods.slice/kubepods-{q}.slice/kubepods-{q}-pod{u}.slice/cri-containerd-{container_id}.scope"
                ),
                None => format!("/kubepods.slice/kubepods-pod{u}.slice/cri-containerd-{container_id}.scope"),
            }
        }
    }
}
