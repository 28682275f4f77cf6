// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

//! Policy bundle file format (TOML).
//!
//! ```toml
//! pcr_selection = 0x000400
//! registered_pods = ["3b4c9f2a-1d2e-4f5a-8b6c-7d8e9f0a1b2c"]
//!
//! [[exclude_rules]]
//! kind = "regex"
//! pattern = '^(?!/usr/bin/).*$'
//!
//! [node_allowlist]
//! "/usr/bin/kubelet" = ["<sha256 hex>"]
//!
//! [pod_allowlists."3b4c9f2a-1d2e-4f5a-8b6c-7d8e9f0a1b2c"]
//! "/usr/bin/ausf" = ["<sha256 hex>"]
//!
//! [remediation]
//! default = "notify-only"
//! pods = { "3b4c9f2a-1d2e-4f5a-8b6c-7d8e9f0a1b2c" = "evict-restart" }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::PolicyBundle;
use crate::pod::{PodRef, PodUid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemediationAction {
    EvictRestart,
    Isolate,
    #[default]
    NotifyOnly,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemediationPolicy {
    #[serde(default)]
    pub default: RemediationAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<RemediationAction>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pods: BTreeMap<PodUid, RemediationAction>,
}

impl RemediationPolicy {
    pub fn action_for(&self, scope: &PodRef) -> RemediationAction {
        match scope {
            PodRef::NodeScope => self.node.unwrap_or(self.default),
            PodRef::Pod { uid } => self.pods.get(uid).copied().unwrap_or(self.default),
        }
    }
}

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("reading bundle: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing bundle: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("writing bundle: {0}")]
    Serialize(#[from] toml::ser::Error),
}

impl PolicyBundle {
    pub fn from_toml_str(s: &str) -> Result<Self, BundleError> {
        Ok(toml::from_str(s)?)
    }

    pub fn to_toml_string(&self) -> Result<String, BundleError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BundleError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BundleError> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }
}
