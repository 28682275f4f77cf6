// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TamperScenario {
    /// Runs a binary that no allowlist knows.
    ExecUnlisted { pod: String, path: String },
    /// Replaces a host binary, e.g. a runc overwrite from a container escape.
    OverwriteHostBinary { node: String, path: String },
    /// Drops a shared object into the pod and lists it in /etc/ld.so.preload.
    PreloadHijack { pod: String, library: String },
    /// Starts a pod the verifier was never told about.
    UnknownPod { node: String },
    /// Changes the content of a binary the pod legitimately runs.
    ModifyPodBinary { pod: String, path: String },
}

impl TamperScenario {
    pub fn exec_unlisted(pod: &str, path: &str) -> Self {
        TamperScenario::ExecUnlisted {
            pod: pod.into(),
            path: path.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledTamper {
    /// Offset from the start of the schedule.
    pub at_ms: u64,
    pub scenario: TamperScenario,
}

/// Ordered list of tamper steps, read from a TOML file:
///
/// ```toml
/// [[step]]
/// at_ms = 4000
/// scenario = { kind = "exec-unlisted", pod = "ausf", path = "/usr/bin/curl" }
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSchedule {
    #[serde(default, rename = "step")]
    pub steps: Vec<ScheduledTamper>,
}

impl ScenarioSchedule {
    pub fn from_toml_str(s: &str) -> Result<Self, SimError> {
        let mut sched: ScenarioSchedule = toml::from_str(s).map_err(|e| SimError::Parse(e.to_string()))?;
        sched.steps.sort_by_key(|s| s.at_ms);
        Ok(sched)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let s = std::fs::read_to_string(path.as_ref())
            .map_err(|e| SimError::Parse(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml_str(&s)
    }
}
