// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::digest::DigestValue;
use crate::pod::{CgroupStyle, QosClass};

/// Synthetic image content: the digest of `image:path`.
pub fn synthetic_digest(image: &str, path: &str) -> DigestValue {
    DigestValue::of_parts([image.as_bytes(), b":".as_slice(), path.as_bytes()])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PodSpec {
    pub name: String,
    /// Files the pod executes or maps at start, with their digests.
    #[serde(default)]
    pub manifest: BTreeMap<String, DigestValue>,
    #[serde(default)]
    pub cgroup_style: CgroupStyle,
    #[serde(default)]
    pub qos: QosClass,
}

impl PodSpec {
    pub fn synthetic(name: &str, image: &str, paths: &[&str], style: CgroupStyle, qos: QosClass) -> Self {
        PodSpec {
            name: name.to_string(),
            manifest: paths
                .iter()
                .map(|p| (p.to_string(), synthetic_digest(image, p)))
                .collect(),
            cgroup_style: style,
            qos,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    /// Base URL of the node's agent when events are delivered over HTTP.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_endpoint: Option<String>,
    /// Host binaries measured in node scope.
    #[serde(default)]
    pub host_manifest: BTreeMap<String, DigestValue>,
    #[serde(default)]
    pub pods: Vec<PodSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
}

const HOST_BINARIES: &[&str] = &[
    "/usr/bin/k3s",
    "/usr/bin/containerd",
    "/usr/bin/containerd-shim-runc-v2",
    "/usr/sbin/runc",
    "/usr/lib/systemd/systemd",
    "/usr/lib/x86_64-linux-gnu/libc.so.6",
];

const NF_LIBS: &[&str] = &[
    "/usr/lib/x86_64-linux-gnu/libc.so.6",
    "/usr/lib/x86_64-linux-gnu/libsctp.so.1",
];

fn nf_pod(nf: &str) -> PodSpec {
    let bin = format!("/usr/bin/{nf}");
    let mut paths = vec![bin.as_str(), "/usr/bin/tini"];
    paths.extend_from_slice(NF_LIBS);
    PodSpec::synthetic(
        nf,
        &format!("free5gc/{nf}:v3.4"),
        &paths,
        CgroupStyle::K3s,
        QosClass::Burstable,
    )
}

impl Topology {
    /// One master and two workers: MySQL, NRF, AUSF and UDR on worker1;
    /// AMF, SMF and UPF on worker2.
    pub fn five_g_core() -> Self {
        let host = |node: &str| NodeSpec {
            name: node.to_string(),
            agent_endpoint: None,
            host_manifest: HOST_BINARIES
                .iter()
                .map(|p| (p.to_string(), synthetic_digest("host-os:24.04", p)))
                .collect(),
            pods: Vec::new(),
        };
        let mysql = PodSpec::synthetic(
            "mysql",
            "mysql:8.0",
            &[
                "/usr/sbin/mysqld",
                "/usr/bin/mysql",
                "/usr/local/bin/docker-entrypoint.sh",
                "/usr/lib/x86_64-linux-gnu/libc.so.6",
            ],
            CgroupStyle::K3s,
            QosClass::Burstable,
        );
        let mut upf = nf_pod("upf");
        for p in ["/usr/sbin/ip", "/usr/sbin/iptables"] {
            upf.manifest
                .insert(p.to_string(), synthetic_digest("free5gc/upf:v3.4", p));
        }
        let mut master = host("master");
        master.pods = Vec::new();
        let mut worker1 = host("worker1");
        worker1.pods = vec![mysql, nf_pod("nrf"), nf_pod("ausf"), nf_pod("udr")];
        let mut worker2 = host("worker2");
        worker2.pods = vec![nf_pod("amf"), nf_pod("smf"), upf];
        Topology {
            nodes: vec![master, worker1, worker2],
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut nodes = BTreeSet::new();
        let mut pods = BTreeSet::new();
        for n in &self.nodes {
            if !nodes.insert(n.name.as_str()) {
                return Err(SimError::DuplicateName(n.name.clone()));
            }
            for p in &n.pods {
                if !pods.insert(p.name.as_str()) {
                    return Err(SimError::DuplicateName(p.name.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn node(&self, name: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn from_toml_str(s: &str) -> Result<Self, SimError> {
        let t: Topology = toml::from_str(s).map_err(|e| SimError::Parse(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("topology serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let s = std::fs::read_to_string(path.as_ref())
            .map_err(|e| SimError::Parse(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml_str(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_g_core_topology_round_trips() {
        let t = Topology::five_g_core();
        assert_eq!(t.nodes.iter().map(|n| n.pods.len()).sum::<usize>(), 7);
        let back = Topology::from_toml_str(&t.to_toml_string()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn duplicate_pod_names_rejected() {
        let mut t = Topology::five_g_core();
        let dup = t.nodes[1].pods[0].clone();
        t.nodes[2].pods.push(dup);
        assert!(matches!(t.validate(), Err(SimError::DuplicateName(n)) if n == "mysql"));
    }
}
