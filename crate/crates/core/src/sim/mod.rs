// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

//! Deterministic cluster simulator.
//!
//! Pods are event generators: at start each pod "executes" its manifest
//! under its own cgroup, and a paced workload keeps producing events. All
//! events for one node go to its agent through a single serialized stream,
//! so a fixed topology, seed and schedule yield identical agent logs.

mod http;
mod scenario;
mod topology;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::task::JoinHandle;

use crate::agent::{Agent, AgentClient};
use crate::digest::DigestValue;
use crate::ima::FileEvent;
use crate::pod::{pod_cgroup_path, CgroupStyle, PodRef, PodUid, QosClass};
use crate::policy::{AllowList, ExcludeRule, PolicyBundle, RemediationAction};
use crate::verifier::RemediationEvent;

pub use http::{router, SimClient};
pub use scenario::{ScenarioSchedule, ScheduledTamper, TamperScenario};
pub use topology::{synthetic_digest, NodeSpec, PodSpec, Topology};

pub const DEFAULT_EVENT_GAP: Duration = Duration::from_millis(200);

/// Cgroup of host services on simulated nodes.
pub const HOST_CGROUP: &str = "/system.slice/k3s-agent.service";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("duplicate name `{0}` in topology")]
    DuplicateName(String),
    #[error("unknown pod `{0}`")]
    UnknownPod(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{0}` has no event sink")]
    NoSink(String),
    #[error("delivery to `{node}` failed: {message}")]
    Delivery { node: String, message: String },
    #[error("parse: {0}")]
    Parse(String),
    #[error("event log: {0}")]
    Io(#[from] std::io::Error),
}

impl SimError {
    pub fn kind(&self) -> &'static str {
        match self {
            SimError::DuplicateName(_) => "duplicate-name",
            SimError::UnknownPod(_) | SimError::UnknownNode(_) => "not-found",
            SimError::NoSink(_) | SimError::Delivery { .. } => "delivery",
            SimError::Parse(_) => "parse",
            SimError::Io(_) => "io",
        }
    }
}

/// Where a node's events go: an in-process agent or an agent over HTTP.
#[async_trait]
pub trait EventSink: Send + Sync {
    async fn deliver(&self, event: &FileEvent) -> Result<(), String>;
}

#[async_trait]
impl EventSink for Agent {
    async fn deliver(&self, event: &FileEvent) -> Result<(), String> {
        self.ingest_event(event).map(|_| ()).map_err(|e| e.to_string())
    }
}

#[async_trait]
impl EventSink for AgentClient {
    async fn deliver(&self, event: &FileEvent) -> Result<(), String> {
        self.post_event(event).await.map(|_| ()).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Mean gap between workload events.
    pub event_gap: Duration,
    /// Relative jitter applied to each gap, in [0, 1].
    pub jitter: f64,
    /// Chance that a workload step starts a fresh container in a pod.
    pub container_churn: f64,
    pub event_log_path: Option<PathBuf>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            event_gap: DEFAULT_EVENT_GAP,
            jitter: 0.5,
            container_churn: 0.05,
            event_log_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PodInfo {
    pub name: String,
    pub node: String,
    pub uid: PodUid,
    pub restarts: u32,
    /// True for pods started by an unknown-pod injection.
    #[serde(default)]
    pub rogue: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SimRecordKind {
    Exec { pod: Option<String>, event: FileEvent },
    PodStarted { pod: String, uid: PodUid },
    PodTerminated { pod: String, uid: PodUid },
    Injected { scenario: TamperScenario },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimRecord {
    pub seq: u64,
    pub node: String,
    #[serde(flatten)]
    pub kind: SimRecordKind,
}

/// Told to the operator when a pod comes back under a new UID, so the
/// tenant can re-enroll with the new registered set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestartNotice {
    pub pod: String,
    pub node: String,
    pub old_uid: PodUid,
    pub new_uid: PodUid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "kebab-case")]
pub enum RemediationOutcome {
    Restarted(RestartNotice),
    NoChange { reason: String },
    Ignored { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectOutcome {
    pub node: String,
    pub scope: PodRef,
    pub events: usize,
}

#[derive(Debug, Clone)]
struct PodRuntime {
    spec: PodSpec,
    node: String,
    uid: PodUid,
    container: String,
    restarts: u32,
    rogue: bool,
}

impl PodRuntime {
    fn cgpath(&self) -> String {
        pod_cgroup_path(&self.uid, self.spec.cgroup_style, self.spec.qos, &self.container)
    }

    fn info(&self) -> PodInfo {
        PodInfo {
            name: self.spec.name.clone(),
            node: self.node.clone(),
            uid: self.uid.clone(),
            restarts: self.restarts,
            rogue: self.rogue,
        }
    }
}

struct SimState {
    uid_rng: ChaCha20Rng,
    tamper_rng: ChaCha20Rng,
    pods: BTreeMap<String, PodRuntime>,
    used_uids: BTreeSet<PodUid>,
    records: Vec<SimRecord>,
    file: Option<File>,
    notices: Vec<RestartNotice>,
    clock: u64,
    rogue_count: u32,
}

impl SimState {
    fn fresh_uid(&mut self) -> PodUid {
        loop {
            let mut b = [0u8; 16];
            self.uid_rng.fill(&mut b);
            let uid = PodUid::from_uuid(uuid::Builder::from_random_bytes(b).into_uuid());
            if self.used_uids.insert(uid.clone()) {
                return uid;
            }
        }
    }

    fn fresh_container(&mut self) -> String {
        let mut b = [0u8; 32];
        self.uid_rng.fill(&mut b);
        hex::encode(b)
    }

    fn record(&mut self, node: &str, kind: SimRecordKind) {
        let rec = SimRecord {
            seq: self.records.len() as u64,
            node: node.to_string(),
            kind,
        };
        if let Some(f) = self.file.as_mut() {
            let line = serde_json::to_string(&rec).expect("record serializes");
            if let Err(e) = writeln!(f, "{line}") {
                tracing::warn!("event log write failed: {e}");
            }
        }
        self.records.push(rec);
    }
}

struct NodeRuntime {
    sink: Arc<dyn EventSink>,
    stream: tokio::sync::Mutex<()>,
}

struct Inner {
    topology: Topology,
    config: SimConfig,
    nodes: BTreeMap<String, NodeRuntime>,
    state: Mutex<SimState>,
    workload_seed: u64,
}

/// What one delivery step should send, resolved against live pod state
/// while the node stream is held.
enum Target {
    Host,
    Pod { name: String, new_container: bool },
}

#[derive(Clone)]
pub struct Cluster {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Cluster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cluster").field("pods", &self.pods()).finish()
    }
}

impl Cluster {
    /// Assigns UIDs, seeds agents with host and pod manifests.
    pub async fn start(
        topology: Topology,
        seed: u64,
        sinks: BTreeMap<String, Arc<dyn EventSink>>,
        config: SimConfig,
    ) -> Result<Cluster, SimError> {
        topology.validate()?;
        let mut nodes = BTreeMap::new();
        for n in &topology.nodes {
            let sink = sinks
                .get(&n.name)
                .cloned()
                .ok_or_else(|| SimError::NoSink(n.name.clone()))?;
            nodes.insert(
                n.name.clone(),
                NodeRuntime {
                    sink,
                    stream: tokio::sync::Mutex::new(()),
                },
            );
        }
        let file = match &config.event_log_path {
            Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
            None => None,
        };
        let mut state = SimState {
            uid_rng: ChaCha20Rng::seed_from_u64(seed),
            tamper_rng: ChaCha20Rng::seed_from_u64(seed ^ 0x7a3d_0000_0000_0001),
            pods: BTreeMap::new(),
            used_uids: BTreeSet::new(),
            records: Vec::new(),
            file,
            notices: Vec::new(),
            clock: 0,
            rogue_count: 0,
        };
        for n in &topology.nodes {
            for p in &n.pods {
                let uid = state.fresh_uid();
                let container = state.fresh_container();
                state.pods.insert(
                    p.name.clone(),
                    PodRuntime {
                        spec: p.clone(),
                        node: n.name.clone(),
                        uid,
                        container,
                        restarts: 0,
                        rogue: false,
                    },
                );
            }
        }
        let cluster = Cluster {
            inner: Arc::new(Inner {
                topology,
                config,
                nodes,
                state: Mutex::new(state),
                workload_seed: seed.wrapping_add(1),
            }),
        };
        for n in cluster.inner.topology.nodes.clone() {
            let host: Vec<_> = n.host_manifest.iter().map(|(p, d)| (p.clone(), *d)).collect();
            cluster.deliver_host(&n.name, &host).await?;
            for p in &n.pods {
                cluster.start_pod_events(&p.name).await?;
            }
        }
        Ok(cluster)
    }

    /// In-process agents for every node of `topology`.
    pub fn local_agents(topology: &Topology, seed: u64) -> BTreeMap<String, Arc<Agent>> {
        topology
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                (
                    n.name.clone(),
                    Arc::new(Agent::new(
                        n.name.clone(),
                        n.name.clone(),
                        Some(seed.wrapping_add(i as u64)),
                    )),
                )
            })
            .collect()
    }

    pub fn sinks_for(agents: &BTreeMap<String, Arc<Agent>>) -> BTreeMap<String, Arc<dyn EventSink>> {
        agents
            .iter()
            .map(|(k, a)| (k.clone(), a.clone() as Arc<dyn EventSink>))
            .collect()
    }

    /// HTTP sinks from each node's `agent_endpoint`.
    pub fn http_sinks(
        topology: &Topology,
        token: Option<String>,
    ) -> Result<BTreeMap<String, Arc<dyn EventSink>>, SimError> {
        topology
            .nodes
            .iter()
            .map(|n| {
                let ep = n
                    .agent_endpoint
                    .clone()
                    .ok_or_else(|| SimError::NoSink(n.name.clone()))?;
                Ok((
                    n.name.clone(),
                    Arc::new(AgentClient::new(ep, token.clone())) as Arc<dyn EventSink>,
                ))
            })
            .collect()
    }

    pub fn topology(&self) -> &Topology {
        &self.inner.topology
    }

    fn state(&self) -> std::sync::MutexGuard<'_, SimState> {
        self.inner.state.lock().expect("sim state lock")
    }

    pub fn pods(&self) -> Vec<PodInfo> {
        self.state().pods.values().map(PodRuntime::info).collect()
    }

    pub fn pod(&self, name: &str) -> Option<PodInfo> {
        self.state().pods.get(name).map(PodRuntime::info)
    }

    pub fn pod_uid(&self, name: &str) -> Option<PodUid> {
        self.pod(name).map(|p| p.uid)
    }

    pub fn event_log(&self) -> Vec<SimRecord> {
        self.state().records.clone()
    }

    pub fn notices(&self) -> Vec<RestartNotice> {
        self.state().notices.clone()
    }

    fn node(&self, name: &str) -> Result<&NodeRuntime, SimError> {
        self.inner
            .nodes
            .get(name)
            .ok_or_else(|| SimError::UnknownNode(name.to_string()))
    }

    async fn send(&self, node: &str, sink: &dyn EventSink, event: FileEvent) -> Result<(), SimError> {
        sink.deliver(&event).await.map_err(|message| SimError::Delivery {
            node: node.to_string(),
            message,
        })
    }

    fn stamp(&self, node: &str, pod: Option<&str>, path: &str, digest: DigestValue, cgpath: String) -> FileEvent {
        let mut st = self.state();
        st.clock += 1;
        let event = FileEvent {
            path: path.to_string(),
            content_digest: digest,
            cgpath,
            timestamp: st.clock,
        };
        st.record(
            node,
            SimRecordKind::Exec {
                pod: pod.map(str::to_string),
                event: event.clone(),
            },
        );
        event
    }

    async fn deliver_host(&self, node: &str, files: &[(String, DigestValue)]) -> Result<(), SimError> {
        let rt = self.node(node)?;
        let _g = rt.stream.lock().await;
        for (path, digest) in files {
            let ev = self.stamp(node, None, path, *digest, HOST_CGROUP.to_string());
            self.send(node, rt.sink.as_ref(), ev).await?;
        }
        Ok(())
    }

    /// Emits `files` under the live cgroup of pod `name`. The pod's UID is
    /// read after the node stream is held, so events never carry a UID
    /// whose termination was already recorded.
    async fn deliver_pod(
        &self,
        name: &str,
        files: Option<Vec<(String, DigestValue)>>,
        new_container: bool,
    ) -> Result<usize, SimError> {
        let node = self
            .state()
            .pods
            .get(name)
            .map(|p| p.node.clone())
            .ok_or_else(|| SimError::UnknownPod(name.to_string()))?;
        let rt = self.node(&node)?;
        let _g = rt.stream.lock().await;
        let (cgpath, files) = {
            let mut st = self.state();
            let container = if new_container {
                Some(st.fresh_container())
            } else {
                None
            };
            let pod = st
                .pods
                .get_mut(name)
                .ok_or_else(|| SimError::UnknownPod(name.to_string()))?;
            if let Some(c) = container {
                pod.container = c;
            }
            let files = files.unwrap_or_else(|| pod.spec.manifest.iter().map(|(p, d)| (p.clone(), *d)).collect());
            (pod.cgpath(), files)
        };
        for (path, digest) in &files {
            let ev = self.stamp(&node, Some(name), path, *digest, cgpath.clone());
            self.send(&node, rt.sink.as_ref(), ev).await?;
        }
        Ok(files.len())
    }

    async fn start_pod_events(&self, name: &str) -> Result<(), SimError> {
        {
            let mut st = self.state();
            let pod = st
                .pods
                .get(name)
                .ok_or_else(|| SimError::UnknownPod(name.to_string()))?;
            let (node, uid) = (pod.node.clone(), pod.uid.clone());
            st.record(
                &node,
                SimRecordKind::PodStarted {
                    pod: name.to_string(),
                    uid,
                },
            );
        }
        self.deliver_pod(name, None, false).await.map(|_| ())
    }

    fn tamper_digest(&self) -> DigestValue {
        let mut b = [0u8; 32];
        self.state().tamper_rng.fill(&mut b);
        DigestValue::from_bytes(b)
    }

    fn pod_node(&self, pod: &str) -> Result<(String, PodUid), SimError> {
        self.state()
            .pods
            .get(pod)
            .map(|p| (p.node.clone(), p.uid.clone()))
            .ok_or_else(|| SimError::UnknownPod(pod.to_string()))
    }

    pub async fn inject(&self, scenario: &TamperScenario) -> Result<InjectOutcome, SimError> {
        let note = |s: &Self, node: &str| {
            s.state().record(
                node,
                SimRecordKind::Injected {
                    scenario: scenario.clone(),
                },
            );
        };
        match scenario {
            TamperScenario::ExecUnlisted { pod, path } | TamperScenario::ModifyPodBinary { pod, path } => {
                let (node, uid) = self.pod_node(pod)?;
                note(self, &node);
                let digest = self.tamper_digest();
                let events = self.deliver_pod(pod, Some(vec![(path.clone(), digest)]), false).await?;
                Ok(InjectOutcome {
                    node,
                    scope: PodRef::pod(uid),
                    events,
                })
            }
            TamperScenario::PreloadHijack { pod, library } => {
                let (node, uid) = self.pod_node(pod)?;
                note(self, &node);
                let files = vec![
                    (library.clone(), self.tamper_digest()),
                    ("/etc/ld.so.preload".to_string(), self.tamper_digest()),
                ];
                let events = self.deliver_pod(pod, Some(files), false).await?;
                Ok(InjectOutcome {
                    node,
                    scope: PodRef::pod(uid),
                    events,
                })
            }
            TamperScenario::OverwriteHostBinary { node, path } => {
                self.node(node)?;
                note(self, node);
                let digest = self.tamper_digest();
                self.deliver_host(node, &[(path.clone(), digest)]).await?;
                Ok(InjectOutcome {
                    node: node.clone(),
                    scope: PodRef::NodeScope,
                    events: 1,
                })
            }
            TamperScenario::UnknownPod { node } => {
                self.node(node)?;
                note(self, node);
                let name = {
                    let mut st = self.state();
                    st.rogue_count += 1;
                    let name = format!("rogue-{}", st.rogue_count);
                    let uid = st.fresh_uid();
                    let container = st.fresh_container();
                    let spec = PodSpec::synthetic(
                        &name,
                        "rogue:latest",
                        &["/bin/sh", "/usr/bin/xmrig"],
                        CgroupStyle::K3s,
                        QosClass::Besteffort,
                    );
                    st.pods.insert(
                        name.clone(),
                        PodRuntime {
                            spec,
                            node: node.clone(),
                            uid,
                            container,
                            restarts: 0,
                            rogue: true,
                        },
                    );
                    name
                };
                self.start_pod_events(&name).await?;
                let (_, uid) = self.pod_node(&name)?;
                Ok(InjectOutcome {
                    node: node.clone(),
                    scope: PodRef::pod(uid),
                    events: 2,
                })
            }
        }
    }

    /// Acts on a verifier remediation event.
    pub async fn handle_remediation(&self, event: &RemediationEvent) -> RemediationOutcome {
        let PodRef::Pod { uid } = &event.scope else {
            return RemediationOutcome::Ignored {
                reason: "node-scope events are not remediated by the simulator".into(),
            };
        };
        let found = self
            .state()
            .pods
            .values()
            .find(|p| &p.uid == uid)
            .map(|p| (p.spec.name.clone(), p.node.clone()));
        let Some((name, node)) = found else {
            tracing::warn!(%uid, "remediation for unknown pod ignored");
            return RemediationOutcome::Ignored {
                reason: format!("no running pod with uid {uid}"),
            };
        };
        if event.action != RemediationAction::EvictRestart {
            return RemediationOutcome::NoChange {
                reason: format!("action {:?} leaves pods running", event.action),
            };
        }
        match self.restart_pod(&name, &node).await {
            Ok(notice) => RemediationOutcome::Restarted(notice),
            Err(e) => RemediationOutcome::Ignored { reason: e.to_string() },
        }
    }

    async fn restart_pod(&self, name: &str, node: &str) -> Result<RestartNotice, SimError> {
        let rt = self.node(node)?;
        let notice = {
            let _g = rt.stream.lock().await;
            let mut st = self.state();
            let new_uid = st.fresh_uid();
            let container = st.fresh_container();
            let pod = st
                .pods
                .get_mut(name)
                .ok_or_else(|| SimError::UnknownPod(name.to_string()))?;
            let old_uid = std::mem::replace(&mut pod.uid, new_uid.clone());
            pod.container = container;
            pod.restarts += 1;
            st.record(
                node,
                SimRecordKind::PodTerminated {
                    pod: name.to_string(),
                    uid: old_uid.clone(),
                },
            );
            let notice = RestartNotice {
                pod: name.to_string(),
                node: node.to_string(),
                old_uid,
                new_uid,
            };
            st.notices.push(notice.clone());
            notice
        };
        self.start_pod_events(name).await?;
        Ok(notice)
    }

    /// Bundle for `node` built from the manifests: host binaries in the
    /// node allowlist, each live pod registered under its current UID.
    /// The exclude rules apply at node scope; pods are attested in full.
    pub fn golden_bundle(&self, node: &str, exclude: &[ExcludeRule]) -> Result<PolicyBundle, SimError> {
        let spec = self
            .inner
            .topology
            .node(node)
            .ok_or_else(|| SimError::UnknownNode(node.to_string()))?;
        let mut b = PolicyBundle::default();
        for (p, d) in &spec.host_manifest {
            b.node_allowlist.insert(p.clone(), *d);
        }
        b.exclude_rules = exclude.to_vec();
        let st = self.state();
        for pod in st.pods.values().filter(|p| p.node == node && !p.rogue) {
            let mut al = AllowList::new();
            for (p, d) in &pod.spec.manifest {
                al.insert(p.clone(), *d);
            }
            b.register_pod(pod.uid.clone(), al);
            b.pod_labels.insert(pod.uid.clone(), pod.spec.name.clone());
            if !exclude.is_empty() {
                b.pod_exclude_rules.insert(pod.uid.clone(), Vec::new());
            }
        }
        Ok(b)
    }

    /// One workload step drawn from `rng`: a manifest re-execution on a
    /// host or pod, occasionally in a fresh container.
    pub async fn workload_step(&self, rng: &mut ChaCha20Rng) -> Result<(), SimError> {
        let nodes: Vec<&NodeSpec> = self.inner.topology.nodes.iter().collect();
        if nodes.is_empty() {
            return Ok(());
        }
        let node = nodes[rng.gen_range(0..nodes.len())];
        let target = if node.pods.is_empty() || rng.gen_bool(0.2) {
            Target::Host
        } else {
            Target::Pod {
                name: node.pods[rng.gen_range(0..node.pods.len())].name.clone(),
                new_container: rng.gen_bool(self.inner.config.container_churn.clamp(0.0, 1.0)),
            }
        };
        match target {
            Target::Host => {
                if node.host_manifest.is_empty() {
                    return Ok(());
                }
                let i = rng.gen_range(0..node.host_manifest.len());
                let (p, d) = node.host_manifest.iter().nth(i).expect("index in range");
                self.deliver_host(&node.name, &[(p.clone(), *d)]).await
            }
            Target::Pod { name, new_container } => {
                let spec = node.pods.iter().find(|p| p.name == name).expect("pod in node");
                if new_container {
                    self.deliver_pod(&name, None, true).await.map(|_| ())
                } else if spec.manifest.is_empty() {
                    Ok(())
                } else {
                    let i = rng.gen_range(0..spec.manifest.len());
                    let (p, d) = spec.manifest.iter().nth(i).expect("index in range");
                    self.deliver_pod(&name, Some(vec![(p.clone(), *d)]), false)
                        .await
                        .map(|_| ())
                }
            }
        }
    }

    pub fn workload_rng(&self) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(self.inner.workload_seed)
    }

    fn gap(&self, rng: &mut ChaCha20Rng) -> Duration {
        let mean = self.inner.config.event_gap.as_secs_f64();
        let j = self.inner.config.jitter.clamp(0.0, 1.0);
        let factor = if j > 0.0 { rng.gen_range(1.0 - j..=1.0 + j) } else { 1.0 };
        Duration::from_secs_f64(mean * factor)
    }

    /// Runs the paced workload until the task is aborted.
    pub fn spawn_workload(&self) -> JoinHandle<()> {
        let cluster = self.clone();
        tokio::spawn(async move {
            let mut rng = cluster.workload_rng();
            loop {
                tokio::time::sleep(cluster.gap(&mut rng)).await;
                if let Err(e) = cluster.workload_step(&mut rng).await {
                    tracing::warn!("workload step failed: {e}");
                }
            }
        })
    }

    /// Injects each step at its offset from now.
    pub async fn run_schedule(&self, schedule: &ScenarioSchedule) -> Result<Vec<InjectOutcome>, SimError> {
        let start = tokio::time::Instant::now();
        let mut out = Vec::new();
        for step in &schedule.steps {
            tokio::time::sleep_until(start + Duration::from_millis(step.at_ms)).await;
            out.push(self.inject(&step.scenario).await?);
        }
        Ok(out)
    }
}
