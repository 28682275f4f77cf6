// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

//! A whole attestation deployment in one process: registrar, one agent per
//! simulated node, the cluster simulator and the verifier, talking over
//! localhost HTTP exactly as separate processes would.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use tokio::task::JoinHandle;

use crate::agent::{self, Agent};
use crate::api::ServiceHandle;
use crate::policy::{ExcludeRule, PolicyBundle, RemediationAction};
use crate::registrar::{self, Registrar, RegistrarClient};
use crate::sim::{self, Cluster, SimConfig, Topology};
use crate::verifier::{
    self, AgentStatus, AuditLog, HttpConnector, RemediationSink, Verifier, VerifierConfig, VerifierError, WebhookSink,
};

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Clone)]
pub struct TestbedOptions {
    pub topology: Topology,
    pub seed: u64,
    pub interval: Duration,
    pub auto_poll: bool,
    /// Start the paced background workload.
    pub workload: bool,
    pub event_gap: Duration,
    /// Send remediation events to the simulator's webhook.
    pub webhook: bool,
    pub token: String,
}

impl Default for TestbedOptions {
    fn default() -> Self {
        TestbedOptions {
            topology: Topology::five_g_core(),
            seed: 1,
            interval: verifier::DEFAULT_INTERVAL,
            auto_poll: true,
            workload: true,
            event_gap: sim::DEFAULT_EVENT_GAP,
            webhook: true,
            token: "podseal-testbed".into(),
        }
    }
}

pub struct Testbed {
    pub registrar: Arc<Registrar>,
    pub agents: BTreeMap<String, Arc<Agent>>,
    pub cluster: Cluster,
    pub verifier: Verifier,
    pub registrar_url: String,
    pub verifier_url: String,
    pub sim_url: String,
    pub agent_urls: BTreeMap<String, String>,
    pub token: String,
    handles: Vec<ServiceHandle>,
    workload: Option<JoinHandle<()>>,
}

impl Drop for Testbed {
    fn drop(&mut self) {
        if let Some(w) = self.workload.take() {
            w.abort();
        }
    }
}

impl Testbed {
    pub async fn start(opts: TestbedOptions) -> Result<Testbed, BoxError> {
        let token = opts.token.clone();
        let tok = Some(token.clone()).filter(|t| !t.is_empty());
        let mut handles = Vec::new();

        let registrar = Arc::new(Registrar::in_memory());
        let h = ServiceHandle::bind("127.0.0.1:0", registrar::router(registrar.clone(), token.clone(), "")).await?;
        let registrar_url = h.url();
        handles.push(h);
        let reg_client = RegistrarClient::new(registrar_url.clone(), tok.clone());

        let mut topology = opts.topology.clone();
        let agents = Cluster::local_agents(&topology, opts.seed);
        let mut agent_urls = BTreeMap::new();
        for node in &mut topology.nodes {
            let a = agents[&node.name].clone();
            let h = ServiceHandle::bind("127.0.0.1:0", agent::router(a.clone(), token.clone())).await?;
            a.register(&reg_client, Some(h.url())).await?;
            node.agent_endpoint = Some(h.url());
            agent_urls.insert(node.name.clone(), h.url());
            handles.push(h);
        }

        let cluster = Cluster::start(
            topology.clone(),
            opts.seed,
            Cluster::http_sinks(&topology, tok.clone())?,
            SimConfig {
                event_gap: opts.event_gap,
                ..SimConfig::default()
            },
        )
        .await?;
        let h = ServiceHandle::bind("127.0.0.1:0", sim::router(cluster.clone(), token.clone())).await?;
        let sim_url = h.url();
        handles.push(h);

        let sink = opts.webhook.then(|| {
            Arc::new(WebhookSink::new(&format!("{sim_url}/v1/remediate"), tok.clone())) as Arc<dyn RemediationSink>
        });
        let verifier = Verifier::new(
            VerifierConfig {
                default_interval: opts.interval,
                auto_poll: opts.auto_poll,
                ..VerifierConfig::default()
            },
            Arc::new(reg_client),
            Arc::new(HttpConnector { token: tok.clone() }),
            AuditLog::in_memory(),
            sink,
        );
        let h = ServiceHandle::bind("127.0.0.1:0", verifier::router(verifier.clone(), token.clone())).await?;
        let verifier_url = h.url();
        handles.push(h);

        let workload = opts.workload.then(|| cluster.spawn_workload());
        Ok(Testbed {
            registrar,
            agents,
            cluster,
            verifier,
            registrar_url,
            verifier_url,
            sim_url,
            agent_urls,
            token,
            handles,
            workload,
        })
    }

    pub fn nodes(&self) -> Vec<String> {
        self.agents.keys().cloned().collect()
    }

    /// The node's golden bundle with `exclude` at node scope and
    /// `action` as the default remediation.
    pub fn bundle(
        &self,
        node: &str,
        exclude: &[ExcludeRule],
        action: RemediationAction,
    ) -> Result<PolicyBundle, BoxError> {
        let mut b = self.cluster.golden_bundle(node, exclude)?;
        b.remediation.default = action;
        Ok(b)
    }

    pub async fn enroll(&self, node: &str, bundle: PolicyBundle) -> Result<AgentStatus, VerifierError> {
        self.verifier.enroll_agent(node, bundle, None).await
    }

    pub async fn enroll_all(&self, exclude: &[ExcludeRule], action: RemediationAction) -> Result<(), BoxError> {
        for n in self.nodes() {
            let b = self.bundle(&n, exclude, action)?;
            self.enroll(&n, b).await?;
        }
        Ok(())
    }

    pub fn status(&self, node: &str) -> AgentStatus {
        self.verifier.get_status(node).expect("node is enrolled")
    }

    /// Polls the verifier's status for `node` until `pred` holds. Returns
    /// the matching status and the time waited.
    pub async fn wait_for(
        &self,
        node: &str,
        timeout: Duration,
        pred: impl Fn(&AgentStatus) -> bool,
    ) -> Option<(AgentStatus, Duration)> {
        let start = Instant::now();
        loop {
            let st = self.status(node);
            if pred(&st) {
                return Some((st, start.elapsed()));
            }
            if start.elapsed() >= timeout {
                return None;
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    pub fn stop_workload(&mut self) {
        if let Some(w) = self.workload.take() {
            w.abort();
        }
    }

    pub fn service_count(&self) -> usize {
        self.handles.len()
    }
}
