// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

//! Argument parsing and dispatch for the `podseal` binary.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::agent::{self, Agent, AgentConfig};
use crate::api::ServiceHandle;
use crate::pod::PodUid;
use crate::policy::PolicyBundle;
use crate::registrar::{self, Registrar, RegistrarClient};
use crate::sim::{self, Cluster, ScenarioSchedule, SimClient, SimConfig, TamperScenario, Topology};
use crate::tenant::{self, TenantError, EXIT_ERROR, EXIT_OK};
use crate::verifier::{
    self, AuditLog, EnrollRequest, HttpConnector, RemediationSink, Verifier, VerifierClient, VerifierConfig,
    WebhookSink,
};

#[derive(Debug, Parser)]
#[command(
    name = "podseal",
    version,
    about = "Pod-granular continuous attestation for Kubernetes nodes"
)]
pub struct Cli {
    #[arg(
        long,
        env = "PODSEAL_VERIFIER",
        default_value = "http://127.0.0.1:8881",
        global = true
    )]
    pub verifier: String,
    #[arg(
        long,
        env = "PODSEAL_REGISTRAR",
        default_value = "http://127.0.0.1:8891",
        global = true
    )]
    pub registrar: String,
    #[arg(long, env = "PODSEAL_SIM", default_value = "http://127.0.0.1:8080", global = true)]
    pub sim: String,
    /// Shared bearer token for the service APIs.
    #[arg(long, env = "PODSEAL_TOKEN", global = true, hide_env_values = true)]
    pub token: Option<String>,
    #[arg(long, env = "PODSEAL_OUTPUT", value_enum, default_value_t = Output::Table, global = true)]
    pub output: Output,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Output {
    Table,
    Structured,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Enroll a registered agent with a policy bundle.
    Enroll {
        #[arg(long)]
        agent: String,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        interval_ms: Option<u64>,
    },
    /// Show node and pod trust states.
    Status {
        agent: Option<String>,
        #[arg(long, conflicts_with = "agent")]
        all: bool,
        /// Re-query every N seconds until interrupted.
        #[arg(long, value_name = "SECS")]
        watch: Option<u64>,
    },
    /// Return a scope to Start.
    Reset {
        #[arg(long)]
        agent: String,
        /// `node`, `pod/<uid>`, a pod uid, or a pod name.
        #[arg(long)]
        scope: String,
    },
    /// Print audit records newer than a timestamp (ms since epoch).
    Audit {
        #[arg(long, default_value_t = 0)]
        since: u64,
    },
    /// Build allowlists from measurement lists.
    #[command(subcommand)]
    Allowlist(AllowlistCmd),
    /// Edit or fetch policy bundles.
    #[command(subcommand)]
    Bundle(BundleCmd),
    /// Drive a tamper scenario in the simulator.
    #[command(subcommand)]
    Inject(InjectCmd),
    /// Run a service in the foreground.
    #[command(subcommand)]
    Serve(ServeCmd),
}

#[derive(Debug, Subcommand)]
pub enum AllowlistCmd {
    /// Build an allowlist from a clean measurement list.
    Generate {
        /// ascii_runtime_measurements file.
        #[arg(long, conflicts_with = "agent_url", required_unless_present = "agent_url")]
        ml: Option<PathBuf>,
        /// Agent base URL to pull the list from.
        #[arg(long)]
        agent_url: Option<String>,
        /// `node` or `pod/<uid>`.
        #[arg(long, default_value = "node")]
        scope: String,
        /// Merge into this bundle file instead of printing.
        #[arg(long)]
        into_bundle: Option<PathBuf>,
        /// Pod name recorded in the bundle.
        #[arg(long)]
        label: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum BundleCmd {
    /// Point a bundle's pod entry at the UID of its restarted pod.
    Rebind {
        #[arg(long)]
        bundle: PathBuf,
        /// Pod name or old UID.
        #[arg(long)]
        pod: String,
        #[arg(long)]
        uid: PodUid,
    },
    /// Fetch the simulator's golden bundle for a node.
    FromSim {
        #[arg(long)]
        node: String,
        /// Node-scope exclude regex.
        #[arg(long)]
        exclude: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum InjectCmd {
    ExecUnlisted {
        #[arg(long)]
        pod: String,
        #[arg(long)]
        path: String,
    },
    OverwriteHostBinary {
        #[arg(long)]
        node: String,
        #[arg(long)]
        path: String,
    },
    PreloadHijack {
        #[arg(long)]
        pod: String,
        #[arg(long)]
        library: String,
    },
    UnknownPod {
        #[arg(long)]
        node: String,
    },
    ModifyPodBinary {
        #[arg(long)]
        pod: String,
        #[arg(long)]
        path: String,
    },
    /// Replay a scenario file against the simulator.
    Schedule { file: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum ServeCmd {
    Registrar {
        #[arg(long, default_value = "127.0.0.1:8891")]
        listen: String,
        /// JSON-lines identity store.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Token required for deletes.
        #[arg(long, env = "PODSEAL_ADMIN_TOKEN", default_value = "")]
        admin_token: String,
    },
    Verifier {
        #[arg(long, default_value = "127.0.0.1:8881")]
        listen: String,
        /// Remediation webhook URL.
        #[arg(long)]
        webhook: Option<String>,
        #[arg(long)]
        audit_log: Option<PathBuf>,
        #[arg(long, default_value_t = verifier::DEFAULT_UNREACHABLE_GRACE)]
        grace: u32,
        #[arg(long, default_value_t = 2000)]
        interval_ms: u64,
    },
    Agent(AgentArgs),
    Sim {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        /// Topology file; the built-in testbed when omitted.
        #[arg(long)]
        topology: Option<PathBuf>,
        /// Agent URL per node, `NODE=URL`; overrides the topology file.
        #[arg(long = "agent", value_parser = parse_key_val)]
        agents: Vec<(String, String)>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        event_gap_ms: u64,
        #[arg(long)]
        event_log: Option<PathBuf>,
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long)]
        no_workload: bool,
    },
}

#[derive(Debug, Args)]
pub struct AgentArgs {
    #[arg(long, default_value = "127.0.0.1:9002")]
    pub listen: String,
    #[arg(long)]
    pub id: String,
    #[arg(long)]
    pub node: Option<String>,
    /// Deterministic TPM keys.
    #[arg(long)]
    pub seed: Option<u64>,
    /// URL the verifier should use; `http://<listen>` by default.
    #[arg(long)]
    pub advertise: Option<String>,
    /// Register with the registrar on startup.
    #[arg(long)]
    pub register: bool,
}

fn parse_key_val(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected NODE=URL, got `{s}`"))
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return EXIT_OK;
            }
            let text = e.to_string();
            let detail: Vec<&str> = text
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:"))
                .filter(|l| !l.is_empty())
                .collect();
            let detail = detail.join(" ");
            eprintln!("error: usage: {}", detail.trim_start_matches("error: "));
            return EXIT_ERROR;
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("PODSEAL_LOG").unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .try_init();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: runtime: {e}");
            return EXIT_ERROR;
        }
    };
    match rt.block_on(run(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.line());
            EXIT_ERROR
        }
    }
}

pub async fn run(cli: Cli) -> Result<i32, TenantError> {
    let token = cli.token.clone().filter(|t| !t.is_empty());
    let vc = || VerifierClient::new(cli.verifier.clone(), token.clone());
    let structured = cli.output == Output::Structured;
    match cli.command {
        Command::Enroll {
            agent,
            bundle,
            interval_ms,
        } => {
            let bundle = PolicyBundle::from_toml_str(&tenant::read_file(&bundle)?)?;
            let st = vc()
                .enroll(&EnrollRequest {
                    agent_id: agent,
                    bundle,
                    interval_ms,
                })
                .await?;
            if structured {
                println!("{}", serde_json::to_string_pretty(&st).expect("status serializes"));
            } else {
                println!(
                    "enrolled {} ({} pods, interval {} ms)",
                    st.agent_id,
                    st.trust.pods.len(),
                    st.interval_ms
                );
            }
            Ok(EXIT_OK)
        }
        Command::Status { agent, all: _, watch } => loop {
            let statuses = match &agent {
                Some(id) => vec![vc().status(id).await?],
                None => vc().status_all().await?.agents,
            };
            if structured {
                println!("{}", tenant::render_structured(&statuses));
            } else {
                print!("{}", tenant::render_table(&statuses));
            }
            let code = tenant::status_exit_code(&statuses);
            match watch {
                Some(secs) => {
                    tokio::time::sleep(Duration::from_secs(secs.max(1))).await;
                    println!();
                }
                None => break Ok(code),
            }
        },
        Command::Reset { agent, scope } => {
            let client = vc();
            let status = client.status(&agent).await?;
            let scope = tenant::resolve_scope(Some(&status), &scope)?;
            let st = client.reset(&agent, &scope).await?;
            if structured {
                println!("{}", serde_json::to_string_pretty(&st).expect("status serializes"));
            } else {
                println!("reset {} {}", agent, scope);
            }
            Ok(EXIT_OK)
        }
        Command::Audit { since } => {
            for rec in vc().audit(since).await? {
                println!("{}", serde_json::to_string(&rec).expect("record serializes"));
            }
            Ok(EXIT_OK)
        }
        Command::Allowlist(AllowlistCmd::Generate {
            ml,
            agent_url,
            scope,
            into_bundle,
            label,
        }) => {
            let scope = tenant::resolve_scope(None, &scope)?;
            let al = match (ml, agent_url) {
                (Some(path), _) => tenant::allowlist_from_ascii(&tenant::read_file(&path)?, &scope)?,
                (None, Some(url)) => tenant::allowlist_from_agent(&url, token.clone(), &scope).await?,
                (None, None) => return Err(TenantError::Usage("--ml or --agent-url is required".into())),
            };
            match into_bundle {
                Some(path) => {
                    let mut bundle = if path.exists() {
                        PolicyBundle::from_toml_str(&tenant::read_file(&path)?)?
                    } else {
                        PolicyBundle::default()
                    };
                    let n = al.len();
                    tenant::merge_into_bundle(&mut bundle, &scope, al, label.as_deref());
                    tenant::write_file(&path, &bundle.to_toml_string()?)?;
                    println!("{n} paths for {scope} written to {}", path.display());
                }
                None => print!("{}", tenant::allowlist_to_toml(&al)),
            }
            Ok(EXIT_OK)
        }
        Command::Bundle(BundleCmd::Rebind { bundle, pod, uid }) => {
            let mut b = PolicyBundle::from_toml_str(&tenant::read_file(&bundle)?)?;
            let old = tenant::rebind_pod(&mut b, &pod, uid.clone())?;
            tenant::write_file(&bundle, &b.to_toml_string()?)?;
            println!("rebound {pod}: {old} -> {uid}");
            Ok(EXIT_OK)
        }
        Command::Bundle(BundleCmd::FromSim { node, exclude, out }) => {
            let b = SimClient::new(cli.sim.clone(), token.clone())
                .bundle(&node, exclude.as_deref())
                .await?;
            let text = b.to_toml_string()?;
            match out {
                Some(p) => tenant::write_file(&p, &text)?,
                None => print!("{text}"),
            }
            Ok(EXIT_OK)
        }
        Command::Inject(cmd) => {
            let client = SimClient::new(cli.sim.clone(), token.clone());
            let scenarios: Vec<(u64, TamperScenario)> = match cmd {
                InjectCmd::ExecUnlisted { pod, path } => vec![(0, TamperScenario::ExecUnlisted { pod, path })],
                InjectCmd::OverwriteHostBinary { node, path } => {
                    vec![(0, TamperScenario::OverwriteHostBinary { node, path })]
                }
                InjectCmd::PreloadHijack { pod, library } => vec![(0, TamperScenario::PreloadHijack { pod, library })],
                InjectCmd::UnknownPod { node } => vec![(0, TamperScenario::UnknownPod { node })],
                InjectCmd::ModifyPodBinary { pod, path } => vec![(0, TamperScenario::ModifyPodBinary { pod, path })],
                InjectCmd::Schedule { file } => ScenarioSchedule::from_toml_str(&tenant::read_file(&file)?)
                    .map_err(|e| TenantError::Usage(e.to_string()))?
                    .steps
                    .into_iter()
                    .map(|s| (s.at_ms, s.scenario))
                    .collect(),
            };
            let start = tokio::time::Instant::now();
            for (at, s) in scenarios {
                tokio::time::sleep_until(start + Duration::from_millis(at)).await;
                let out = client.inject(&s).await?;
                if structured {
                    println!("{}", serde_json::to_string(&out).expect("outcome serializes"));
                } else {
                    println!("injected {} events on {} ({})", out.events, out.node, out.scope);
                }
            }
            Ok(EXIT_OK)
        }
        Command::Serve(cmd) => serve(cmd, token, &cli.registrar).await,
    }
}

async fn announce(handle: &ServiceHandle) {
    println!("listening on {}", handle.addr());
}

async fn wait_for_shutdown() {
    let _ = tokio::signal::ctrl_c().await;
}

fn io_err(what: &str, e: impl std::fmt::Display) -> TenantError {
    TenantError::Failed(format!("{what}: {e}"))
}

async fn serve(cmd: ServeCmd, token: Option<String>, registrar_url: &str) -> Result<i32, TenantError> {
    let tok = token.clone().unwrap_or_default();
    match cmd {
        ServeCmd::Registrar {
            listen,
            store,
            admin_token,
        } => {
            let reg = match store {
                Some(p) => Registrar::open(&p).map_err(|e| io_err("registrar store", e))?,
                None => Registrar::in_memory(),
            };
            let h = ServiceHandle::bind(&listen, registrar::router(Arc::new(reg), tok, admin_token))
                .await
                .map_err(|e| io_err("bind", e))?;
            announce(&h).await;
            wait_for_shutdown().await;
        }
        ServeCmd::Verifier {
            listen,
            webhook,
            audit_log,
            grace,
            interval_ms,
        } => {
            let audit = match audit_log {
                Some(p) => AuditLog::with_file(&p).map_err(|e| io_err("audit log", e))?,
                None => AuditLog::in_memory(),
            };
            let sink = webhook.map(|u| Arc::new(WebhookSink::new(&u, token.clone())) as Arc<dyn RemediationSink>);
            let v = Verifier::new(
                VerifierConfig {
                    default_interval: Duration::from_millis(interval_ms.max(1)),
                    unreachable_grace: grace,
                    ..VerifierConfig::default()
                },
                Arc::new(RegistrarClient::new(registrar_url, token.clone())),
                Arc::new(HttpConnector { token: token.clone() }),
                audit,
                sink,
            );
            let h = ServiceHandle::bind(&listen, verifier::router(v, tok))
                .await
                .map_err(|e| io_err("bind", e))?;
            announce(&h).await;
            wait_for_shutdown().await;
        }
        ServeCmd::Agent(a) => {
            let agent = Arc::new(Agent::from_config(&AgentConfig {
                agent_id: a.id.clone(),
                node_name: a.node.clone().unwrap_or_else(|| a.id.clone()),
                registrar: None,
                listen: Some(a.listen.clone()),
                seed: a.seed,
                api_token: tok.clone(),
            }));
            let h = ServiceHandle::bind(&a.listen, agent::router(agent.clone(), tok))
                .await
                .map_err(|e| io_err("bind", e))?;
            if a.register {
                let endpoint = a.advertise.clone().unwrap_or_else(|| format!("http://{}", h.addr()));
                let client = RegistrarClient::new(registrar_url, token.clone());
                agent
                    .register(&client, Some(endpoint))
                    .await
                    .map_err(TenantError::Client)?;
            }
            announce(&h).await;
            wait_for_shutdown().await;
        }
        ServeCmd::Sim {
            listen,
            topology,
            agents,
            seed,
            event_gap_ms,
            event_log,
            schedule,
            no_workload,
        } => {
            let mut topo = match topology {
                Some(p) => Topology::load(&p).map_err(|e| TenantError::Usage(e.to_string()))?,
                None => Topology::five_g_core(),
            };
            let overrides: BTreeMap<String, String> = agents.into_iter().collect();
            for n in &mut topo.nodes {
                if let Some(u) = overrides.get(&n.name) {
                    n.agent_endpoint = Some(u.clone());
                }
            }
            let sinks = Cluster::http_sinks(&topo, token.clone()).map_err(|e| TenantError::Usage(e.to_string()))?;
            let cluster = Cluster::start(
                topo,
                seed,
                sinks,
                SimConfig {
                    event_gap: Duration::from_millis(event_gap_ms.max(1)),
                    event_log_path: event_log,
                    ..SimConfig::default()
                },
            )
            .await
            .map_err(|e| TenantError::Failed(e.to_string()))?;
            let h = ServiceHandle::bind(&listen, sim::router(cluster.clone(), tok))
                .await
                .map_err(|e| io_err("bind", e))?;
            announce(&h).await;
            let _workload = (!no_workload).then(|| cluster.spawn_workload());
            if let Some(p) = schedule {
                let sched = ScenarioSchedule::load(&p).map_err(|e| TenantError::Usage(e.to_string()))?;
                let c = cluster.clone();
                tokio::spawn(async move {
                    if let Err(e) = c.run_schedule(&sched).await {
                        tracing::error!("schedule aborted: {e}");
                    }
                });
            }
            wait_for_shutdown().await;
        }
    }
    Ok(EXIT_OK)
}
