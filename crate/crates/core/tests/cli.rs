// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

use std::process::{Command, Output};

use podseal::policy::{ExcludeRule, PolicyBundle, RemediationAction, USR_BIN_ONLY};
use podseal::sim::TamperScenario;
use podseal::testbed::{Testbed, TestbedOptions};

struct Env {
    rt: tokio::runtime::Runtime,
    tb: Testbed,
}

fn env() -> Env {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .unwrap();
    let tb = rt
        .block_on(Testbed::start(TestbedOptions {
            auto_poll: false,
            workload: false,
            ..TestbedOptions::default()
        }))
        .unwrap();
    Env { rt, tb }
}

impl Env {
    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_podseal"))
            .args([
                "--verifier",
                &self.tb.verifier_url,
                "--registrar",
                &self.tb.registrar_url,
            ])
            .args(["--sim", &self.tb.sim_url, "--token", &self.tb.token])
            .args(args)
            .env_remove("PODSEAL_OUTPUT")
            .output()
            .unwrap()
    }

    fn enroll_and_cycle(&self) {
        self.rt.block_on(async {
            self.tb
                .enroll_all(&[ExcludeRule::regex(USR_BIN_ONLY)], RemediationAction::NotifyOnly)
                .await
                .unwrap();
            for n in self.tb.nodes() {
                self.tb.verifier.attestation_cycle(&n).await.unwrap();
            }
        });
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn status_table_and_exit_codes() {
    let e = env();
    let o = e.run(&["status", "--all"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    e.enroll_and_cycle();
    let o = e.run(&["status", "--all"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("AGENT"), "{out}");
    assert!(out.contains(" ausf "), "{out}");

    e.rt.block_on(async {
        e.tb.cluster
            .inject(&TamperScenario::exec_unlisted("ausf", "/bin/cat"))
            .await
            .unwrap();
        e.tb.verifier.attestation_cycle("worker1").await.unwrap();
    });
    let o = e.run(&["status", "worker1"]);
    assert_eq!(o.status.code(), Some(2));
    let out = stdout(&o);
    assert!(out.contains("  violation /bin/cat unknown-file "), "{out}");
    assert_eq!(e.run(&["status", "worker2"]).status.code(), Some(0));

    let o = e.run(&["--output", "structured", "status", "worker1"]);
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).expect("structured output is JSON");
    assert_eq!(doc["agents"][0]["agent_id"], "worker1");
}

#[test]
fn pending_agents_exit_three() {
    let e = env();
    e.rt.block_on(async {
        let b = e.tb.bundle("worker2", &[], RemediationAction::NotifyOnly).unwrap();
        e.tb.enroll("worker2", b).await.unwrap();
    });
    assert_eq!(e.run(&["status", "worker2"]).status.code(), Some(3));
}

#[test]
fn errors_are_one_line_with_exit_one() {
    let e = env();
    let o = e.run(&["reset", "--agent", "ghost", "--scope", "node"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: not-found: "), "{err}");

    let o = e.run(&["status", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: usage: "));
    assert_eq!(stderr(&o).lines().count(), 1);
}

#[test]
fn enroll_from_bundle_file_and_reset() {
    let e = env();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("worker1.toml");
    let path_s = path.to_str().unwrap();
    let o = e.run(&[
        "bundle",
        "from-sim",
        "--node",
        "worker1",
        "--exclude",
        USR_BIN_ONLY,
        "--out",
        path_s,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let bundle: PolicyBundle = toml::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(bundle.registered_pods.len(), 4);

    let o = e.run(&[
        "enroll",
        "--agent",
        "worker1",
        "--bundle",
        path_s,
        "--interval-ms",
        "3000",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(e.tb.status("worker1").interval_ms, 3000);

    let o = e.run(&["reset", "--agent", "worker1", "--scope", "ausf"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = e.run(&["audit"]);
    assert!(stdout(&o).contains("reset"), "{}", stdout(&o));
}

#[test]
fn allowlist_generate_from_measurement_list() {
    let e = env();
    let fixture = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/ascii_runtime_measurements_sha256"
    );
    let o = e.run(&["allowlist", "generate", "--ml", fixture]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("/usr/bin/"), "{out}");

    let o = e.run(&["allowlist", "generate", "--ml", "/nonexistent/list"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: io: "), "{}", stderr(&o));
}

#[test]
fn inject_through_the_simulator() {
    let e = env();
    let before = e.tb.agents["worker2"].log_count();
    let o = e.run(&["inject", "exec-unlisted", "--pod", "upf", "--path", "/usr/bin/nc"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(e.tb.agents["worker2"].log_count() > before);
    let o = e.run(&["inject", "unknown-pod", "--node", "nowhere"]);
    assert_eq!(o.status.code(), Some(1));
}
