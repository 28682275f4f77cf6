// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

//! Tamper, evict, restart, re-enroll: the verifier asks the orchestrator to
//! restart a compromised pod, which comes back under a new UID that the
//! tenant binds to the pod's allowlist before resetting its trust.

use std::time::Duration;

use podseal::pod::PodRef;
use podseal::policy::{ExcludeRule, RemediationAction, USR_BIN_ONLY};
use podseal::sim::TamperScenario;
use podseal::tenant;
use podseal::testbed::{Testbed, TestbedOptions};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let tb = Testbed::start(TestbedOptions {
        auto_poll: false,
        ..TestbedOptions::default()
    })
    .await?;
    let mut bundle = tb.bundle(
        "worker1",
        &[ExcludeRule::regex(USR_BIN_ONLY)],
        RemediationAction::EvictRestart,
    )?;
    tb.enroll("worker1", bundle.clone()).await?;
    tb.verifier.attestation_cycle("worker1").await?;

    tb.cluster
        .inject(&TamperScenario::exec_unlisted("ausf", "/usr/bin/curl"))
        .await?;
    let rec = tb.verifier.attestation_cycle("worker1").await?;
    println!("cycle {:?}, {} new violation(s)", rec.outcome, rec.new_violations.len());

    while tb.cluster.notices().is_empty() {
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let notice = tb.cluster.notices().remove(0);
    println!("{} restarted: {} -> {}", notice.pod, notice.old_uid, notice.new_uid);

    tenant::rebind_pod(&mut bundle, "ausf", notice.new_uid.clone())?;
    tb.enroll("worker1", bundle).await?;
    tb.verifier
        .reset_trust("worker1", &PodRef::pod(notice.new_uid.clone()))
        .await?;
    tb.verifier.attestation_cycle("worker1").await?;
    println!("{}", tenant::render_table(&[tb.status("worker1")]));
    Ok(())
}
