// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

//! Three-node 5G core cluster: enroll every node, run unlisted binaries in
//! the AUSF pod, and print the verifier's view once it has caught them.

use std::time::Duration;

use podseal::pod::PodRef;
use podseal::policy::{ExcludeRule, RemediationAction, USR_BIN_ONLY};
use podseal::sim::TamperScenario;
use podseal::tenant::render_table;
use podseal::testbed::{Testbed, TestbedOptions};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let tb = Testbed::start(TestbedOptions::default()).await?;
    tb.enroll_all(&[ExcludeRule::regex(USR_BIN_ONLY)], RemediationAction::NotifyOnly)
        .await?;
    for n in tb.nodes() {
        tb.wait_for(&n, Duration::from_secs(10), |s| {
            s.trust.scopes().all(|(_, st)| st.is_trusted())
        })
        .await
        .ok_or("cluster did not settle")?;
    }
    println!("{}", render_table(&tb.verifier.all_status()));

    for path in ["/bin/cat", "/pause", "/bin/busybox", "/usr/bin/curl"] {
        tb.cluster.inject(&TamperScenario::exec_unlisted("ausf", path)).await?;
    }
    let ausf = PodRef::pod(tb.cluster.pod_uid("ausf").ok_or("no ausf")?);
    let (_, took) = tb
        .wait_for("worker1", Duration::from_secs(10), |s| {
            s.trust.get(&ausf).is_some_and(|t| t.violations().len() == 4)
        })
        .await
        .ok_or("AUSF was not flagged")?;
    println!("AUSF flagged after {:.2} s\n", took.as_secs_f64());
    println!("{}", render_table(&tb.verifier.all_status()));
    Ok(())
}
