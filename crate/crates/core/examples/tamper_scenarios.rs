// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

//! Runs each built-in tamper scenario on a fresh cluster and reports which
//! scope the verifier flags.

use podseal::policy::{ExcludeRule, RemediationAction, USR_BIN_ONLY};
use podseal::sim::TamperScenario;
use podseal::testbed::{Testbed, TestbedOptions};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let scenarios = [
        TamperScenario::exec_unlisted("nrf", "/tmp/miner"),
        TamperScenario::ModifyPodBinary {
            pod: "smf".into(),
            path: "/usr/bin/smf".into(),
        },
        TamperScenario::PreloadHijack {
            pod: "udr".into(),
            library: "/tmp/libhook.so".into(),
        },
        TamperScenario::OverwriteHostBinary {
            node: "worker2".into(),
            path: "/usr/bin/containerd".into(),
        },
        TamperScenario::UnknownPod { node: "worker1".into() },
    ];
    for scenario in scenarios {
        let tb = Testbed::start(TestbedOptions {
            auto_poll: false,
            workload: false,
            ..TestbedOptions::default()
        })
        .await?;
        tb.enroll_all(&[ExcludeRule::regex(USR_BIN_ONLY)], RemediationAction::NotifyOnly)
            .await?;
        let out = tb.cluster.inject(&scenario).await?;
        tb.verifier.attestation_cycle(&out.node).await?;
        let st = tb.status(&out.node);
        let flagged: Vec<String> = st
            .trust
            .scopes()
            .filter(|(_, s)| s.is_untrusted())
            .map(|(scope, _)| st.label(&scope))
            .collect();
        println!(
            "{:<60} {} -> untrusted: {}",
            format!("{scenario:?}"),
            out.node,
            flagged.join(", ")
        );
    }
    Ok(())
}
