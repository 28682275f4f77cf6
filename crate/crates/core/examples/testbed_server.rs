// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

//! Starts a full localhost cluster (registrar, three agents, simulator,
//! verifier with webhook remediation) and keeps it running so the podseal
//! CLI can be pointed at it.

use podseal::testbed::{Testbed, TestbedOptions};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let tb = Testbed::start(TestbedOptions::default()).await?;
    println!("export PODSEAL_VERIFIER={}", tb.verifier_url);
    println!("export PODSEAL_REGISTRAR={}", tb.registrar_url);
    println!("export PODSEAL_SIM={}", tb.sim_url);
    println!("export PODSEAL_TOKEN={}", tb.token);
    for (node, url) in &tb.agent_urls {
        println!("# agent {node} at {url}");
    }
    println!("# e.g. podseal bundle from-sim --node worker1 --out w1.toml && podseal enroll --agent worker1 --bundle w1.toml");
    tokio::signal::ctrl_c().await?;
    Ok(())
}
