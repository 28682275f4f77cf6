// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

//! Builds a measurement log the way the agent does, writes it in the
//! kernel's ascii format, parses it back and replays it against PCR 10.

use podseal::agent::Agent;
use podseal::digest::DigestValue;
use podseal::ima::{emit_ascii, parse_ascii, replay, FileEvent};
use podseal::pod::{normalize_pod_uid, pod_cgroup_path, CgroupStyle, QosClass};

fn main() {
    let agent = Agent::new("demo", "demo", Some(1));
    let uid = normalize_pod_uid("6a1c1f5e-5d0a-4b8e-9a43-2f1e7c3b9d10").unwrap();
    let cg = pod_cgroup_path(&uid, CgroupStyle::Systemd, QosClass::Burstable, "c1");
    let events = [
        ("/usr/bin/containerd", "/system.slice/containerd.service", "v1"),
        ("/usr/bin/mysqld", cg.as_str(), "v1"),
        // same content again: measured once
        ("/usr/bin/mysqld", cg.as_str(), "v1"),
        ("/opt/my tool/run", cg.as_str(), "v2"),
    ];
    for (path, cgpath, content) in events {
        let added = agent
            .ingest_event(&FileEvent {
                path: path.into(),
                content_digest: DigestValue::of(content.as_bytes()),
                cgpath: cgpath.into(),
                timestamp: 0,
            })
            .unwrap();
        println!(
            "{path:<22} {}",
            if added.is_some() {
                "measured"
            } else {
                "already measured"
            }
        );
    }

    let text = emit_ascii(&agent.log_snapshot());
    print!("{text}");
    let parsed = parse_ascii(&text).unwrap();
    let pcr = replay(parsed.entries(), DigestValue::ZERO).unwrap();
    println!("replayed PCR 10 {}", pcr.to_hex());
    println!("TPM      PCR 10 {}", agent.pcr(10).unwrap().to_hex());
    assert_eq!(pcr, agent.pcr(10).unwrap());
}
