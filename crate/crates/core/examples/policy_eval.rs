// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

//! Evaluates a log segment against a policy bundle and derives per-scope
//! trust: an unlisted binary in one pod leaves its siblings and the node
//! untouched, while a pod the bundle does not know flags the node.

use podseal::digest::DigestValue;
use podseal::ima::{MeasurementEntry, TemplateData};
use podseal::pod::{normalize_pod_uid, pod_cgroup_path, CgroupStyle, PodRef, QosClass};
use podseal::policy::{compile_policy, derive_trust, AllowList, ExcludeRule, PolicyBundle, TrustMap, USR_BIN_ONLY};

fn entry(path: &str, content: &str, cg: &str) -> MeasurementEntry {
    MeasurementEntry::new(TemplateData::ima_cgn(DigestValue::of(content.as_bytes()), path, cg).unwrap())
}

fn main() {
    let web = normalize_pod_uid("11111111-1111-4111-8111-111111111111").unwrap();
    let db = normalize_pod_uid("22222222-2222-4222-8222-222222222222").unwrap();
    let rogue = normalize_pod_uid("33333333-3333-4333-8333-333333333333").unwrap();
    let cg = |u| pod_cgroup_path(u, CgroupStyle::K3s, QosClass::Burstable, "c");

    let mut bundle = PolicyBundle {
        node_allowlist: AllowList::new().with("/usr/bin/k3s", DigestValue::of(b"k3s")),
        ..PolicyBundle::default()
    };
    bundle.register_pod(
        web.clone(),
        AllowList::new().with("/usr/bin/nginx", DigestValue::of(b"nginx")),
    );
    bundle.register_pod(
        db.clone(),
        AllowList::new().with("/usr/bin/mysqld", DigestValue::of(b"mysqld")),
    );
    // the host is only attested under /usr/bin
    bundle.exclude_rules.push(ExcludeRule::regex(USR_BIN_ONLY));
    let policy = compile_policy(&bundle).unwrap();

    let host = "/system.slice/k3s-agent.service";
    let segment = vec![
        entry("/usr/bin/k3s", "k3s", host),
        entry("/usr/sbin/runc", "runc", host),
        entry("/usr/bin/nginx", "nginx", &cg(&web)),
        entry("/usr/bin/mysqld", "mysqld", &cg(&db)),
        entry("/usr/bin/curl", "curl", &cg(&web)),
    ];
    let eval = policy.evaluate_segment(0, &segment);
    let trust = derive_trust(&TrustMap::for_pods(policy.registered_pods()), &eval, 1);
    for (scope, state) in trust.scopes() {
        let paths: Vec<&str> = state.violations().iter().map(|v| v.path.as_str()).collect();
        println!("{scope:<44} {:?} {}", state.kind(), paths.join(" "));
    }

    let later = vec![entry("/usr/bin/sh", "sh", &cg(&rogue))];
    let eval = policy.evaluate_segment(segment.len(), &later);
    let trust = derive_trust(&trust, &eval, 2);
    let node = trust.get(&PodRef::NodeScope).unwrap();
    println!(
        "after an unregistered pod runs: node {:?} ({})",
        node.kind(),
        node.reasons().join(", ")
    );
}
