// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

use super::*;
use crate::ima::{MeasurementLog, TemplateData};
use crate::pod::{pod_cgroup_path, CgroupStyle, QosClass};
use crate::tpm::PcrBank;

fn uid(n: u8) -> PodUid {
    PodUid::from_uuid(uuid::Uuid::from_bytes([n; 16]))
}

fn pod_entry(u: &PodUid, path: &str, content: &[u8]) -> MeasurementEntry {
    let cg = pod_cgroup_path(u, CgroupStyle::Cgroupfs, QosClass::Besteffort, "c0");
    MeasurementEntry::new(TemplateData::ima_cgn(DigestValue::of(content), path, cg).unwrap())
}

fn host_entry(path: &str, content: &[u8]) -> MeasurementEntry {
    MeasurementEntry::new(
        TemplateData::ima_cgn(DigestValue::of(content), path, "/system.slice/kubelet.service").unwrap(),
    )
}

#[test]
fn usr_bin_exclusion_regex() {
    let mut b = PolicyBundle::default();
    b.exclude_rules.push(ExcludeRule::regex(USR_BIN_ONLY));
    let p = compile_policy(&b).unwrap();
    assert!(p.is_excluded(&PodRef::NodeScope, "/bin/cat"));
    assert!(p.is_excluded(&PodRef::NodeScope, "/pause"));
    assert!(!p.is_excluded(&PodRef::NodeScope, "/usr/bin/curl"));

    let mut b = PolicyBundle::default();
    b.exclude_rules.push(ExcludeRule::PrefixInverted {
        keep_prefix: "/usr/bin/".into(),
    });
    let p = compile_policy(&b).unwrap();
    assert!(p.is_excluded(&PodRef::NodeScope, "/bin/cat"));
    assert!(!p.is_excluded(&PodRef::NodeScope, "/usr/bin/curl"));
}

#[test]
fn compile_errors() {
    let mut b = PolicyBundle::default();
    b.exclude_rules.push(ExcludeRule::regex("(unbalanced"));
    assert!(matches!(compile_policy(&b), Err(PolicyError::Regex { index: 0, .. })));

    let mut b = PolicyBundle::default();
    b.pod_allowlists.insert(uid(1), AllowList::new());
    assert_eq!(
        compile_policy(&b).unwrap_err(),
        PolicyError::UnregisteredAllowlist(uid(1))
    );

    let b = PolicyBundle {
        pcr_selection: PcrSelection::single(0),
        ..Default::default()
    };
    assert!(matches!(compile_policy(&b), Err(PolicyError::MissingImaPcr(_))));

    let mut b = PolicyBundle::default();
    b.exclude_rules.push(ExcludeRule::PrefixInverted {
        keep_prefix: "usr".into(),
    });
    assert!(matches!(compile_policy(&b), Err(PolicyError::RelativePrefix { .. })));
}

#[test]
fn empty_bundle_flags_everything() {
    let p = compile_policy(&PolicyBundle::default()).unwrap();
    let r = p.evaluate_segment(0, &[host_entry("/usr/bin/x", b"x")]);
    assert_eq!(r.node_violations.len(), 1);
    assert_eq!(r.node_violations[0].reason, ViolationReason::UnknownFile);
}

/// The AUSF pod runs four binaries that are not on its allowlist.
#[test]
fn ausf_helper_and_manual_binaries_are_flagged() {
    let (ausf, nrf) = (uid(1), uid(2));
    let mut b = PolicyBundle::default();
    b.register_pod(
        ausf.clone(),
        AllowList::new().with("/usr/bin/ausf", DigestValue::of(b"ausf")),
    );
    b.register_pod(
        nrf.clone(),
        AllowList::new().with("/usr/bin/nrf", DigestValue::of(b"nrf")),
    );
    let p = compile_policy(&b).unwrap();
    let entries = vec![
        pod_entry(&ausf, "/usr/bin/ausf", b"ausf"),
        pod_entry(&nrf, "/usr/bin/nrf", b"nrf"),
        pod_entry(&ausf, "/bin/cat", b"cat"),
        pod_entry(&ausf, "/pause", b"pause"),
        pod_entry(&ausf, "/bin/busybox", b"busybox"),
        pod_entry(&ausf, "/usr/bin/curl", b"curl"),
    ];
    let r = p.evaluate_segment(0, &entries);
    let paths: Vec<&str> = r.pod_violations[&ausf].iter().map(|v| v.path.as_str()).collect();
    assert_eq!(paths, ["/bin/cat", "/pause", "/bin/busybox", "/usr/bin/curl"]);
    assert!(r.pod_violations[&ausf]
        .iter()
        .all(|v| v.reason == ViolationReason::UnknownFile));
    assert!(!r.pod_violations.contains_key(&nrf));
    assert!(r.node_violations.is_empty());
    assert_eq!(r.pod_violations[&ausf][0].entry_index, 2);

    let before = TrustMap::for_pods(p.registered_pods());
    let after = derive_trust(&before, &r, 5);
    assert!(after.pods[&ausf].is_untrusted());
    assert!(after.pods[&nrf].is_trusted());
    assert!(after.node.is_trusted());
}

#[test]
fn digest_mismatch_and_clean() {
    let u = uid(3);
    let mut b = PolicyBundle::default();
    b.register_pod(u.clone(), AllowList::new().with("/usr/bin/app", DigestValue::of(b"v1")));
    let p = compile_policy(&b).unwrap();
    let clean = p.evaluate_segment(0, &[pod_entry(&u, "/usr/bin/app", b"v1")]);
    assert!(clean.is_clean());
    let bad = p.evaluate_segment(0, &[pod_entry(&u, "/usr/bin/app", b"v2")]);
    assert_eq!(bad.pod_violations[&u][0].reason, ViolationReason::DigestMismatch);
}

#[test]
fn unknown_pod_escalates_to_node() {
    let p = compile_policy(&PolicyBundle::default()).unwrap();
    let stranger = uid(9);
    let r = p.evaluate_segment(0, &[pod_entry(&stranger, "/usr/bin/x", b"x")]);
    assert!(r.unknown_pods.contains(&stranger));
    assert!(r.pod_violations.is_empty());
    let t = derive_trust(&TrustMap::default(), &r, 1);
    assert!(t.node.is_untrusted());
    assert!(t.pods.is_empty());
}

#[test]
fn retired_pods_are_skipped() {
    let old = uid(4);
    let p = CompiledPolicy::compile(&PolicyBundle::default(), [old.clone()].into()).unwrap();
    let r = p.evaluate_segment(0, &[pod_entry(&old, "/usr/bin/x", b"x")]);
    assert!(r.is_clean());
    assert!(r.unknown_pods.is_empty());
}

#[test]
fn clean_first_cycle_trusts_everything_observed() {
    let (a, b_) = (uid(5), uid(6));
    let mut b = PolicyBundle::default();
    b.register_pod(a.clone(), AllowList::new().with("/usr/bin/a", DigestValue::of(b"a")));
    b.register_pod(b_.clone(), AllowList::new());
    let p = compile_policy(&b).unwrap();
    let r = p.evaluate_segment(0, &[pod_entry(&a, "/usr/bin/a", b"a")]);
    let t = derive_trust(&TrustMap::for_pods(p.registered_pods()), &r, 1);
    assert!(t.node.is_trusted());
    assert!(t.pods[&a].is_trusted());
    // Never scheduled: stays in Start.
    assert_eq!(t.pods[&b_], TrustState::Start);
}

#[test]
fn untrusted_is_sticky_until_reset() {
    let u = uid(7);
    let mut b = PolicyBundle::default();
    b.register_pod(u.clone(), AllowList::new());
    let p = compile_policy(&b).unwrap();
    let bad = p.evaluate_segment(0, &[pod_entry(&u, "/usr/bin/x", b"x")]);
    let t = derive_trust(&TrustMap::for_pods(p.registered_pods()), &bad, 1);
    let clean = EvaluationResult {
        observed_pods: [u.clone()].into(),
        ..Default::default()
    };
    let t2 = derive_trust(&t, &clean, 2);
    assert!(t2.pods[&u].is_untrusted());
    let mut t3 = t2.clone();
    t3.reset(&PodRef::Pod { uid: u.clone() }).unwrap();
    assert_eq!(derive_trust(&t3, &clean, 3).pods[&u], TrustState::Trusted { since: 3 });
    assert!(t3.reset(&PodRef::Pod { uid: uid(99) }).is_err());
}

#[test]
fn allowlist_generation_is_a_fixed_point() {
    let u = uid(8);
    let mut bank = PcrBank::new();
    let mut log = MeasurementLog::new();
    log.append_boot_aggregate(&mut bank);
    for (path, content) in [("/usr/bin/a", &b"a"[..]), ("/usr/bin/b", b"b"), ("/usr/bin/a", b"a2")] {
        log.append_data(&mut bank, pod_entry(&u, path, content).data).unwrap();
    }
    log.append_data(&mut bank, host_entry("/usr/bin/kubelet", b"k").data)
        .unwrap();

    let scope = PodRef::Pod { uid: u.clone() };
    let allow = build_allowlist_from_log(log.entries(), &scope);
    assert_eq!(allow.len(), 2);
    assert_eq!(allow.get("/usr/bin/a").unwrap().len(), 2);
    assert!(allow.get(crate::ima::BOOT_AGGREGATE).is_none());

    let mut b = PolicyBundle::default();
    b.register_pod(u.clone(), allow);
    b.node_allowlist = build_allowlist_from_log(log.entries(), &PodRef::NodeScope);
    let r = compile_policy(&b).unwrap().evaluate_segment(0, log.entries());
    assert!(r.is_clean(), "{r:?}");

    assert!(build_allowlist_from_log(&[], &scope).is_empty());
}

#[test]
fn violations_are_deduplicated() {
    let u = uid(10);
    let mut b = PolicyBundle::default();
    b.register_pod(u.clone(), AllowList::new());
    let p = compile_policy(&b).unwrap();
    let e = pod_entry(&u, "/usr/bin/x", b"x");
    let r = p.evaluate_segment(0, &[e.clone(), e]);
    assert_eq!(r.pod_violations[&u].len(), 1);
    assert_eq!(r.pod_violations[&u][0].entry_index, 0);
}

#[test]
fn per_pod_exclude_override() {
    let (a, b_) = (uid(11), uid(12));
    let mut b = PolicyBundle::default();
    b.register_pod(a.clone(), AllowList::new());
    b.register_pod(b_.clone(), AllowList::new());
    b.exclude_rules.push(ExcludeRule::regex(USR_BIN_ONLY));
    b.pod_exclude_rules.insert(b_.clone(), vec![]);
    let p = compile_policy(&b).unwrap();
    let r = p.evaluate_segment(0, &[pod_entry(&a, "/bin/sh", b"s"), pod_entry(&b_, "/bin/sh", b"s")]);
    assert!(!r.pod_violations.contains_key(&a));
    assert_eq!(r.pod_violations[&b_].len(), 1);
}
