// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

//! Maps cgroup paths from the three layouts seen on Kubernetes nodes to the
//! scope they are attested under.

use podseal::pod::{normalize_pod_uid, parse_cgroup_path, pod_cgroup_path, CgroupStyle, QosClass};

fn main() {
    let uid = normalize_pod_uid("1f6e2c4a-7b1d-4e9a-8c3f-5a6b7c8d9e0f").unwrap();
    for style in [CgroupStyle::Cgroupfs, CgroupStyle::Systemd, CgroupStyle::K3s] {
        let path = pod_cgroup_path(&uid, style, QosClass::Besteffort, "0123abcd");
        println!("{style:?}\n  {path}\n  -> {}", parse_cgroup_path(&path));
    }
    for host in ["/system.slice/k3s-agent.service", "/user.slice/user-0.slice", "/"] {
        println!("{host} -> {}", parse_cgroup_path(host));
    }
}
