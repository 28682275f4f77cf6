// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

//! Pod-granular continuous remote attestation for Kubernetes nodes.
//!
//! An emulated TPM ([`tpm`]) and an IMA-style measurement list ([`ima`])
//! run inside each [`agent`]. Measurements carry the cgroup path of the
//! process, so the verifier can attribute them to pods ([`pod`]) and check
//! them against node and per-pod allowlists ([`policy`]). The [`registrar`]
//! pins agent identities, the [`verifier`] polls agents and keeps the trust
//! state, and [`sim`] drives a simulated cluster with tamper scenarios.

pub mod agent;
pub mod api;
pub mod cli;
pub mod digest;
pub mod ima;
pub mod pod;
pub mod policy;
pub mod registrar;
pub mod sim;
pub mod tenant;
pub mod testbed;
pub mod tpm;
pub mod verifier;
