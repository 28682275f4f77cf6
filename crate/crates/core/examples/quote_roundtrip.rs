// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

//! Extends PCR 10 on an emulated TPM, produces a quote over a fresh nonce,
//! and shows which alterations the verifier rejects.

use podseal::digest::DigestValue;
use podseal::tpm::{verify_quote, PcrSelection, Tpm, IMA_PCR};

fn main() {
    let mut tpm = Tpm::new(Some(42));
    for file in ["/usr/bin/k3s", "/usr/bin/containerd"] {
        tpm.extend(IMA_PCR, &DigestValue::of(file.as_bytes())).unwrap();
    }
    let ak = tpm.attestation().public();
    let sel = PcrSelection::from_indices([IMA_PCR]).unwrap();
    let nonce = b"0123456789abcdefghij";
    let quote = tpm.quote(nonce, sel).unwrap();
    println!("composite digest {}", quote.composite_digest.to_hex());
    println!(
        "honest quote:      {:?}",
        verify_quote(&quote, &ak, nonce).map(|_| "accepted")
    );

    let other = Tpm::new(Some(7)).quote(nonce, sel).unwrap();
    println!("foreign key:       {:?}", verify_quote(&other, &ak, nonce).err());
    println!(
        "replayed nonce:    {:?}",
        verify_quote(&quote, &ak, b"another-nonce-value!").err()
    );
    let mut forged = quote.clone();
    forged.composite_digest = DigestValue::of(b"forged");
    println!("edited composite:  {:?}", verify_quote(&forged, &ak, nonce).err());
}
