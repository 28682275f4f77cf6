// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

//! Software stand-in for the TPM 2.0 attestation surface.
//!
//! The emulated device owns a single SHA-256 PCR bank of 24 registers, an
//! endorsement key (EK) and an attestation key (AK) certified by that EK.
//! Quotes are Ed25519 signatures over the SHA-256 of a canonical byte
//! encoding:
//!
//! ```text
//! 0x01 || scheme || u16be(len(nonce)) || nonce || u24be(pcr_selection) || composite_digest
//! ```
//!
//! where `composite_digest = SHA-256(selected registers, ascending index)`.

use std::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::digest::DigestValue;

pub const PCR_COUNT: usize = 24;
/// Register that accumulates the measurement list.
pub const IMA_PCR: u8 = 10;
pub const QUOTE_VERSION: u8 = 0x01;
/// Scheme tag for Ed25519 over SHA-256 digests.
pub const SCHEME_ED25519: u8 = 0x01;
pub const NONCE_MIN: usize = 8;
pub const NONCE_MAX: usize = 64;

const EK_CERT_DOMAIN: &[u8] = b"podseal-ek-cert-v1";
const AK_CERT_DOMAIN: &[u8] = b"podseal-ak-cert-v1";
pub const DEFAULT_MANUFACTURER: &str = "podseal-emulated-tpm";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TpmError {
    #[error("PCR index {0} out of range 0..{PCR_COUNT}")]
    PcrIndex(u32),
    #[error("PCR selection is empty")]
    EmptySelection,
    #[error("PCR selection {0:#x} has bits above register 23")]
    SelectionRange(u32),
    #[error("nonce length {0} outside {NONCE_MIN}..={NONCE_MAX}")]
    NonceLength(usize),
}

/// 24-bit PCR selection mask; bit `i` selects register `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct PcrSelection(u32);

impl PcrSelection {
    pub fn new(mask: u32) -> Result<Self, TpmError> {
        if mask >> PCR_COUNT != 0 {
            return Err(TpmError::SelectionRange(mask));
        }
        Ok(PcrSelection(mask))
    }

    pub fn single(index: u8) -> Self {
        assert!((index as usize) < PCR_COUNT);
        PcrSelection(1 << index)
    }

    pub fn from_indices(indices: impl IntoIterator<Item = u8>) -> Result<Self, TpmError> {
        let mut mask = 0u32;
        for i in indices {
            if i as usize >= PCR_COUNT {
                return Err(TpmError::PcrIndex(i as u32));
            }
            mask |= 1 << i;
        }
        Ok(PcrSelection(mask))
    }

    pub fn ima_only() -> Self {
        Self::single(IMA_PCR)
    }

    pub fn mask(self) -> u32 {
        self.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, index: u8) -> bool {
        (index as usize) < PCR_COUNT && self.0 & (1 << index) != 0
    }

    pub fn indices(self) -> impl Iterator<Item = u8> {
        (0..PCR_COUNT as u8).filter(move |i| self.contains(*i))
    }

    pub fn to_hex(self) -> String {
        format!("{:06x}", self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, TpmError> {
        let mask = u32::from_str_radix(s, 16).map_err(|_| TpmError::SelectionRange(u32::MAX))?;
        Self::new(mask)
    }
}

impl Default for PcrSelection {
    fn default() -> Self {
        Self::ima_only()
    }
}

impl TryFrom<u32> for PcrSelection {
    type Error = TpmError;
    fn try_from(v: u32) -> Result<Self, TpmError> {
        Self::new(v)
    }
}

impl From<PcrSelection> for u32 {
    fn from(s: PcrSelection) -> u32 {
        s.0
    }
}

/// `H(old || digest)`.
pub fn extend_value(old: &DigestValue, digest: &DigestValue) -> DigestValue {
    DigestValue::of_parts([&old.as_bytes()[..], &digest.as_bytes()[..]])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcrBank {
    registers: [DigestValue; PCR_COUNT],
}

impl Default for PcrBank {
    fn default() -> Self {
        PcrBank {
            registers: [DigestValue::ZERO; PCR_COUNT],
        }
    }
}

impl PcrBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read(&self, index: u8) -> Result<DigestValue, TpmError> {
        self.registers
            .get(index as usize)
            .copied()
            .ok_or(TpmError::PcrIndex(index as u32))
    }

    pub fn extend(&mut self, index: u8, digest: &DigestValue) -> Result<DigestValue, TpmError> {
        let reg = self
            .registers
            .get_mut(index as usize)
            .ok_or(TpmError::PcrIndex(index as u32))?;
        *reg = extend_value(reg, digest);
        Ok(*reg)
    }

    /// Hash of the selected registers in ascending index order.
    pub fn composite(&self, selection: PcrSelection) -> DigestValue {
        composite_digest(selection.indices().map(|i| self.registers[i as usize]))
    }

    pub fn selected(&self, selection: PcrSelection) -> Vec<(u8, DigestValue)> {
        selection.indices().map(|i| (i, self.registers[i as usize])).collect()
    }
}

pub fn composite_digest(values: impl IntoIterator<Item = DigestValue>) -> DigestValue {
    let values: Vec<DigestValue> = values.into_iter().collect();
    DigestValue::of_parts(values.iter().map(|v| &v.as_bytes()[..]))
}

/// An Ed25519 public key, serialized as base64.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey([u8; 32]);

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(PublicKey)
    }

    /// Short identity label derived from the key.
    pub fn label(&self, kind: &str) -> String {
        format!("{kind}:{}", &DigestValue::of(&self.0).to_hex()[..16])
    }

    fn verifying_key(&self) -> Option<VerifyingKey> {
        VerifyingKey::from_bytes(&self.0).ok()
    }

    pub fn to_base64(&self) -> String {
        B64.encode(self.0)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_base64())
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_base64())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = B64.decode(String::deserialize(d)?).map_err(serde::de::Error::custom)?;
        PublicKey::from_slice(&raw).ok_or_else(|| serde::de::Error::custom("public key must be 32 bytes"))
    }
}

pub(crate) mod b64_bytes {
    use super::B64;
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&B64.encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        B64.decode(String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

fn length_prefixed(parts: &[&[u8]]) -> Vec<u8> {
    let mut out = Vec::new();
    for p in parts {
        out.extend_from_slice(&(p.len() as u32).to_be_bytes());
        out.extend_from_slice(p);
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CertificateError {
    #[error("certificate signature does not verify")]
    BadSignature,
    #[error("certificate issuer `{0}` does not match endorsement key")]
    IssuerMismatch(String),
    #[error("malformed key or signature")]
    Malformed,
}

/// Self-signed statement binding the EK public key to a manufacturer label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EkCertificate {
    pub ek_public: PublicKey,
    pub manufacturer: String,
    #[serde(with = "b64_bytes")]
    pub signature: Vec<u8>,
}

impl EkCertificate {
    fn payload(ek_public: &PublicKey, manufacturer: &str) -> Vec<u8> {
        length_prefixed(&[EK_CERT_DOMAIN, ek_public.as_bytes(), manufacturer.as_bytes()])
    }

    pub fn verify(&self) -> Result<(), CertificateError> {
        verify_signature(
            &self.ek_public,
            &Self::payload(&self.ek_public, &self.manufacturer),
            &self.signature,
        )
    }
}

/// EK-issued certificate for an attestation key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AkCertificate {
    pub ak_public: PublicKey,
    pub issuer_ek_id: String,
    #[serde(with = "b64_bytes")]
    pub signature: Vec<u8>,
}

impl AkCertificate {
    fn payload(ak_public: &PublicKey, issuer_ek_id: &str) -> Vec<u8> {
        length_prefixed(&[AK_CERT_DOMAIN, ak_public.as_bytes(), issuer_ek_id.as_bytes()])
    }
}

pub fn verify_ak_certificate(cert: &AkCertificate, ek_public: &PublicKey) -> Result<(), CertificateError> {
    let expected = ek_public.label("ek");
    if cert.issuer_ek_id != expected {
        return Err(CertificateError::IssuerMismatch(cert.issuer_ek_id.clone()));
    }
    verify_signature(
        ek_public,
        &AkCertificate::payload(&cert.ak_public, &cert.issuer_ek_id),
        &cert.signature,
    )
}

fn verify_signature(key: &PublicKey, msg: &[u8], sig: &[u8]) -> Result<(), CertificateError> {
    let vk = key.verifying_key().ok_or(CertificateError::Malformed)?;
    let sig = Signature::from_slice(sig).map_err(|_| CertificateError::Malformed)?;
    vk.verify(msg, &sig).map_err(|_| CertificateError::BadSignature)
}

pub struct EndorsementIdentity {
    key: SigningKey,
    pub ek_cert: EkCertificate,
}

impl EndorsementIdentity {
    pub fn public(&self) -> PublicKey {
        PublicKey(self.key.verifying_key().to_bytes())
    }

    pub fn id(&self) -> String {
        self.public().label("ek")
    }

    /// Issue an AK certificate. Exposed so tests can model a rogue issuer.
    pub fn certify(&self, ak_public: &PublicKey) -> AkCertificate {
        let issuer_ek_id = self.id();
        let signature = self
            .key
            .sign(&AkCertificate::payload(ak_public, &issuer_ek_id))
            .to_bytes()
            .to_vec();
        AkCertificate {
            ak_public: *ak_public,
            issuer_ek_id,
            signature,
        }
    }
}

impl fmt::Debug for EndorsementIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EndorsementIdentity")
            .field("ek_public", &self.public())
            .finish_non_exhaustive()
    }
}

pub struct AttestationIdentity {
    key: SigningKey,
    pub ak_cert: AkCertificate,
}

impl AttestationIdentity {
    pub fn public(&self) -> PublicKey {
        PublicKey(self.key.verifying_key().to_bytes())
    }

    pub fn id(&self) -> String {
        self.public().label("ak")
    }
}

impl fmt::Debug for AttestationIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AttestationIdentity")
            .field("ak_public", &self.public())
            .finish_non_exhaustive()
    }
}

fn signing_key(rng: &mut ChaCha20Rng) -> SigningKey {
    let mut secret = [0u8; 32];
    rng.fill_bytes(&mut secret);
    SigningKey::from_bytes(&secret)
}

/// Create an EK and an EK-certified AK. A fixed seed reproduces identical keys.
pub fn create_identity(seed: Option<u64>) -> (EndorsementIdentity, AttestationIdentity) {
    let mut rng = match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_entropy(),
    };
    let ek_key = signing_key(&mut rng);
    let ek_public = PublicKey(ek_key.verifying_key().to_bytes());
    let signature = ek_key
        .sign(&EkCertificate::payload(&ek_public, DEFAULT_MANUFACTURER))
        .to_bytes()
        .to_vec();
    let ek = EndorsementIdentity {
        key: ek_key,
        ek_cert: EkCertificate {
            ek_public,
            manufacturer: DEFAULT_MANUFACTURER.to_string(),
            signature,
        },
    };
    let ak_key = signing_key(&mut rng);
    let ak_cert = ek.certify(&PublicKey(ak_key.verifying_key().to_bytes()));
    let ak = AttestationIdentity { key: ak_key, ak_cert };
    (ek, ak)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quote {
    #[serde(with = "b64_bytes")]
    pub nonce: Vec<u8>,
    pub pcr_selection: PcrSelection,
    pub composite_digest: DigestValue,
    #[serde(with = "b64_bytes")]
    pub signature: Vec<u8>,
    pub ak_id: String,
}

/// Canonical signing domain of a quote.
pub fn quote_encoding(nonce: &[u8], selection: PcrSelection, composite: &DigestValue) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 + 2 + nonce.len() + 3 + 32);
    out.push(QUOTE_VERSION);
    out.push(SCHEME_ED25519);
    out.extend_from_slice(&(nonce.len() as u16).to_be_bytes());
    out.extend_from_slice(nonce);
    out.extend_from_slice(&selection.mask().to_be_bytes()[1..]);
    out.extend_from_slice(composite.as_bytes());
    out
}

fn quote_message(nonce: &[u8], selection: PcrSelection, composite: &DigestValue) -> DigestValue {
    DigestValue::of(&quote_encoding(nonce, selection, composite))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Error)]
#[serde(rename_all = "kebab-case")]
pub enum QuoteRejection {
    #[error("bad-signature")]
    BadSignature,
    #[error("nonce-mismatch")]
    NonceMismatch,
    #[error("malformed")]
    Malformed,
}

/// Accepts iff the signature verifies under `ak_public` and the quote carries
/// `expected_nonce`. Returns the composite digest on success.
pub fn verify_quote(
    quote: &Quote,
    ak_public: &PublicKey,
    expected_nonce: &[u8],
) -> Result<DigestValue, QuoteRejection> {
    if !(NONCE_MIN..=NONCE_MAX).contains(&quote.nonce.len()) || quote.pcr_selection.is_empty() {
        return Err(QuoteRejection::Malformed);
    }
    let vk = ak_public.verifying_key().ok_or(QuoteRejection::Malformed)?;
    let sig = Signature::from_slice(&quote.signature).map_err(|_| QuoteRejection::Malformed)?;
    let msg = quote_message(&quote.nonce, quote.pcr_selection, &quote.composite_digest);
    vk.verify(msg.as_bytes(), &sig)
        .map_err(|_| QuoteRejection::BadSignature)?;
    if quote.nonce != expected_nonce {
        return Err(QuoteRejection::NonceMismatch);
    }
    Ok(quote.composite_digest)
}

/// Emulated TPM: one PCR bank plus the EK/AK pair.
#[derive(Debug)]
pub struct Tpm {
    bank: PcrBank,
    ek: EndorsementIdentity,
    ak: AttestationIdentity,
}

impl Tpm {
    pub fn new(seed: Option<u64>) -> Self {
        let (ek, ak) = create_identity(seed);
        Tpm {
            bank: PcrBank::new(),
            ek,
            ak,
        }
    }

    pub fn bank(&self) -> &PcrBank {
        &self.bank
    }

    pub fn bank_mut(&mut self) -> &mut PcrBank {
        &mut self.bank
    }

    pub fn endorsement(&self) -> &EndorsementIdentity {
        &self.ek
    }

    pub fn attestation(&self) -> &AttestationIdentity {
        &self.ak
    }

    pub fn extend(&mut self, index: u8, digest: &DigestValue) -> Result<DigestValue, TpmError> {
        self.bank.extend(index, digest)
    }

    pub fn quote(&self, nonce: &[u8], selection: PcrSelection) -> Result<Quote, TpmError> {
        if selection.is_empty() {
            return Err(TpmError::EmptySelection);
        }
        if !(NONCE_MIN..=NONCE_MAX).contains(&nonce.len()) {
            return Err(TpmError::NonceLength(nonce.len()));
        }
        let composite = self.bank.composite(selection);
        let msg = quote_message(nonce, selection, &composite);
        Ok(Quote {
            nonce: nonce.to_vec(),
            pcr_selection: selection,
            composite_digest: composite,
            signature: self.ak.key.sign(msg.as_bytes()).to_bytes().to_vec(),
            ak_id: self.ak.id(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // sha256 of 64 zero bytes, computed with Python hashlib.
    const EXTEND_ZERO_ZERO: &str = "f5a5fd42d16a20302798ef6ed309979b43003d2320d9f0e8ea9831a92759fb4b";

    #[test]
    fn extend_zero_fixture() {
        let mut bank = PcrBank::new();
        let v = bank.extend(10, &DigestValue::ZERO).unwrap();
        assert_eq!(v.to_hex(), EXTEND_ZERO_ZERO);
        assert_eq!(bank.read(9).unwrap(), DigestValue::ZERO);
    }

    #[test]
    fn extend_is_not_commutative() {
        let a = DigestValue::of(b"a");
        let b = DigestValue::of(b"b");
        let mut x = PcrBank::new();
        let mut y = PcrBank::new();
        x.extend(10, &a).unwrap();
        x.extend(10, &b).unwrap();
        y.extend(10, &b).unwrap();
        y.extend(10, &a).unwrap();
        assert_ne!(x.read(10).unwrap(), y.read(10).unwrap());
    }

    #[test]
    fn extend_out_of_range() {
        let mut bank = PcrBank::new();
        assert_eq!(bank.extend(24, &DigestValue::ZERO), Err(TpmError::PcrIndex(24)));
    }

    #[test]
    fn seeded_identity_is_reproducible() {
        let (ek1, ak1) = create_identity(Some(42));
        let (ek2, ak2) = create_identity(Some(42));
        assert_eq!(ek1.public(), ek2.public());
        assert_eq!(ak1.public(), ak2.public());
        assert_eq!(ak1.ak_cert, ak2.ak_cert);
        let (ek3, _) = create_identity(Some(43));
        assert_ne!(ek1.public(), ek3.public());
    }

    #[test]
    fn ak_certificate_binds_to_issuer() {
        let (ek, ak) = create_identity(Some(1));
        assert!(ek.ek_cert.verify().is_ok());
        assert!(verify_ak_certificate(&ak.ak_cert, &ek.public()).is_ok());
        let (other, _) = create_identity(Some(2));
        assert!(verify_ak_certificate(&ak.ak_cert, &other.public()).is_err());
        // Right issuer label, wrong signer.
        let mut forged = other.certify(&ak.public());
        forged.issuer_ek_id = ek.id();
        assert_eq!(
            verify_ak_certificate(&forged, &ek.public()),
            Err(CertificateError::BadSignature)
        );
    }

    #[test]
    fn quote_round_trip_and_nonce_binding() {
        let mut tpm = Tpm::new(Some(7));
        tpm.extend(10, &DigestValue::of(b"x")).unwrap();
        let ak = tpm.attestation().public();
        let q = tpm.quote(b"nonce-0001", PcrSelection::ima_only()).unwrap();
        assert_eq!(
            verify_quote(&q, &ak, b"nonce-0001"),
            Ok(tpm.bank().composite(PcrSelection::ima_only()))
        );
        assert_eq!(verify_quote(&q, &ak, b"nonce-0002"), Err(QuoteRejection::NonceMismatch));

        let q2 = tpm.quote(b"nonce-0002", PcrSelection::ima_only()).unwrap();
        assert_ne!(q.signature, q2.signature);
        assert_eq!(q.composite_digest, q2.composite_digest);

        let mut tampered = q.clone();
        let mut bytes = *tampered.composite_digest.as_bytes();
        bytes[0] ^= 1;
        tampered.composite_digest = DigestValue::from_bytes(bytes);
        assert_eq!(
            verify_quote(&tampered, &ak, b"nonce-0001"),
            Err(QuoteRejection::BadSignature)
        );
    }

    #[test]
    fn quote_preconditions() {
        let tpm = Tpm::new(Some(7));
        assert_eq!(
            tpm.quote(b"nonce-01", PcrSelection::new(0).unwrap()),
            Err(TpmError::EmptySelection)
        );
        assert_eq!(
            tpm.quote(b"short", PcrSelection::ima_only()),
            Err(TpmError::NonceLength(5))
        );
        assert_eq!(
            tpm.quote(&[0; 65], PcrSelection::ima_only()),
            Err(TpmError::NonceLength(65))
        );
        assert!(PcrSelection::new(1 << 24).is_err());
    }

    #[test]
    fn encoding_layout() {
        let enc = quote_encoding(b"12345678", PcrSelection::single(10), &DigestValue::ZERO);
        assert_eq!(&enc[..4], &[0x01, 0x01, 0x00, 0x08]);
        assert_eq!(&enc[12..15], &[0x00, 0x04, 0x00]);
        assert_eq!(enc.len(), 4 + 8 + 3 + 32);
    }

    proptest! {
        #[test]
        fn selection_soundness(index in 0u8..24, mask in 1u32..(1 << 24), seed in any::<u64>()) {
            let sel = PcrSelection::new(mask).unwrap();
            let mut bank = PcrBank::new();
            let before = bank.composite(sel);
            bank.extend(index, &DigestValue::of(&seed.to_le_bytes())).unwrap();
            let after = bank.composite(sel);
            prop_assert_eq!(sel.contains(index), before != after);
        }
    }
}
