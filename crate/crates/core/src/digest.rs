// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HashAlgorithm {
    Sha256,
}

impl HashAlgorithm {
    pub fn name(self) -> &'static str {
        match self {
            HashAlgorithm::Sha256 => "sha256",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DigestParseError {
    #[error("digest must be {DIGEST_LEN} bytes, got {0}")]
    Length(usize),
    #[error("invalid hex: {0}")]
    Hex(#[from] hex::FromHexError),
    #[error("unsupported digest algorithm `{0}`")]
    Algorithm(String),
}

/// A SHA-256 digest. Serialized as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DigestValue([u8; DIGEST_LEN]);

impl DigestValue {
    pub const ZERO: DigestValue = DigestValue([0u8; DIGEST_LEN]);

    pub const fn from_bytes(bytes: [u8; DIGEST_LEN]) -> Self {
        DigestValue(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, DigestParseError> {
        let arr: [u8; DIGEST_LEN] = bytes.try_into().map_err(|_| DigestParseError::Length(bytes.len()))?;
        Ok(DigestValue(arr))
    }

    pub fn from_hex(s: &str) -> Result<Self, DigestParseError> {
        if s.len() != DIGEST_LEN * 2 {
            return Err(DigestParseError::Length(s.len() / 2));
        }
        let mut out = [0u8; DIGEST_LEN];
        hex::decode_to_slice(s, &mut out)?;
        Ok(DigestValue(out))
    }

    /// Parses the `sha256:<hex>` form used in measurement lists.
    pub fn from_prefixed(s: &str) -> Result<Self, DigestParseError> {
        match s.split_once(':') {
            Some(("sha256", hex)) => Self::from_hex(hex),
            Some((algo, _)) => Err(DigestParseError::Algorithm(algo.to_string())),
            None => Err(DigestParseError::Algorithm(String::new())),
        }
    }

    pub fn algorithm(&self) -> HashAlgorithm {
        HashAlgorithm::Sha256
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn to_prefixed(&self) -> String {
        format!("{}:{}", self.algorithm().name(), self.to_hex())
    }

    pub fn of(data: &[u8]) -> Self {
        DigestValue(Sha256::digest(data).into())
    }

    /// SHA-256 over the concatenation of `parts`.
    pub fn of_parts<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> Self {
        let mut h = Sha256::new();
        for p in parts {
            h.update(p);
        }
        DigestValue(h.finalize().into())
    }
}

impl fmt::Debug for DigestValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DigestValue({})", self.to_hex())
    }
}

impl fmt::Display for DigestValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for DigestValue {
    type Err = DigestParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_hex(s)
    }
}

impl Serialize for DigestValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for DigestValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        DigestValue::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_round_trip_and_prefix() {
        let d = DigestValue::of(b"abc");
        assert_eq!(
            d.to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(DigestValue::from_prefixed(&d.to_prefixed()).unwrap(), d);
        assert!(matches!(
            DigestValue::from_prefixed("sha1:00"),
            Err(DigestParseError::Algorithm(_))
        ));
        assert_eq!(DigestValue::from_hex("00"), Err(DigestParseError::Length(1)));
    }
}
