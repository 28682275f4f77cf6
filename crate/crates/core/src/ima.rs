// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

//! IMA-style measurement list.
//!
//! Two templates are supported: `ima-ng` (file digest + path) and the
//! pod-aware `ima-cgn`, which appends the cgroup path of the measured
//! process. The template hash is SHA-256 over a length-prefixed field
//! encoding: for each field, `u32be(len) || bytes`, with fields
//! `["sha256:<hex>", path]` and, for `ima-cgn`, `cgpath` appended.
//!
//! The ascii form follows `ascii_runtime_measurements`:
//!
//! ```text
//! 10 <template-hash> ima-ng sha256:<file-hash> <path>
//! 10 <template-hash> ima-cgn sha256:<file-hash> <path> <cgpath>
//! ```
//!
//! Spaces and backslashes inside `path`/`cgpath` are written as `\x20` and
//! `\x5c`.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::DigestValue;
use crate::tpm::{extend_value, PcrBank, TpmError, IMA_PCR, PCR_COUNT};

pub const BOOT_AGGREGATE: &str = "boot_aggregate";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TemplateName {
    #[serde(rename = "ima-ng")]
    ImaNg,
    #[serde(rename = "ima-cgn")]
    ImaCgn,
}

impl TemplateName {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::ImaNg => "ima-ng",
            TemplateName::ImaCgn => "ima-cgn",
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ima-ng" => Ok(TemplateName::ImaNg),
            "ima-cgn" => Ok(TemplateName::ImaCgn),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("path is empty")]
    EmptyPath,
    #[error("field contains a newline")]
    Newline,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "template")]
pub enum TemplateData {
    #[serde(rename = "ima-ng")]
    ImaNg { filedata_hash: DigestValue, path: String },
    #[serde(rename = "ima-cgn")]
    ImaCgn {
        filedata_hash: DigestValue,
        path: String,
        cgpath: String,
    },
}

impl TemplateData {
    pub fn ima_ng(filedata_hash: DigestValue, path: impl Into<String>) -> Result<Self, TemplateError> {
        let data = TemplateData::ImaNg {
            filedata_hash,
            path: path.into(),
        };
        data.validate()?;
        Ok(data)
    }

    pub fn ima_cgn(
        filedata_hash: DigestValue,
        path: impl Into<String>,
        cgpath: impl Into<String>,
    ) -> Result<Self, TemplateError> {
        let data = TemplateData::ImaCgn {
            filedata_hash,
            path: path.into(),
            cgpath: cgpath.into(),
        };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        let path = self.path();
        if path.is_empty() {
            return Err(TemplateError::EmptyPath);
        }
        if path.contains('\n') || self.cgpath().is_some_and(|c| c.contains('\n')) {
            return Err(TemplateError::Newline);
        }
        Ok(())
    }

    pub fn template_name(&self) -> TemplateName {
        match self {
            TemplateData::ImaNg { .. } => TemplateName::ImaNg,
            TemplateData::ImaCgn { .. } => TemplateName::ImaCgn,
        }
    }

    pub fn filedata_hash(&self) -> &DigestValue {
        match self {
            TemplateData::ImaNg { filedata_hash, .. } | TemplateData::ImaCgn { filedata_hash, .. } => filedata_hash,
        }
    }

    pub fn path(&self) -> &str {
        match self {
            TemplateData::ImaNg { path, .. } | TemplateData::ImaCgn { path, .. } => path,
        }
    }

    pub fn cgpath(&self) -> Option<&str> {
        match self {
            TemplateData::ImaNg { .. } => None,
            TemplateData::ImaCgn { cgpath, .. } => Some(cgpath),
        }
    }
}

/// Length-prefixed canonical encoding hashed into the template hash.
pub fn canonical_template_data(data: &TemplateData) -> Vec<u8> {
    let digest_field = data.filedata_hash().to_prefixed();
    let mut fields: Vec<&[u8]> = vec![digest_field.as_bytes(), data.path().as_bytes()];
    if let Some(cg) = data.cgpath() {
        fields.push(cg.as_bytes());
    }
    let mut out = Vec::with_capacity(fields.iter().map(|f| f.len() + 4).sum());
    for f in fields {
        out.extend_from_slice(&(f.len() as u32).to_be_bytes());
        out.extend_from_slice(f);
    }
    out
}

pub fn template_hash(data: &TemplateData) -> DigestValue {
    DigestValue::of(&canonical_template_data(data))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementEntry {
    pub pcr_index: u8,
    pub template_hash: DigestValue,
    pub data: TemplateData,
}

impl MeasurementEntry {
    pub fn new(data: TemplateData) -> Self {
        MeasurementEntry {
            pcr_index: IMA_PCR,
            template_hash: template_hash(&data),
            data,
        }
    }

    pub fn template_name(&self) -> TemplateName {
        self.data.template_name()
    }

    pub fn is_boot_aggregate(&self) -> bool {
        self.data.path() == BOOT_AGGREGATE
    }

    pub fn to_ascii_line(&self) -> String {
        let mut line = format!(
            "{} {} {} {} {}",
            self.pcr_index,
            self.template_hash.to_hex(),
            self.template_name(),
            self.data.filedata_hash().to_prefixed(),
            escape_field(self.data.path()),
        );
        if let Some(cg) = self.data.cgpath() {
            line.push(' ');
            line.push_str(&escape_field(cg));
        }
        line
    }
}

/// Stimulus for a measurement: a file accessed by a process in `cgpath`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEvent {
    pub path: String,
    pub content_digest: DigestValue,
    pub cgpath: String,
    #[serde(default)]
    pub timestamp: u64,
}

impl FileEvent {
    pub fn to_template(&self, template: TemplateName) -> Result<TemplateData, TemplateError> {
        match template {
            TemplateName::ImaNg => TemplateData::ima_ng(self.content_digest, self.path.clone()),
            TemplateName::ImaCgn => TemplateData::ima_cgn(self.content_digest, self.path.clone(), self.cgpath.clone()),
        }
    }
}

/// Append-only measurement list with measure-once deduplication.
#[derive(Debug, Clone, Default)]
pub struct MeasurementLog {
    entries: Vec<MeasurementEntry>,
    seen: HashSet<TemplateData>,
}

impl PartialEq for MeasurementLog {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl Eq for MeasurementLog {}

impl MeasurementLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Wraps already-recorded entries (e.g. parsed from a host). Duplicates
    /// are kept as-is.
    pub fn from_entries(entries: Vec<MeasurementEntry>) -> Self {
        let seen = entries.iter().map(|e| e.data.clone()).collect();
        MeasurementLog { entries, seen }
    }

    pub fn entries(&self) -> &[MeasurementEntry] {
        &self.entries
    }

    pub fn count(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn segment(&self, offset: usize) -> Option<&[MeasurementEntry]> {
        self.entries.get(offset..)
    }

    /// Records `data` and extends PCR 10 unless the same data was already
    /// measured. Returns the new entry, or `None` for a duplicate.
    pub fn append_data(
        &mut self,
        bank: &mut PcrBank,
        data: TemplateData,
    ) -> Result<Option<MeasurementEntry>, TemplateError> {
        data.validate()?;
        if self.seen.contains(&data) {
            return Ok(None);
        }
        let entry = MeasurementEntry::new(data);
        bank.extend(entry.pcr_index, &entry.template_hash)
            .expect("IMA PCR index is in range");
        self.seen.insert(entry.data.clone());
        self.entries.push(entry.clone());
        Ok(Some(entry))
    }

    pub fn append_measurement(
        &mut self,
        bank: &mut PcrBank,
        event: &FileEvent,
        template: TemplateName,
    ) -> Result<Option<MeasurementEntry>, TemplateError> {
        self.append_data(bank, event.to_template(template)?)
    }

    /// Appends the synthetic `boot_aggregate` entry computed from PCRs 0..7.
    pub fn append_boot_aggregate(&mut self, bank: &mut PcrBank) -> MeasurementEntry {
        let data = TemplateData::ImaNg {
            filedata_hash: boot_aggregate(bank),
            path: BOOT_AGGREGATE.to_string(),
        };
        self.append_data(bank, data)
            .expect("boot aggregate is valid")
            .expect("boot aggregate appended once")
    }
}

pub fn boot_aggregate(bank: &PcrBank) -> DigestValue {
    let regs: Vec<DigestValue> = (0..8).map(|i| bank.read(i).expect("in range")).collect();
    DigestValue::of_parts(regs.iter().map(|r| &r.as_bytes()[..]))
}

/// Fills PCRs 0..7 with deterministic stand-ins for a measured boot.
pub fn seed_boot_pcrs(bank: &mut PcrBank, seed: u64) -> Result<(), TpmError> {
    for i in 0..8u8 {
        let m = DigestValue::of_parts([&b"podseal-boot"[..], &seed.to_be_bytes(), &[i]]);
        bank.extend(i, &m)?;
    }
    const { assert!(PCR_COUNT > 8) };
    Ok(())
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("entry {index}: stored template hash does not match its data")]
    TemplateHashMismatch { index: usize },
    #[error("entry {index}: PCR index {pcr} out of range")]
    PcrIndex { index: usize, pcr: u8 },
}

impl ReplayError {
    pub fn index(&self) -> usize {
        match self {
            ReplayError::TemplateHashMismatch { index } | ReplayError::PcrIndex { index, .. } => *index,
        }
    }
}

/// Folds extend over `entries` starting from `initial`, recomputing each
/// template hash on the way. Error indices are relative to `entries`.
pub fn replay(entries: &[MeasurementEntry], initial: DigestValue) -> Result<DigestValue, ReplayError> {
    let mut pcr = initial;
    for (index, e) in entries.iter().enumerate() {
        if e.pcr_index as usize >= PCR_COUNT {
            return Err(ReplayError::PcrIndex {
                index,
                pcr: e.pcr_index,
            });
        }
        if template_hash(&e.data) != e.template_hash {
            return Err(ReplayError::TemplateHashMismatch { index });
        }
        pcr = extend_value(&pcr, &e.template_hash);
    }
    Ok(pcr)
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseErrorKind {
    #[error("expected {expected} fields, found {found}")]
    FieldCount { expected: usize, found: usize },
    #[error("bad PCR index `{0}`")]
    Pcr(String),
    #[error("bad digest `{0}`")]
    Digest(String),
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("bad escape in `{0}`")]
    Escape(String),
    #[error("invalid template data: {0}")]
    Template(#[from] TemplateError),
    #[error("empty line")]
    Empty,
}

pub fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            ' ' => out.push_str("\\x20"),
            '\\' => out.push_str("\\x5c"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_field(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find('\\') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if tail.starts_with("\\x20") {
            out.push(' ');
        } else if tail.starts_with("\\x5c") {
            out.push('\\');
        } else {
            return None;
        }
        rest = &tail[4..];
    }
    out.push_str(rest);
    Some(out)
}

fn lower_hex_digest(s: &str) -> Option<DigestValue> {
    if s.bytes().any(|b| b.is_ascii_uppercase()) {
        return None;
    }
    DigestValue::from_hex(s).ok()
}

pub fn parse_line(line: &str) -> Result<MeasurementEntry, ParseErrorKind> {
    if line.is_empty() {
        return Err(ParseErrorKind::Empty);
    }
    let fields: Vec<&str> = line.split(' ').collect();
    if fields.len() < 5 {
        return Err(ParseErrorKind::FieldCount {
            expected: 5,
            found: fields.len(),
        });
    }
    let pcr_index: u8 = fields[0]
        .parse()
        .ok()
        .filter(|p: &u8| (*p as usize) < PCR_COUNT && fields[0] == p.to_string())
        .ok_or_else(|| ParseErrorKind::Pcr(fields[0].to_string()))?;
    let template_hash = lower_hex_digest(fields[1]).ok_or_else(|| ParseErrorKind::Digest(fields[1].to_string()))?;
    let template: TemplateName = fields[2].parse().map_err(ParseErrorKind::UnknownTemplate)?;
    let expected = match template {
        TemplateName::ImaNg => 5,
        TemplateName::ImaCgn => 6,
    };
    if fields.len() != expected {
        return Err(ParseErrorKind::FieldCount {
            expected,
            found: fields.len(),
        });
    }
    let filedata_hash = fields[3]
        .strip_prefix("sha256:")
        .and_then(lower_hex_digest)
        .ok_or_else(|| ParseErrorKind::Digest(fields[3].to_string()))?;
    let unescape = |f: &str| unescape_field(f).ok_or_else(|| ParseErrorKind::Escape(f.to_string()));
    let path = unescape(fields[4])?;
    let data = match template {
        TemplateName::ImaNg => TemplateData::ima_ng(filedata_hash, path)?,
        TemplateName::ImaCgn => TemplateData::ima_cgn(filedata_hash, path, unescape(fields[5])?)?,
    };
    Ok(MeasurementEntry {
        pcr_index,
        template_hash,
        data,
    })
}

/// Parses an ascii measurement list. Stored template hashes are kept as-is;
/// use [`replay`] to check them.
pub fn parse_ascii(text: &str) -> Result<MeasurementLog, ParseError> {
    let entries = text
        .split_terminator('\n')
        .enumerate()
        .map(|(i, line)| parse_line(line).map_err(|kind| ParseError { line: i + 1, kind }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MeasurementLog::from_entries(entries))
}

pub fn emit_entries(entries: &[MeasurementEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&e.to_ascii_line());
        out.push('\n');
    }
    out
}

pub fn emit_ascii(log: &MeasurementLog) -> String {
    emit_entries(log.entries())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Golden values from tools/replay_oracle.py encoding (Python hashlib).
    const NG_TRUE_HASH: &str = "e5e8056cd929ff7535e42473bbab5738c8ee0d011572a0083e18dfdfa4bcb7d5";
    const NG_TRUE_PCR: &str = "6c5d51ce7cc400f5f91e129548b8c05e6f8344675aa43d0073be2c00f813bb4c";
    const CGN_CURL_HASH: &str = "fa3781e43dbeca3f359f9eb13ef7a1fae78dc5ca24ff6b52941bcae55a3c032e";
    const CGN_CGPATH: &str = "/kubepods/besteffort/pod3b4c9f2a-1d2e-4f5a-8b6c-7d8e9f0a1b2c/cri-xyz";

    fn cgn_fixture() -> TemplateData {
        TemplateData::ima_cgn(DigestValue::of(b"podseal"), "/usr/bin/curl", CGN_CGPATH).unwrap()
    }

    #[test]
    fn canonical_encoding_layout() {
        let data = TemplateData::ima_ng(DigestValue::ZERO, "/bin/true").unwrap();
        let enc = canonical_template_data(&data);
        assert_eq!(&enc[..4], &71u32.to_be_bytes());
        assert_eq!(&enc[4..11], b"sha256:");
        assert_eq!(enc, canonical_template_data(&data));
        let cgn = TemplateData::ima_cgn(DigestValue::ZERO, "/bin/true", "").unwrap();
        assert_ne!(canonical_template_data(&cgn), enc);
    }

    #[test]
    fn template_hash_fixtures() {
        let data = TemplateData::ima_ng(DigestValue::ZERO, "/bin/true").unwrap();
        assert_eq!(template_hash(&data).to_hex(), NG_TRUE_HASH);
        assert_eq!(template_hash(&cgn_fixture()).to_hex(), CGN_CURL_HASH);
        let other = TemplateData::ima_cgn(DigestValue::of(b"podseal"), "/usr/bin/curl", "/other").unwrap();
        assert_ne!(template_hash(&other), template_hash(&cgn_fixture()));
    }

    #[test]
    fn append_extends_pcr_and_dedups() {
        let mut bank = PcrBank::new();
        let mut log = MeasurementLog::new();
        let ev = FileEvent {
            path: "/bin/true".into(),
            content_digest: DigestValue::ZERO,
            cgpath: String::new(),
            timestamp: 0,
        };
        let e = log
            .append_measurement(&mut bank, &ev, TemplateName::ImaNg)
            .unwrap()
            .unwrap();
        assert_eq!(log.count(), 1);
        assert_eq!(bank.read(10).unwrap().to_hex(), NG_TRUE_PCR);
        assert_eq!(e.template_hash.to_hex(), NG_TRUE_HASH);

        assert!(log
            .append_measurement(&mut bank, &ev, TemplateName::ImaNg)
            .unwrap()
            .is_none());
        assert_eq!(log.count(), 1);

        let changed = FileEvent {
            content_digest: DigestValue::of(b"v2"),
            ..ev
        };
        assert!(log
            .append_measurement(&mut bank, &changed, TemplateName::ImaNg)
            .unwrap()
            .is_some());
        assert_eq!(log.count(), 2);
        assert_eq!(
            replay(log.entries(), DigestValue::ZERO).unwrap(),
            bank.read(10).unwrap()
        );
    }

    #[test]
    fn replay_identity_and_corruption() {
        assert_eq!(replay(&[], DigestValue::ZERO).unwrap(), DigestValue::ZERO);
        let mut bank = PcrBank::new();
        let mut log = MeasurementLog::new();
        log.append_boot_aggregate(&mut bank);
        log.append_data(&mut bank, cgn_fixture()).unwrap();
        log.append_data(&mut bank, TemplateData::ima_ng(DigestValue::ZERO, "/bin/true").unwrap())
            .unwrap();
        let mut entries = log.entries().to_vec();
        entries[1].template_hash = DigestValue::ZERO;
        assert_eq!(
            replay(&entries, DigestValue::ZERO),
            Err(ReplayError::TemplateHashMismatch { index: 1 })
        );
    }

    #[test]
    fn parse_grammar() {
        let zero = "0".repeat(64);
        let line = format!("10 {NG_TRUE_HASH} ima-ng sha256:{zero} /usr/bin/curl\n");
        let log = parse_ascii(&line).unwrap();
        assert_eq!(log.entries()[0].data.path(), "/usr/bin/curl");

        let line = format!("10 {CGN_CURL_HASH} ima-cgn sha256:{zero} /bin/cat /kubepods/x\n");
        let log = parse_ascii(&line).unwrap();
        assert_eq!(log.entries()[0].data.cgpath(), Some("/kubepods/x"));

        let err = parse_ascii(&format!("10 {zero} ima-sig sha256:{zero} /x\n")).unwrap_err();
        assert_eq!(err.line, 1);
        assert!(matches!(err.kind, ParseErrorKind::UnknownTemplate(_)));

        let text = format!("10 {zero} ima-ng sha256:{zero} /x\n10 {zero} ima-ng sha256:{zero}\n");
        assert_eq!(parse_ascii(&text).unwrap_err().line, 2);
        assert!(parse_ascii(&format!("10 {zero} ima-ng sha256:{zero} /a\\qb\n")).is_err());
        assert!(parse_ascii(&format!("24 {zero} ima-ng sha256:{zero} /a\n")).is_err());
    }

    #[test]
    fn escaped_spaces() {
        let data = TemplateData::ima_cgn(DigestValue::ZERO, "/opt/my app/run", "/a b\\c").unwrap();
        let entry = MeasurementEntry::new(data);
        let line = entry.to_ascii_line();
        assert!(line.ends_with("/opt/my\\x20app/run /a\\x20b\\x5cc"));
        assert_eq!(parse_line(&line).unwrap(), entry);
    }

    fn arb_field() -> impl Strategy<Value = String> {
        "[a-z/ \\\\._-]{1,24}"
    }

    fn arb_entry() -> impl Strategy<Value = MeasurementEntry> {
        (any::<[u8; 32]>(), arb_field(), proptest::option::of("[a-z/ ._-]{0,24}")).prop_map(|(d, path, cg)| {
            let d = DigestValue::from_bytes(d);
            MeasurementEntry::new(match cg {
                Some(cg) => TemplateData::ima_cgn(d, path, cg).unwrap(),
                None => TemplateData::ima_ng(d, path).unwrap(),
            })
        })
    }

    proptest! {
        #[test]
        fn ascii_round_trip(entries in proptest::collection::vec(arb_entry(), 0..20)) {
            let log = MeasurementLog::from_entries(entries);
            let text = emit_ascii(&log);
            let parsed = parse_ascii(&text).unwrap();
            prop_assert_eq!(&parsed, &log);
            prop_assert_eq!(emit_ascii(&parsed), text);
        }

        #[test]
        fn prefix_consistency(entries in proptest::collection::vec(arb_entry(), 1..30)) {
            let mut bank = PcrBank::new();
            let mut log = MeasurementLog::new();
            let mut intermediates = Vec::new();
            for e in entries {
                if log.append_data(&mut bank, e.data).unwrap().is_some() {
                    intermediates.push(bank.read(10).unwrap());
                }
            }
            for (k, v) in intermediates.iter().enumerate() {
                prop_assert_eq!(replay(&log.entries()[..=k], DigestValue::ZERO).unwrap(), *v);
            }
        }
    }
}
