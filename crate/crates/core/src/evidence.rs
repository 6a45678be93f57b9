//! Sealed evidence container.
//!
//! One acquisition produces one container file:
//!
//! ```text
//! Header | Entry* | Audit* | Manifest | Seal
//! ```
//!
//! The header starts with magic `AWEC` and version 1. Every later section
//! is `tag u8 | length u64 | body` with tags 0x10 (entry), 0x20 (audit),
//! 0x30 (manifest), 0x40 (seal). Entries carry the full attribute record,
//! the data, and MD5 + SHA-1 of the data; the manifest is the path-sorted
//! table of entry offsets and digests; the seal is the SHA-1 over every
//! container byte preceding the seal tag. All integers big-endian, strings
//! u16-length-prefixed UTF-8.
//!
//! Writing is deterministic: no random identifiers, and all timestamps come
//! from an injected [`Clock`], so identical inputs produce identical files.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use md5::Md5;
use sha1::{Digest, Sha1};
use thiserror::Error;

use crate::bytesio::{put_string, put_u16, put_u32, put_u64, ReadError, Reader};
use crate::fsmeta::{decode_attr, encode_attr, AttrError, DevicePath, FileAttr, Fidelity, PathError};
use crate::wireproto::{decode_device_info, encode_device_info, DeviceInfo};

pub const CONTAINER_MAGIC: [u8; 4] = *b"AWEC";
pub const CONTAINER_VERSION: u16 = 1;

pub const TAG_ENTRY: u8 = 0x10;
pub const TAG_AUDIT: u8 = 0x20;
pub const TAG_MANIFEST: u8 = 0x30;
pub const TAG_SEAL: u8 = 0x40;

const MAX_AUDIT_ACTION: usize = 4096;

/// Wall-clock source. Injected so containers are reproducible.
pub trait Clock: Send {
    fn now_unix(&self) -> u64;
}

/// The real clock.
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_unix(&self) -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

/// A pinned clock for reproducible runs.
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now_unix(&self) -> u64 {
        self.0
    }
}

#[derive(Debug, Error)]
pub enum EvidenceError {
    #[error("invalid container header: {0}")]
    InvalidHeader(&'static str),
    #[error("path already stored: {0}")]
    DuplicatePath(String),
    #[error("container is sealed")]
    Sealed,
    #[error("entry {path}: data length {actual} does not match declared size {expected}")]
    LengthMismatch {
        path: String,
        expected: u64,
        actual: u64,
    },
    #[error("audit action exceeds {MAX_AUDIT_ACTION} bytes")]
    AuditTooLong,
    #[error("no such entry: {0}")]
    NotFound(String),
    #[error("malformed container: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Attr(#[from] AttrError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ReadError> for EvidenceError {
    fn from(e: ReadError) -> Self {
        match e {
            ReadError::Truncated => EvidenceError::Malformed("truncated"),
            ReadError::BadUtf8 => EvidenceError::Malformed("invalid utf-8"),
        }
    }
}

/// Container identity, written once at creation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContainerHeader {
    /// Case reference, ASCII, 1..=64 bytes.
    pub evidence_number: String,
    pub examiner: String,
    pub created_at: u64,
    pub device_info: DeviceInfo,
}

impl ContainerHeader {
    fn validate(&self) -> Result<(), EvidenceError> {
        if self.evidence_number.is_empty() {
            return Err(EvidenceError::InvalidHeader("empty evidence number"));
        }
        if self.evidence_number.len() > 64 || !self.evidence_number.is_ascii() {
            return Err(EvidenceError::InvalidHeader("evidence number must be ASCII <= 64 bytes"));
        }
        Ok(())
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CONTAINER_MAGIC);
        put_u16(&mut out, CONTAINER_VERSION);
        put_string(&mut out, &self.evidence_number);
        put_string(&mut out, &self.examiner);
        put_u64(&mut out, self.created_at);
        out.extend(encode_device_info(&self.device_info));
        out
    }
}

/// Metadata of one stored entry (the data itself lives in the container).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryRecord {
    pub path: String,
    pub attr: FileAttr,
    pub fidelity: Fidelity,
    pub data_len: u64,
    pub md5: [u8; 16],
    pub sha1: [u8; 20],
}

/// One examiner/tool action with its timestamp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRecord {
    pub ts: u64,
    pub action: String,
}

/// Whole-container digest written last.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seal {
    pub sha1: [u8; 20],
}

struct ManifestRecord {
    path: String,
    offset: u64,
    data_len: u64,
    md5: [u8; 16],
    sha1: [u8; 20],
}

/// `Write` adapter maintaining the running seal digest and byte offset.
struct HashingSink<W: Write> {
    inner: W,
    sha1: Sha1,
    written: u64,
}

impl<W: Write> HashingSink<W> {
    fn write_all(&mut self, bytes: &[u8]) -> Result<(), EvidenceError> {
        self.inner.write_all(bytes)?;
        self.sha1.update(bytes);
        self.written += bytes.len() as u64;
        Ok(())
    }
}

/// Open container accepting entries and audit records until sealed.
pub struct ContainerWriter<W: Write> {
    sink: HashingSink<W>,
    clock: Box<dyn Clock>,
    paths: BTreeSet<String>,
    manifest: Vec<ManifestRecord>,
    audits: Vec<AuditRecord>,
    last_ts: u64,
    sealed: bool,
}

/// Validates the header and writes it to `sink`.
pub fn create_container<W: Write>(
    header: &ContainerHeader,
    sink: W,
    clock: Box<dyn Clock>,
) -> Result<ContainerWriter<W>, EvidenceError> {
    header.validate()?;
    let mut sink = HashingSink {
        inner: sink,
        sha1: Sha1::new(),
        written: 0,
    };
    sink.write_all(&header.encode())?;
    Ok(ContainerWriter {
        sink,
        clock,
        paths: BTreeSet::new(),
        manifest: Vec::new(),
        audits: Vec::new(),
        last_ts: 0,
        sealed: false,
    })
}

impl<W: Write> ContainerWriter<W> {
    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    /// Streams one entry into the container, digesting while copying, and
    /// auto-appends a `stored <path>, <n> bytes` audit record.
    pub fn add_entry(
        &mut self,
        path: &str,
        attr: &FileAttr,
        fidelity: Fidelity,
        data: &mut dyn Read,
    ) -> Result<EntryRecord, EvidenceError> {
        if self.sealed {
            return Err(EvidenceError::Sealed);
        }
        DevicePath::parse(path)?;
        if self.paths.contains(path) {
            return Err(EvidenceError::DuplicatePath(path.to_string()));
        }
        attr.validate()?;

        let mut content = Vec::new();
        let mut md5 = Md5::new();
        let mut sha1 = Sha1::new();
        let mut buf = [0u8; 64 * 1024];
        loop {
            let n = data.read(&mut buf)?;
            if n == 0 {
                break;
            }
            md5.update(&buf[..n]);
            sha1.update(&buf[..n]);
            content.extend_from_slice(&buf[..n]);
        }
        let data_len = content.len() as u64;
        if attr.kind == crate::fsmeta::FileKind::File && data_len != attr.size {
            return Err(EvidenceError::LengthMismatch {
                path: path.to_string(),
                expected: attr.size,
                actual: data_len,
            });
        }
        let md5: [u8; 16] = md5.finalize().into();
        let sha1: [u8; 20] = sha1.finalize().into();

        let mut body = Vec::with_capacity(64 + content.len());
        put_string(&mut body, path);
        body.push(fidelity as u8);
        body.extend(encode_attr(attr)?);
        put_u64(&mut body, data_len);
        body.extend_from_slice(&content);
        body.extend_from_slice(&md5);
        body.extend_from_slice(&sha1);

        let offset = self.sink.written;
        self.write_section(TAG_ENTRY, &body)?;

        self.paths.insert(path.to_string());
        self.manifest.push(ManifestRecord {
            path: path.to_string(),
            offset,
            data_len,
            md5,
            sha1,
        });
        let record = EntryRecord {
            path: path.to_string(),
            attr: attr.clone(),
            fidelity,
            data_len,
            md5,
            sha1,
        };
        self.append_audit(&format!("stored {path}, {data_len} bytes"))?;
        Ok(record)
    }

    /// Appends an audit record at the current clock, clamped so timestamps
    /// never decrease.
    pub fn append_audit(&mut self, action: &str) -> Result<AuditRecord, EvidenceError> {
        if self.sealed {
            return Err(EvidenceError::Sealed);
        }
        if action.len() > MAX_AUDIT_ACTION {
            return Err(EvidenceError::AuditTooLong);
        }
        let ts = self.clock.now_unix().max(self.last_ts);
        self.last_ts = ts;
        let record = AuditRecord {
            ts,
            action: action.to_string(),
        };
        self.audits.push(record.clone());
        Ok(record)
    }

    /// Writes the buffered audit log, the path-sorted manifest, then the
    /// seal. The writer is read-only afterwards.
    pub fn seal(&mut self) -> Result<Seal, EvidenceError> {
        if self.sealed {
            return Err(EvidenceError::Sealed);
        }
        let audits = std::mem::take(&mut self.audits);
        for audit in &audits {
            let mut body = Vec::new();
            put_u64(&mut body, audit.ts);
            put_string(&mut body, &audit.action);
            self.write_section(TAG_AUDIT, &body)?;
        }
        self.audits = audits;

        self.manifest.sort_by(|a, b| a.path.as_bytes().cmp(b.path.as_bytes()));
        let mut body = Vec::new();
        put_u32(&mut body, self.manifest.len() as u32);
        for rec in &self.manifest {
            put_string(&mut body, &rec.path);
            put_u64(&mut body, rec.offset);
            put_u64(&mut body, rec.data_len);
            body.extend_from_slice(&rec.md5);
            body.extend_from_slice(&rec.sha1);
        }
        self.write_section(TAG_MANIFEST, &body)?;

        let digest: [u8; 20] = self.sink.sha1.clone().finalize().into();
        self.write_section(TAG_SEAL, &digest)?;
        self.sink.inner.flush()?;
        self.sealed = true;
        Ok(Seal { sha1: digest })
    }

    /// Buffered audit records (written to the file at seal time).
    pub fn audit_log(&self) -> &[AuditRecord] {
        &self.audits
    }

    pub fn bytes_written(&self) -> u64 {
        self.sink.written
    }

    pub fn into_inner(self) -> W {
        self.sink.inner
    }

    fn write_section(&mut self, tag: u8, body: &[u8]) -> Result<(), EvidenceError> {
        let mut head = Vec::with_capacity(9);
        head.push(tag);
        put_u64(&mut head, body.len() as u64);
        self.sink.write_all(&head)?;
        self.sink.write_all(body)
    }
}

// --- reading ---

struct StoredEntry {
    record: EntryRecord,
    /// Byte range of the raw data inside the container.
    data_start: usize,
    data_end: usize,
    /// Offset of the entry's section tag.
    section_offset: u64,
}

/// A parsed (not yet digest-checked) container. Use [`verify`] for the
/// integrity pass.
pub struct Container {
    pub header: ContainerHeader,
    pub audits: Vec<AuditRecord>,
    pub seal: Seal,
    entries: Vec<StoredEntry>,
    manifest: Vec<ManifestRecord>,
    seal_tag_offset: u64,
    bytes: Vec<u8>,
}

/// Entry retrieved from a sealed container. `digest_ok == false` flags a
/// stored-digest mismatch; the bytes are still returned for triage.
pub struct RetrievedEntry {
    pub record: EntryRecord,
    pub data: Vec<u8>,
    pub digest_ok: bool,
}

impl Container {
    pub fn parse(bytes: Vec<u8>) -> Result<Container, EvidenceError> {
        let mut r = Reader::new(&bytes);
        if r.array::<4>()? != CONTAINER_MAGIC {
            return Err(EvidenceError::Malformed("bad magic"));
        }
        if r.u16()? != CONTAINER_VERSION {
            return Err(EvidenceError::Malformed("unsupported version"));
        }
        let evidence_number = r.string()?;
        let examiner = r.string()?;
        let created_at = r.u64()?;
        let device_info = decode_device_info(&mut r)
            .map_err(|_| EvidenceError::Malformed("bad device info"))?;
        let header = ContainerHeader {
            evidence_number,
            examiner,
            created_at,
            device_info,
        };
        header.validate().map_err(|_| EvidenceError::Malformed("invalid header fields"))?;

        let mut entries: Vec<StoredEntry> = Vec::new();
        let mut audits = Vec::new();
        let mut manifest: Option<Vec<ManifestRecord>> = None;
        let mut seal: Option<Seal> = None;
        let mut seal_tag_offset = 0u64;
        // section order: entries, audits, manifest, seal
        let mut phase = TAG_ENTRY;

        while !r.is_empty() {
            let section_offset = r.position() as u64;
            let tag = r.u8()?;
            let len = r.u64()? as usize;
            let body_start = r.position();
            let body = r.take(len)?;
            if tag < phase {
                return Err(EvidenceError::Malformed("section out of order"));
            }
            phase = tag;
            match tag {
                TAG_ENTRY => {
                    let entry = parse_entry(body, body_start, section_offset)?;
                    if entries.iter().any(|e| e.record.path == entry.record.path) {
                        return Err(EvidenceError::Malformed("duplicate entry path"));
                    }
                    entries.push(entry);
                }
                TAG_AUDIT => {
                    let mut br = Reader::new(body);
                    let ts = br.u64()?;
                    let action = br.string()?;
                    if !br.is_empty() {
                        return Err(EvidenceError::Malformed("trailing audit bytes"));
                    }
                    if action.len() > MAX_AUDIT_ACTION {
                        return Err(EvidenceError::Malformed("audit action too long"));
                    }
                    audits.push(AuditRecord { ts, action });
                }
                TAG_MANIFEST => {
                    if manifest.is_some() {
                        return Err(EvidenceError::Malformed("duplicate manifest"));
                    }
                    manifest = Some(parse_manifest(body)?);
                }
                TAG_SEAL => {
                    if seal.is_some() {
                        return Err(EvidenceError::Malformed("duplicate seal"));
                    }
                    if len != 20 {
                        return Err(EvidenceError::Malformed("seal length"));
                    }
                    seal = Some(Seal {
                        sha1: body.try_into().unwrap(),
                    });
                    seal_tag_offset = section_offset;
                    if !r.is_empty() {
                        return Err(EvidenceError::Malformed("bytes after seal"));
                    }
                }
                _ => return Err(EvidenceError::Malformed("unknown section tag")),
            }
        }

        let manifest = manifest.ok_or(EvidenceError::Malformed("missing manifest"))?;
        let seal = seal.ok_or(EvidenceError::Malformed("missing seal"))?;
        Ok(Container {
            header,
            audits,
            seal,
            entries,
            manifest,
            seal_tag_offset,
            bytes,
        })
    }

    pub fn entry_paths(&self) -> Vec<&str> {
        self.manifest.iter().map(|m| m.path.as_str()).collect()
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    pub fn contains(&self, path: &str) -> bool {
        self.entries.iter().any(|e| e.record.path == path)
    }

    pub fn entry_record(&self, path: &str) -> Option<&EntryRecord> {
        self.entries
            .iter()
            .find(|e| e.record.path == path)
            .map(|e| &e.record)
    }

    pub fn records(&self) -> impl Iterator<Item = &EntryRecord> {
        self.entries.iter().map(|e| &e.record)
    }

    /// Stored attributes and exact bytes. Digest mismatch does not fail the
    /// read: the bytes come back flagged.
    pub fn read_entry(&self, path: &str) -> Result<RetrievedEntry, EvidenceError> {
        let entry = self
            .entries
            .iter()
            .find(|e| e.record.path == path)
            .ok_or_else(|| EvidenceError::NotFound(path.to_string()))?;
        let data = self.bytes[entry.data_start..entry.data_end].to_vec();
        let mut md5 = Md5::new();
        md5.update(&data);
        let mut sha1 = Sha1::new();
        sha1.update(&data);
        let digest_ok = <[u8; 16]>::from(md5.finalize()) == entry.record.md5
            && <[u8; 20]>::from(sha1.finalize()) == entry.record.sha1;
        Ok(RetrievedEntry {
            record: entry.record.clone(),
            data,
            digest_ok,
        })
    }
}

fn parse_entry(body: &[u8], body_start: usize, section_offset: u64) -> Result<StoredEntry, EvidenceError> {
    let mut br = Reader::new(body);
    let path = br.string()?;
    let fidelity = Fidelity::from_u8(br.u8()?)?;
    let rest = &body[br.position()..];
    let (attr, used) = decode_attr(rest)?;
    let mut br = Reader::new(&rest[used..]);
    let data_len = br.u64()? as usize;
    let data_rel = body.len() - br.remaining();
    let data = br.take(data_len)?;
    let md5: [u8; 16] = br.array()?;
    let sha1: [u8; 20] = br.array()?;
    if !br.is_empty() {
        return Err(EvidenceError::Malformed("trailing entry bytes"));
    }
    if attr.kind == crate::fsmeta::FileKind::File && data.len() as u64 != attr.size {
        return Err(EvidenceError::Malformed("entry size mismatch"));
    }
    let data_start = body_start + data_rel;
    Ok(StoredEntry {
        record: EntryRecord {
            path,
            attr,
            fidelity,
            data_len: data_len as u64,
            md5,
            sha1,
        },
        data_start,
        data_end: data_start + data_len,
        section_offset,
    })
}

fn parse_manifest(body: &[u8]) -> Result<Vec<ManifestRecord>, EvidenceError> {
    let mut br = Reader::new(body);
    let count = br.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        out.push(ManifestRecord {
            path: br.string()?,
            offset: br.u64()?,
            data_len: br.u64()?,
            md5: br.array()?,
            sha1: br.array()?,
        });
    }
    if !br.is_empty() {
        return Err(EvidenceError::Malformed("trailing manifest bytes"));
    }
    Ok(out)
}

/// What went wrong where, when verification fails.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifyFailure {
    /// Data digests do not match the digests stored with the entry.
    Entry { path: String },
    /// Manifest disagrees with the entries actually present.
    Manifest { detail: String },
    /// Whole-container digest mismatch.
    Seal,
    /// Audit timestamps decreased.
    AuditOrder,
}

impl std::fmt::Display for VerifyFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VerifyFailure::Entry { path } => write!(f, "entry digest mismatch: {path}"),
            VerifyFailure::Manifest { detail } => write!(f, "manifest mismatch: {detail}"),
            VerifyFailure::Seal => f.write_str("seal digest mismatch"),
            VerifyFailure::AuditOrder => f.write_str("audit timestamps not monotonic"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VerifyReport {
    pub failures: Vec<VerifyFailure>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Recomputes every entry digest, the manifest cross-references and the
/// seal. Structural damage surfaces as [`EvidenceError::Malformed`] instead
/// of a report.
pub fn verify(bytes: &[u8]) -> Result<VerifyReport, EvidenceError> {
    let container = Container::parse(bytes.to_vec())?;
    let mut report = VerifyReport::default();

    let mut seal_input = Sha1::new();
    seal_input.update(&bytes[..container.seal_tag_offset as usize]);
    if <[u8; 20]>::from(seal_input.finalize()) != container.seal.sha1 {
        report.failures.push(VerifyFailure::Seal);
    }

    for entry in &container.entries {
        let data = &bytes[entry.data_start..entry.data_end];
        let mut md5 = Md5::new();
        md5.update(data);
        let mut sha1 = Sha1::new();
        sha1.update(data);
        if <[u8; 16]>::from(md5.finalize()) != entry.record.md5
            || <[u8; 20]>::from(sha1.finalize()) != entry.record.sha1
        {
            report.failures.push(VerifyFailure::Entry {
                path: entry.record.path.clone(),
            });
        }
    }

    if container.manifest.len() != container.entries.len() {
        report.failures.push(VerifyFailure::Manifest {
            detail: format!(
                "{} manifest rows, {} entries",
                container.manifest.len(),
                container.entries.len()
            ),
        });
    }
    if !container
        .manifest
        .windows(2)
        .all(|w| w[0].path.as_bytes() <= w[1].path.as_bytes())
    {
        report.failures.push(VerifyFailure::Manifest {
            detail: "manifest not sorted by path".to_string(),
        });
    }
    for m in &container.manifest {
        match container.entries.iter().find(|e| e.record.path == m.path) {
            None => {
                report.failures.push(VerifyFailure::Manifest {
                    detail: format!("row without entry: {}", m.path),
                });
            }
            Some(e) => {
                if m.offset != e.section_offset
                    || m.data_len != e.record.data_len
                    || m.md5 != e.record.md5
                    || m.sha1 != e.record.sha1
                {
                    report.failures.push(VerifyFailure::Manifest {
                        detail: format!("row disagrees with entry: {}", m.path),
                    });
                }
            }
        }
    }

    if container.audits.windows(2).any(|w| w[0].ts > w[1].ts) {
        report.failures.push(VerifyFailure::AuditOrder);
    }

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU64, Ordering};

    struct StepClock(AtomicU64);

    impl Clock for StepClock {
        fn now_unix(&self) -> u64 {
            self.0.fetch_add(1, Ordering::SeqCst)
        }
    }

    fn test_header() -> ContainerHeader {
        ContainerHeader {
            evidence_number: "2013-0217-A".to_string(),
            examiner: "examiner one".to_string(),
            created_at: 1_366_000_000,
            device_info: DeviceInfo {
                model: "Samsung Apollo GT-I5800".to_string(),
                android_version: "2.2".to_string(),
                rooted: true,
                port: 22,
            },
        }
    }

    fn small_file_attr(size: u64) -> FileAttr {
        FileAttr::file(0o644, 1015, 1015, 1_360_000_000, 42, size)
    }

    #[test]
    fn header_magic_and_version_lead_the_file() {
        let mut out = Vec::new();
        let writer = create_container(&test_header(), &mut out, Box::new(FixedClock(1))).unwrap();
        drop(writer);
        assert_eq!(&out[..6], &[0x41, 0x57, 0x45, 0x43, 0x00, 0x01]);
    }

    #[test]
    fn empty_evidence_number_rejected() {
        let mut header = test_header();
        header.evidence_number.clear();
        let result = create_container(&header, Vec::new(), Box::new(FixedClock(1)));
        assert!(matches!(result, Err(EvidenceError::InvalidHeader(_))));
    }

    #[test]
    fn empty_container_seals_and_verifies() {
        let mut out = Vec::new();
        let mut w = create_container(&test_header(), &mut out, Box::new(FixedClock(1))).unwrap();
        w.seal().unwrap();
        drop(w);
        assert!(verify(&out).unwrap().ok());
        let parsed = Container::parse(out).unwrap();
        assert_eq!(parsed.entry_count(), 0);
    }

    #[test]
    fn entry_digests_match_known_vectors() {
        let mut out = Vec::new();
        let mut w = create_container(&test_header(), &mut out, Box::new(FixedClock(1))).unwrap();
        let record = w
            .add_entry("/sdcard/abc.txt", &small_file_attr(3), Fidelity::Full, &mut &b"abc"[..])
            .unwrap();
        assert_eq!(hex::encode(record.md5), "900150983cd24fb0d6963f7d28e17f72");
        assert_eq!(hex::encode(record.sha1), "a9993e364706816aba3e25717850c26c9cd0d89d");
    }

    #[test]
    fn duplicate_path_rejected() {
        let mut w =
            create_container(&test_header(), Vec::new(), Box::new(FixedClock(1))).unwrap();
        w.add_entry("/x", &small_file_attr(1), Fidelity::Full, &mut &b"a"[..]).unwrap();
        let err = w
            .add_entry("/x", &small_file_attr(1), Fidelity::Full, &mut &b"b"[..])
            .unwrap_err();
        assert!(matches!(err, EvidenceError::DuplicatePath(_)));
    }

    #[test]
    fn sealed_container_rejects_every_mutation() {
        let mut w =
            create_container(&test_header(), Vec::new(), Box::new(FixedClock(1))).unwrap();
        w.seal().unwrap();
        assert!(matches!(
            w.add_entry("/x", &small_file_attr(0), Fidelity::Full, &mut &b""[..]),
            Err(EvidenceError::Sealed)
        ));
        assert!(matches!(w.append_audit("late"), Err(EvidenceError::Sealed)));
        assert!(matches!(w.seal(), Err(EvidenceError::Sealed)));
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut w =
            create_container(&test_header(), Vec::new(), Box::new(FixedClock(1))).unwrap();
        let err = w
            .add_entry("/x", &small_file_attr(5), Fidelity::Full, &mut &b"ab"[..])
            .unwrap_err();
        assert!(matches!(err, EvidenceError::LengthMismatch { .. }));
    }

    #[test]
    fn audit_survives_reopen_in_order() {
        let mut out = Vec::new();
        let mut w = create_container(&test_header(), &mut out, Box::new(StepClock(AtomicU64::new(100)))).unwrap();
        w.append_audit("connected to 192.168.1.119").unwrap();
        w.append_audit("authenticated as root").unwrap();
        w.seal().unwrap();
        drop(w);

        let parsed = Container::parse(out).unwrap();
        assert_eq!(parsed.audits.len(), 2);
        assert_eq!(parsed.audits[0].action, "connected to 192.168.1.119");
        assert_eq!(parsed.audits[1].action, "authenticated as root");
        assert!(parsed.audits[0].ts <= parsed.audits[1].ts);
    }

    #[test]
    fn backwards_clock_is_clamped() {
        struct BackwardsClock(AtomicU64);
        impl Clock for BackwardsClock {
            fn now_unix(&self) -> u64 {
                1000 - self.0.fetch_add(10, Ordering::SeqCst)
            }
        }
        let mut w = create_container(
            &test_header(),
            Vec::new(),
            Box::new(BackwardsClock(AtomicU64::new(0))),
        )
        .unwrap();
        let a = w.append_audit("one").unwrap();
        let b = w.append_audit("two").unwrap();
        assert!(b.ts >= a.ts);
    }

    #[test]
    fn audit_action_bound() {
        let mut w =
            create_container(&test_header(), Vec::new(), Box::new(FixedClock(1))).unwrap();
        assert!(matches!(
            w.append_audit(&"x".repeat(MAX_AUDIT_ACTION + 1)),
            Err(EvidenceError::AuditTooLong)
        ));
        assert!(w.append_audit(&"x".repeat(MAX_AUDIT_ACTION)).is_ok());
    }

    fn build_two_entry_container() -> Vec<u8> {
        let mut out = Vec::new();
        let mut w = create_container(&test_header(), &mut out, Box::new(FixedClock(7))).unwrap();
        w.append_audit("connected to 192.168.1.119:2222").unwrap();
        w.add_entry("/a.txt", &small_file_attr(3), Fidelity::Full, &mut &b"abc"[..]).unwrap();
        let link = FileAttr::symlink("/system/etc", 0, 0, 1_360_000_000, 9);
        w.add_entry("/etc", &link, Fidelity::Full, &mut &b""[..]).unwrap();
        w.seal().unwrap();
        drop(w);
        out
    }

    #[test]
    fn read_back_round_trips() {
        let bytes = build_two_entry_container();
        let container = Container::parse(bytes).unwrap();
        let got = container.read_entry("/a.txt").unwrap();
        assert!(got.digest_ok);
        assert_eq!(got.data, b"abc");
        assert_eq!(got.record.attr, small_file_attr(3));
        assert_eq!(got.record.fidelity, Fidelity::Full);

        let link = container.read_entry("/etc").unwrap();
        assert_eq!(link.record.attr.link_target.as_deref(), Some("/system/etc"));
        assert!(link.data.is_empty());

        assert!(matches!(
            container.read_entry("/missing"),
            Err(EvidenceError::NotFound(_))
        ));
    }

    #[test]
    fn corrupted_entry_read_returns_bytes_with_warning() {
        let mut bytes = build_two_entry_container();
        // flip one bit inside "abc"
        let pos = bytes.windows(3).position(|w| w == b"abc").unwrap();
        bytes[pos] ^= 0x01;
        let container = Container::parse(bytes).unwrap();
        let got = container.read_entry("/a.txt").unwrap();
        assert!(!got.digest_ok);
        assert_eq!(got.data.len(), 3);
    }

    #[test]
    fn verify_flags_data_flip_with_entry_path() {
        let mut bytes = build_two_entry_container();
        assert!(verify(&bytes).unwrap().ok());
        let pos = bytes.windows(3).position(|w| w == b"abc").unwrap();
        bytes[pos + 1] ^= 0x80;
        let report = verify(&bytes).unwrap();
        assert!(!report.ok());
        assert!(report
            .failures
            .iter()
            .any(|f| matches!(f, VerifyFailure::Entry { path } if path == "/a.txt")));
        assert!(report.failures.contains(&VerifyFailure::Seal));
    }

    #[test]
    fn identical_inputs_identical_bytes() {
        let a = build_two_entry_container();
        let b = build_two_entry_container();
        assert_eq!(a, b);
    }

    #[test]
    fn truncation_is_malformed() {
        let bytes = build_two_entry_container();
        assert!(matches!(
            Container::parse(bytes[..bytes.len() - 3].to_vec()),
            Err(EvidenceError::Malformed(_))
        ));
        // trailing garbage after the seal is rejected too
        let mut padded = bytes;
        padded.push(0);
        assert!(matches!(
            Container::parse(padded),
            Err(EvidenceError::Malformed(_))
        ));
    }
}
