//! File attribute model and device paths.
//!
//! A logical acquisition is only forensically useful if it preserves file
//! metadata — ownership, permission bits and timestamps — alongside content.
//! [`FileAttr`] is that metadata record; [`Fidelity`] records whether a given
//! transfer channel preserved it ([`Fidelity::Full`]) or delivered content
//! only with attributes defaulted ([`Fidelity::ContentOnly`]).
//!
//! The fixed wire layout of an attribute record is 33 bytes:
//!
//! ```text
//! mode u32 | uid u32 | gid u32 | mtime_sec u64 | mtime_nsec u32 | size u64 | kind u8
//! ```
//!
//! For symlinks a u16-length-prefixed UTF-8 target string follows the record.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::bytesio::{put_string, put_u32, put_u64, ReadError, Reader};

/// Fixed size of the attribute record, excluding any symlink target string.
pub const ATTR_RECORD_LEN: usize = 33;

/// Permission bits cover the low 12 bits of `mode` (rwx triples plus
/// setuid/setgid/sticky).
pub const MODE_MASK: u32 = 0o7777;

const NANOS_PER_SEC: u32 = 1_000_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AttrError {
    #[error("invalid attribute: {0}")]
    Invalid(&'static str),
    #[error("truncated attribute record")]
    Truncated,
}

impl From<ReadError> for AttrError {
    fn from(e: ReadError) -> Self {
        match e {
            ReadError::Truncated => AttrError::Truncated,
            ReadError::BadUtf8 => AttrError::Invalid("link target is not UTF-8"),
        }
    }
}

/// What an entry is. The discriminants are the on-wire kind byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum FileKind {
    File = 0,
    Dir = 1,
    Symlink = 2,
}

impl FileKind {
    pub fn from_u8(b: u8) -> Result<Self, AttrError> {
        match b {
            0 => Ok(FileKind::File),
            1 => Ok(FileKind::Dir),
            2 => Ok(FileKind::Symlink),
            _ => Err(AttrError::Invalid("unknown kind byte")),
        }
    }
}

impl fmt::Display for FileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FileKind::File => "file",
            FileKind::Dir => "dir",
            FileKind::Symlink => "symlink",
        };
        f.write_str(s)
    }
}

/// The forensic metadata record for one filesystem entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileAttr {
    /// Permission bits, at most [`MODE_MASK`].
    pub mode: u32,
    pub uid: u32,
    pub gid: u32,
    pub mtime_sec: u64,
    /// Sub-second part of the modification time, always < 10^9.
    pub mtime_nsec: u32,
    /// Content length in bytes. Always 0 for directories; for symlinks it is
    /// the length of the target string.
    pub size: u64,
    pub kind: FileKind,
    /// Present exactly when `kind == Symlink`.
    pub link_target: Option<String>,
}

impl FileAttr {
    pub fn file(mode: u32, uid: u32, gid: u32, mtime_sec: u64, mtime_nsec: u32, size: u64) -> Self {
        FileAttr {
            mode,
            uid,
            gid,
            mtime_sec,
            mtime_nsec,
            size,
            kind: FileKind::File,
            link_target: None,
        }
    }

    pub fn dir(mode: u32, uid: u32, gid: u32, mtime_sec: u64, mtime_nsec: u32) -> Self {
        FileAttr {
            mode,
            uid,
            gid,
            mtime_sec,
            mtime_nsec,
            size: 0,
            kind: FileKind::Dir,
            link_target: None,
        }
    }

    pub fn symlink(target: &str, uid: u32, gid: u32, mtime_sec: u64, mtime_nsec: u32) -> Self {
        FileAttr {
            mode: 0o777,
            uid,
            gid,
            mtime_sec,
            mtime_nsec,
            size: target.len() as u64,
            kind: FileKind::Symlink,
            link_target: Some(target.to_string()),
        }
    }

    /// Checks the record invariants without encoding it.
    pub fn validate(&self) -> Result<(), AttrError> {
        if self.mode > MODE_MASK {
            return Err(AttrError::Invalid("mode exceeds 12 permission bits"));
        }
        if self.mtime_nsec >= NANOS_PER_SEC {
            return Err(AttrError::Invalid("mtime_nsec out of range"));
        }
        match (self.kind, &self.link_target) {
            (FileKind::Symlink, None) => {
                return Err(AttrError::Invalid("symlink without link target"))
            }
            (FileKind::Symlink, Some(_)) => {}
            (_, Some(_)) => return Err(AttrError::Invalid("link target on non-symlink")),
            (_, None) => {}
        }
        if self.kind == FileKind::Dir && self.size != 0 {
            return Err(AttrError::Invalid("directory with non-zero size"));
        }
        Ok(())
    }

    /// What a degraded, content-only channel reports for this entry: content
    /// identity is kept (kind, size, link target) while ownership, permission
    /// bits and timestamps are replaced by channel defaults. `acquired_at` is
    /// the acquisition wall-clock time in unix seconds.
    pub fn degraded_to_content_only(&self, acquired_at: u64) -> FileAttr {
        let mode = match self.kind {
            FileKind::File => 0o644,
            FileKind::Dir => 0o755,
            FileKind::Symlink => 0o777,
        };
        FileAttr {
            mode,
            uid: 0,
            gid: 0,
            mtime_sec: acquired_at,
            mtime_nsec: 0,
            size: self.size,
            kind: self.kind,
            link_target: self.link_target.clone(),
        }
    }
}

/// Whether a transfer preserved attributes or only content.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Fidelity {
    /// Content plus the full attribute record.
    Full = 0,
    /// Content only; attributes carry channel defaults.
    ContentOnly = 1,
}

impl Fidelity {
    pub fn from_u8(b: u8) -> Result<Self, AttrError> {
        match b {
            0 => Ok(Fidelity::Full),
            1 => Ok(Fidelity::ContentOnly),
            _ => Err(AttrError::Invalid("unknown fidelity byte")),
        }
    }
}

impl fmt::Display for Fidelity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Fidelity::Full => "FULL",
            Fidelity::ContentOnly => "CONTENT_ONLY",
        };
        f.write_str(s)
    }
}

/// Encodes the 33-byte record, followed by the target string for symlinks.
pub fn encode_attr(attr: &FileAttr) -> Result<Vec<u8>, AttrError> {
    attr.validate()?;
    let mut out = Vec::with_capacity(ATTR_RECORD_LEN + 2);
    put_u32(&mut out, attr.mode);
    put_u32(&mut out, attr.uid);
    put_u32(&mut out, attr.gid);
    put_u64(&mut out, attr.mtime_sec);
    put_u32(&mut out, attr.mtime_nsec);
    put_u64(&mut out, attr.size);
    out.push(attr.kind as u8);
    if let Some(target) = &attr.link_target {
        put_string(&mut out, target);
    }
    Ok(out)
}

/// Decodes one attribute record from the front of `buf`, returning the
/// record and the number of bytes consumed.
pub fn decode_attr(buf: &[u8]) -> Result<(FileAttr, usize), AttrError> {
    let mut r = Reader::new(buf);
    let mode = r.u32()?;
    let uid = r.u32()?;
    let gid = r.u32()?;
    let mtime_sec = r.u64()?;
    let mtime_nsec = r.u32()?;
    let size = r.u64()?;
    let kind = FileKind::from_u8(r.u8()?)?;
    let link_target = if kind == FileKind::Symlink {
        Some(r.string()?)
    } else {
        None
    };
    let attr = FileAttr {
        mode,
        uid,
        gid,
        mtime_sec,
        mtime_nsec,
        size,
        kind,
        link_target,
    };
    attr.validate()?;
    Ok((attr, r.position()))
}

/// One attribute field name, for reporting which fields changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AttrField {
    Mode,
    Uid,
    Gid,
    Mtime,
    Size,
    Kind,
    LinkTarget,
}

impl fmt::Display for AttrField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AttrField::Mode => "mode",
            AttrField::Uid => "uid",
            AttrField::Gid => "gid",
            AttrField::Mtime => "mtime",
            AttrField::Size => "size",
            AttrField::Kind => "kind",
            AttrField::LinkTarget => "link_target",
        };
        f.write_str(s)
    }
}

/// Set of attribute fields that differ between two records.
pub type AttrDiff = BTreeSet<AttrField>;

/// Field-for-field comparison; empty iff the records are identical
/// (link target included).
pub fn diff_attr(a: &FileAttr, b: &FileAttr) -> AttrDiff {
    let mut diff = AttrDiff::new();
    if a.mode != b.mode {
        diff.insert(AttrField::Mode);
    }
    if a.uid != b.uid {
        diff.insert(AttrField::Uid);
    }
    if a.gid != b.gid {
        diff.insert(AttrField::Gid);
    }
    if a.mtime_sec != b.mtime_sec || a.mtime_nsec != b.mtime_nsec {
        diff.insert(AttrField::Mtime);
    }
    if a.size != b.size {
        diff.insert(AttrField::Size);
    }
    if a.kind != b.kind {
        diff.insert(AttrField::Kind);
    }
    if a.link_target != b.link_target {
        diff.insert(AttrField::LinkTarget);
    }
    diff
}

/// Why a device path was rejected.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum PathError {
    #[error("path contains a '..' segment")]
    Traversal,
    #[error("malformed device path: {0}")]
    Malformed(&'static str),
}

/// An absolute, '/'-separated, traversal-safe path on the device.
///
/// Rules: must start with '/', no "." or ".." segments, no empty segments
/// (so no "//" runs and no trailing slash except the root itself).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DevicePath(String);

impl DevicePath {
    pub fn parse(s: &str) -> Result<Self, PathError> {
        if !s.starts_with('/') {
            return Err(PathError::Malformed("not absolute"));
        }
        if s == "/" {
            return Ok(DevicePath(s.to_string()));
        }
        for segment in s[1..].split('/') {
            match segment {
                "" => return Err(PathError::Malformed("empty segment")),
                "." => return Err(PathError::Malformed("'.' segment")),
                ".." => return Err(PathError::Traversal),
                _ => {}
            }
        }
        Ok(DevicePath(s.to_string()))
    }

    pub fn root() -> Self {
        DevicePath("/".to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_root(&self) -> bool {
        self.0 == "/"
    }

    /// Child path; `name` must be a single valid segment.
    pub fn join(&self, name: &str) -> Result<Self, PathError> {
        if name.is_empty() || name == "." || name == ".." || name.contains('/') {
            return Err(PathError::Malformed("invalid segment"));
        }
        let joined = if self.is_root() {
            format!("/{name}")
        } else {
            format!("{}/{name}", self.0)
        };
        Ok(DevicePath(joined))
    }

    /// Whether `prefix` is this path or a segment-aligned ancestor of it.
    pub fn starts_with(&self, prefix: &DevicePath) -> bool {
        if prefix.is_root() {
            return true;
        }
        let p = prefix.as_str();
        self.0 == p || (self.0.starts_with(p) && self.0.as_bytes()[p.len()] == b'/')
    }
}

impl fmt::Display for DevicePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}
