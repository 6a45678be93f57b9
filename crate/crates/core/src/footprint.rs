//! Install-footprint analysis: snapshot a tree before and after an event,
//! diff the snapshots, and parse the package registry.
//!
//! A [`Snapshot`] walks a tree through the [`TreeAccess`] interface — either
//! a local [`FixtureTree`](crate::devicesim::FixtureTree) or a live
//! [`Session`](crate::wireproto::Session) — recording every entry's
//! attributes and, for files, the SHA-1 of its content. Denied or vanished
//! paths are skipped, never fatal.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use sha1::{Digest, Sha1};
use thiserror::Error;

use crate::devicesim::FixtureTree;
use crate::fsmeta::{
    decode_attr, diff_attr, encode_attr, AttrField, DevicePath, FileAttr, FileKind,
};
use crate::wireproto::{Session, Status, StoreError, WireError};

/// Uniform stat/list/read view of a tree, local or remote.
pub trait TreeAccess {
    fn stat(&mut self, path: &str) -> Result<FileAttr, AccessError>;
    fn list_dir(&mut self, path: &str) -> Result<Vec<(String, FileAttr)>, AccessError>;
    fn read_all(&mut self, path: &str) -> Result<Vec<u8>, AccessError>;
}

#[derive(Debug, Error)]
pub enum AccessError {
    #[error("not found")]
    NotFound,
    #[error("permission denied")]
    Perm,
    #[error("not a directory")]
    NotDir,
    #[error("is a directory")]
    IsDir,
    #[error("transport failure: {0}")]
    Transport(String),
}

impl From<StoreError> for AccessError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound => AccessError::NotFound,
            StoreError::Denied => AccessError::Perm,
            StoreError::NotDir => AccessError::NotDir,
            StoreError::IsDir => AccessError::IsDir,
        }
    }
}

impl From<WireError> for AccessError {
    fn from(e: WireError) -> Self {
        match e.status() {
            Some(Status::NotFound) => AccessError::NotFound,
            Some(Status::Perm) => AccessError::Perm,
            Some(Status::NotDir) => AccessError::NotDir,
            Some(Status::IsDir) => AccessError::IsDir,
            _ => AccessError::Transport(e.to_string()),
        }
    }
}

impl TreeAccess for &FixtureTree {
    fn stat(&mut self, path: &str) -> Result<FileAttr, AccessError> {
        let p = DevicePath::parse(path).map_err(|e| AccessError::Transport(e.to_string()))?;
        FixtureTree::stat(self, &p).map_err(Into::into)
    }

    fn list_dir(&mut self, path: &str) -> Result<Vec<(String, FileAttr)>, AccessError> {
        let p = DevicePath::parse(path).map_err(|e| AccessError::Transport(e.to_string()))?;
        FixtureTree::list_dir(self, &p).map_err(Into::into)
    }

    fn read_all(&mut self, path: &str) -> Result<Vec<u8>, AccessError> {
        let p = DevicePath::parse(path).map_err(|e| AccessError::Transport(e.to_string()))?;
        FixtureTree::read_all(self, &p).map_err(Into::into)
    }
}

impl TreeAccess for Session {
    fn stat(&mut self, path: &str) -> Result<FileAttr, AccessError> {
        Session::stat(self, path).map_err(Into::into)
    }

    fn list_dir(&mut self, path: &str) -> Result<Vec<(String, FileAttr)>, AccessError> {
        Session::list_dir(self, path).map_err(Into::into)
    }

    fn read_all(&mut self, path: &str) -> Result<Vec<u8>, AccessError> {
        Session::read_to_end(self, path).map_err(Into::into)
    }
}

/// Why a path is absent from a snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    Perm,
    NotFound,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::Perm => f.write_str("PERM"),
            SkipReason::NotFound => f.write_str("NOT_FOUND"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotEntry {
    pub attr: FileAttr,
    /// Content digest; present for files only.
    pub sha1: Option<[u8; 20]>,
}

/// A labelled manifest of one tree at one point in time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub label: String,
    pub entries: BTreeMap<String, SnapshotEntry>,
    pub skipped: Vec<(String, SkipReason)>,
}

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("capture failed at {path}: {source}")]
    Transport { path: String, source: AccessError },
}

/// Walks `root` depth-first in sorted order. Symlinks are recorded, never
/// followed. Per-entry PERM/NOT_FOUND land in `skipped`; the snapshot is
/// still produced.
pub fn capture_snapshot(
    access: &mut dyn TreeAccess,
    root: &str,
    label: &str,
) -> Result<Snapshot, CaptureError> {
    let mut snap = Snapshot {
        label: label.to_string(),
        entries: BTreeMap::new(),
        skipped: Vec::new(),
    };
    let root_attr = match access.stat(root) {
        Ok(attr) => attr,
        Err(AccessError::Perm) => {
            snap.skipped.push((root.to_string(), SkipReason::Perm));
            return Ok(snap);
        }
        Err(AccessError::NotFound) => {
            snap.skipped.push((root.to_string(), SkipReason::NotFound));
            return Ok(snap);
        }
        Err(e) => {
            return Err(CaptureError::Transport {
                path: root.to_string(),
                source: e,
            })
        }
    };
    visit(access, root, &root_attr, &mut snap)?;
    Ok(snap)
}

fn visit(
    access: &mut dyn TreeAccess,
    path: &str,
    attr: &FileAttr,
    snap: &mut Snapshot,
) -> Result<(), CaptureError> {
    match attr.kind {
        FileKind::Dir => {
            let children = match access.list_dir(path) {
                Ok(c) => c,
                Err(AccessError::Perm) => {
                    snap.skipped.push((path.to_string(), SkipReason::Perm));
                    return Ok(());
                }
                Err(AccessError::NotFound) => {
                    snap.skipped.push((path.to_string(), SkipReason::NotFound));
                    return Ok(());
                }
                Err(e) => {
                    return Err(CaptureError::Transport {
                        path: path.to_string(),
                        source: e,
                    })
                }
            };
            snap.entries.insert(
                path.to_string(),
                SnapshotEntry {
                    attr: attr.clone(),
                    sha1: None,
                },
            );
            for (name, child_attr) in children {
                let child = if path == "/" {
                    format!("/{name}")
                } else {
                    format!("{path}/{name}")
                };
                visit(access, &child, &child_attr, snap)?;
            }
            Ok(())
        }
        FileKind::File => {
            match access.read_all(path) {
                Ok(content) => {
                    let mut h = Sha1::new();
                    h.update(&content);
                    snap.entries.insert(
                        path.to_string(),
                        SnapshotEntry {
                            attr: attr.clone(),
                            sha1: Some(h.finalize().into()),
                        },
                    );
                }
                Err(AccessError::Perm) => {
                    snap.skipped.push((path.to_string(), SkipReason::Perm));
                }
                Err(AccessError::NotFound) => {
                    snap.skipped.push((path.to_string(), SkipReason::NotFound));
                }
                Err(e) => {
                    return Err(CaptureError::Transport {
                        path: path.to_string(),
                        source: e,
                    })
                }
            }
            Ok(())
        }
        FileKind::Symlink => {
            snap.entries.insert(
                path.to_string(),
                SnapshotEntry {
                    attr: attr.clone(),
                    sha1: None,
                },
            );
            Ok(())
        }
    }
}

/// One way an entry changed between two snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Change {
    Attr(AttrField),
    Content,
}

impl fmt::Display for Change {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Change::Attr(field) => write!(f, "{field}"),
            Change::Content => f.write_str("content"),
        }
    }
}

pub type ChangeSet = BTreeSet<Change>;

/// Three-way comparison of two snapshots.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FootprintDiff {
    pub added: BTreeSet<String>,
    pub removed: BTreeSet<String>,
    pub modified: BTreeMap<String, ChangeSet>,
}

impl FootprintDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.modified.is_empty()
    }

    /// Paths whose *content* changed, ignoring attribute-only drift.
    pub fn content_modified(&self) -> BTreeSet<String> {
        self.modified
            .iter()
            .filter(|(_, changes)| changes.contains(&Change::Content))
            .map(|(p, _)| p.clone())
            .collect()
    }
}

/// `added` = only in `s2`; `removed` = only in `s1`; `modified` = in both
/// with differing attributes or content digest.
pub fn diff_snapshots(s1: &Snapshot, s2: &Snapshot) -> FootprintDiff {
    let mut diff = FootprintDiff::default();
    for (path, e1) in &s1.entries {
        match s2.entries.get(path) {
            None => {
                diff.removed.insert(path.clone());
            }
            Some(e2) => {
                let mut changes: ChangeSet =
                    diff_attr(&e1.attr, &e2.attr).into_iter().map(Change::Attr).collect();
                if e1.sha1 != e2.sha1 {
                    changes.insert(Change::Content);
                }
                if !changes.is_empty() {
                    diff.modified.insert(path.clone(), changes);
                }
            }
        }
    }
    for path in s2.entries.keys() {
        if !s1.entries.contains_key(path) {
            diff.added.insert(path.clone());
        }
    }
    diff
}

// --- snapshot text form ---

/// One sorted line per entry: `path TAB attr-hex TAB sha1-hex` (`-` when the
/// entry carries no digest). Skips are kept as `#skipped` comment lines so a
/// parse round-trips the whole snapshot.
pub fn serialize_snapshot(snap: &Snapshot) -> String {
    let mut out = format!("#snapshot {}\n", snap.label);
    for (path, reason) in &snap.skipped {
        out.push_str(&format!("#skipped {path} {reason}\n"));
    }
    for (path, entry) in &snap.entries {
        let attr_hex = hex::encode(encode_attr(&entry.attr).expect("snapshot attr valid"));
        let sha_hex = match &entry.sha1 {
            Some(d) => hex::encode(d),
            None => "-".to_string(),
        };
        out.push_str(&format!("{path}\t{attr_hex}\t{sha_hex}\n"));
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("snapshot parse error at line {0}")]
pub struct SnapshotParseError(pub usize);

pub fn parse_snapshot(text: &str) -> Result<Snapshot, SnapshotParseError> {
    let mut snap = Snapshot {
        label: String::new(),
        entries: BTreeMap::new(),
        skipped: Vec::new(),
    };
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#snapshot ") {
            snap.label = rest.to_string();
            continue;
        }
        if let Some(rest) = line.strip_prefix("#skipped ") {
            let (path, reason) = rest.rsplit_once(' ').ok_or(SnapshotParseError(line_no))?;
            let reason = match reason {
                "PERM" => SkipReason::Perm,
                "NOT_FOUND" => SkipReason::NotFound,
                _ => return Err(SnapshotParseError(line_no)),
            };
            snap.skipped.push((path.to_string(), reason));
            continue;
        }
        let mut fields = line.split('\t');
        let (path, attr_hex, sha_hex) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(p), Some(a), Some(s), None) => (p, a, s),
            _ => return Err(SnapshotParseError(line_no)),
        };
        let attr_bytes = hex::decode(attr_hex).map_err(|_| SnapshotParseError(line_no))?;
        let (attr, used) = decode_attr(&attr_bytes).map_err(|_| SnapshotParseError(line_no))?;
        if used != attr_bytes.len() {
            return Err(SnapshotParseError(line_no));
        }
        let sha1 = if sha_hex == "-" {
            None
        } else {
            let bytes = hex::decode(sha_hex).map_err(|_| SnapshotParseError(line_no))?;
            Some(<[u8; 20]>::try_from(bytes.as_slice()).map_err(|_| SnapshotParseError(line_no))?)
        };
        snap.entries.insert(path.to_string(), SnapshotEntry { attr, sha1 });
    }
    Ok(snap)
}

// --- packages.list ---

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackageRecord {
    pub package_name: String,
    pub uid: u32,
    pub data_dir: String,
}

/// Parsed package registry; names are unique, one record per line.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PackagesList {
    pub records: Vec<PackageRecord>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PackagesParseError {
    #[error("packages.list is not UTF-8")]
    NotUtf8,
    #[error("malformed packages.list line {0}")]
    Parse(usize),
}

/// Grammar per non-empty line: `name SP uid SP data_dir`.
pub fn parse_packages_list(bytes: &[u8]) -> Result<PackagesList, PackagesParseError> {
    let text = std::str::from_utf8(bytes).map_err(|_| PackagesParseError::NotUtf8)?;
    let mut list = PackagesList::default();
    let mut seen = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        let [name, uid, data_dir] = fields.as_slice() else {
            return Err(PackagesParseError::Parse(line_no));
        };
        if name.is_empty() || data_dir.is_empty() {
            return Err(PackagesParseError::Parse(line_no));
        }
        let uid: u32 = uid.parse().map_err(|_| PackagesParseError::Parse(line_no))?;
        if DevicePath::parse(data_dir).is_err() {
            return Err(PackagesParseError::Parse(line_no));
        }
        if !seen.insert(name.to_string()) {
            return Err(PackagesParseError::Parse(line_no));
        }
        list.records.push(PackageRecord {
            package_name: name.to_string(),
            uid,
            data_dir: data_dir.to_string(),
        });
    }
    Ok(list)
}
