//! Wireless logical acquisition toolkit for Android-like devices.
//!
//! The crate is organised around the acquisition pipeline:
//!
//! * [`fsmeta`] — the file attribute model (mode, ownership, timestamps)
//!   whose preservation is the whole point of a logical acquisition, plus
//!   the traversal-safe device path type.
//! * [`deltasync`] — rsync-style delta transfer: rolling weak checksum,
//!   MD5 block signatures, delta computation and application.
//! * [`wireproto`] — the framed TCP request/response protocol and the
//!   client/server session layer that carries everything above.
//! * [`evidence`] — the sealed evidence container: per-entry MD5/SHA-1
//!   digests, a sorted manifest, an append-only audit log and a whole-file
//!   seal.
//! * [`devicesim`] — a deterministic mock Android device: seeded fixture
//!   filesystem served over [`wireproto`] under a rooted/non-rooted
//!   access policy.
//! * [`footprint`] — before/after snapshots of a tree and their three-way
//!   comparison, plus the `packages.list` registry parser.

pub mod deltasync;
pub mod devicesim;
pub mod evidence;
pub mod fsmeta;
pub mod footprint;
pub mod wireproto;

mod bytesio;
