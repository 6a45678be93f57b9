//! Framed TCP request/response protocol between investigator and device.
//!
//! # Frame layout (all integers big-endian)
//!
//! ```text
//! magic "AWE1" | ftype u8 | request_id u32 | payload_len u32 | payload
//! ```
//!
//! Payloads are capped at 1 MiB. Strings inside payloads are
//! u16-length-prefixed UTF-8.
//!
//! # Opcodes
//!
//! | code | request   | payload                                  |
//! |------|-----------|------------------------------------------|
//! | 0x01 | HELLO     | empty                                    |
//! | 0x02 | AUTH      | username, password                       |
//! | 0x03 | STAT      | path                                     |
//! | 0x04 | LIST      | path                                     |
//! | 0x05 | READ      | path, offset u64, len u32                |
//! | 0x06 | DELTA_REQ | path, signature set                      |
//! | 0x07 | DEVINFO   | empty                                    |
//!
//! A response carries the request opcode OR `0x80` and echoes the request
//! id. Its first payload byte is always a [`Status`] code; the rest is the
//! operation result. `DELTA_REQ` answers with a frame *stream*: zero or more
//! `ops` chunks followed by an `end` chunk carrying the SHA-1 of the whole
//! remote file.
//!
//! Each connection processes frames strictly serially. Before a successful
//! AUTH, every opcode other than HELLO/AUTH is answered with
//! [`Status::Proto`].

pub mod client;
pub mod server;

use std::io::{Read, Write};

use thiserror::Error;

use crate::bytesio::{put_string, put_u16, put_u32, put_u64, ReadError, Reader};
use crate::deltasync::DeltaError;
use crate::fsmeta::{decode_attr, encode_attr, AttrError, FileAttr, PathError};

pub use client::Session;
pub use server::{serve_listener, FileStore, ServerConfig, StoreError};

/// Frame magic, "AWE1".
pub const MAGIC: [u8; 4] = *b"AWE1";

/// Fixed frame header size.
pub const FRAME_HEADER_LEN: usize = 13;

/// Hard cap on a frame payload.
pub const MAX_PAYLOAD: usize = 1024 * 1024;

/// Largest length a READ request may ask for, leaving response overhead
/// headroom inside [`MAX_PAYLOAD`].
pub const MAX_READ_LEN: u32 = (MAX_PAYLOAD - 16) as u32;

/// Protocol revision announced in the HELLO response.
pub const PROTOCOL_VERSION: u16 = 1;

/// Response opcodes are the request opcode OR this bit.
pub const RESPONSE_BIT: u8 = 0x80;

/// Chunk discriminator inside a DELTA_REQ response stream.
pub const DELTA_CHUNK_OPS: u8 = 0;
/// Final chunk of a DELTA_REQ response stream; carries the whole-file SHA-1.
pub const DELTA_CHUNK_END: u8 = 1;

/// Request opcodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Opcode {
    Hello = 0x01,
    Auth = 0x02,
    Stat = 0x03,
    List = 0x04,
    Read = 0x05,
    DeltaReq = 0x06,
    DevInfo = 0x07,
}

impl Opcode {
    pub fn from_u8(b: u8) -> Option<Self> {
        match b {
            0x01 => Some(Opcode::Hello),
            0x02 => Some(Opcode::Auth),
            0x03 => Some(Opcode::Stat),
            0x04 => Some(Opcode::List),
            0x05 => Some(Opcode::Read),
            0x06 => Some(Opcode::DeltaReq),
            0x07 => Some(Opcode::DevInfo),
            _ => None,
        }
    }
}

/// First payload byte of every response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Status {
    Ok = 0x00,
    AuthFail = 0x01,
    Perm = 0x02,
    NotFound = 0x03,
    Proto = 0x04,
    Traversal = 0x05,
    NotDir = 0x06,
    IsDir = 0x07,
}

impl Status {
    pub fn from_u8(b: u8) -> Option<Self> {
        match b {
            0x00 => Some(Status::Ok),
            0x01 => Some(Status::AuthFail),
            0x02 => Some(Status::Perm),
            0x03 => Some(Status::NotFound),
            0x04 => Some(Status::Proto),
            0x05 => Some(Status::Traversal),
            0x06 => Some(Status::NotDir),
            0x07 => Some(Status::IsDir),
            _ => None,
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Status::Ok => "OK",
            Status::AuthFail => "AUTH_FAIL",
            Status::Perm => "PERM",
            Status::NotFound => "NOT_FOUND",
            Status::Proto => "PROTO",
            Status::Traversal => "TRAVERSAL",
            Status::NotDir => "NOT_DIR",
            Status::IsDir => "IS_DIR",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("frame truncated")]
    Truncated,
    #[error("payload exceeds 1 MiB frame cap")]
    Oversize,
    #[error("protocol violation: {0}")]
    Proto(&'static str),
    #[error("server answered {0}")]
    Status(Status),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Attr(#[from] AttrError),
    #[error(transparent)]
    Delta(#[from] DeltaError),
}

impl From<ReadError> for WireError {
    fn from(e: ReadError) -> Self {
        match e {
            ReadError::Truncated => WireError::Proto("truncated payload"),
            ReadError::BadUtf8 => WireError::Proto("invalid utf-8 in payload"),
        }
    }
}

impl WireError {
    /// The remote status, when this error is a server-reported failure.
    pub fn status(&self) -> Option<Status> {
        match self {
            WireError::Status(s) => Some(*s),
            _ => None,
        }
    }
}

/// One protocol frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub ftype: u8,
    pub request_id: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(ftype: u8, request_id: u32, payload: Vec<u8>) -> Self {
        Frame {
            ftype,
            request_id,
            payload,
        }
    }
}

/// Serializes a frame. Fails with [`WireError::Oversize`] when the payload
/// exceeds [`MAX_PAYLOAD`].
pub fn encode_frame(ftype: u8, request_id: u32, payload: &[u8]) -> Result<Vec<u8>, WireError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(WireError::Oversize);
    }
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(ftype);
    put_u32(&mut out, request_id);
    put_u32(&mut out, payload.len() as u32);
    out.extend_from_slice(payload);
    Ok(out)
}

/// Decodes one frame from the front of `buf`, returning it and the number of
/// bytes consumed (always `13 + payload_len`).
pub fn decode_frame(buf: &[u8]) -> Result<(Frame, usize), WireError> {
    if buf.len() < FRAME_HEADER_LEN {
        return Err(WireError::Truncated);
    }
    if buf[0..4] != MAGIC {
        return Err(WireError::Proto("bad magic"));
    }
    let ftype = buf[4];
    let request_id = u32::from_be_bytes(buf[5..9].try_into().unwrap());
    let payload_len = u32::from_be_bytes(buf[9..13].try_into().unwrap()) as usize;
    if payload_len > MAX_PAYLOAD {
        return Err(WireError::Proto("declared payload exceeds 1 MiB"));
    }
    let total = FRAME_HEADER_LEN + payload_len;
    if buf.len() < total {
        return Err(WireError::Truncated);
    }
    Ok((
        Frame {
            ftype,
            request_id,
            payload: buf[FRAME_HEADER_LEN..total].to_vec(),
        },
        total,
    ))
}

/// Reads exactly one frame from a stream. Returns `Ok(None)` on a clean EOF
/// at a frame boundary.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<Option<Frame>, WireError> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    let mut filled = 0;
    while filled < header.len() {
        let n = reader.read(&mut header[filled..])?;
        if n == 0 {
            if filled == 0 {
                return Ok(None);
            }
            return Err(WireError::Truncated);
        }
        filled += n;
    }
    if header[0..4] != MAGIC {
        return Err(WireError::Proto("bad magic"));
    }
    let ftype = header[4];
    let request_id = u32::from_be_bytes(header[5..9].try_into().unwrap());
    let payload_len = u32::from_be_bytes(header[9..13].try_into().unwrap()) as usize;
    if payload_len > MAX_PAYLOAD {
        return Err(WireError::Proto("declared payload exceeds 1 MiB"));
    }
    let mut payload = vec![0u8; payload_len];
    reader
        .read_exact(&mut payload)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => WireError::Truncated,
            _ => WireError::Io(e),
        })?;
    Ok(Some(Frame {
        ftype,
        request_id,
        payload,
    }))
}

pub fn write_frame<W: Write>(writer: &mut W, frame: &Frame) -> Result<(), WireError> {
    let bytes = encode_frame(frame.ftype, frame.request_id, &frame.payload)?;
    writer.write_all(&bytes)?;
    Ok(())
}

/// Login credentials. The device-side factory default is `root` / `admin`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Credentials {
    username: String,
    password: String,
}

impl Credentials {
    pub fn new(username: &str, password: &str) -> Result<Self, WireError> {
        if username.is_empty() {
            return Err(WireError::Proto("empty username"));
        }
        if username.len() > 64 || password.len() > 64 {
            return Err(WireError::Proto("credential exceeds 64 bytes"));
        }
        Ok(Credentials {
            username: username.to_string(),
            password: password.to_string(),
        })
    }

    /// The stock install: user `root`, password `admin`.
    pub fn factory_default() -> Self {
        Credentials {
            username: "root".to_string(),
            password: "admin".to_string(),
        }
    }

    pub fn username(&self) -> &str {
        &self.username
    }

    pub fn password(&self) -> &str {
        &self.password
    }
}

/// What the device reports about itself after authentication.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceInfo {
    pub model: String,
    pub android_version: String,
    pub rooted: bool,
    pub port: u16,
}

impl DeviceInfo {
    pub fn validate(&self) -> Result<(), WireError> {
        if !self.rooted && self.port < 1024 {
            return Err(WireError::Proto("non-rooted device on privileged port"));
        }
        Ok(())
    }
}

// --- payload schemas, shared by client and server ---

pub fn encode_auth_request(creds: &Credentials) -> Vec<u8> {
    let mut out = Vec::new();
    put_string(&mut out, &creds.username);
    put_string(&mut out, &creds.password);
    out
}

pub fn decode_auth_request(payload: &[u8]) -> Result<(String, String), WireError> {
    let mut r = Reader::new(payload);
    let username = r.string()?;
    let password = r.string()?;
    if !r.is_empty() {
        return Err(WireError::Proto("trailing bytes in AUTH"));
    }
    Ok((username, password))
}

pub fn encode_path_request(path: &str) -> Vec<u8> {
    let mut out = Vec::new();
    put_string(&mut out, path);
    out
}

pub fn encode_read_request(path: &str, offset: u64, len: u32) -> Vec<u8> {
    let mut out = Vec::new();
    put_string(&mut out, path);
    put_u64(&mut out, offset);
    put_u32(&mut out, len);
    out
}

pub fn encode_device_info(info: &DeviceInfo) -> Vec<u8> {
    let mut out = Vec::new();
    put_string(&mut out, &info.model);
    put_string(&mut out, &info.android_version);
    out.push(info.rooted as u8);
    put_u16(&mut out, info.port);
    out
}

pub fn decode_device_info(r: &mut Reader<'_>) -> Result<DeviceInfo, WireError> {
    let model = r.string()?;
    let android_version = r.string()?;
    let rooted = match r.u8()? {
        0 => false,
        1 => true,
        _ => return Err(WireError::Proto("bad rooted flag")),
    };
    let port = r.u16()?;
    let info = DeviceInfo {
        model,
        android_version,
        rooted,
        port,
    };
    info.validate()?;
    Ok(info)
}

pub fn encode_list_response(entries: &[(String, FileAttr)]) -> Result<Vec<u8>, AttrError> {
    let mut out = Vec::new();
    put_u32(&mut out, entries.len() as u32);
    for (name, attr) in entries {
        put_string(&mut out, name);
        out.extend_from_slice(&encode_attr(attr)?);
    }
    Ok(out)
}

pub fn decode_list_response(payload: &[u8]) -> Result<Vec<(String, FileAttr)>, WireError> {
    let mut r = Reader::new(payload);
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = r.string()?;
        let rest = r.take(r.remaining())?;
        let (attr, used) = decode_attr(rest)?;
        r = Reader::new(&rest[used..]);
        entries.push((name, attr));
    }
    if !r.is_empty() {
        return Err(WireError::Proto("trailing bytes in LIST response"));
    }
    Ok(entries)
}
