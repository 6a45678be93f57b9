//! Device-side session layer: serves a [`FileStore`] over the framed
//! protocol. The listener accepts concurrent connections; each connection
//! handles frames strictly serially against an immutable store.

use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use crate::bytesio::{put_u16, Reader};
use crate::deltasync::{compute_delta, decode_signatures, encode_ops, whole_file_checksum, DeltaOp};
use crate::fsmeta::{encode_attr, DevicePath, FileAttr, PathError};

use super::{
    encode_device_info, encode_list_response, read_frame, write_frame, Credentials, DeviceInfo,
    Frame, Opcode, Status, WireError, DELTA_CHUNK_END, DELTA_CHUNK_OPS, MAX_READ_LEN,
    PROTOCOL_VERSION, RESPONSE_BIT,
};

/// Failures a store can report; the session layer maps them onto statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreError {
    NotFound,
    Denied,
    NotDir,
    IsDir,
}

impl StoreError {
    fn status(self) -> Status {
        match self {
            StoreError::NotFound => Status::NotFound,
            StoreError::Denied => Status::Perm,
            StoreError::NotDir => Status::NotDir,
            StoreError::IsDir => Status::IsDir,
        }
    }
}

/// Read-only filesystem the server exposes. Implementations enforce their
/// own access policy by returning [`StoreError::Denied`].
pub trait FileStore: Send + Sync + 'static {
    fn stat(&self, path: &DevicePath) -> Result<FileAttr, StoreError>;
    fn list_dir(&self, path: &DevicePath) -> Result<Vec<(String, FileAttr)>, StoreError>;
    /// `min(len, size - offset)` bytes of a file; empty at or past EOF.
    /// Reading a symlink yields its target string.
    fn read_range(&self, path: &DevicePath, offset: u64, len: u32) -> Result<Vec<u8>, StoreError>;
    /// Whole content, for delta computation.
    fn read_all(&self, path: &DevicePath) -> Result<Vec<u8>, StoreError>;
}

/// Per-server authentication and identity.
#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub credentials: Credentials,
    pub device_info: DeviceInfo,
}

/// Accept loop. Returns when `stop` is raised; in-flight connections finish
/// on their own threads.
pub fn serve_listener<S: FileStore>(
    listener: TcpListener,
    store: Arc<S>,
    config: Arc<ServerConfig>,
    stop: Arc<AtomicBool>,
) -> std::io::Result<()> {
    listener.set_nonblocking(true)?;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _peer)) => {
                let store = Arc::clone(&store);
                let config = Arc::clone(&config);
                thread::spawn(move || {
                    let _ = handle_connection(stream, store, config);
                });
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

fn handle_connection<S: FileStore>(
    stream: TcpStream,
    store: Arc<S>,
    config: Arc<ServerConfig>,
) -> Result<(), WireError> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut conn = Connection {
        stream,
        store,
        config,
        authenticated: false,
    };
    loop {
        let frame = match read_frame(&mut conn.stream) {
            Ok(Some(frame)) => frame,
            // clean close, or a peer broken beyond answering
            Ok(None) | Err(_) => return Ok(()),
        };
        conn.dispatch(frame)?;
    }
}

struct Connection<S: FileStore> {
    stream: TcpStream,
    store: Arc<S>,
    config: Arc<ServerConfig>,
    authenticated: bool,
}

impl<S: FileStore> Connection<S> {
    fn respond(
        &mut self,
        ftype: u8,
        request_id: u32,
        status: Status,
        body: &[u8],
    ) -> Result<(), WireError> {
        let mut payload = Vec::with_capacity(1 + body.len());
        payload.push(status as u8);
        payload.extend_from_slice(body);
        write_frame(
            &mut self.stream,
            &Frame::new(ftype | RESPONSE_BIT, request_id, payload),
        )?;
        self.stream.flush()?;
        Ok(())
    }

    fn dispatch(&mut self, frame: Frame) -> Result<(), WireError> {
        let id = frame.request_id;
        let ftype = frame.ftype;
        let op = Opcode::from_u8(ftype);

        let authorized = matches!(op, Some(Opcode::Hello) | Some(Opcode::Auth)) || self.authenticated;
        if op.is_none() || !authorized {
            return self.respond(ftype, id, Status::Proto, &[]);
        }

        match op.unwrap() {
            Opcode::Hello => {
                let mut body = Vec::new();
                put_u16(&mut body, PROTOCOL_VERSION);
                self.respond(ftype, id, Status::Ok, &body)
            }
            Opcode::Auth => match super::decode_auth_request(&frame.payload) {
                Ok((user, pass)) => {
                    let creds = &self.config.credentials;
                    if user == creds.username() && pass == creds.password() {
                        self.authenticated = true;
                        self.respond(ftype, id, Status::Ok, &[])
                    } else {
                        self.respond(ftype, id, Status::AuthFail, &[])
                    }
                }
                Err(_) => self.respond(ftype, id, Status::Proto, &[]),
            },
            Opcode::DevInfo => {
                if !frame.payload.is_empty() {
                    return self.respond(ftype, id, Status::Proto, &[]);
                }
                let body = encode_device_info(&self.config.device_info);
                self.respond(ftype, id, Status::Ok, &body)
            }
            Opcode::Stat => match self.parse_path_payload(&frame.payload) {
                Ok(path) => match self.store.stat(&path) {
                    Ok(attr) => match encode_attr(&attr) {
                        Ok(body) => self.respond(ftype, id, Status::Ok, &body),
                        Err(_) => self.respond(ftype, id, Status::Proto, &[]),
                    },
                    Err(e) => self.respond(ftype, id, e.status(), &[]),
                },
                Err(status) => self.respond(ftype, id, status, &[]),
            },
            Opcode::List => match self.parse_path_payload(&frame.payload) {
                Ok(path) => match self.store.list_dir(&path) {
                    Ok(entries) => match encode_list_response(&entries) {
                        Ok(body) => self.respond(ftype, id, Status::Ok, &body),
                        Err(_) => self.respond(ftype, id, Status::Proto, &[]),
                    },
                    Err(e) => self.respond(ftype, id, e.status(), &[]),
                },
                Err(status) => self.respond(ftype, id, status, &[]),
            },
            Opcode::Read => {
                let mut r = Reader::new(&frame.payload);
                let parsed = (|| -> Result<(String, u64, u32), WireError> {
                    let path = r.string()?;
                    let offset = r.u64()?;
                    let len = r.u32()?;
                    if !r.is_empty() {
                        return Err(WireError::Proto("trailing bytes in READ"));
                    }
                    Ok((path, offset, len))
                })();
                let (path_str, offset, len) = match parsed {
                    Ok(v) => v,
                    Err(_) => return self.respond(ftype, id, Status::Proto, &[]),
                };
                if len > MAX_READ_LEN {
                    return self.respond(ftype, id, Status::Proto, &[]);
                }
                let path = match parse_path(&path_str) {
                    Ok(p) => p,
                    Err(status) => return self.respond(ftype, id, status, &[]),
                };
                match self.store.read_range(&path, offset, len) {
                    Ok(bytes) => self.respond(ftype, id, Status::Ok, &bytes),
                    Err(e) => self.respond(ftype, id, e.status(), &[]),
                }
            }
            Opcode::DeltaReq => {
                let mut r = Reader::new(&frame.payload);
                let path_str = match r.string() {
                    Ok(s) => s,
                    Err(_) => return self.respond(ftype, id, Status::Proto, &[]),
                };
                let path = match parse_path(&path_str) {
                    Ok(p) => p,
                    Err(status) => return self.respond(ftype, id, status, &[]),
                };
                let sigs = match r
                    .take(r.remaining())
                    .map_err(WireError::from)
                    .and_then(|rest| decode_signatures(rest).map_err(WireError::from))
                {
                    Ok(sigs) => sigs,
                    Err(_) => return self.respond(ftype, id, Status::Proto, &[]),
                };
                let content = match self.store.read_all(&path) {
                    Ok(c) => c,
                    Err(e) => return self.respond(ftype, id, e.status(), &[]),
                };
                let ops = compute_delta(&content, &sigs);
                self.stream_delta(ftype, id, &ops, &content)
            }
        }
    }

    fn parse_path_payload(&self, payload: &[u8]) -> Result<DevicePath, Status> {
        let mut r = Reader::new(payload);
        let s = r.string().map_err(|_| Status::Proto)?;
        if !r.is_empty() {
            return Err(Status::Proto);
        }
        parse_path(&s)
    }

    /// Ops chunks sized well under the frame cap, then the END chunk with
    /// the whole-file SHA-1.
    fn stream_delta(
        &mut self,
        ftype: u8,
        id: u32,
        ops: &[DeltaOp],
        content: &[u8],
    ) -> Result<(), WireError> {
        const CHUNK_BUDGET: usize = 256 * 1024;
        let mut buf = Vec::new();
        for op in ops {
            encode_ops(std::slice::from_ref(op), &mut buf);
            if buf.len() >= CHUNK_BUDGET {
                let body = [&[DELTA_CHUNK_OPS][..], &buf].concat();
                self.respond(ftype, id, Status::Ok, &body)?;
                buf.clear();
            }
        }
        if !buf.is_empty() {
            let body = [&[DELTA_CHUNK_OPS][..], &buf].concat();
            self.respond(ftype, id, Status::Ok, &body)?;
        }
        let mut h = Sha1::new();
        h.update(content);
        let sha1: [u8; 20] = h.finalize().into();
        let body = [&[DELTA_CHUNK_END][..], &sha1[..]].concat();
        self.respond(ftype, id, Status::Ok, &body)
    }
}

fn parse_path(s: &str) -> Result<DevicePath, Status> {
    DevicePath::parse(s).map_err(|e| match e {
        PathError::Traversal => Status::Traversal,
        PathError::Malformed(_) => Status::Proto,
    })
}
