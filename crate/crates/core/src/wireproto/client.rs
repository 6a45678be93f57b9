//! Investigator-side session over one TCP connection.

use std::net::{TcpStream, ToSocketAddrs};

use crate::bytesio::Reader;
use crate::deltasync::{decode_ops, encode_signatures, DeltaOp, SignatureSet};
use crate::fsmeta::{decode_attr, DevicePath, FileAttr};

use super::{
    encode_auth_request, encode_path_request, encode_read_request, decode_device_info,
    decode_list_response, read_frame, write_frame, Credentials, DeviceInfo, Frame, Opcode, Status,
    WireError, DELTA_CHUNK_END, DELTA_CHUNK_OPS, MAX_PAYLOAD, MAX_READ_LEN, PROTOCOL_VERSION,
    RESPONSE_BIT,
};

/// A client session. Single-user: may move between threads, never shared.
pub struct Session {
    stream: TcpStream,
    next_id: u32,
    authenticated: bool,
}

impl Session {
    /// Connects without authenticating; run [`Session::handshake`] next.
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Session, WireError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Session {
            stream,
            next_id: 0,
            authenticated: false,
        })
    }

    pub fn is_authenticated(&self) -> bool {
        self.authenticated
    }

    fn send(&mut self, op: Opcode, payload: Vec<u8>) -> Result<u32, WireError> {
        self.next_id = self.next_id.wrapping_add(1);
        let frame = Frame::new(op as u8, self.next_id, payload);
        write_frame(&mut self.stream, &frame)?;
        Ok(self.next_id)
    }

    fn recv_response(&mut self, op: Opcode, id: u32) -> Result<Vec<u8>, WireError> {
        let frame = read_frame(&mut self.stream)?.ok_or(WireError::Truncated)?;
        if frame.ftype != (op as u8 | RESPONSE_BIT) {
            return Err(WireError::Proto("response opcode mismatch"));
        }
        if frame.request_id != id {
            return Err(WireError::Proto("response id mismatch"));
        }
        let status_byte = *frame
            .payload
            .first()
            .ok_or(WireError::Proto("empty response payload"))?;
        let status = Status::from_u8(status_byte).ok_or(WireError::Proto("unknown status"))?;
        if status != Status::Ok {
            return Err(WireError::Status(status));
        }
        Ok(frame.payload[1..].to_vec())
    }

    /// One request/response round trip; returns the body after the OK status.
    fn call(&mut self, op: Opcode, payload: Vec<u8>) -> Result<Vec<u8>, WireError> {
        let id = self.send(op, payload)?;
        self.recv_response(op, id)
    }

    /// HELLO, AUTH, then DEVINFO. On success the session is authenticated and
    /// every other operation becomes available.
    pub fn handshake(&mut self, creds: &Credentials) -> Result<DeviceInfo, WireError> {
        let hello = self.call(Opcode::Hello, Vec::new())?;
        let mut r = Reader::new(&hello);
        if r.u16()? != PROTOCOL_VERSION {
            return Err(WireError::Proto("protocol version mismatch"));
        }

        self.call(Opcode::Auth, encode_auth_request(creds))?;
        self.authenticated = true;

        let body = self.call(Opcode::DevInfo, Vec::new())?;
        let mut r = Reader::new(&body);
        let info = decode_device_info(&mut r)?;
        if !r.is_empty() {
            return Err(WireError::Proto("trailing bytes in DEVINFO"));
        }
        Ok(info)
    }

    /// Attribute record of one entry. Symlinks are reported, never followed.
    pub fn stat(&mut self, path: &str) -> Result<FileAttr, WireError> {
        let path = DevicePath::parse(path)?;
        let body = self.call(Opcode::Stat, encode_path_request(path.as_str()))?;
        let (attr, used) = decode_attr(&body)?;
        if used != body.len() {
            return Err(WireError::Proto("trailing bytes in STAT response"));
        }
        Ok(attr)
    }

    /// Direct children of a directory, sorted by name byte order.
    pub fn list_dir(&mut self, path: &str) -> Result<Vec<(String, FileAttr)>, WireError> {
        let path = DevicePath::parse(path)?;
        let body = self.call(Opcode::List, encode_path_request(path.as_str()))?;
        decode_list_response(&body)
    }

    /// Up to `len` bytes starting at `offset`; shorter (or empty) at EOF.
    pub fn read_chunk(&mut self, path: &str, offset: u64, len: u32) -> Result<Vec<u8>, WireError> {
        if len > MAX_READ_LEN {
            return Err(WireError::Oversize);
        }
        let path = DevicePath::parse(path)?;
        self.call(Opcode::Read, encode_read_request(path.as_str(), offset, len))
    }

    /// Whole file via chunked reads.
    pub fn read_to_end(&mut self, path: &str) -> Result<Vec<u8>, WireError> {
        let mut out = Vec::new();
        loop {
            let chunk = self.read_chunk(path, out.len() as u64, MAX_READ_LEN)?;
            let done = (chunk.len() as u32) < MAX_READ_LEN;
            out.extend_from_slice(&chunk);
            if done {
                return Ok(out);
            }
        }
    }

    /// Requests the delta from a basis described by `basis_signatures` to the
    /// current remote file. Returns the op stream plus the whole-file SHA-1
    /// announced by the server.
    pub fn request_delta(
        &mut self,
        path: &str,
        basis_signatures: &SignatureSet,
    ) -> Result<(Vec<DeltaOp>, [u8; 20]), WireError> {
        let path = DevicePath::parse(path)?;
        let mut payload = encode_path_request(path.as_str());
        payload.extend_from_slice(&encode_signatures(basis_signatures));
        if payload.len() > MAX_PAYLOAD {
            return Err(WireError::Oversize);
        }
        let id = self.send(Opcode::DeltaReq, payload)?;

        let mut ops = Vec::new();
        loop {
            let body = self.recv_response(Opcode::DeltaReq, id)?;
            let mut r = Reader::new(&body);
            match r.u8()? {
                DELTA_CHUNK_OPS => {
                    let rest = r.take(r.remaining())?;
                    ops.extend(decode_ops(rest)?);
                }
                DELTA_CHUNK_END => {
                    let sha1: [u8; 20] = r.array()?;
                    if !r.is_empty() {
                        return Err(WireError::Proto("trailing bytes after delta end"));
                    }
                    return Ok((ops, sha1));
                }
                _ => return Err(WireError::Proto("unknown delta chunk kind")),
            }
        }
    }
}
