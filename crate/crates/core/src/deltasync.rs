//! Rsync-style delta transfer.
//!
//! The receiver holds a *basis* file and sends per-block signatures
//! ([`SignatureSet`]); the data holder scans its current file with a rolling
//! weak checksum, confirms candidate matches with an MD5 block digest, and
//! answers with a stream of [`DeltaOp`]s — `Copy` for blocks the receiver
//! already has, `Literal` for everything else. Applying the ops to the basis
//! reconstructs the current file byte for byte.
//!
//! Weak checksum over a block X_1..X_l (1-indexed):
//!
//! ```text
//! a = ( X_1 + X_2 + ... + X_l )                  mod 2^16
//! b = ( l*X_1 + (l-1)*X_2 + ... + 1*X_l )        mod 2^16
//! s = a + 2^16 * b
//! ```
//!
//! Sliding the window one byte (drop `out`, append `in`) updates in O(1):
//! `a' = a - out + in`, `b' = b - l*out + a'`.

use std::collections::HashMap;

use md5::{Digest, Md5};
use sha1::Sha1;
use thiserror::Error;

use crate::bytesio::{put_u32, put_u64, ReadError, Reader};

/// Default signature block size in bytes.
pub const DEFAULT_BLOCK_SIZE: u32 = 2048;

/// Smallest accepted block size.
pub const MIN_BLOCK_SIZE: u32 = 64;

/// Literal ops are chunked so a single op never dominates a wire frame.
const MAX_LITERAL_LEN: usize = 64 * 1024;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DeltaError {
    #[error("block size {0} below minimum {MIN_BLOCK_SIZE}")]
    BadBlockSize(u32),
    #[error("copy op references block {0} outside the signature set")]
    BadIndex(u32),
    #[error("malformed delta payload: {0}")]
    Malformed(&'static str),
}

impl From<ReadError> for DeltaError {
    fn from(e: ReadError) -> Self {
        match e {
            ReadError::Truncated => DeltaError::Malformed("truncated"),
            ReadError::BadUtf8 => DeltaError::Malformed("invalid utf-8"),
        }
    }
}

/// The two 16-bit accumulators of the rolling checksum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WeakSum {
    pub a: u16,
    pub b: u16,
}

impl WeakSum {
    /// The 32-bit composite `a + 2^16 * b`.
    pub fn composite(self) -> u32 {
        self.a as u32 | (self.b as u32) << 16
    }

    pub fn from_composite(s: u32) -> Self {
        WeakSum {
            a: (s & 0xFFFF) as u16,
            b: (s >> 16) as u16,
        }
    }

    /// Slides a window of `window_len` bytes one position: `out_byte` leaves
    /// at the front, `in_byte` enters at the back.
    pub fn roll(self, out_byte: u8, in_byte: u8, window_len: u32) -> WeakSum {
        let a = self.a.wrapping_sub(out_byte as u16).wrapping_add(in_byte as u16);
        let b = self
            .b
            .wrapping_sub((window_len as u16).wrapping_mul(out_byte as u16))
            .wrapping_add(a);
        WeakSum { a, b }
    }
}

/// Direct weak checksum of a block.
pub fn weak_sum(block: &[u8]) -> WeakSum {
    let mut a: u16 = 0;
    let mut b: u16 = 0;
    for &x in block {
        a = a.wrapping_add(x as u16);
        b = b.wrapping_add(a);
    }
    WeakSum { a, b }
}

/// MD5 digest of a block; confirms weak-checksum candidates.
pub fn strong_sum(block: &[u8]) -> [u8; 16] {
    let mut h = Md5::new();
    h.update(block);
    h.finalize().into()
}

/// SHA-1 over a whole file; closes every delta stream so the receiver can
/// prove the reconstruction matches the remote content.
pub fn whole_file_checksum(data: &[u8]) -> [u8; 20] {
    let mut h = Sha1::new();
    h.update(data);
    h.finalize().into()
}

/// Signature of one basis block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSignature {
    /// Block ordinal within the basis.
    pub index: u32,
    /// Composite weak checksum.
    pub weak: u32,
    pub strong: [u8; 16],
    /// Block length; equals the set's block size except possibly for the
    /// final block.
    pub length: u32,
}

/// Per-block signatures of a basis file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureSet {
    pub block_size: u32,
    pub file_len: u64,
    pub signatures: Vec<BlockSignature>,
}

impl SignatureSet {
    /// Signature of an empty (or absent) basis: the degenerate set that
    /// forces a full literal transfer.
    pub fn empty(block_size: u32) -> Result<Self, DeltaError> {
        if block_size < MIN_BLOCK_SIZE {
            return Err(DeltaError::BadBlockSize(block_size));
        }
        Ok(SignatureSet {
            block_size,
            file_len: 0,
            signatures: Vec::new(),
        })
    }

    /// Structural well-formedness: the count matches the declared length and
    /// every signature has the forced index and length.
    pub fn validate(&self) -> Result<(), DeltaError> {
        if self.block_size < MIN_BLOCK_SIZE {
            return Err(DeltaError::BadBlockSize(self.block_size));
        }
        let bs = self.block_size as u64;
        let expected = self.file_len.div_ceil(bs);
        if self.signatures.len() as u64 != expected {
            return Err(DeltaError::Malformed("signature count mismatch"));
        }
        for (i, sig) in self.signatures.iter().enumerate() {
            if sig.index as usize != i {
                return Err(DeltaError::Malformed("signature index out of order"));
            }
            let is_last = i as u64 == expected - 1;
            let want = if is_last {
                self.file_len - (expected - 1) * bs
            } else {
                bs
            };
            if sig.length as u64 != want {
                return Err(DeltaError::Malformed("signature length mismatch"));
            }
        }
        Ok(())
    }
}

/// One delta instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeltaOp {
    /// Take basis block `block_index` as-is.
    Copy { block_index: u32 },
    /// Bytes not present in the basis.
    Literal(Vec<u8>),
}

/// Computes the signature set of a basis.
pub fn build_signatures(data: &[u8], block_size: u32) -> Result<SignatureSet, DeltaError> {
    if block_size < MIN_BLOCK_SIZE {
        return Err(DeltaError::BadBlockSize(block_size));
    }
    let signatures = data
        .chunks(block_size as usize)
        .enumerate()
        .map(|(i, block)| BlockSignature {
            index: i as u32,
            weak: weak_sum(block).composite(),
            strong: strong_sum(block),
            length: block.len() as u32,
        })
        .collect();
    Ok(SignatureSet {
        block_size,
        file_len: data.len() as u64,
        signatures,
    })
}

fn flush_literal(ops: &mut Vec<DeltaOp>, pending: &mut Vec<u8>) {
    for chunk in pending.chunks(MAX_LITERAL_LEN) {
        ops.push(DeltaOp::Literal(chunk.to_vec()));
    }
    pending.clear();
}

/// Computes the op stream that rebuilds `source` from the basis behind
/// `sigs`. Worst case (nothing matches) the stream is all literals.
pub fn compute_delta(source: &[u8], sigs: &SignatureSet) -> Vec<DeltaOp> {
    let mut ops = Vec::new();
    let mut pending: Vec<u8> = Vec::new();

    if sigs.signatures.is_empty() {
        pending.extend_from_slice(source);
        flush_literal(&mut ops, &mut pending);
        return ops;
    }

    let bs = sigs.block_size as usize;
    // Full-size blocks are matched by the rolling scan; the short tail block
    // (at most one) only matches a suffix shorter than the window.
    let mut full_blocks: HashMap<u32, Vec<u32>> = HashMap::new();
    let mut tail_block: Option<&BlockSignature> = None;
    // 64 K-entry presence filter in front of the hash map.
    let mut filter = vec![false; 1 << 16];
    for sig in &sigs.signatures {
        if sig.length as usize == bs {
            filter[fold_weak(sig.weak)] = true;
            full_blocks.entry(sig.weak).or_default().push(sig.index);
        } else {
            tail_block = Some(sig);
        }
    }

    let n = source.len();
    let mut pos = 0usize;
    let mut w = if n >= bs {
        weak_sum(&source[..bs])
    } else {
        WeakSum::default()
    };

    while n - pos >= bs {
        let composite = w.composite();
        let matched = if filter[fold_weak(composite)] {
            match full_blocks.get(&composite) {
                Some(candidates) => {
                    let strong = strong_sum(&source[pos..pos + bs]);
                    candidates
                        .iter()
                        .copied()
                        .find(|&i| sigs.signatures[i as usize].strong == strong)
                }
                None => None,
            }
        } else {
            None
        };

        match matched {
            Some(index) => {
                flush_literal(&mut ops, &mut pending);
                ops.push(DeltaOp::Copy { block_index: index });
                pos += bs;
                if n - pos >= bs {
                    w = weak_sum(&source[pos..pos + bs]);
                }
            }
            None => {
                pending.push(source[pos]);
                if pos + bs < n {
                    w = w.roll(source[pos], source[pos + bs], bs as u32);
                }
                pos += 1;
            }
        }
    }

    // Tail: fewer than block_size bytes left; try the short block as an
    // exact-suffix match at each position.
    while pos < n {
        if let Some(t) = tail_block {
            if t.length as usize == n - pos {
                let window = &source[pos..];
                if weak_sum(window).composite() == t.weak && strong_sum(window) == t.strong {
                    flush_literal(&mut ops, &mut pending);
                    ops.push(DeltaOp::Copy { block_index: t.index });
                    break;
                }
            }
        }
        pending.push(source[pos]);
        pos += 1;
    }

    flush_literal(&mut ops, &mut pending);
    ops
}

fn fold_weak(composite: u32) -> usize {
    ((composite >> 16) ^ composite) as usize & 0xFFFF
}

/// Replays an op stream against the basis that produced `sigs`.
pub fn apply_delta(basis: &[u8], ops: &[DeltaOp], sigs: &SignatureSet) -> Result<Vec<u8>, DeltaError> {
    let bs = sigs.block_size as usize;
    let mut out = Vec::new();
    for op in ops {
        match op {
            DeltaOp::Copy { block_index } => {
                let i = *block_index as usize;
                let sig = sigs
                    .signatures
                    .get(i)
                    .ok_or(DeltaError::BadIndex(*block_index))?;
                let start = i * bs;
                let end = start + sig.length as usize;
                if end > basis.len() {
                    return Err(DeltaError::BadIndex(*block_index));
                }
                out.extend_from_slice(&basis[start..end]);
            }
            DeltaOp::Literal(bytes) => out.extend_from_slice(bytes),
        }
    }
    Ok(out)
}

/// Total number of literal bytes in an op stream.
pub fn literal_bytes(ops: &[DeltaOp]) -> u64 {
    ops.iter()
        .map(|op| match op {
            DeltaOp::Literal(b) => b.len() as u64,
            DeltaOp::Copy { .. } => 0,
        })
        .sum()
}

// --- wire encodings (carried inside wireproto frames) ---

/// `block_size u32 | file_len u64 | count u32 | count * (index u32 | weak u32 | strong 16B | length u32)`
pub fn encode_signatures(sigs: &SignatureSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + sigs.signatures.len() * 28);
    put_u32(&mut out, sigs.block_size);
    put_u64(&mut out, sigs.file_len);
    put_u32(&mut out, sigs.signatures.len() as u32);
    for sig in &sigs.signatures {
        put_u32(&mut out, sig.index);
        put_u32(&mut out, sig.weak);
        out.extend_from_slice(&sig.strong);
        put_u32(&mut out, sig.length);
    }
    out
}

/// Decodes and validates a signature set, consuming the whole buffer.
pub fn decode_signatures(buf: &[u8]) -> Result<SignatureSet, DeltaError> {
    let mut r = Reader::new(buf);
    let block_size = r.u32()?;
    let file_len = r.u64()?;
    let count = r.u32()? as usize;
    let mut signatures = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        signatures.push(BlockSignature {
            index: r.u32()?,
            weak: r.u32()?,
            strong: r.array()?,
            length: r.u32()?,
        });
    }
    if !r.is_empty() {
        return Err(DeltaError::Malformed("trailing bytes after signatures"));
    }
    let sigs = SignatureSet {
        block_size,
        file_len,
        signatures,
    };
    sigs.validate()?;
    Ok(sigs)
}

/// `tag u8 (0 Copy, 1 Literal) | (index u32 | len u32 + bytes)` per op.
pub fn encode_ops(ops: &[DeltaOp], out: &mut Vec<u8>) {
    for op in ops {
        match op {
            DeltaOp::Copy { block_index } => {
                out.push(0);
                put_u32(out, *block_index);
            }
            DeltaOp::Literal(bytes) => {
                out.push(1);
                put_u32(out, bytes.len() as u32);
                out.extend_from_slice(bytes);
            }
        }
    }
}

/// Decodes ops until the buffer is exhausted.
pub fn decode_ops(buf: &[u8]) -> Result<Vec<DeltaOp>, DeltaError> {
    let mut r = Reader::new(buf);
    let mut ops = Vec::new();
    while !r.is_empty() {
        match r.u8()? {
            0 => ops.push(DeltaOp::Copy {
                block_index: r.u32()?,
            }),
            1 => {
                let len = r.u32()? as usize;
                if len == 0 {
                    return Err(DeltaError::Malformed("empty literal"));
                }
                ops.push(DeltaOp::Literal(r.take(len)?.to_vec()));
            }
            _ => return Err(DeltaError::Malformed("unknown op tag")),
        }
    }
    Ok(ops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn weak_sum_forced_values() {
        assert_eq!(weak_sum(&[]), WeakSum { a: 0, b: 0 });
        assert_eq!(weak_sum(&[]).composite(), 0);

        let w = weak_sum(&[0x01]);
        assert_eq!((w.a, w.b), (1, 1));
        assert_eq!(w.composite(), 65_537);

        let w = weak_sum(&[0x01, 0x02]);
        assert_eq!((w.a, w.b), (3, 4));
        assert_eq!(w.composite(), 262_147);
    }

    #[test]
    fn roll_matches_direct() {
        let w = weak_sum(&[1, 2]);
        let rolled = w.roll(1, 3, 2);
        assert_eq!(rolled, weak_sum(&[2, 3]));
        assert_eq!((rolled.a, rolled.b), (5, 7));
    }

    #[test]
    fn rolling_equals_direct_over_random_buffer() {
        // brute-force oracle: every window position, direct recompute
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut buf = vec![0u8; 4096];
        rng.fill(&mut buf[..]);
        for window in [64usize, 128, 1031] {
            let mut w = weak_sum(&buf[..window]);
            for pos in 0..=(buf.len() - window) {
                assert_eq!(w, weak_sum(&buf[pos..pos + window]), "window {window} pos {pos}");
                if pos + window < buf.len() {
                    w = w.roll(buf[pos], buf[pos + window], window as u32);
                }
            }
        }
    }

    #[test]
    fn roll_with_equal_bytes_keeps_sum() {
        let buf = [9u8, 9, 9, 9, 9];
        let w = weak_sum(&buf[..4]);
        assert_eq!(w.roll(9, 9, 4), weak_sum(&buf[1..5]));
    }

    #[test]
    fn strong_sum_rfc1321_vectors() {
        assert_eq!(hex::encode(strong_sum(b"")), "d41d8cd98f00b204e9800998ecf8427e");
        assert_eq!(hex::encode(strong_sum(b"abc")), "900150983cd24fb0d6963f7d28e17f72");
    }

    #[test]
    fn strong_sum_distinguishes_random_blocks() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut a = vec![0u8; 512];
        let mut b = vec![0u8; 512];
        for _ in 0..64 {
            rng.fill(&mut a[..]);
            rng.fill(&mut b[..]);
            if a != b {
                assert_ne!(strong_sum(&a), strong_sum(&b));
            }
        }
    }

    #[test]
    fn signatures_of_empty_stream() {
        let sigs = build_signatures(&[], 2048).unwrap();
        assert_eq!(sigs.file_len, 0);
        assert!(sigs.signatures.is_empty());
        sigs.validate().unwrap();
    }

    #[test]
    fn signatures_block_arithmetic() {
        let data = vec![0xAAu8; 5000];
        let sigs = build_signatures(&data, 2048).unwrap();
        assert_eq!(sigs.signatures.len(), 3);
        assert_eq!(sigs.signatures[0].length, 2048);
        assert_eq!(sigs.signatures[1].length, 2048);
        assert_eq!(sigs.signatures[2].length, 904);
        sigs.validate().unwrap();
    }

    #[test]
    fn signatures_match_per_block_recompute() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut data = vec![0u8; 10_000];
        rng.fill(&mut data[..]);
        let sigs = build_signatures(&data, 1024).unwrap();
        for (i, block) in data.chunks(1024).enumerate() {
            assert_eq!(sigs.signatures[i].weak, weak_sum(block).composite());
            assert_eq!(sigs.signatures[i].strong, strong_sum(block));
            assert_eq!(sigs.signatures[i].length as usize, block.len());
        }
    }

    #[test]
    fn block_size_floor_enforced() {
        assert_eq!(build_signatures(&[], 63), Err(DeltaError::BadBlockSize(63)));
        assert!(build_signatures(&[], 64).is_ok());
    }

    #[test]
    fn identity_delta_is_all_copies() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let mut data = vec![0u8; 5000];
        rng.fill(&mut data[..]);
        let sigs = build_signatures(&data, 1024).unwrap();
        let ops = compute_delta(&data, &sigs);
        assert_eq!(literal_bytes(&ops), 0);
        assert_eq!(ops.len(), 5);
        for (i, op) in ops.iter().enumerate() {
            assert_eq!(op, &DeltaOp::Copy { block_index: i as u32 });
        }
        assert_eq!(apply_delta(&data, &ops, &sigs).unwrap(), data);
    }

    #[test]
    fn empty_basis_yields_literals() {
        let source = vec![7u8; 3000];
        let sigs = SignatureSet::empty(1024).unwrap();
        let ops = compute_delta(&source, &sigs);
        assert!(ops.iter().all(|op| matches!(op, DeltaOp::Literal(_))));
        assert_eq!(literal_bytes(&ops), 3000);
        assert_eq!(apply_delta(&[], &ops, &sigs).unwrap(), source);
    }

    #[test]
    fn single_changed_block_stays_local() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let bs = 2048usize;
        let mut basis = vec![0u8; bs * 8];
        rng.fill(&mut basis[..]);
        let sigs = build_signatures(&basis, bs as u32).unwrap();

        let mut source = basis.clone();
        for byte in &mut source[bs * 3..bs * 4] {
            *byte ^= 0x5A;
        }
        let ops = compute_delta(&source, &sigs);
        let lit = literal_bytes(&ops);
        assert!(lit > 0 && lit <= 2 * bs as u64, "literal bytes {lit}");
        assert_eq!(apply_delta(&basis, &ops, &sigs).unwrap(), source);
    }

    #[test]
    fn apply_rejects_bad_index() {
        let basis = vec![1u8; 200];
        let sigs = build_signatures(&basis, 64).unwrap();
        let ops = vec![DeltaOp::Copy { block_index: 99 }];
        assert_eq!(apply_delta(&basis, &ops, &sigs), Err(DeltaError::BadIndex(99)));
    }

    #[test]
    fn apply_literal_only() {
        let sigs = SignatureSet::empty(64).unwrap();
        let ops = vec![DeltaOp::Literal(b"xyz".to_vec())];
        assert_eq!(apply_delta(b"ignored", &ops, &sigs).unwrap(), b"xyz");
    }

    #[test]
    fn signature_wire_roundtrip() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let mut data = vec![0u8; 7777];
        rng.fill(&mut data[..]);
        let sigs = build_signatures(&data, 512).unwrap();
        let decoded = decode_signatures(&encode_signatures(&sigs)).unwrap();
        assert_eq!(decoded, sigs);
    }

    #[test]
    fn signature_decode_rejects_damage() {
        let sigs = build_signatures(&[1, 2, 3], 64).unwrap();
        let mut bytes = encode_signatures(&sigs);
        assert!(decode_signatures(&bytes[..bytes.len() - 1]).is_err());
        bytes[3] = 0; // block_size 64 -> 0: below minimum
        assert!(decode_signatures(&bytes).is_err());
    }

    #[test]
    fn ops_wire_roundtrip() {
        let ops = vec![
            DeltaOp::Copy { block_index: 0 },
            DeltaOp::Literal(vec![1, 2, 3]),
            DeltaOp::Copy { block_index: 7 },
        ];
        let mut buf = Vec::new();
        encode_ops(&ops, &mut buf);
        assert_eq!(decode_ops(&buf).unwrap(), ops);
        assert!(decode_ops(&[2]).is_err());
        assert!(decode_ops(&[1, 0, 0, 0, 0]).is_err()); // empty literal
    }

    fn delta_roundtrip(basis: &[u8], source: &[u8], bs: u32) {
        let sigs = build_signatures(basis, bs).unwrap();
        let ops = compute_delta(source, &sigs);
        let rebuilt = apply_delta(basis, &ops, &sigs).unwrap();
        assert_eq!(rebuilt, source);
    }

    #[test]
    fn roundtrip_edge_shapes() {
        delta_roundtrip(&[], &[], 64);
        delta_roundtrip(&[], b"short", 64);
        delta_roundtrip(b"short", &[], 64);
        delta_roundtrip(&vec![0u8; 64], &vec![0u8; 64], 64); // exactly one block
        delta_roundtrip(&vec![3u8; 65], &vec![3u8; 65], 64); // one-byte tail
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn roundtrip_random_pairs(
            basis in proptest::collection::vec(any::<u8>(), 0..20_000),
            source in proptest::collection::vec(any::<u8>(), 0..20_000),
            bs in prop_oneof![Just(64u32), Just(256), Just(1024)],
        ) {
            let sigs = build_signatures(&basis, bs).unwrap();
            let ops = compute_delta(&source, &sigs);
            prop_assert_eq!(apply_delta(&basis, &ops, &sigs).unwrap(), source);
        }

        #[test]
        fn locality_bound_on_contiguous_edit(
            len_blocks in 4usize..24,
            seed in any::<u64>(),
            k in 1usize..3000,
        ) {
            let bs = 256usize;
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut basis = vec![0u8; len_blocks * bs];
            rng.fill(&mut basis[..]);
            let k = k.min(basis.len());
            let start = rng.gen_range(0..=basis.len() - k);

            let mut source = basis.clone();
            for byte in &mut source[start..start + k] {
                *byte = byte.wrapping_add(1);
            }

            let sigs = build_signatures(&basis, bs as u32).unwrap();
            let ops = compute_delta(&source, &sigs);
            let bound = ((k as u64).div_ceil(bs as u64) + 1) * bs as u64;
            prop_assert!(literal_bytes(&ops) <= bound);
            prop_assert_eq!(apply_delta(&basis, &ops, &sigs).unwrap(), source);
        }
    }
}
