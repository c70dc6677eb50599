//! Binary embedding shards.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic    5 bytes  "HYPE1"
//! version  u16
//! dim      u32
//! count    u64
//! flags    u32      bit0: clip_cos present, bit1: cin present
//! count x record:
//!   id             u64
//!   text tangent   dim x f32
//!   image tangent  dim x f32
//!   clip_cos       f32   (if bit0)
//!   cin            u8    (if bit1; 0 or 1)
//! crc32c   u32      over every preceding byte
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{HypeError, Result};
use crate::record::PairRecord;

pub const SHARD_MAGIC: &[u8; 5] = b"HYPE1";
pub const SHARD_VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 5 + 2 + 4 + 8 + 4;
pub const TRAILER_LEN: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ShardFlags(u32);

impl ShardFlags {
    pub const CLIP_COS: u32 = 1;
    pub const CIN: u32 = 1 << 1;
    const KNOWN: u32 = Self::CLIP_COS | Self::CIN;

    pub fn all() -> Self {
        ShardFlags(Self::KNOWN)
    }

    pub fn none() -> Self {
        ShardFlags(0)
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        (bits & !Self::KNOWN == 0).then_some(ShardFlags(bits))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn has_clip_cos(self) -> bool {
        self.0 & Self::CLIP_COS != 0
    }

    pub fn has_cin(self) -> bool {
        self.0 & Self::CIN != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShardHeader {
    pub version: u16,
    pub dim: u32,
    pub count: u64,
    pub flags: ShardFlags,
}

impl ShardHeader {
    pub fn record_len(&self) -> u64 {
        8 + 8 * u64::from(self.dim)
            + if self.flags.has_clip_cos() { 4 } else { 0 }
            + if self.flags.has_cin() { 1 } else { 0 }
    }

    /// Total file size implied by the header.
    pub fn file_len(&self) -> Option<u64> {
        self.count
            .checked_mul(self.record_len())?
            .checked_add(HEADER_LEN + TRAILER_LEN)
    }

    fn encode(&self) -> [u8; HEADER_LEN as usize] {
        let mut buf = [0u8; HEADER_LEN as usize];
        buf[..5].copy_from_slice(SHARD_MAGIC);
        buf[5..7].copy_from_slice(&self.version.to_le_bytes());
        buf[7..11].copy_from_slice(&self.dim.to_le_bytes());
        buf[11..19].copy_from_slice(&self.count.to_le_bytes());
        buf[19..23].copy_from_slice(&self.flags.bits().to_le_bytes());
        buf
    }
}

/// Writes `records` to `path` and returns the number written.
pub fn write_shard<'a, I>(path: &Path, records: I, dim: usize, flags: ShardFlags) -> Result<u64>
where
    I: IntoIterator<Item = &'a PairRecord>,
    I::IntoIter: ExactSizeIterator,
{
    let records = records.into_iter();
    if dim == 0 || dim > u32::MAX as usize {
        return Err(HypeError::InvalidInput(format!("unsupported shard dim {dim}")));
    }
    let header = ShardHeader {
        version: SHARD_VERSION,
        dim: dim as u32,
        count: records.len() as u64,
        flags,
    };
    let file = File::create(path).map_err(|e| HypeError::io(path, e))?;
    let mut out = CrcWriter::new(BufWriter::new(file));
    let io = |e| HypeError::io(path, e);
    out.write_all(&header.encode()).map_err(io)?;
    let mut written = 0u64;
    let mut buf = Vec::with_capacity(header.record_len() as usize);
    for r in records {
        if r.text_tangent.len() != dim || r.image_tangent.len() != dim {
            return Err(HypeError::InvalidInput(format!(
                "{}: record {} has dims ({}, {}), shard dim is {dim}",
                path.display(),
                r.id,
                r.text_tangent.len(),
                r.image_tangent.len()
            )));
        }
        buf.clear();
        buf.extend_from_slice(&r.id.to_le_bytes());
        for v in r.text_tangent.iter().chain(&r.image_tangent) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        if flags.has_clip_cos() {
            buf.extend_from_slice(&r.clip_cos.to_le_bytes());
        }
        if flags.has_cin() {
            buf.push(u8::from(r.cin_flag));
        }
        out.write_all(&buf).map_err(io)?;
        written += 1;
    }
    let crc = out.crc;
    let mut inner = out.inner;
    inner.write_all(&crc.to_le_bytes()).map_err(io)?;
    inner.flush().map_err(io)?;
    Ok(written)
}

struct CrcWriter<W> {
    inner: W,
    crc: u32,
}

impl<W: Write> CrcWriter<W> {
    fn new(inner: W) -> Self {
        CrcWriter { inner, crc: 0 }
    }
}

impl<W: Write> Write for CrcWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.crc = crc32c::crc32c_append(self.crc, &buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

/// Streaming shard reader. Records are yielded in file order; the checksum
/// is verified after the last record, so a corrupt file surfaces as an
/// `Err` item at the end of iteration.
pub struct ShardReader {
    path: PathBuf,
    reader: BufReader<File>,
    header: ShardHeader,
    offset: u64,
    remaining: u64,
    crc: u32,
    buf: Vec<u8>,
    done: bool,
}

impl std::fmt::Debug for ShardReader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ShardReader")
            .field("path", &self.path)
            .field("header", &self.header)
            .field("offset", &self.offset)
            .finish()
    }
}

/// Opens a shard and validates its header.
pub fn read_shard(path: &Path) -> Result<ShardReader> {
    ShardReader::open(path)
}

impl ShardReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| HypeError::io(path, e))?;
        let file_len = file.metadata().map_err(|e| HypeError::io(path, e))?.len();
        let mut reader = BufReader::with_capacity(1 << 16, file);
        let mut raw = [0u8; HEADER_LEN as usize];
        read_exact_at(&mut reader, &mut raw, path, 0)?;
        if &raw[..5] != SHARD_MAGIC {
            return Err(HypeError::BadMagic {
                path: path.into(),
                offset: 0,
            });
        }
        let version = u16::from_le_bytes([raw[5], raw[6]]);
        if version != SHARD_VERSION {
            return Err(HypeError::UnsupportedVersion {
                path: path.into(),
                found: version,
                expected: SHARD_VERSION,
            });
        }
        let dim = u32::from_le_bytes(raw[7..11].try_into().unwrap());
        let count = u64::from_le_bytes(raw[11..19].try_into().unwrap());
        let flag_bits = u32::from_le_bytes(raw[19..23].try_into().unwrap());
        if dim == 0 {
            return Err(HypeError::Format {
                path: path.into(),
                offset: 7,
                reason: "dim must be at least 1".into(),
            });
        }
        let flags = ShardFlags::from_bits(flag_bits).ok_or_else(|| HypeError::Format {
            path: path.into(),
            offset: 19,
            reason: format!("unknown flag bits {flag_bits:#x}"),
        })?;
        let header = ShardHeader {
            version,
            dim,
            count,
            flags,
        };
        match header.file_len() {
            Some(expected) if expected > file_len => {
                return Err(HypeError::Truncated {
                    path: path.into(),
                    offset: file_len,
                    needed: expected - file_len,
                })
            }
            Some(expected) if expected < file_len => {
                return Err(HypeError::Format {
                    path: path.into(),
                    offset: expected,
                    reason: format!("{} unexpected trailing bytes", file_len - expected),
                })
            }
            None => {
                return Err(HypeError::Format {
                    path: path.into(),
                    offset: 11,
                    reason: "record count overflows the addressable size".into(),
                })
            }
            _ => {}
        }
        if !flags.has_clip_cos() || !flags.has_cin() {
            log::warn!(
                "{}: shard lacks {}; defaulting to clip_cos=0 / cin=false, which changes the combined score",
                path.display(),
                match (flags.has_clip_cos(), flags.has_cin()) {
                    (false, false) => "clip_cos and cin",
                    (false, true) => "clip_cos",
                    _ => "cin",
                }
            );
        }
        Ok(ShardReader {
            path: path.into(),
            reader,
            header,
            offset: HEADER_LEN,
            remaining: count,
            crc: crc32c::crc32c(&raw),
            buf: vec![0u8; header.record_len() as usize],
            done: false,
        })
    }

    pub fn header(&self) -> &ShardHeader {
        &self.header
    }

    fn next_record(&mut self) -> Result<PairRecord> {
        let start = self.offset;
        read_exact_at(&mut self.reader, &mut self.buf, &self.path, start)?;
        self.crc = crc32c::crc32c_append(self.crc, &self.buf);
        self.offset += self.buf.len() as u64;
        let dim = self.header.dim as usize;
        let b = &self.buf;
        let f32_at = |pos: usize| f32::from_le_bytes(b[pos..pos + 4].try_into().unwrap());
        let id = u64::from_le_bytes(b[..8].try_into().unwrap());
        let text_tangent: Vec<f32> = (0..dim).map(|i| f32_at(8 + 4 * i)).collect();
        let image_tangent: Vec<f32> = (0..dim).map(|i| f32_at(8 + 4 * (dim + i))).collect();
        let mut pos = 8 + 8 * dim;
        let clip_cos = if self.header.flags.has_clip_cos() {
            pos += 4;
            f32_at(pos - 4)
        } else {
            0.0
        };
        let cin_flag = if self.header.flags.has_cin() {
            match b[pos] {
                0 => false,
                1 => true,
                other => {
                    return Err(HypeError::Format {
                        path: self.path.clone(),
                        offset: start + pos as u64,
                        reason: format!("cin byte must be 0 or 1, found {other}"),
                    })
                }
            }
        } else {
            false
        };
        Ok(PairRecord {
            id,
            text_tangent,
            image_tangent,
            clip_cos,
            cin_flag,
        })
    }

    fn finish(&mut self) -> Result<()> {
        let mut raw = [0u8; 4];
        read_exact_at(&mut self.reader, &mut raw, &self.path, self.offset)?;
        let stored = u32::from_le_bytes(raw);
        if stored != self.crc {
            return Err(HypeError::Checksum {
                path: self.path.clone(),
                offset: self.offset,
                stored,
                computed: self.crc,
            });
        }
        Ok(())
    }

    /// Stored trailer checksum, read after a full pass.
    pub fn checksum(&self) -> u32 {
        self.crc
    }
}

impl Iterator for ShardReader {
    type Item = Result<PairRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = if self.remaining > 0 {
            self.remaining -= 1;
            let r = self.next_record();
            if r.is_ok() && self.remaining == 0 {
                // Verify the trailer before handing out the last record.
                if let Err(e) = self.finish() {
                    self.done = true;
                    return Some(Err(e));
                }
                self.done = true;
            }
            r
        } else {
            self.done = true;
            match self.finish() {
                Ok(()) => return None,
                Err(e) => Err(e),
            }
        };
        if item.is_err() {
            self.done = true;
        }
        Some(item)
    }
}

fn read_exact_at(reader: &mut impl Read, buf: &mut [u8], path: &Path, offset: u64) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(HypeError::Truncated {
                    path: path.into(),
                    offset: offset + filled as u64,
                    needed: (buf.len() - filled) as u64,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(HypeError::io(path, e)),
        }
    }
    Ok(())
}

/// Reads a whole shard into memory, verifying the checksum.
pub fn read_shard_all(path: &Path) -> Result<Vec<PairRecord>> {
    read_shard(path)?.collect()
}

/// Header and trailer checksum of a shard, after verifying it end to end.
pub fn shard_summary(path: &Path) -> Result<(ShardHeader, u32)> {
    let mut reader = read_shard(path)?;
    let header = *reader.header();
    for r in reader.by_ref() {
        r?;
    }
    Ok((header, reader.checksum()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64) -> PairRecord {
        PairRecord {
            id,
            text_tangent: vec![0.5, -1.25],
            image_tangent: vec![2.0, 0.125],
            clip_cos: 0.3,
            cin_flag: id % 2 == 0,
        }
    }

    #[test]
    fn empty_shard() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.hype");
        assert_eq!(write_shard(&path, &Vec::<PairRecord>::new(), 4, ShardFlags::all()).unwrap(), 0);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), HEADER_LEN + TRAILER_LEN);
        let reader = read_shard(&path).unwrap();
        assert_eq!(reader.header().count, 0);
        assert!(reader.collect::<Result<Vec<_>>>().unwrap().is_empty());
    }

    #[test]
    fn single_record_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.hype");
        write_shard(&path, &[rec(1)], 2, ShardFlags::all()).unwrap();
        let len = std::fs::metadata(&path).unwrap().len();
        assert_eq!(len, HEADER_LEN + (8 + 8 + 8 + 4 + 1) + 4);
        assert_eq!(read_shard_all(&path).unwrap(), vec![rec(1)]);
    }

    #[test]
    fn optional_fields_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bare.hype");
        write_shard(&path, &[rec(2)], 2, ShardFlags::none()).unwrap();
        let back = read_shard_all(&path).unwrap();
        assert_eq!(back[0].clip_cos, 0.0);
        assert!(!back[0].cin_flag);
        assert_eq!(back[0].text_tangent, rec(2).text_tangent);
    }

    #[test]
    fn dim_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.hype");
        assert!(matches!(
            write_shard(&path, &[rec(1)], 3, ShardFlags::all()),
            Err(HypeError::InvalidInput(_))
        ));
    }

    #[test]
    fn corrupt_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.hype");
        write_shard(&path, &[rec(1)], 2, ShardFlags::all()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_shard(&path), Err(HypeError::BadMagic { offset: 0, .. })));
        bytes[0] = b'H';
        bytes[5] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_shard(&path), Err(HypeError::UnsupportedVersion { found: 9, .. })));
    }

    #[test]
    fn truncated_record_region() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.hype");
        write_shard(&path, &[rec(1), rec(2)], 2, ShardFlags::all()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        match read_shard(&path) {
            Err(HypeError::Truncated { offset, needed, .. }) => {
                assert_eq!(offset, bytes.len() as u64 - 10);
                assert_eq!(needed, 10);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn payload_flip_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.hype");
        write_shard(&path, &[rec(1), rec(2)], 2, ShardFlags::all()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[HEADER_LEN as usize + 9] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        let err = read_shard_all(&path).unwrap_err();
        assert!(matches!(err, HypeError::Checksum { .. }), "{err}");
    }
}
