//! Persisted reference sets.
//!
//! ```text
//! magic      5 bytes "HYPR1"
//! version    u16
//! dim        u32
//! curvature  f64
//! k          f64     aperture constant
//! n_aligned  u64
//! 2 x section (image set, then text set):
//!   modality u8      0 = image, 1 = text
//!   m        u64
//!   ids      m x u64
//!   points   m x (dim + 1) x f32   space coordinates, then time
//! crc32c     u32     over every preceding byte
//! ```
//!
//! Points are reloaded from their space coordinates; the time coordinate is
//! recomputed in `f64` so reloaded points sit exactly on the manifold.

use std::path::Path;

use crate::error::{HypeError, Result};
use crate::lorentz::{lift, ConeParams, Curvature, SpaceVector};
use crate::record::Modality;
use crate::specificity::ReferenceSet;

pub const ARCHIVE_MAGIC: &[u8; 5] = b"HYPR1";
pub const ARCHIVE_VERSION: u16 = 1;

/// Both reference sets plus the geometry they were built with.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceArchive {
    pub curvature: Curvature,
    pub cone: ConeParams,
    pub images: ReferenceSet,
    pub texts: ReferenceSet,
}

impl ReferenceArchive {
    pub fn dim(&self) -> usize {
        self.images.dim().or(self.texts.dim()).unwrap_or(0)
    }
}

pub fn write_reference_archive(path: &Path, archive: &ReferenceArchive) -> Result<()> {
    let dim = archive.dim();
    let mut buf = Vec::new();
    buf.extend_from_slice(ARCHIVE_MAGIC);
    buf.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&archive.curvature.value().to_le_bytes());
    buf.extend_from_slice(&archive.cone.k().to_le_bytes());
    buf.extend_from_slice(&(archive.images.n_aligned as u64).to_le_bytes());
    for (set, want) in [(&archive.images, Modality::Image), (&archive.texts, Modality::Text)] {
        if set.modality != want {
            return Err(HypeError::InvalidArgument(format!(
                "archive slot expects a {want} set, got {}",
                set.modality
            )));
        }
        buf.push(match set.modality {
            Modality::Image => 0,
            Modality::Text => 1,
        });
        buf.extend_from_slice(&(set.m() as u64).to_le_bytes());
        for id in &set.source_ids {
            buf.extend_from_slice(&id.to_le_bytes());
        }
        for p in &set.points {
            if p.dim() != dim {
                return Err(HypeError::InvalidInput("reference dims differ".into()));
            }
            for &v in p.space() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
            buf.extend_from_slice(&(p.time() as f32).to_le_bytes());
        }
    }
    let crc = crc32c::crc32c(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, buf).map_err(|e| HypeError::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(HypeError::Truncated {
                path: self.path.into(),
                offset: self.bytes.len() as u64,
                needed: (n - (self.bytes.len() - self.pos)) as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn format_err(&self, offset: usize, reason: impl Into<String>) -> HypeError {
        HypeError::Format {
            path: self.path.into(),
            offset: offset as u64,
            reason: reason.into(),
        }
    }
}

pub fn read_reference_archive(path: &Path) -> Result<ReferenceArchive> {
    let bytes = std::fs::read(path).map_err(|e| HypeError::io(path, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if cur.take(5)? != ARCHIVE_MAGIC {
        return Err(HypeError::BadMagic {
            path: path.into(),
            offset: 0,
        });
    }
    let version = cur.u16()?;
    if version != ARCHIVE_VERSION {
        return Err(HypeError::UnsupportedVersion {
            path: path.into(),
            found: version,
            expected: ARCHIVE_VERSION,
        });
    }
    if bytes.len() < 4 {
        return Err(cur.format_err(0, "file too short"));
    }
    let body_len = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
    let computed = crc32c::crc32c(&bytes[..body_len]);
    if stored != computed {
        return Err(HypeError::Checksum {
            path: path.into(),
            offset: body_len as u64,
            stored,
            computed,
        });
    }
    let dim = cur.u32()? as usize;
    let curvature = Curvature::new(cur.f64()?).map_err(|e| cur.format_err(11, e.to_string()))?;
    let cone = ConeParams::new(cur.f64()?).map_err(|e| cur.format_err(19, e.to_string()))?;
    let n_aligned = cur.u64()? as usize;

    let mut read_set = |want: Modality| -> Result<ReferenceSet> {
        let at = cur.pos;
        let modality = match cur.u8()? {
            0 => Modality::Image,
            1 => Modality::Text,
            other => return Err(cur.format_err(at, format!("unknown modality tag {other}"))),
        };
        if modality != want {
            return Err(cur.format_err(at, format!("expected the {want} section")));
        }
        let m = cur.u64()? as usize;
        if m > body_len {
            return Err(cur.format_err(at + 1, format!("implausible set size {m}")));
        }
        let ids = (0..m).map(|_| cur.u64()).collect::<Result<Vec<_>>>()?;
        let mut points = Vec::with_capacity(m);
        for _ in 0..m {
            let at = cur.pos;
            let space = (0..dim).map(|_| cur.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
            let time = cur.f32()?;
            if !(time.is_finite() && time > 0.0) {
                return Err(cur.format_err(at, "non-positive time coordinate"));
            }
            let space = SpaceVector::new(space).map_err(|e| cur.format_err(at, e.to_string()))?;
            points.push(lift(&space, curvature));
        }
        ReferenceSet::new(modality, points, ids, n_aligned)
    };
    let images = read_set(Modality::Image)?;
    let texts = read_set(Modality::Text)?;
    if cur.pos != body_len {
        return Err(cur.format_err(cur.pos, "unexpected bytes before the checksum"));
    }
    Ok(ReferenceArchive {
        curvature,
        cone,
        images,
        texts,
    })
}
