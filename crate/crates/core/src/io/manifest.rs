use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::shard::{read_shard, shard_summary};
use crate::error::{HypeError, Result};
use crate::record::{PairRecord, RecordSource};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardEntry {
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub count: u64,
    pub crc32c: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dim: u32,
    pub total_count: u64,
    pub shards: Vec<ShardEntry>,
    pub created_by: String,
    pub created_unix: u64,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Manifest {
    /// Scans `shards` (verifying each) and records their counts and
    /// checksums. Paths are stored relative to `base_dir` when possible.
    pub fn build(shards: &[PathBuf], base_dir: &Path) -> Result<Self> {
        if shards.is_empty() {
            return Err(HypeError::InvalidArgument("manifest needs at least one shard".into()));
        }
        let summaries = shards
            .par_iter()
            .map(|p| shard_summary(p).map(|s| (p, s)))
            .collect::<Result<Vec<_>>>()?;
        let dim = summaries[0].1 .0.dim;
        let mut entries = Vec::with_capacity(shards.len());
        for (path, (header, crc)) in summaries {
            if header.dim != dim {
                return Err(HypeError::DataIntegrity(format!(
                    "{}: dim {} differs from dataset dim {dim}",
                    path.display(),
                    header.dim
                )));
            }
            let rel = path.strip_prefix(base_dir).map(Path::to_path_buf).unwrap_or_else(|_| path.clone());
            entries.push(ShardEntry {
                path: rel,
                count: header.count,
                crc32c: crc,
            });
        }
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            dim,
            total_count: entries.iter().map(|e| e.count).sum(),
            shards: entries,
            created_by: format!("hype {}", env!("CARGO_PKG_VERSION")),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            base_dir: base_dir.to_path_buf(),
        };
        manifest.validate(Path::new("<new manifest>"))?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HypeError::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(|source| HypeError::Json {
            path: path.into(),
            source,
        })?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate(path)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| HypeError::Json {
            path: path.into(),
            source,
        })?;
        std::fs::write(path, text + "\n").map_err(|e| HypeError::io(path, e))
    }

    fn validate(&self, path: &Path) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(HypeError::Format {
                path: path.into(),
                offset: 0,
                reason: format!("unsupported manifest version {}", self.version),
            });
        }
        let sum: u64 = self.shards.iter().map(|s| s.count).sum();
        if sum != self.total_count {
            return Err(HypeError::DataIntegrity(format!(
                "{}: total_count {} but shards hold {sum}",
                path.display(),
                self.total_count
            )));
        }
        if self.dim == 0 {
            return Err(HypeError::DataIntegrity(format!("{}: dim is 0", path.display())));
        }
        Ok(())
    }

    pub fn shard_paths(&self) -> Vec<PathBuf> {
        self.shards.iter().map(|s| self.base_dir.join(&s.path)).collect()
    }

    /// Checks every shard's header against its manifest entry.
    pub fn check_headers(&self) -> Result<()> {
        for (entry, path) in self.shards.iter().zip(self.shard_paths()) {
            let reader = read_shard(&path)?;
            let h = reader.header();
            if h.dim != self.dim || h.count != entry.count {
                return Err(HypeError::DataIntegrity(format!(
                    "{}: header (dim {}, count {}) disagrees with manifest (dim {}, count {})",
                    path.display(),
                    h.dim,
                    h.count,
                    self.dim,
                    entry.count
                )));
            }
        }
        Ok(())
    }

    /// Every record in manifest order. Shards are decoded in parallel.
    pub fn load_records(&self) -> Result<Vec<PairRecord>> {
        self.check_headers()?;
        let parts = self
            .shards
            .par_iter()
            .zip(self.shard_paths())
            .map(|(entry, path)| read_verified(&path, entry.crc32c))
            .collect::<Result<Vec<_>>>()?;
        Ok(parts.into_iter().flatten().collect())
    }
}

fn read_verified(path: &Path, expected_crc: u32) -> Result<Vec<PairRecord>> {
    let mut reader = read_shard(path)?;
    let records = reader.by_ref().collect::<Result<Vec<_>>>()?;
    if reader.checksum() != expected_crc {
        return Err(HypeError::DataIntegrity(format!(
            "{}: checksum {:#010x} does not match manifest entry {:#010x}",
            path.display(),
            reader.checksum(),
            expected_crc
        )));
    }
    Ok(records)
}

/// A dataset spread over shard files, scanned lazily shard by shard.
#[derive(Debug, Clone)]
pub struct ShardSet {
    paths: Vec<PathBuf>,
    /// Manifest checksum per shard, when known.
    expected_crc: Vec<Option<u32>>,
}

impl ShardSet {
    pub fn from_paths(paths: Vec<PathBuf>) -> Self {
        let n = paths.len();
        ShardSet {
            paths,
            expected_crc: vec![None; n],
        }
    }

    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        m.check_headers()?;
        Ok(ShardSet {
            paths: m.shard_paths(),
            expected_crc: m.shards.iter().map(|s| Some(s.crc32c)).collect(),
        })
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }
}

impl RecordSource for ShardSet {
    fn for_each_chunk(
        &self,
        chunk_size: usize,
        f: &mut dyn FnMut(&[PairRecord]) -> Result<()>,
    ) -> Result<()> {
        let chunk_size = chunk_size.max(1);
        let mut buf = Vec::with_capacity(chunk_size.min(1 << 16));
        for (path, expected) in self.paths.iter().zip(&self.expected_crc) {
            let mut reader = read_shard(path)?;
            for r in reader.by_ref() {
                buf.push(r?);
                if buf.len() == chunk_size {
                    f(&buf)?;
                    buf.clear();
                }
            }
            if let Some(crc) = expected {
                if reader.checksum() != *crc {
                    return Err(HypeError::DataIntegrity(format!(
                        "{}: checksum does not match manifest",
                        path.display()
                    )));
                }
            }
        }
        if !buf.is_empty() {
            f(&buf)?;
        }
        Ok(())
    }
}
