use serde::{Deserialize, Serialize};

use crate::error::{HypeError, Result};

/// One image-text sample: encoder tangent embeddings plus the precomputed
/// CLIP cosine and ImageNet-cluster membership flag.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub id: u64,
    pub text_tangent: Vec<f32>,
    pub image_tangent: Vec<f32>,
    pub clip_cos: f32,
    pub cin_flag: bool,
}

impl PairRecord {
    pub fn dim(&self) -> usize {
        self.text_tangent.len()
    }

    pub fn tangent(&self, modality: Modality) -> &[f32] {
        match modality {
            Modality::Text => &self.text_tangent,
            Modality::Image => &self.image_tangent,
        }
    }

    /// Checks finiteness and that both embeddings have `dim` coordinates.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.text_tangent.len() != dim || self.image_tangent.len() != dim {
            return Err(HypeError::InvalidInput(format!(
                "record {}: embedding dims ({}, {}) do not match dataset dim {dim}",
                self.id,
                self.text_tangent.len(),
                self.image_tangent.len()
            )));
        }
        let finite = self
            .text_tangent
            .iter()
            .chain(&self.image_tangent)
            .all(|v| v.is_finite());
        if !finite || !self.clip_cos.is_finite() {
            return Err(HypeError::InvalidInput(format!(
                "record {}: non-finite value",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

impl Modality {
    pub fn opposite(self) -> Modality {
        match self {
            Modality::Text => Modality::Image,
            Modality::Image => Modality::Text,
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Modality::Text => f.write_str("text"),
            Modality::Image => f.write_str("image"),
        }
    }
}

/// A dataset that can be scanned more than once in fixed-size chunks.
///
/// Reference-set construction needs two passes (alignment ranking, then
/// loss ranking), so a plain iterator is not enough. Chunks must arrive in
/// the same order on every scan.
pub trait RecordSource: Sync {
    fn for_each_chunk(
        &self,
        chunk_size: usize,
        f: &mut dyn FnMut(&[PairRecord]) -> Result<()>,
    ) -> Result<()>;
}

impl RecordSource for [PairRecord] {
    fn for_each_chunk(
        &self,
        chunk_size: usize,
        f: &mut dyn FnMut(&[PairRecord]) -> Result<()>,
    ) -> Result<()> {
        for chunk in self.chunks(chunk_size.max(1)) {
            f(chunk)?;
        }
        Ok(())
    }
}

impl RecordSource for Vec<PairRecord> {
    fn for_each_chunk(
        &self,
        chunk_size: usize,
        f: &mut dyn FnMut(&[PairRecord]) -> Result<()>,
    ) -> Result<()> {
        self.as_slice().for_each_chunk(chunk_size, f)
    }
}
