use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HypeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextLabel {
    /// Describes a whole category ("a dog").
    Generic,
    /// Describes exactly one image.
    Specific,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticCorpus {
    /// Positive `(text, image)` pairs.
    pub pairs: Vec<(usize, usize)>,
    pub text_labels: Vec<TextLabel>,
    /// Category of each image.
    pub image_category: Vec<usize>,
}

impl SyntheticCorpus {
    pub fn num_texts(&self) -> usize {
        self.text_labels.len()
    }

    pub fn num_images(&self) -> usize {
        self.image_category.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(HypeError::InvalidInput("corpus has no positive pairs".into()));
        }
        let mut covered = vec![false; self.num_images()];
        for &(t, i) in &self.pairs {
            if t >= self.num_texts() || i >= self.num_images() {
                return Err(HypeError::InvalidInput(format!("pair ({t}, {i}) is out of range")));
            }
            covered[i] = true;
        }
        if let Some(i) = covered.iter().position(|&c| !c) {
            return Err(HypeError::InvalidInput(format!("image {i} has no positive text")));
        }
        Ok(())
    }

    pub fn texts_with_label(&self, label: TextLabel) -> Vec<usize> {
        (0..self.num_texts()).filter(|&t| self.text_labels[t] == label).collect()
    }
}

/// Images are grouped into `categories` of `images_per_category`. Text `j`
/// for `j < categories * images_per_category` is the specific caption of
/// image `j`; the remaining `categories` texts are generic captions, each
/// paired with every image of its category. Pair order is shuffled by
/// `seed`.
pub fn gen_synthetic_hierarchy(seed: u64, categories: usize, images_per_category: usize) -> SyntheticCorpus {
    let images = categories * images_per_category;
    let mut pairs = Vec::with_capacity(2 * images);
    let mut image_category = Vec::with_capacity(images);
    for img in 0..images {
        let cat = img / images_per_category;
        image_category.push(cat);
        pairs.push((img, img));
        pairs.push((images + cat, img));
    }
    let mut text_labels = vec![TextLabel::Specific; images];
    text_labels.extend(std::iter::repeat(TextLabel::Generic).take(categories));
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    SyntheticCorpus {
        pairs,
        text_labels,
        image_category,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_arithmetic() {
        let c = gen_synthetic_hierarchy(3, 2, 4);
        assert_eq!(c.texts_with_label(TextLabel::Specific).len(), 8);
        assert_eq!(c.texts_with_label(TextLabel::Generic), vec![8, 9]);
        assert_eq!(c.pairs.len(), 16);
        c.validate().unwrap();
        for g in [8, 9] {
            let imgs: Vec<_> = c.pairs.iter().filter(|p| p.0 == g).map(|p| p.1).collect();
            assert_eq!(imgs.len(), 4);
            assert!(imgs.iter().all(|&i| c.image_category[i] == g - 8));
        }
        for s in 0..8 {
            assert_eq!(c.pairs.iter().filter(|p| p.0 == s).count(), 1);
        }
    }

    #[test]
    fn seeded() {
        assert_eq!(gen_synthetic_hierarchy(7, 3, 5), gen_synthetic_hierarchy(7, 3, 5));
        assert_ne!(gen_synthetic_hierarchy(7, 3, 5).pairs, gen_synthetic_hierarchy(8, 3, 5).pairs);
    }

    #[test]
    fn uncovered_image_rejected() {
        let mut c = gen_synthetic_hierarchy(0, 1, 4);
        c.pairs.retain(|p| p.1 != 2);
        assert!(c.validate().is_err());
    }
}
