//! Desk-scale hyperbolic contrastive training.
//!
//! Free embedding tables stand in for the image and text encoders. Each
//! tangent parameter is scaled by a learnable `alpha`, exp-mapped to the
//! hyperboloid, and trained with a symmetric InfoNCE loss whose logits are
//! negative Lorentzian distances over a learnable temperature, plus the
//! entailment-cone loss on every positive pair. Gradients are derived by
//! hand and checked against central finite differences.

mod corpus;
mod gradcheck;
mod loss;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use corpus::{gen_synthetic_hierarchy, SyntheticCorpus, TextLabel};
pub use gradcheck::{finite_diff_against, finite_diff_check, FiniteDiffReport, FD_STEP};
pub use loss::{forward_points, grad_total_loss, total_loss, LossBreakdown};

use crate::error::{HypeError, Result};
use crate::lorentz::{ConeParams, Curvature};
use crate::record::{Modality, PairRecord};
use crate::specificity::{epsilon_text, tangent_cosine, ReferenceSet};

/// Lower bound on the temperature, applied after every update.
pub const MIN_TEMPERATURE: f64 = 0.01;
pub const INITIAL_TEMPERATURE: f64 = 0.07;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub dim: usize,
    pub curvature: Curvature,
    pub cone: ConeParams,
    pub lambda_entail: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Standard deviation of the initial tangent parameters.
    pub init_scale: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            dim: 8,
            curvature: Curvature::default(),
            cone: ConeParams::default(),
            lambda_entail: 1.0,
            learning_rate: 0.5,
            steps: 2000,
            batch_size: 64,
            seed: 0,
            init_scale: 1.0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(HypeError::InvalidArgument(format!("trainer config: {what}")));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if !(self.lambda_entail.is_finite() && self.lambda_entail >= 0.0) {
            return bad("lambda_entail must be finite and non-negative");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return bad("init scale must be finite and non-negative");
        }
        Ok(())
    }
}

/// Trainable parameters. Gradients use the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    /// `texts x dim`, row-major.
    pub text_params: Vec<f64>,
    /// `images x dim`, row-major.
    pub image_params: Vec<f64>,
    /// `alpha = exp(log_alpha)` keeps the scale positive.
    pub log_alpha: f64,
    /// `tau = exp(log_temperature)`.
    pub log_temperature: f64,
}

impl EmbeddingTable {
    /// Gaussian tangent parameters, `alpha = sqrt(1/dim)`, `tau = 0.07`.
    pub fn init(texts: usize, images: usize, cfg: &TrainerConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut draw = |k: usize| -> Vec<f64> {
            (0..k)
                .map(|_| cfg.init_scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect()
        };
        let text_params = draw(texts * cfg.dim);
        let image_params = draw(images * cfg.dim);
        EmbeddingTable {
            dim: cfg.dim,
            text_params,
            image_params,
            log_alpha: (1.0 / cfg.dim as f64).sqrt().ln(),
            log_temperature: INITIAL_TEMPERATURE.ln(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        EmbeddingTable {
            dim: self.dim,
            text_params: vec![0.0; self.text_params.len()],
            image_params: vec![0.0; self.image_params.len()],
            log_alpha: 0.0,
            log_temperature: 0.0,
        }
    }

    pub fn texts(&self) -> usize {
        self.text_params.len() / self.dim
    }

    pub fn images(&self) -> usize {
        self.image_params.len() / self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn temperature(&self) -> f64 {
        self.log_temperature.exp()
    }

    pub fn text(&self, i: usize) -> &[f64] {
        &self.text_params[i * self.dim..(i + 1) * self.dim]
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.image_params[i * self.dim..(i + 1) * self.dim]
    }

    /// Number of scalar parameters (both tables, alpha, temperature).
    pub fn num_params(&self) -> usize {
        self.text_params.len() + self.image_params.len() + 2
    }

    /// Flat parameter access in the order texts, images, alpha, temperature.
    pub fn param_mut(&mut self, k: usize) -> &mut f64 {
        let t = self.text_params.len();
        let i = self.image_params.len();
        match k {
            k if k < t => &mut self.text_params[k],
            k if k < t + i => &mut self.image_params[k - t],
            k if k == t + i => &mut self.log_alpha,
            k if k == t + i + 1 => &mut self.log_temperature,
            _ => panic!("parameter index {k} out of range"),
        }
    }

    pub fn param(&self, k: usize) -> f64 {
        let t = self.text_params.len();
        let i = self.image_params.len();
        match k {
            k if k < t => self.text_params[k],
            k if k < t + i => self.image_params[k - t],
            k if k == t + i => self.log_alpha,
            k if k == t + i + 1 => self.log_temperature,
            _ => panic!("parameter index {k} out of range"),
        }
    }

    /// Human-readable name of flat parameter `k`.
    pub fn param_name(&self, k: usize) -> String {
        let t = self.text_params.len();
        let i = self.image_params.len();
        match k {
            k if k < t => format!("text[{}][{}]", k / self.dim, k % self.dim),
            k if k < t + i => format!("image[{}][{}]", (k - t) / self.dim, (k - t) % self.dim),
            k if k == t + i => "log_alpha".into(),
            _ => "log_temperature".into(),
        }
    }

    fn all_finite(&self) -> bool {
        self.text_params
            .iter()
            .chain(&self.image_params)
            .chain([&self.log_alpha, &self.log_temperature])
            .all(|v| v.is_finite())
    }

    /// Scaled tangent `alpha * v` of a text, i.e. the encoder-output analog.
    pub fn scaled_text(&self, i: usize) -> Vec<f64> {
        let a = self.alpha();
        self.text(i).iter().map(|v| a * v).collect()
    }

    pub fn scaled_image(&self, i: usize) -> Vec<f64> {
        let a = self.alpha();
        self.image(i).iter().map(|v| a * v).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub contrastive: f64,
    pub entailment: f64,
    pub total: f64,
    pub temperature: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub table: EmbeddingTable,
    /// One row per step: the batch loss before that step's update.
    pub trace: Vec<TraceRow>,
    /// Loss over every positive pair before and after training.
    pub initial: LossBreakdown,
    pub final_loss: LossBreakdown,
}

/// Plain gradient descent. Batches are drawn by shuffling the positive
/// pairs once per epoch with a seeded generator; a batch size at least the
/// number of pairs means full-batch descent.
pub fn train(cfg: &TrainerConfig, corpus: &SyntheticCorpus) -> Result<TrainOutcome> {
    cfg.validate()?;
    corpus.validate()?;
    let mut table = EmbeddingTable::init(corpus.num_texts(), corpus.num_images(), cfg);
    let initial = total_loss(&table, &corpus.pairs, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<(usize, usize)> = corpus.pairs.clone();
    let mut cursor = order.len();
    let mut trace = Vec::with_capacity(cfg.steps);
    let min_log_tau = MIN_TEMPERATURE.ln();
    for step in 0..cfg.steps {
        let batch: Vec<(usize, usize)> = if cfg.batch_size >= order.len() {
            corpus.pairs.clone()
        } else {
            if cursor + cfg.batch_size > order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            cursor += cfg.batch_size;
            order[cursor - cfg.batch_size..cursor].to_vec()
        };
        let (loss, grad) = grad_total_loss(&table, &batch, cfg)?;
        if !loss.total.is_finite() {
            return Err(HypeError::Diverged { step });
        }
        trace.push(TraceRow {
            step,
            contrastive: loss.contrastive,
            entailment: loss.entailment,
            total: loss.total,
            temperature: table.temperature(),
            alpha: table.alpha(),
        });
        for k in 0..table.num_params() {
            *table.param_mut(k) -= cfg.learning_rate * grad.param(k);
        }
        table.log_temperature = table.log_temperature.max(min_log_tau);
        if !table.all_finite() {
            return Err(HypeError::Diverged { step });
        }
    }
    let final_loss = total_loss(&table, &corpus.pairs, cfg)?;
    if !final_loss.total.is_finite() {
        return Err(HypeError::Diverged { step: cfg.steps });
    }
    Ok(TrainOutcome {
        table,
        trace,
        initial,
        final_loss,
    })
}

/// One record per positive pair, with the scaled tangents as embeddings, so
/// the trained geometry can be fed to the specificity pipeline. The record
/// id is the pair index; `clip_cos` is the tangent cosine.
pub fn export_records(table: &EmbeddingTable, corpus: &SyntheticCorpus) -> Vec<PairRecord> {
    corpus
        .pairs
        .iter()
        .enumerate()
        .map(|(k, &(t, i))| {
            let text = table.scaled_text(t);
            let image = table.scaled_image(i);
            PairRecord {
                id: k as u64,
                clip_cos: tangent_cosine(&text, &image) as f32,
                text_tangent: text.iter().map(|&v| v as f32).collect(),
                image_tangent: image.iter().map(|&v| v as f32).collect(),
                cin_flag: false,
            }
        })
        .collect()
}

/// Geometry summary of a trained table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HierarchyReport {
    pub mean_text_norm: f64,
    pub mean_image_norm: f64,
    pub mean_generic_norm: f64,
    pub mean_specific_norm: f64,
    /// `eps_t` of every text against a reference set of all images.
    pub text_eps: Vec<f64>,
    /// (generic, specific) caption pairs with the generic one strictly lower.
    pub ordered_pairs: usize,
    pub total_pairs: usize,
}

impl HierarchyReport {
    pub fn ordered_fraction(&self) -> f64 {
        if self.total_pairs == 0 {
            return 0.0;
        }
        self.ordered_pairs as f64 / self.total_pairs as f64
    }
}

pub fn hierarchy_report(
    table: &EmbeddingTable,
    corpus: &SyntheticCorpus,
    cfg: &TrainerConfig,
) -> Result<HierarchyReport> {
    let (texts, images) = forward_points(table, cfg.curvature);
    let mean_norm = |idx: &mut dyn Iterator<Item = &crate::lorentz::LorentzPoint>| {
        let (sum, n) = idx.fold((0.0, 0usize), |(s, n), p| (s + p.space_norm(), n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    };
    let generic = corpus.texts_with_label(TextLabel::Generic);
    let specific = corpus.texts_with_label(TextLabel::Specific);
    let m = images.len();
    let refs = ReferenceSet::new(Modality::Image, images.clone(), (0..m as u64).collect(), m)?;
    let text_eps = texts
        .iter()
        .map(|t| epsilon_text(t, &refs, cfg.curvature, cfg.cone))
        .collect::<Result<Vec<_>>>()?;
    let mut ordered_pairs = 0;
    for &g in &generic {
        ordered_pairs += specific.iter().filter(|&&s| text_eps[g] < text_eps[s]).count();
    }
    Ok(HierarchyReport {
        mean_text_norm: mean_norm(&mut texts.iter()),
        mean_image_norm: mean_norm(&mut images.iter()),
        mean_generic_norm: mean_norm(&mut generic.iter().map(|&t| &texts[t])),
        mean_specific_norm: mean_norm(&mut specific.iter().map(|&t| &texts[t])),
        text_eps,
        ordered_pairs,
        total_pairs: generic.len() * specific.len(),
    })
}
