//! Hyperbolic entailment filtering for image-text embedding datasets.
//!
//! Samples are scored by how specific their image and text are (mean
//! entailment-cone loss against reference sets of the opposite modality),
//! how well they align in hyperbolic space and under CLIP, and whether the
//! image falls in an ImageNet cluster. The combined score ranks samples for
//! top-fraction subset selection.
//!
//! Modules:
//! - [`lorentz`]: closed-form Lorentz-model kernels.
//! - [`specificity`]: reference sets and `eps_i` / `eps_t`.
//! - [`scoring`]: the combined score, statistics and selection.
//! - [`io`]: shard files, manifests, archives, CSV and histograms.
//! - [`trainer`]: a toy hyperbolic contrastive trainer with analytic gradients.

pub mod error;
pub mod io;
pub mod lorentz;
pub mod rank;
pub mod record;
pub mod scoring;
pub mod selfcheck;
pub mod specificity;
pub mod synth;
pub mod trainer;

pub use error::{HypeError, Result};
pub use lorentz::{ConeParams, Curvature, LorentzPoint, SpaceVector};
pub use record::{Modality, PairRecord, RecordSource};
pub use scoring::{CinMode, CombineMode, FilterSelection, SampleMetrics, ScoreTable, WeightVector};
pub use specificity::{PipelineConfig, ReferenceSet, SpecificityResult};
