//! Shared fixtures for the benchmarks.

use hype_core::lorentz::exp_map_origin_f32;
use hype_core::specificity::build_reference_sets;
use hype_core::synth::{synthetic_records, SynthSpec};
use hype_core::{Curvature, LorentzPoint, PairRecord, PipelineConfig, ReferenceSet};

pub const SEED: u64 = 7;

/// Text and image points of `count` synthetic pairs.
pub fn point_pairs(count: usize, dim: usize) -> Vec<(LorentzPoint, LorentzPoint)> {
    let curv = Curvature::default();
    synthetic_records(&SynthSpec::new(count, dim, SEED))
        .iter()
        .map(|r| {
            (
                exp_map_origin_f32(&r.text_tangent, curv).expect("non-empty tangent"),
                exp_map_origin_f32(&r.image_tangent, curv).expect("non-empty tangent"),
            )
        })
        .collect()
}

/// A synthetic dataset with its image and text reference sets.
pub struct Fixture {
    pub records: Vec<PairRecord>,
    pub s_i: ReferenceSet,
    pub s_t: ReferenceSet,
}

pub fn fixture(count: usize, dim: usize, n: usize, m: usize) -> Fixture {
    let records = synthetic_records(&SynthSpec::new(count, dim, SEED));
    let (s_i, s_t) = build_reference_sets(&records, n, m, &PipelineConfig::default()).expect("reference sets");
    Fixture { records, s_i, s_t }
}
