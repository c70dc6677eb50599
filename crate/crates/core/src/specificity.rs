//! Reference-set construction and image/text specificity.
//!
//! A text's specificity `eps_t` is its mean entailment loss against the `M`
//! reference images; an image's `eps_i` is the mean loss of the `M`
//! reference texts against it. References are the samples whose embeddings
//! are least entailed by the best-aligned `N` pairs of the opposite modality.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HypeError, Result};
use crate::lorentz::{
    aperture_from_norm, dot, distance_kernel, entailment_loss, entailment_loss_kernel,
    exp_map_origin, exp_map_origin_f32, Degenerate, ConeParams, Curvature, LorentzPoint,
    SpaceVector,
};
use crate::rank::{rank_cmp, with_threads, TopK};
use crate::record::{Modality, PairRecord, RecordSource};
use crate::scoring::{cin_value, SampleMetrics};

/// Default probe-set size and reference-set size.
pub const DEFAULT_N: usize = 20_000;
pub const DEFAULT_M: usize = 20_000;

/// Largest dataset [`brute_force_specificity`] accepts.
pub const BRUTE_FORCE_LIMIT: usize = 256;

/// Geometry and parallelism settings shared by the batch passes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub curvature: Curvature,
    pub cone: ConeParams,
    /// Records handed to the worker pool at a time.
    pub chunk_size: usize,
    /// Worker count; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            curvature: Curvature::default(),
            cone: ConeParams::default(),
            chunk_size: 4096,
            threads: None,
        }
    }
}

/// The `M` most specific samples of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    pub modality: Modality,
    pub points: Vec<LorentzPoint>,
    pub source_ids: Vec<u64>,
    pub n_aligned: usize,
}

impl ReferenceSet {
    pub fn new(
        modality: Modality,
        points: Vec<LorentzPoint>,
        source_ids: Vec<u64>,
        n_aligned: usize,
    ) -> Result<Self> {
        if points.len() != source_ids.len() {
            return Err(HypeError::InvalidInput(format!(
                "{} points but {} ids",
                points.len(),
                source_ids.len()
            )));
        }
        let mut seen = HashSet::with_capacity(source_ids.len());
        if let Some(dup) = source_ids.iter().find(|id| !seen.insert(**id)) {
            return Err(HypeError::DataIntegrity(format!(
                "duplicate reference id {dup}"
            )));
        }
        if let Some(p) = points.first() {
            let dim = p.dim();
            if points.iter().any(|q| q.dim() != dim) {
                return Err(HypeError::InvalidInput("reference dims differ".into()));
            }
        }
        Ok(ReferenceSet {
            modality,
            points,
            source_ids,
            n_aligned,
        })
    }

    pub fn m(&self) -> usize {
        self.points.len()
    }

    pub fn dim(&self) -> Option<usize> {
        self.points.first().map(LorentzPoint::dim)
    }

    pub fn prepare(&self, curv: Curvature, cone: ConeParams) -> Result<PreparedPoints> {
        if self.points.is_empty() {
            return Err(HypeError::InvalidArgument("reference set is empty".into()));
        }
        Ok(PreparedPoints::from_points(
            self.points.iter().cloned().zip(self.source_ids.iter().copied()),
            curv,
            cone,
        ))
    }
}

/// Points of one modality laid out flat for the scoring loops, with the
/// per-point quantities the entailment loss needs precomputed.
#[derive(Debug, Clone)]
pub struct PreparedPoints {
    dim: usize,
    space: Vec<f64>,
    time: Vec<f64>,
    norm: Vec<f64>,
    aperture: Vec<f64>,
    ids: Vec<u64>,
    curv: Curvature,
}

impl PreparedPoints {
    fn from_points(
        points: impl IntoIterator<Item = (LorentzPoint, u64)>,
        curv: Curvature,
        cone: ConeParams,
    ) -> Self {
        let mut out = PreparedPoints {
            dim: 0,
            space: Vec::new(),
            time: Vec::new(),
            norm: Vec::new(),
            aperture: Vec::new(),
            ids: Vec::new(),
            curv,
        };
        for (p, id) in points {
            out.dim = p.dim();
            let norm = p.space_norm();
            out.space.extend_from_slice(p.space());
            out.time.push(p.time());
            out.norm.push(norm);
            out.aperture.push(aperture_from_norm(norm, curv, cone));
            out.ids.push(id);
        }
        out
    }

    fn from_records(records: &[PairRecord], modality: Modality, curv: Curvature, cone: ConeParams) -> Result<Self> {
        let points = records
            .iter()
            .map(|r| Ok((exp_map_origin_f32(r.tangent(modality), curv)?, r.id)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_points(points, curv, cone))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    #[inline]
    fn space(&self, j: usize) -> &[f64] {
        &self.space[j * self.dim..(j + 1) * self.dim]
    }

    fn check_dim(&self, p: &LorentzPoint) -> Result<()> {
        if p.dim() == self.dim {
            Ok(())
        } else {
            Err(HypeError::InvalidInput(format!(
                "candidate dim {} does not match reference dim {}",
                p.dim(),
                self.dim
            )))
        }
    }

    /// Mean loss of `text` (cone apex) against every stored image, summed in
    /// storage order.
    pub fn mean_loss_as_images(&self, text: &LorentzPoint, cone: ConeParams) -> Result<f64> {
        self.check_dim(text)?;
        let norm = text.space_norm();
        let aper = aperture_from_norm(norm, self.curv, cone);
        let mut sum = 0.0;
        for j in 0..self.len() {
            sum += entailment_loss_kernel(
                text.space(),
                text.time(),
                norm,
                aper,
                self.space(j),
                self.time[j],
                self.curv,
            )
            .map_err(|d| self.degenerate(d, j))?;
        }
        Ok(sum / self.len() as f64)
    }

    /// Mean loss of every stored text (cone apex) against `image`, summed in
    /// storage order.
    pub fn mean_loss_as_texts(&self, image: &LorentzPoint) -> Result<f64> {
        self.check_dim(image)?;
        let mut sum = 0.0;
        for j in 0..self.len() {
            sum += entailment_loss_kernel(
                self.space(j),
                self.time[j],
                self.norm[j],
                self.aperture[j],
                image.space(),
                image.time(),
                self.curv,
            )
            .map_err(|d| self.degenerate(d, j))?;
        }
        Ok(sum / self.len() as f64)
    }

    fn degenerate(&self, d: Degenerate, j: usize) -> HypeError {
        HypeError::DegenerateGeometry(format!(
            "{} (against point from sample {})",
            match d {
                Degenerate::ApexAtOrigin => "cone apex at the origin",
                Degenerate::Coincident => "coincident text and image points",
            },
            self.ids[j]
        ))
    }
}

fn with_sample<T>(id: u64, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        HypeError::DegenerateGeometry(msg) => {
            HypeError::DegenerateGeometry(format!("sample {id}: {msg}"))
        }
        other => other,
    })
}

/// Mean entailment loss of `candidate` against the opposite-modality
/// embeddings of `subset`.
///
/// A text candidate is the cone apex for every subset image; an image
/// candidate sits under the cone of every subset text.
pub fn avg_entailment_vs_subset(
    candidate: &LorentzPoint,
    candidate_modality: Modality,
    subset: &[PairRecord],
    curv: Curvature,
    cone: ConeParams,
) -> Result<f64> {
    if subset.is_empty() {
        return Err(HypeError::InvalidArgument("probe subset is empty".into()));
    }
    let probe = PreparedPoints::from_records(subset, candidate_modality.opposite(), curv, cone)?;
    match candidate_modality {
        Modality::Text => probe.mean_loss_as_images(candidate, cone),
        Modality::Image => probe.mean_loss_as_texts(candidate),
    }
}

/// The `n` best-aligned records by CLIP cosine, ties by ascending id.
pub fn top_aligned_subset(dataset: &(impl RecordSource + ?Sized), n: usize) -> Result<Vec<PairRecord>> {
    let scan = scan_aligned(dataset, n, 4096)?;
    if n == 0 || n > scan.total {
        return Err(HypeError::InvalidArgument(format!(
            "n = {n} must be between 1 and the dataset size {}",
            scan.total
        )));
    }
    Ok(scan.top)
}

struct AlignedScan {
    top: Vec<PairRecord>,
    total: usize,
    dim: usize,
}

fn scan_aligned(dataset: &(impl RecordSource + ?Sized), n: usize, chunk_size: usize) -> Result<AlignedScan> {
    let mut top = TopK::new(n);
    let mut seen = HashSet::new();
    let mut dim = None;
    dataset.for_each_chunk(chunk_size, &mut |chunk| {
        for r in chunk {
            let d = *dim.get_or_insert(r.dim());
            r.validate(d)?;
            if !seen.insert(r.id) {
                return Err(HypeError::DataIntegrity(format!("duplicate sample id {}", r.id)));
            }
            top.offer_with(f64::from(r.clip_cos), r.id, || r.clone());
        }
        Ok(())
    })?;
    Ok(AlignedScan {
        top: top.into_sorted().into_iter().map(|e| e.2).collect(),
        total: seen.len(),
        dim: dim.unwrap_or(0),
    })
}

/// Builds `(S_i, S_t)`: the `m` images and `m` texts with the highest mean
/// entailment loss against the top-`n` aligned pairs. Every sample in the
/// dataset is a candidate.
pub fn build_reference_sets(
    dataset: &(impl RecordSource + ?Sized),
    n: usize,
    m: usize,
    cfg: &PipelineConfig,
) -> Result<(ReferenceSet, ReferenceSet)> {
    let scan = scan_aligned(dataset, n, cfg.chunk_size)?;
    if scan.total == 0 {
        return Err(HypeError::InvalidArgument("dataset is empty".into()));
    }
    for (name, v) in [("n", n), ("m", m)] {
        if v == 0 || v > scan.total {
            return Err(HypeError::InvalidArgument(format!(
                "{name} = {v} must be between 1 and the dataset size {}",
                scan.total
            )));
        }
    }
    let probe_texts = PreparedPoints::from_records(&scan.top, Modality::Text, cfg.curvature, cfg.cone)?;
    let probe_images = PreparedPoints::from_records(&scan.top, Modality::Image, cfg.curvature, cfg.cone)?;

    let mut top_images: TopK<Vec<f32>> = TopK::new(m);
    let mut top_texts: TopK<Vec<f32>> = TopK::new(m);
    with_threads(cfg.threads, || {
        dataset.for_each_chunk(cfg.chunk_size, &mut |chunk| {
            let losses: Vec<(f64, f64)> = chunk
                .par_iter()
                .map(|r| {
                    let img = exp_map_origin_f32(&r.image_tangent, cfg.curvature)?;
                    let txt = exp_map_origin_f32(&r.text_tangent, cfg.curvature)?;
                    let img_loss = with_sample(r.id, probe_texts.mean_loss_as_texts(&img))?;
                    let txt_loss = with_sample(r.id, probe_images.mean_loss_as_images(&txt, cfg.cone))?;
                    Ok((img_loss, txt_loss))
                })
                .collect::<Result<_>>()?;
            for (r, (img_loss, txt_loss)) in chunk.iter().zip(losses) {
                top_images.offer_with(img_loss, r.id, || r.image_tangent.clone());
                top_texts.offer_with(txt_loss, r.id, || r.text_tangent.clone());
            }
            Ok(())
        })
    })?;

    let finish = |top: TopK<Vec<f32>>, modality| -> Result<ReferenceSet> {
        let (points, ids): (Vec<_>, Vec<_>) = top
            .into_sorted()
            .into_iter()
            .map(|(_, id, v)| Ok((exp_map_origin_f32(&v, cfg.curvature)?, id)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        ReferenceSet::new(modality, points, ids, n)
    };
    debug_assert!(scan.dim > 0);
    Ok((finish(top_images, Modality::Image)?, finish(top_texts, Modality::Text)?))
}

fn require_modality(set: &ReferenceSet, want: Modality) -> Result<()> {
    if set.modality == want {
        Ok(())
    } else {
        Err(HypeError::InvalidArgument(format!(
            "expected a {want} reference set, got {}",
            set.modality
        )))
    }
}

/// Text specificity: mean loss of `text` against the reference images.
pub fn epsilon_text(text: &LorentzPoint, s_i: &ReferenceSet, curv: Curvature, cone: ConeParams) -> Result<f64> {
    require_modality(s_i, Modality::Image)?;
    s_i.prepare(curv, cone)?.mean_loss_as_images(text, cone)
}

/// Image specificity: mean loss of the reference texts against `image`.
pub fn epsilon_image(image: &LorentzPoint, s_t: &ReferenceSet, curv: Curvature, cone: ConeParams) -> Result<f64> {
    require_modality(s_t, Modality::Text)?;
    s_t.prepare(curv, cone)?.mean_loss_as_texts(image)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecificityResult {
    pub id: u64,
    pub eps_t: f64,
    pub eps_i: f64,
}

fn prepare_pair(s_i: &ReferenceSet, s_t: &ReferenceSet, cfg: &PipelineConfig) -> Result<(PreparedPoints, PreparedPoints)> {
    require_modality(s_i, Modality::Image)?;
    require_modality(s_t, Modality::Text)?;
    Ok((
        s_i.prepare(cfg.curvature, cfg.cone)?,
        s_t.prepare(cfg.curvature, cfg.cone)?,
    ))
}

/// All five score terms for every record, in dataset order.
///
/// Each record's sums run over the references in their stored order, so
/// the output is identical for any chunk size or worker count.
pub fn compute_metrics(
    dataset: &(impl RecordSource + ?Sized),
    s_i: &ReferenceSet,
    s_t: &ReferenceSet,
    cfg: &PipelineConfig,
) -> Result<Vec<SampleMetrics>> {
    let (refs_i, refs_t) = prepare_pair(s_i, s_t, cfg)?;
    let mut out = Vec::new();
    with_threads(cfg.threads, || {
        dataset.for_each_chunk(cfg.chunk_size, &mut |chunk| {
            let part: Vec<SampleMetrics> = chunk
                .par_iter()
                .map(|r| {
                    let txt = exp_map_origin_f32(&r.text_tangent, cfg.curvature)?;
                    let img = exp_map_origin_f32(&r.image_tangent, cfg.curvature)?;
                    let eps_t = with_sample(r.id, refs_i.mean_loss_as_images(&txt, cfg.cone))?;
                    let eps_i = with_sample(r.id, refs_t.mean_loss_as_texts(&img))?;
                    if txt.dim() != img.dim() {
                        return Err(HypeError::InvalidInput(format!("record {}: dim mismatch", r.id)));
                    }
                    let neg_dl = -distance_kernel(txt.space(), txt.time(), img.space(), img.time(), cfg.curvature);
                    Ok(SampleMetrics {
                        id: r.id,
                        eps_i,
                        eps_t,
                        neg_dl,
                        clip_cos: f64::from(r.clip_cos),
                        cin_value: cin_value(r.cin_flag),
                    })
                })
                .collect::<Result<_>>()?;
            out.extend(part);
            Ok(())
        })
    })?;
    Ok(out)
}

/// `eps_t` and `eps_i` for every record, in dataset order.
pub fn compute_specificity(
    dataset: &(impl RecordSource + ?Sized),
    s_i: &ReferenceSet,
    s_t: &ReferenceSet,
    cfg: &PipelineConfig,
) -> Result<Vec<SpecificityResult>> {
    Ok(compute_metrics(dataset, s_i, s_t, cfg)?
        .into_iter()
        .map(|m| SpecificityResult {
            id: m.id,
            eps_t: m.eps_t,
            eps_i: m.eps_i,
        })
        .collect())
}

/// One step of [`convergence_diagnostic`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergencePoint {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(count)`; infinite for one value.
    pub std_error: f64,
}

/// Running mean and standard error after each prefix of `losses`.
pub fn convergence_diagnostic(losses: impl IntoIterator<Item = f64>) -> Vec<ConvergencePoint> {
    let mut count = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    losses
        .into_iter()
        .map(|x| {
            count += 1;
            let delta = x - mean;
            mean += delta / count as f64;
            m2 += delta * (x - mean);
            let std_error = if count < 2 {
                f64::INFINITY
            } else {
                (m2.max(0.0) / (count - 1) as f64).sqrt() / (count as f64).sqrt()
            };
            ConvergencePoint {
                count,
                mean,
                std_error,
            }
        })
        .collect()
}

/// Output of the exhaustive oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceSpecificity {
    pub results: Vec<SpecificityResult>,
    /// `S_i` ids in rank order.
    pub image_refs: Vec<u64>,
    /// `S_t` ids in rank order.
    pub text_refs: Vec<u64>,
}

/// Exhaustive specificity for small datasets: the full text-by-image loss
/// matrix from direct double loops, then every ranking and mean by
/// definition.
pub fn brute_force_specificity(
    dataset: &[PairRecord],
    n: usize,
    m: usize,
    curv: Curvature,
    cone: ConeParams,
) -> Result<BruteForceSpecificity> {
    let d = dataset.len();
    if d > BRUTE_FORCE_LIMIT {
        return Err(HypeError::TooLarge {
            size: d,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    if n == 0 || m == 0 || n > d || m > d {
        return Err(HypeError::InvalidArgument(format!(
            "n = {n} and m = {m} must be between 1 and the dataset size {d}"
        )));
    }
    let to_point = |v: &[f32]| -> Result<LorentzPoint> {
        Ok(exp_map_origin(&SpaceVector::from_f32(v)?, curv))
    };
    let texts: Vec<LorentzPoint> = dataset.iter().map(|r| to_point(&r.text_tangent)).collect::<Result<_>>()?;
    let images: Vec<LorentzPoint> = dataset.iter().map(|r| to_point(&r.image_tangent)).collect::<Result<_>>()?;

    // loss[t][i] = L_e(text t, image i)
    let mut loss = vec![vec![0.0; d]; d];
    for (t, text) in texts.iter().enumerate() {
        for (i, image) in images.iter().enumerate() {
            loss[t][i] = with_sample(dataset[t].id, entailment_loss(text, image, curv, cone))?;
        }
    }

    let ranked = |score: &dyn Fn(usize) -> f64| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..d).collect();
        idx.sort_by(|&a, &b| rank_cmp(score(a), dataset[a].id, score(b), dataset[b].id));
        idx
    };
    let probe: Vec<usize> = ranked(&|k| f64::from(dataset[k].clip_cos))[..n].to_vec();
    let image_avg = |i: usize| probe.iter().map(|&t| loss[t][i]).sum::<f64>() / n as f64;
    let text_avg = |t: usize| probe.iter().map(|&i| loss[t][i]).sum::<f64>() / n as f64;
    let s_i: Vec<usize> = ranked(&image_avg)[..m].to_vec();
    let s_t: Vec<usize> = ranked(&text_avg)[..m].to_vec();

    let results = (0..d)
        .map(|k| SpecificityResult {
            id: dataset[k].id,
            eps_t: s_i.iter().map(|&i| loss[k][i]).sum::<f64>() / m as f64,
            eps_i: s_t.iter().map(|&t| loss[t][k]).sum::<f64>() / m as f64,
        })
        .collect();
    Ok(BruteForceSpecificity {
        results,
        image_refs: s_i.iter().map(|&k| dataset[k].id).collect(),
        text_refs: s_t.iter().map(|&k| dataset[k].id).collect(),
    })
}

/// Euclidean cosine between the two tangent embeddings of a record; a
/// stand-in alignment score for synthetic data.
pub fn tangent_cosine(text: &[f64], image: &[f64]) -> f64 {
    let den = (dot(text, text) * dot(image, image)).sqrt();
    if den > 0.0 {
        (dot(text, image) / den).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lorentz::{angle_oracle, half_aperture, lift};

    fn rec(id: u64, text: [f32; 2], image: [f32; 2], clip: f32) -> PairRecord {
        PairRecord {
            id,
            text_tangent: text.to_vec(),
            image_tangent: image.to_vec(),
            clip_cos: clip,
            cin_flag: false,
        }
    }

    fn fixture6() -> Vec<PairRecord> {
        vec![
            rec(10, [0.25, 0.125], [1.125, 0.375], 0.30),
            rec(11, [0.875, -0.25], [0.25, 1.25], 0.10),
            rec(12, [-0.375, 0.5], [-1.25, 0.875], 0.50),
            rec(13, [0.125, -0.75], [0.5, -1.375], 0.50),
            rec(14, [1.25, 0.625], [-0.25, -1.0], 0.20),
            rec(15, [-0.75, -0.125], [1.625, -0.25], 0.05),
        ]
    }

    fn c1() -> Curvature {
        Curvature::default()
    }

    #[test]
    fn top_aligned_examples() {
        let data = vec![rec(1, [0.1, 0.0], [0.2, 0.0], 0.9), rec(2, [0.1, 0.0], [0.2, 0.0], 0.1), rec(3, [0.1, 0.0], [0.2, 0.0], 0.5)];
        let ids: Vec<u64> = top_aligned_subset(&data, 2).unwrap().iter().map(|r| r.id).collect();
        assert_eq!(ids, vec![1, 3]);
        let all: Vec<u64> = top_aligned_subset(&data, 3).unwrap().iter().map(|r| r.id).collect();
        assert_eq!(all, vec![1, 3, 2]);
        assert!(top_aligned_subset(&data, 4).is_err());

        let tied = vec![rec(9, [0.1, 0.0], [0.2, 0.0], 0.5), rec(4, [0.1, 0.0], [0.2, 0.0], 0.5)];
        assert_eq!(top_aligned_subset(&tied, 1).unwrap()[0].id, 4);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let data = vec![rec(1, [0.1, 0.0], [0.2, 0.0], 0.9), rec(1, [0.1, 0.0], [0.2, 0.0], 0.1)];
        assert!(matches!(top_aligned_subset(&data, 1), Err(HypeError::DataIntegrity(_))));
    }

    #[test]
    fn avg_vs_subset_frozen() {
        // Text candidate against four subset images; per-image losses from a
        // high-precision law-of-cosines evaluation.
        let subset = vec![
            rec(1, [0.1, 0.0], [1.2, 0.2], 0.0),
            rec(2, [0.1, 0.0], [0.0, 1.0], 0.0),
            rec(3, [0.1, 0.0], [-1.0, 0.3], 0.0),
            rec(4, [0.1, 0.0], [0.7, -0.9], 0.0),
        ];
        // The subset stores f32; lift the same widened values.
        let as_point = |v: [f64; 2]| lift(&SpaceVector::new(v.to_vec()).unwrap(), c1());
        let text = as_point([0.6, 0.1]);
        // Subset points are exp-mapped; the oracle recomputes each angle from
        // side lengths.
        let losses: Vec<f64> = subset
            .iter()
            .map(|r| {
                let y = exp_map_origin_f32(&r.image_tangent, c1()).unwrap();
                let ext = angle_oracle(&text, &y, c1()).unwrap();
                (ext - half_aperture(&text, c1(), ConeParams::default())).max(0.0)
            })
            .collect();
        let got = avg_entailment_vs_subset(&text, Modality::Text, &subset, c1(), ConeParams::default()).unwrap();
        assert!((got - losses.iter().sum::<f64>() / 4.0).abs() < 1e-9);

        let one = avg_entailment_vs_subset(&text, Modality::Text, &subset[..1], c1(), ConeParams::default()).unwrap();
        assert!((one - losses[0]).abs() < 1e-9);
        assert!(avg_entailment_vs_subset(&text, Modality::Text, &[], c1(), ConeParams::default()).is_err());
    }

    #[test]
    fn epsilon_image_frozen() {
        // Four lifted reference texts and one lifted image; expected mean from
        // an independent high-precision evaluation.
        let pt = |v: [f64; 2]| lift(&SpaceVector::new(v.to_vec()).unwrap(), c1());
        let texts = vec![pt([0.5, 0.0]), pt([0.0, 0.5]), pt([-0.3, 0.4]), pt([0.2, -0.6])];
        let s_t = ReferenceSet::new(Modality::Text, texts, vec![1, 2, 3, 4], 4).unwrap();
        let image = pt([1.0, 0.8]);
        let got = epsilon_image(&image, &s_t, c1(), ConeParams::default()).unwrap();
        assert!((got - 1.433_031_625_419_940_2).abs() < 1e-12, "{got}");

        let single = ReferenceSet::new(Modality::Text, vec![pt([0.5, 0.0])], vec![1], 1).unwrap();
        let got = epsilon_image(&image, &single, c1(), ConeParams::default()).unwrap();
        assert!((got - 0.794_353_105_691_588_3).abs() < 1e-12);

        // Wrong modality and empty sets are argument errors.
        assert!(epsilon_text(&image, &s_t, c1(), ConeParams::default()).is_err());
        let empty = ReferenceSet::new(Modality::Image, vec![], vec![], 0).unwrap();
        assert!(epsilon_text(&image, &empty, c1(), ConeParams::default()).is_err());
    }

    #[test]
    fn epsilon_zero_when_entailed() {
        let text = exp_map_origin(&SpaceVector::new(vec![0.5, 0.0]).unwrap(), c1());
        let images: Vec<LorentzPoint> = [1.0, 1.5, 2.5]
            .iter()
            .map(|&r| exp_map_origin(&SpaceVector::new(vec![r, 0.0]).unwrap(), c1()))
            .collect();
        let s_i = ReferenceSet::new(Modality::Image, images, vec![1, 2, 3], 3).unwrap();
        assert_eq!(epsilon_text(&text, &s_i, c1(), ConeParams::default()).unwrap(), 0.0);
    }

    #[test]
    fn reference_sets_frozen_six() {
        let data = fixture6();
        let cfg = PipelineConfig::default();
        let (s_i, s_t) = build_reference_sets(&data, 3, 2, &cfg).unwrap();
        assert_eq!(s_i.source_ids, vec![14, 12]);
        assert_eq!(s_t.source_ids, vec![14, 15]);
        assert_eq!(s_i.n_aligned, 3);

        let expected = [
            (10, 1.628_155_249_506_003_2, 2.580_213_201_106_240_6),
            (11, 2.555_187_001_847_396_1, 2.320_891_461_163_309_8),
            (12, 1.367_541_689_917_351_5, 2.036_572_440_909_013_6),
            (13, 1.787_514_509_243_115_3, 2.419_044_006_745_527_1),
            (14, 2.800_932_163_859_011_4, 2.359_285_411_459_285_6),
            (15, 1.594_925_688_509_287_8, 2.345_942_870_024_309_8),
        ];
        let got = compute_specificity(&data, &s_i, &s_t, &cfg).unwrap();
        let brute = brute_force_specificity(&data, 3, 2, c1(), ConeParams::default()).unwrap();
        assert_eq!(brute.image_refs, vec![14, 12]);
        assert_eq!(brute.text_refs, vec![14, 15]);
        for ((r, b), (id, et, ei)) in got.iter().zip(&brute.results).zip(expected) {
            assert_eq!(r.id, id);
            assert!((r.eps_t - et).abs() < 1e-12, "{id}: {} vs {et}", r.eps_t);
            assert!((r.eps_i - ei).abs() < 1e-12, "{id}: {} vs {ei}", r.eps_i);
            assert!((b.eps_t - et).abs() < 1e-12);
            assert!((b.eps_i - ei).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_sets_full_size() {
        let data = fixture6();
        let (s_i, _) = build_reference_sets(&data, 6, 6, &PipelineConfig::default()).unwrap();
        assert_eq!(s_i.m(), 6);
        let mut ids = s_i.source_ids.clone();
        ids.sort_unstable();
        assert_eq!(ids, vec![10, 11, 12, 13, 14, 15]);
        assert!(build_reference_sets(&data, 7, 2, &PipelineConfig::default()).is_err());
        assert!(build_reference_sets(&data, 2, 7, &PipelineConfig::default()).is_err());
    }

    #[test]
    fn brute_force_limits_and_single() {
        let one = vec![rec(5, [0.5, 0.0], [0.0, 1.5], 0.3)];
        let out = brute_force_specificity(&one, 1, 1, c1(), ConeParams::default()).unwrap();
        let t = exp_map_origin_f32(&one[0].text_tangent, c1()).unwrap();
        let i = exp_map_origin_f32(&one[0].image_tangent, c1()).unwrap();
        let le = entailment_loss(&t, &i, c1(), ConeParams::default()).unwrap();
        assert_eq!(out.results[0].eps_t, le);
        assert_eq!(out.results[0].eps_i, le);

        let big: Vec<PairRecord> = (0..257).map(|k| rec(k, [0.5, 0.0], [0.0, 1.5], 0.3)).collect();
        assert!(matches!(
            brute_force_specificity(&big, 1, 1, c1(), ConeParams::default()),
            Err(HypeError::TooLarge { .. })
        ));
    }

    #[test]
    fn identical_records_share_epsilon() {
        let data: Vec<PairRecord> = (0..5).map(|k| rec(k, [0.5, 0.25], [-0.75, 1.5], 0.3)).collect();
        let out = brute_force_specificity(&data, 2, 3, c1(), ConeParams::default()).unwrap();
        assert!(out.results.windows(2).all(|w| w[0].eps_t == w[1].eps_t && w[0].eps_i == w[1].eps_i));
    }

    #[test]
    fn convergence_examples() {
        let trace = convergence_diagnostic(vec![0.5; 10]);
        assert!(trace[0].std_error.is_infinite());
        assert!(trace[1..].iter().all(|p| p.mean == 0.5 && p.std_error == 0.0));
        let trace = convergence_diagnostic([1.0, 0.0]);
        assert_eq!(trace[1].mean, 0.5);
        assert_eq!(trace[1].count, 2);
    }

    #[test]
    fn convergence_uniform_stream() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<f64> = (0..3000).map(|_| rng.gen::<f64>()).collect();
        let last = *convergence_diagnostic(xs).last().unwrap();
        // sigma / sqrt(n) = sqrt(1/12) / sqrt(3000) ≈ 0.00527
        assert!(last.std_error <= 0.006, "{}", last.std_error);
    }
}
