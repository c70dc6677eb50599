//! HYPE score, dataset statistics and top-fraction selection.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HypeError, Result};
use crate::rank::rank_cmp;

/// Additive score contribution of an ImageNet-cluster member.
pub const CIN_MEMBER_VALUE: f64 = 10.0;

/// c_IN term for a sample.
pub fn cin_value(in_cluster: bool) -> f64 {
    if in_cluster {
        CIN_MEMBER_VALUE
    } else {
        0.0
    }
}

/// All five score terms of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: u64,
    pub eps_i: f64,
    pub eps_t: f64,
    pub neg_dl: f64,
    pub clip_cos: f64,
    pub cin_value: f64,
}

impl SampleMetrics {
    pub fn in_cluster(&self) -> bool {
        self.cin_value > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub w_eps_i: f64,
    pub w_eps_t: f64,
    pub w_negdl: f64,
    pub w_cos: f64,
    pub w_cin: f64,
}

impl Default for WeightVector {
    fn default() -> Self {
        WeightVector {
            w_eps_i: 1.0,
            w_eps_t: 1.0,
            w_negdl: 1.0,
            w_cos: 1.0,
            w_cin: 1.0,
        }
    }
}

impl WeightVector {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_eps_i, self.w_eps_t, self.w_negdl, self.w_cos, self.w_cin];
        if all.iter().all(|w| w.is_finite()) {
            Ok(())
        } else {
            Err(HypeError::InvalidArgument("weights must be finite".into()))
        }
    }
}

/// How cluster membership enters the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CinMode {
    /// `w_cin * cin_value` is added like every other term.
    #[default]
    Additive,
    /// Non-members score `-inf`; members are scored without the c_IN term.
    HardGate,
}

/// Weighted sum of the five terms.
pub fn hype_score(m: &SampleMetrics, w: &WeightVector) -> f64 {
    w.w_eps_i * m.eps_i
        + w.w_eps_t * m.eps_t
        + w.w_negdl * m.neg_dl
        + w.w_cos * m.clip_cos
        + w.w_cin * m.cin_value
}

pub fn hype_score_with_mode(m: &SampleMetrics, w: &WeightVector, mode: CinMode) -> f64 {
    match mode {
        CinMode::Additive => hype_score(m, w),
        CinMode::HardGate if !m.in_cluster() => f64::NEG_INFINITY,
        CinMode::HardGate => hype_score(m, &WeightVector { w_cin: 0.0, ..*w }),
    }
}

/// Per-sample scores, in input order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    pub ids: Vec<u64>,
    pub scores: Vec<f64>,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u64, f64)>) -> Result<Self> {
        let (ids, scores): (Vec<u64>, Vec<f64>) = pairs.into_iter().unzip();
        check_unique(&ids)?;
        Ok(ScoreTable { ids, scores })
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.ids.iter().copied().zip(self.scores.iter().copied())
    }
}

fn check_unique(ids: &[u64]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for &id in ids {
        if !seen.insert(id) {
            return Err(HypeError::DataIntegrity(format!("duplicate sample id {id}")));
        }
    }
    Ok(())
}

const SCORE_CHUNK: usize = 8192;

/// Scores every sample. Parallel over fixed-size chunks; output order and
/// values do not depend on the thread count.
pub fn score_dataset(metrics: &[SampleMetrics], w: &WeightVector, mode: CinMode) -> Result<ScoreTable> {
    w.validate()?;
    let ids: Vec<u64> = metrics.iter().map(|m| m.id).collect();
    check_unique(&ids)?;
    let scores: Vec<f64> = metrics
        .par_chunks(SCORE_CHUNK)
        .flat_map_iter(|chunk| chunk.iter().map(|m| hype_score_with_mode(m, w, mode)))
        .collect();
    Ok(ScoreTable { ids, scores })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineMode {
    Intersect,
    Union,
}

impl std::str::FromStr for CombineMode {
    type Err = HypeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intersect" => Ok(CombineMode::Intersect),
            "union" => Ok(CombineMode::Union),
            other => Err(HypeError::InvalidArgument(format!(
                "unknown combine mode {other:?} (expected intersect or union)"
            ))),
        }
    }
}

/// Ids surviving a selection, best first, with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSelection {
    pub ids: Vec<u64>,
    /// Kept fraction for a direct cut; `None` for combined selections.
    pub fraction: Option<f64>,
    pub k: usize,
    /// Where each contributing selection came from.
    pub sources: Vec<String>,
    pub mode: Option<CombineMode>,
}

impl FilterSelection {
    /// Number kept from a dataset of `total` samples at `fraction`.
    pub fn count_for(fraction: f64, total: usize) -> usize {
        // The relative nudge absorbs binary representation error so that,
        // e.g., 0.29 of 100 keeps 29 rather than 28.
        let raw = fraction * total as f64 * (1.0 + 4.0 * f64::EPSILON);
        (raw.floor() as usize).clamp(1, total.max(1))
    }
}

/// Keeps the best `max(1, floor(fraction * D))` samples.
pub fn select_top_fraction(scores: &ScoreTable, fraction: f64, source: &str) -> Result<FilterSelection> {
    if scores.is_empty() {
        return Err(HypeError::InvalidArgument("cannot select from an empty score table".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(HypeError::InvalidArgument(format!(
            "fraction must be in (0, 1], got {fraction}"
        )));
    }
    if scores.scores.iter().any(|s| s.is_nan()) {
        return Err(HypeError::DataIntegrity("score table contains NaN".into()));
    }
    let k = FilterSelection::count_for(fraction, scores.len());
    let mut order: Vec<(f64, u64)> = scores.iter().map(|(id, s)| (s, id)).collect();
    order.par_sort_unstable_by(|a, b| rank_cmp(a.0, a.1, b.0, b.1));
    Ok(FilterSelection {
        ids: order.into_iter().take(k).map(|(_, id)| id).collect(),
        fraction: Some(fraction),
        k,
        sources: vec![source.to_string()],
        mode: None,
    })
}

/// Set intersection or union of two selections. Ids keep `a`'s order,
/// followed (for union) by the ids only in `b`, in `b`'s order.
pub fn combine_selections(a: &FilterSelection, b: &FilterSelection, mode: CombineMode) -> FilterSelection {
    let in_b: HashSet<u64> = b.ids.iter().copied().collect();
    let ids: Vec<u64> = match mode {
        CombineMode::Intersect => a.ids.iter().copied().filter(|id| in_b.contains(id)).collect(),
        CombineMode::Union => {
            let in_a: HashSet<u64> = a.ids.iter().copied().collect();
            a.ids
                .iter()
                .copied()
                .chain(b.ids.iter().copied().filter(|id| !in_a.contains(id)))
                .collect()
        }
    };
    let mut sources = a.sources.clone();
    sources.extend(b.sources.iter().cloned());
    FilterSelection {
        k: ids.len(),
        ids,
        fraction: None,
        sources,
        mode: Some(mode),
    }
}

/// Running mean and variance, mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(self, other: Moments) -> Moments {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let (na, nb, n) = (self.count as f64, other.count as f64, count as f64);
        let delta = other.mean - self.mean;
        Moments {
            count,
            mean: self.mean + delta * (nb / n),
            m2: self.m2 + other.m2 + delta * delta * (na * nb / n),
        }
    }

    pub fn population_std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0).sqrt()
        }
    }

    pub fn sample_std(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0).sqrt()
        }
    }
}

/// Pairwise reduction with a shape that depends only on `parts.len()`.
pub(crate) fn tree_merge(mut parts: Vec<Moments>) -> Moments {
    if parts.is_empty() {
        return Moments::default();
    }
    while parts.len() > 1 {
        parts = parts
            .chunks(2)
            .map(|p| if p.len() == 2 { p[0].merge(p[1]) } else { p[0] })
            .collect();
    }
    parts[0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub count: u64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Per-metric statistics, columns in report order (ε_t, ε_i, -d_L, cos θ, c_IN).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub eps_t: ColumnStats,
    pub eps_i: ColumnStats,
    pub neg_dl: ColumnStats,
    pub clip_cos: ColumnStats,
    pub cin: ColumnStats,
    pub std_kind: String,
}

impl MetricStats {
    pub fn columns(&self) -> [(&'static str, ColumnStats); 5] {
        [
            ("eps_t", self.eps_t),
            ("eps_i", self.eps_i),
            ("neg_dl", self.neg_dl),
            ("clip_cos", self.clip_cos),
            ("cin", self.cin),
        ]
    }

    /// Fixed-width text report, one metric per column.
    pub fn report(&self) -> String {
        let cols = self.columns();
        let mut out = format!("{:<8}", "size");
        for (name, _) in &cols {
            out.push_str(&format!(" {:>20}", name));
        }
        out.push('\n');
        out.push_str(&format!("{:<8}", self.eps_t.count));
        for (_, c) in &cols {
            out.push_str(&format!(" {:>20}", format!("{:.3} ± {:.3}", c.mean, c.std)));
        }
        out.push('\n');
        out
    }
}

const STATS_CHUNK: usize = 4096;

/// Single-pass mean and population standard deviation of every metric.
pub fn metric_stats(metrics: &[SampleMetrics]) -> Result<MetricStats> {
    if metrics.is_empty() {
        return Err(HypeError::InvalidArgument("statistics of an empty dataset".into()));
    }
    let partials: Vec<[Moments; 5]> = metrics
        .par_chunks(STATS_CHUNK)
        .map(|chunk| {
            let mut acc = [Moments::default(); 5];
            for m in chunk {
                for (a, v) in acc.iter_mut().zip([m.eps_t, m.eps_i, m.neg_dl, m.clip_cos, m.cin_value]) {
                    a.push(v);
                }
            }
            acc
        })
        .collect();
    let column = |i: usize| {
        let m = tree_merge(partials.iter().map(|p| p[i]).collect());
        ColumnStats {
            count: m.count,
            mean: m.mean,
            std: m.population_std(),
        }
    };
    Ok(MetricStats {
        eps_t: column(0),
        eps_i: column(1),
        neg_dl: column(2),
        clip_cos: column(3),
        cin: column(4),
        std_kind: "population".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table2_means(cin: bool) -> SampleMetrics {
        SampleMetrics {
            id: 0,
            eps_i: 0.289,
            eps_t: 0.211,
            neg_dl: -0.726,
            clip_cos: 0.208,
            cin_value: cin_value(cin),
        }
    }

    #[test]
    fn cin_encoding() {
        assert_eq!(cin_value(true), 10.0);
        assert_eq!(cin_value(false), 0.0);
        // 611 members out of 1000 → mean 6.11.
        let mean: f64 = (0..1000).map(|i| cin_value(i < 611)).sum::<f64>() / 1000.0;
        assert!((mean - 6.11).abs() < 1e-12);
    }

    #[test]
    fn score_examples() {
        let w = WeightVector::default();
        assert!((hype_score(&table2_means(true), &w) - 9.982).abs() < 1e-12);
        let zero = SampleMetrics {
            id: 1,
            eps_i: 0.0,
            eps_t: 0.0,
            neg_dl: 0.0,
            clip_cos: 0.0,
            cin_value: 0.0,
        };
        assert_eq!(hype_score(&zero, &w), 0.0);
        let no_cin = WeightVector { w_cin: 0.0, ..w };
        assert!((hype_score(&table2_means(true), &no_cin) + 0.018).abs() < 1e-12);
    }

    #[test]
    fn hard_gate() {
        let w = WeightVector::default();
        assert_eq!(
            hype_score_with_mode(&table2_means(false), &w, CinMode::HardGate),
            f64::NEG_INFINITY
        );
        let gated = hype_score_with_mode(&table2_means(true), &w, CinMode::HardGate);
        assert!((gated + 0.018).abs() < 1e-12);
    }

    #[test]
    fn score_dataset_rejects_duplicates() {
        let m = table2_means(true);
        assert!(matches!(
            score_dataset(&[m, m], &WeightVector::default(), CinMode::Additive),
            Err(HypeError::DataIntegrity(_))
        ));
        let empty = score_dataset(&[], &WeightVector::default(), CinMode::Additive).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn selection_examples() {
        let table = ScoreTable::from_pairs((0..10u64).map(|i| (i, i as f64))).unwrap();
        let sel = select_top_fraction(&table, 0.2, "t").unwrap();
        assert_eq!(sel.ids, vec![9, 8]);
        assert_eq!(sel.k, 2);

        let flat = ScoreTable::from_pairs((0..10u64).rev().map(|i| (i, 1.0))).unwrap();
        assert_eq!(select_top_fraction(&flat, 0.3, "t").unwrap().ids, vec![0, 1, 2]);

        // Floor of 1.
        assert_eq!(select_top_fraction(&table, 0.01, "t").unwrap().k, 1);
        assert!(select_top_fraction(&ScoreTable::default(), 0.5, "t").is_err());
        assert!(select_top_fraction(&table, 0.0, "t").is_err());
        assert!(select_top_fraction(&table, 1.5, "t").is_err());
    }

    #[test]
    fn count_rule() {
        assert_eq!(FilterSelection::count_for(0.1, 115_600_000), 11_560_000);
        assert_eq!(FilterSelection::count_for(0.29, 100), 29);
        assert_eq!(FilterSelection::count_for(0.3, 10), 3);
        assert_eq!(FilterSelection::count_for(1.0, 7), 7);
    }

    fn sel(ids: &[u64]) -> FilterSelection {
        FilterSelection {
            ids: ids.to_vec(),
            fraction: None,
            k: ids.len(),
            sources: vec!["x".into()],
            mode: None,
        }
    }

    #[test]
    fn combine_examples() {
        let a = sel(&[3, 1, 2]);
        assert_eq!(combine_selections(&a, &a, CombineMode::Intersect).ids, a.ids);
        assert!(combine_selections(&a, &sel(&[7, 8]), CombineMode::Intersect).ids.is_empty());
        let u = combine_selections(&sel(&[1, 2, 3]), &sel(&[3, 4]), CombineMode::Union);
        assert_eq!(u.ids, vec![1, 2, 3, 4]);
        assert_eq!(u.k, 4);
        assert_eq!(u.mode, Some(CombineMode::Union));
        assert_eq!(u.sources.len(), 2);
    }

    #[test]
    fn stats_examples() {
        let mk = |v: f64| SampleMetrics {
            id: 0,
            eps_i: v,
            eps_t: 0.5,
            neg_dl: -v,
            clip_cos: v,
            cin_value: 10.0 * v,
        };
        let s = metric_stats(&[mk(0.0), mk(1.0)]).unwrap();
        assert_eq!(s.eps_t.std, 0.0);
        assert!((s.eps_i.mean - 0.5).abs() < 1e-15);
        assert!((s.eps_i.std - 0.5).abs() < 1e-15);
        assert_eq!(s.eps_i.count, 2);
        assert!(metric_stats(&[]).is_err());
    }

    #[test]
    fn moments_merge_matches_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let mut seq = Moments::default();
        xs.iter().for_each(|&x| seq.push(x));
        let parts: Vec<Moments> = xs
            .chunks(33)
            .map(|c| {
                let mut m = Moments::default();
                c.iter().for_each(|&x| m.push(x));
                m
            })
            .collect();
        let merged = tree_merge(parts);
        assert_eq!(merged.count, seq.count);
        assert!((merged.mean - seq.mean).abs() < 1e-12);
        assert!((merged.population_std() - seq.population_std()).abs() < 1e-12);
    }
}
