//! Relative-percentage histograms, for comparing subsets of different size.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HypeError, Result};
use crate::io::tables::format_sig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HistogramRange {
    /// Observed minimum and maximum.
    Auto,
    Explicit { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub metric: String,
    pub bins: usize,
    pub range: HistogramRange,
}

impl HistogramSpec {
    pub const DEFAULT_BINS: usize = 100;

    pub fn new(metric: impl Into<String>) -> Self {
        HistogramSpec {
            metric: metric.into(),
            bins: Self::DEFAULT_BINS,
            range: HistogramRange::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub metric: String,
    pub total: u64,
    pub bins: Vec<HistogramBin>,
}

/// Bins `values` uniformly over the range and reports `100 * count / total`
/// per bin. Values at the upper edge land in the last bin; with an explicit
/// range, values outside it are counted in the nearest end bin so the
/// percentages always sum to 100.
pub fn export_histogram(values: impl IntoIterator<Item = f64>, spec: &HistogramSpec) -> Result<Histogram> {
    if spec.bins == 0 {
        return Err(HypeError::InvalidArgument("histogram needs at least one bin".into()));
    }
    let values: Vec<f64> = values.into_iter().collect();
    if values.iter().any(|v| v.is_nan()) {
        return Err(HypeError::InvalidInput(format!("{}: NaN value", spec.metric)));
    }
    let (lo, hi) = match spec.range {
        HistogramRange::Explicit { lo, hi } => {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(HypeError::InvalidArgument(format!(
                    "histogram range must satisfy lo < hi, got [{lo}, {hi}]"
                )));
            }
            (lo, hi)
        }
        HistogramRange::Auto => {
            if values.is_empty() {
                return Err(HypeError::InvalidArgument(
                    "automatic histogram range needs at least one value".into(),
                ));
            }
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(min.is_finite() && max.is_finite()) {
                return Err(HypeError::InvalidInput(format!("{}: infinite value", spec.metric)));
            }
            if min < max {
                (min, max)
            } else {
                // A single distinct value gets a unit-wide range centred on it.
                (min - 0.5, max + 0.5)
            }
        }
    };
    let width = (hi - lo) / spec.bins as f64;
    let mut counts = vec![0u64; spec.bins];
    for &v in &values {
        let pos = ((v - lo) / (hi - lo) * spec.bins as f64).floor();
        let idx = if pos < 0.0 {
            0
        } else {
            (pos as usize).min(spec.bins - 1)
        };
        counts[idx] += 1;
    }
    let total = values.len() as u64;
    let bins = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| HistogramBin {
            lo: lo + width * i as f64,
            hi: if i + 1 == spec.bins { hi } else { lo + width * (i + 1) as f64 },
            percent: if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 },
        })
        .collect();
    Ok(Histogram {
        metric: spec.metric.clone(),
        total,
        bins,
    })
}

impl Histogram {
    /// `bin_lo,bin_hi,percent`
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("bin_lo,bin_hi,percent\n");
        for b in &self.bins {
            out.push_str(&format!(
                "{},{},{}\n",
                format_sig(b.lo, 9),
                format_sig(b.hi, 9),
                format_sig(b.percent, 9)
            ));
        }
        let mut f = std::fs::File::create(path).map_err(|e| HypeError::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| HypeError::io(path, e))
    }
}
