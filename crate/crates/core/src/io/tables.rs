//! Text exports: metrics CSV, score CSV, id lists with JSON sidecars.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HypeError, Result};
use crate::scoring::{cin_value, CinMode, CombineMode, FilterSelection, SampleMetrics, ScoreTable, WeightVector};

pub const METRICS_HEADER: [&str; 6] = ["id", "eps_i", "eps_t", "neg_dl", "clip_cos", "cin"];
pub const SCORE_HEADER: [&str; 7] = ["id", "eps_i", "eps_t", "neg_dl", "clip_cos", "cin", "score"];

/// Formats like C's `%.{sig}g`: `sig` significant digits, trailing zeros
/// dropped, scientific notation outside `[1e-4, 10^sig)`.
pub fn format_sig(x: f64, sig: usize) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sig = sig.max(1);
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= sig as i32 {
        let m = trim_zeros(mantissa);
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn csv_err(path: &Path, e: csv::Error) -> HypeError {
    let offset = e.position().map(|p| p.byte()).unwrap_or(0);
    let reason = e.to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(source) => HypeError::io(path, source),
        _ => HypeError::Format {
            path: path.into(),
            offset,
            reason,
        },
    }
}

fn parse_field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let offset = rec.position().map(|p| p.byte()).unwrap_or(0);
    let raw = rec.get(i).ok_or_else(|| HypeError::Format {
        path: path.into(),
        offset,
        reason: format!("missing column {name}"),
    })?;
    raw.trim().parse().map_err(|_| HypeError::Format {
        path: path.into(),
        offset,
        reason: format!("cannot parse {name} value {raw:?}"),
    })
}

fn check_header(path: &Path, got: &csv::StringRecord, want: &[&str]) -> Result<()> {
    let got: Vec<&str> = got.iter().map(str::trim).collect();
    if got.len() < want.len() || got[..want.len()] != *want {
        return Err(HypeError::Format {
            path: path.into(),
            offset: 0,
            reason: format!("expected header starting with {}", want.join(",")),
        });
    }
    Ok(())
}

/// Reads `id,eps_i,eps_t,neg_dl,clip_cos,cin` where `cin` is the membership
/// flag (any nonzero value means member).
pub fn read_metrics_csv(path: &Path) -> Result<Vec<SampleMetrics>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    check_header(path, rdr.headers().map_err(|e| csv_err(path, e))?, &METRICS_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let flag: f64 = parse_field(path, &rec, 5, "cin")?;
        let m = SampleMetrics {
            id: parse_field(path, &rec, 0, "id")?,
            eps_i: parse_field(path, &rec, 1, "eps_i")?,
            eps_t: parse_field(path, &rec, 2, "eps_t")?,
            neg_dl: parse_field(path, &rec, 3, "neg_dl")?,
            clip_cos: parse_field(path, &rec, 4, "clip_cos")?,
            cin_value: cin_value(flag != 0.0),
        };
        let finite = [m.eps_i, m.eps_t, m.neg_dl, m.clip_cos].iter().all(|v| v.is_finite());
        if !finite {
            return Err(HypeError::Format {
                path: path.into(),
                offset: rec.position().map(|p| p.byte()).unwrap_or(0),
                reason: format!("non-finite metric for id {}", m.id),
            });
        }
        out.push(m);
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| HypeError::io(path, e))?;
    Ok(BufWriter::new(f))
}

/// Writes metrics with `cin` as a 0/1 flag, full `f64` precision.
pub fn write_metrics_csv(path: &Path, metrics: &[SampleMetrics]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| HypeError::io(path, e);
    writeln!(w, "{}", METRICS_HEADER.join(",")).map_err(io)?;
    for m in metrics {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            m.id,
            format_sig(m.eps_i, 17),
            format_sig(m.eps_t, 17),
            format_sig(m.neg_dl, 17),
            format_sig(m.clip_cos, 17),
            u8::from(m.in_cluster())
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes `id,eps_i,eps_t,neg_dl,clip_cos,cin,score` with 9 significant
/// digits; `cin` here is the score term (0 or 10).
pub fn write_score_csv(path: &Path, metrics: &[SampleMetrics], scores: &ScoreTable) -> Result<()> {
    if metrics.len() != scores.len() {
        return Err(HypeError::InvalidArgument("metrics and scores differ in length".into()));
    }
    let mut w = create(path)?;
    let io = |e| HypeError::io(path, e);
    writeln!(w, "{}", SCORE_HEADER.join(",")).map_err(io)?;
    for (m, (id, score)) in metrics.iter().zip(scores.iter()) {
        debug_assert_eq!(m.id, id);
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            m.id,
            format_sig(m.eps_i, 9),
            format_sig(m.eps_t, 9),
            format_sig(m.neg_dl, 9),
            format_sig(m.clip_cos, 9),
            format_sig(m.cin_value, 9),
            format_sig(score, 9)
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a score CSV back into metrics (with `cin` as the 0/10 term) and
/// the score column.
pub fn read_score_csv(path: &Path) -> Result<(Vec<SampleMetrics>, ScoreTable)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    check_header(path, rdr.headers().map_err(|e| csv_err(path, e))?, &SCORE_HEADER)?;
    let mut metrics = Vec::new();
    let mut pairs = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let m = SampleMetrics {
            id: parse_field(path, &rec, 0, "id")?,
            eps_i: parse_field(path, &rec, 1, "eps_i")?,
            eps_t: parse_field(path, &rec, 2, "eps_t")?,
            neg_dl: parse_field(path, &rec, 3, "neg_dl")?,
            clip_cos: parse_field(path, &rec, 4, "clip_cos")?,
            cin_value: parse_field(path, &rec, 5, "cin")?,
        };
        let score: f64 = parse_field(path, &rec, 6, "score")?;
        pairs.push((m.id, score));
        metrics.push(m);
    }
    Ok((metrics, ScoreTable::from_pairs(pairs)?))
}

/// JSON sidecar written next to an id list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSidecar {
    pub fraction: Option<f64>,
    pub k: usize,
    pub weights: Option<WeightVector>,
    pub cin_mode: Option<CinMode>,
    pub sources: Vec<String>,
    pub mode: Option<CombineMode>,
}

impl SelectionSidecar {
    pub fn for_selection(sel: &FilterSelection, weights: Option<WeightVector>, cin_mode: Option<CinMode>) -> Self {
        SelectionSidecar {
            fraction: sel.fraction,
            k: sel.k,
            weights,
            cin_mode,
            sources: sel.sources.clone(),
            mode: sel.mode,
        }
    }
}

pub fn sidecar_path(ids_path: &Path) -> PathBuf {
    let mut s = ids_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the newline-delimited id list and its `.json` sidecar.
pub fn write_selection(path: &Path, sel: &FilterSelection, sidecar: &SelectionSidecar) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| HypeError::io(path, e);
    for id in &sel.ids {
        writeln!(w, "{id}").map_err(io)?;
    }
    w.flush().map_err(io)?;
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(sidecar).map_err(|source| HypeError::Json {
        path: side.clone(),
        source,
    })?;
    std::fs::write(&side, text + "\n").map_err(|e| HypeError::io(&side, e))
}

/// Reads an id list. Provenance comes from the sidecar when present,
/// otherwise from the file name.
pub fn read_selection(path: &Path) -> Result<FilterSelection> {
    let f = std::fs::File::open(path).map_err(|e| HypeError::io(path, e))?;
    let mut ids = Vec::new();
    let mut offset = 0u64;
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| HypeError::io(path, e))?;
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            ids.push(trimmed.parse::<u64>().map_err(|_| HypeError::Format {
                path: path.into(),
                offset,
                reason: format!("not a decimal id: {trimmed:?}"),
            })?);
        }
        offset += line.len() as u64 + 1;
    }
    let side = sidecar_path(path);
    let sidecar: Option<SelectionSidecar> = match std::fs::read_to_string(&side) {
        Ok(text) => Some(serde_json::from_str(&text).map_err(|source| HypeError::Json {
            path: side.clone(),
            source,
        })?),
        Err(_) => None,
    };
    let (fraction, sources, mode) = match sidecar {
        Some(s) => (s.fraction, s.sources, s.mode),
        None => (None, vec![path.display().to_string()], None),
    };
    Ok(FilterSelection {
        k: ids.len(),
        ids,
        fraction,
        sources,
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig_formatting() {
        assert_eq!(format_sig(9.982000000000001, 9), "9.982");
        assert_eq!(format_sig(-0.018, 9), "-0.018");
        assert_eq!(format_sig(10.0, 9), "10");
        assert_eq!(format_sig(0.0, 9), "0");
        assert_eq!(format_sig(123456789.4, 9), "123456789");
        assert_eq!(format_sig(1234567890.0, 9), "1.23456789e+09");
        assert_eq!(format_sig(0.000012345, 9), "1.2345e-05");
        assert_eq!(format_sig(0.00012345, 9), "0.00012345");
        assert_eq!(format_sig(1.0 / 3.0, 9), "0.333333333");
        assert_eq!(format_sig(f64::NEG_INFINITY, 9), "-inf");
    }

    #[test]
    fn metrics_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = vec![SampleMetrics {
            id: 7,
            eps_i: 0.1 + 0.2,
            eps_t: 1.0 / 3.0,
            neg_dl: -0.726,
            clip_cos: 0.208,
            cin_value: 10.0,
        }];
        write_metrics_csv(&path, &m).unwrap();
        assert_eq!(read_metrics_csv(&path).unwrap(), m);
    }

    #[test]
    fn selection_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ids.txt");
        let sel = FilterSelection {
            ids: vec![5, 3, 9],
            fraction: Some(0.3),
            k: 3,
            sources: vec!["hype".into()],
            mode: None,
        };
        write_selection(&path, &sel, &SelectionSidecar::for_selection(&sel, None, None)).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "5\n3\n9\n");
        assert_eq!(read_selection(&path).unwrap(), sel);
    }
}
