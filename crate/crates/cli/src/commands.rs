use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use hype_core::io::{
    export_histogram, read_metrics_csv, read_reference_archive, read_score_csv, read_selection, read_shard,
    sidecar_path, write_metrics_csv, write_reference_archive, write_score_csv, write_selection, write_shard,
    HistogramRange, HistogramSpec, Manifest, ReferenceArchive, SelectionSidecar, ShardFlags, ShardSet,
};
use hype_core::rank::with_threads;
use hype_core::scoring::{
    combine_selections, metric_stats, score_dataset, select_top_fraction, CombineMode,
};
use hype_core::selfcheck::run_selfcheck;
use hype_core::specificity::{build_reference_sets, compute_metrics};
use hype_core::synth::{synthetic_records, SynthSpec};
use hype_core::trainer::{export_records, gen_synthetic_hierarchy, hierarchy_report, train, TrainerConfig};
use hype_core::{CinMode, ConeParams, Curvature, HypeError, PipelineConfig, SampleMetrics, WeightVector};

use crate::{Cli, Command, GeometryArgs, WeightArgs};

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    curvature: f64,
    #[arg(long, default_value_t = 0.1)]
    k_aperture: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_entail: f64,
    #[arg(long, default_value_t = 0.5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standard deviation of the initial tangent parameters.
    #[arg(long, default_value_t = 1.0)]
    init_scale: f64,
    #[arg(long, default_value_t = 2)]
    categories: usize,
    #[arg(long, default_value_t = 8)]
    images_per_category: usize,
    /// Loss trace CSV.
    #[arg(long)]
    trace: PathBuf,
    /// Shard of the trained (alpha-scaled) tangent embeddings, one record
    /// per positive pair.
    #[arg(long)]
    out_shard: PathBuf,
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let threads = cli.threads;
    if threads == Some(0) {
        return Err(HypeError::InvalidArgument("--threads must be positive".into()).into());
    }
    if cli.chunk_size == 0 {
        return Err(HypeError::InvalidArgument("--chunk-size must be positive".into()).into());
    }
    let chunk_size = cli.chunk_size;
    with_threads(threads, move || dispatch(cli.command, chunk_size))
}

fn dispatch(command: Command, chunk_size: usize) -> Result<ExitCode> {
    match command {
        Command::Stats { metrics, json } => stats(&metrics, json),
        Command::Refset {
            data,
            n,
            m,
            geometry,
            out,
        } => refset(&data, n, m, &geometry, chunk_size, &out),
        Command::Specificity {
            data,
            refset,
            k_aperture,
            out,
        } => {
            let metrics = metrics_from_data(&data, &refset, None, k_aperture, chunk_size)?;
            write_metrics_csv(&out, &metrics)?;
            info!("wrote {} rows to {}", metrics.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Score {
            metrics,
            data,
            refset,
            weights,
            geometry,
            out,
        } => score(metrics, &data, refset, &weights, &geometry, chunk_size, &out),
        Command::Filter {
            scores,
            fraction,
            combine,
            mode,
            out,
        } => filter(&scores, fraction, combine.as_deref(), mode.as_deref(), &out),
        Command::Histogram {
            input,
            metric,
            bins,
            range,
            out,
        } => histogram(&input, &metric, bins, range.as_deref(), &out),
        Command::Manifest { shards, out } => {
            let base = out.parent().map(Path::to_path_buf).unwrap_or_default();
            let manifest = Manifest::build(&shards, &base)?;
            manifest.save(&out)?;
            println!("{} shards, {} records", manifest.shards.len(), manifest.total_count);
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth { count, dim, seed, out } => {
            if count == 0 || dim == 0 {
                bail!(HypeError::InvalidArgument("count and dim must be positive".into()));
            }
            let records = synthetic_records(&SynthSpec::new(count, dim, seed));
            write_shard(&out, &records, dim, ShardFlags::all())?;
            println!("wrote {count} records of dim {dim} to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::TrainToy(args) => train_toy(&args),
        Command::Selfcheck { seed } => {
            let report = run_selfcheck(seed);
            for check in &report.checks {
                println!("{check}");
            }
            println!("selfcheck: {}/{} checks passed", report.passed(), report.total());
            Ok(if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
    }
}

fn geometry(curvature: Option<f64>, k: Option<f64>) -> Result<(Curvature, ConeParams)> {
    let curv = curvature.map(Curvature::new).transpose()?.unwrap_or_default();
    let cone = k.map(ConeParams::new).transpose()?.unwrap_or_default();
    Ok((curv, cone))
}

/// A single `.json` path is a manifest; anything else is a list of shards.
fn open_data(paths: &[PathBuf]) -> Result<(ShardSet, u64)> {
    if let [one] = paths {
        if one.extension().is_some_and(|e| e == "json") {
            let manifest = Manifest::load(one)?;
            return Ok((ShardSet::from_manifest(&manifest)?, manifest.total_count));
        }
    }
    let mut total = 0;
    for p in paths {
        total += read_shard(p)?.header().count;
    }
    Ok((ShardSet::from_paths(paths.to_vec()), total))
}

fn refset(
    data: &[PathBuf],
    n: usize,
    m: usize,
    geom: &GeometryArgs,
    chunk_size: usize,
    out: &Path,
) -> Result<ExitCode> {
    let (curvature, cone) = geometry(geom.curvature, geom.k_aperture)?;
    let (dataset, total) = open_data(data)?;
    if total == 0 {
        bail!(HypeError::InvalidInput("dataset is empty".into()));
    }
    let clamp = |name: &str, v: usize| {
        if v as u64 > total {
            warn!("--{name} {v} exceeds the dataset size {total}; using {total}");
            total as usize
        } else {
            v
        }
    };
    let n = clamp("n", n);
    let m = clamp("m", m).min(n);
    let cfg = PipelineConfig {
        curvature,
        cone,
        chunk_size,
        threads: None,
    };
    let (images, texts) = build_reference_sets(&dataset, n, m, &cfg)?;
    let archive = ReferenceArchive {
        curvature,
        cone,
        images,
        texts,
    };
    write_reference_archive(out, &archive)?;
    println!("reference sets: n={n} m={} from {total} samples", archive.images.m());
    Ok(ExitCode::SUCCESS)
}

fn metrics_from_data(
    data: &[PathBuf],
    refset: &Path,
    curvature: Option<f64>,
    k_aperture: Option<f64>,
    chunk_size: usize,
) -> Result<Vec<SampleMetrics>> {
    let archive = read_reference_archive(refset)?;
    if let Some(c) = curvature {
        if c != archive.curvature.value() {
            bail!(HypeError::InvalidArgument(format!(
                "--curvature {c} differs from the reference archive's {}",
                archive.curvature.value()
            )));
        }
    }
    let cone = match k_aperture {
        Some(k) => ConeParams::new(k)?,
        None => archive.cone,
    };
    let cfg = PipelineConfig {
        curvature: archive.curvature,
        cone,
        chunk_size,
        threads: None,
    };
    let (dataset, _) = open_data(data)?;
    Ok(compute_metrics(&dataset, &archive.images, &archive.texts, &cfg)?)
}

/// Written next to a score CSV.
#[derive(Debug, Serialize, Deserialize)]
struct ScoreSidecar {
    weights: WeightVector,
    cin_mode: CinMode,
    curvature: Option<f64>,
    k_aperture: Option<f64>,
    source: String,
}

fn score(
    metrics: Option<PathBuf>,
    data: &[PathBuf],
    refset: Option<PathBuf>,
    weights: &WeightArgs,
    geom: &GeometryArgs,
    chunk_size: usize,
    out: &Path,
) -> Result<ExitCode> {
    let w = WeightVector {
        w_eps_i: weights.w_eps_i,
        w_eps_t: weights.w_eps_t,
        w_negdl: weights.w_negdl,
        w_cos: weights.w_cos,
        w_cin: weights.w_cin,
    };
    w.validate()?;
    let mode = if weights.cin_gate {
        CinMode::HardGate
    } else {
        CinMode::Additive
    };
    let (rows, source, curvature, k) = match (metrics, refset) {
        (Some(path), _) => {
            if geom.curvature.is_some() || geom.k_aperture.is_some() {
                warn!("geometry flags have no effect on precomputed metrics");
            }
            (read_metrics_csv(&path)?, path.display().to_string(), None, None)
        }
        (None, Some(refs)) if !data.is_empty() => {
            let rows = metrics_from_data(data, &refs, geom.curvature, geom.k_aperture, chunk_size)?;
            let archive_geom = read_reference_archive(&refs)?;
            let k = geom.k_aperture.unwrap_or(archive_geom.cone.k());
            (rows, refs.display().to_string(), Some(archive_geom.curvature.value()), Some(k))
        }
        _ => bail!(HypeError::InvalidArgument(
            "score needs --metrics, or --data with --refset".into()
        )),
    };
    let table = score_dataset(&rows, &w, mode)?;
    write_score_csv(out, &rows, &table)?;
    let sidecar = ScoreSidecar {
        weights: w,
        cin_mode: mode,
        curvature,
        k_aperture: k,
        source,
    };
    let side = sidecar_path(out);
    std::fs::write(&side, serde_json::to_string_pretty(&sidecar)? + "\n")
        .with_context(|| format!("writing {}", side.display()))?;
    info!("scored {} samples", rows.len());
    Ok(ExitCode::SUCCESS)
}

fn filter(
    scores: &Path,
    fraction: f64,
    combine: Option<&Path>,
    mode: Option<&str>,
    out: &Path,
) -> Result<ExitCode> {
    let (_, table) = read_score_csv(scores)?;
    let mut sel = select_top_fraction(&table, fraction, &scores.display().to_string())?;
    if let (Some(other), Some(mode)) = (combine, mode) {
        let mode: CombineMode = mode.parse()?;
        let other = read_selection(other)?;
        sel = combine_selections(&sel, &other, mode);
    }
    let score_side: Option<ScoreSidecar> = std::fs::read_to_string(sidecar_path(scores))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    let sidecar = SelectionSidecar::for_selection(
        &sel,
        score_side.as_ref().map(|s| s.weights),
        score_side.as_ref().map(|s| s.cin_mode),
    );
    write_selection(out, &sel, &sidecar)?;
    println!("kept {} of {} samples", sel.k, table.len());
    Ok(ExitCode::SUCCESS)
}

fn metric_column(rows: &[SampleMetrics], scores: Option<&[f64]>, metric: &str) -> Result<Vec<f64>> {
    let pick: fn(&SampleMetrics) -> f64 = match metric {
        "eps_i" => |m| m.eps_i,
        "eps_t" => |m| m.eps_t,
        "neg_dl" => |m| m.neg_dl,
        "clip_cos" => |m| m.clip_cos,
        "cin" => |m| m.cin_value,
        "score" => {
            return scores.map(<[f64]>::to_vec).ok_or_else(|| {
                HypeError::InvalidArgument("the score column needs a score CSV".into()).into()
            })
        }
        other => bail!(HypeError::InvalidArgument(format!(
            "unknown metric {other:?} (expected eps_i, eps_t, neg_dl, clip_cos, cin or score)"
        ))),
    };
    Ok(rows.iter().map(pick).collect())
}

/// Score CSVs have a trailing `score` column; metrics CSVs do not.
fn read_any_table(path: &Path) -> Result<(Vec<SampleMetrics>, Option<Vec<f64>>)> {
    let first = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?
        .lines()
        .next()
        .unwrap_or_default()
        .to_string();
    if first.split(',').any(|c| c.trim() == "score") {
        let (rows, table) = read_score_csv(path)?;
        Ok((rows, Some(table.scores)))
    } else {
        Ok((read_metrics_csv(path)?, None))
    }
}

fn histogram(input: &Path, metric: &str, bins: usize, range: Option<&str>, out: &Path) -> Result<ExitCode> {
    let range = match range {
        None => HistogramRange::Auto,
        Some(r) => {
            let parsed = r
                .split_once(',')
                .and_then(|(lo, hi)| Some((lo.trim().parse().ok()?, hi.trim().parse().ok()?)));
            match parsed {
                Some((lo, hi)) => HistogramRange::Explicit { lo, hi },
                None => bail!(HypeError::InvalidArgument(format!("--range expects lo,hi, got {r:?}"))),
            }
        }
    };
    let (rows, scores) = read_any_table(input)?;
    let values = metric_column(&rows, scores.as_deref(), metric)?;
    let spec = HistogramSpec {
        metric: metric.to_string(),
        bins,
        range,
    };
    let hist = export_histogram(values, &spec)?;
    hist.write_csv(out)?;
    Ok(ExitCode::SUCCESS)
}

fn stats(path: &Path, json: bool) -> Result<ExitCode> {
    let (rows, _) = read_any_table(path)?;
    let stats = metric_stats(&rows)?;
    let mut stdout = std::io::stdout().lock();
    if json {
        writeln!(stdout, "{}", serde_json::to_string_pretty(&stats)?)?;
    } else {
        write!(stdout, "{}", stats.report())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn train_toy(args: &TrainArgs) -> Result<ExitCode> {
    if args.categories == 0 || args.images_per_category == 0 {
        bail!(HypeError::InvalidArgument("corpus counts must be positive".into()));
    }
    let cfg = TrainerConfig {
        dim: args.dim,
        curvature: Curvature::new(args.curvature)?,
        cone: ConeParams::new(args.k_aperture)?,
        lambda_entail: args.lambda_entail,
        learning_rate: args.learning_rate,
        steps: args.steps,
        batch_size: args.batch_size,
        seed: args.seed,
        init_scale: args.init_scale,
    };
    let corpus = gen_synthetic_hierarchy(args.seed, args.categories, args.images_per_category);
    let outcome = train(&cfg, &corpus)?;

    let mut trace = csv::Writer::from_path(&args.trace).with_context(|| format!("writing {}", args.trace.display()))?;
    trace.write_record(["step", "contrastive", "entailment", "total", "temperature", "alpha"])?;
    for row in &outcome.trace {
        trace.serialize((row.step, row.contrastive, row.entailment, row.total, row.temperature, row.alpha))?;
    }
    trace.flush()?;

    let records = export_records(&outcome.table, &corpus);
    write_shard(&args.out_shard, &records, cfg.dim, ShardFlags::all())?;

    let report = hierarchy_report(&outcome.table, &corpus, &cfg)?;
    println!(
        "loss {:.6} -> {:.6} (contrastive {:.6}, entailment {:.6})",
        outcome.initial.total, outcome.final_loss.total, outcome.final_loss.contrastive, outcome.final_loss.entailment
    );
    println!(
        "mean space norm: texts {:.4} images {:.4} generic {:.4} specific {:.4}",
        report.mean_text_norm, report.mean_image_norm, report.mean_generic_norm, report.mean_specific_norm
    );
    println!(
        "generic below specific in eps_t: {}/{} pairs",
        report.ordered_pairs, report.total_pairs
    );
    Ok(ExitCode::SUCCESS)
}
