//! Command-line front end. One config file drives every subcommand; flags
//! carry only paths and the seed override.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 internal error.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use roadloc_core::descriptors::DiagonalMetric;
use roadloc_core::index::IntersectionIndex;
use serde::Serialize;
use serde_json::json;

use crate::bench::{self, BenchmarkSpec, EvalReport};
use crate::config::{ConfigError, RunConfig};
use crate::io::{self, IoError, LocalizationRecord};
use crate::{localize, plot, register};

#[derive(Debug, Parser)]
#[command(
    name = "roadloc",
    version,
    about = "Geolocalize road maps against a reference road database"
)]
pub struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Emit diagnostics on stderr as JSON lines.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic city: vectors, raster, ground-truth intersections
    /// and a benchmark description.
    Synth {
        /// Output directory, created when missing.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Rasterize road vectors and index their intersections. Each vectors
    /// file becomes one reference tile.
    BuildIndex {
        /// Road vectors (GeoJSON LineStrings); repeat for several tiles.
        #[arg(long = "vectors", value_name = "FILE", required = true)]
        vectors: Vec<PathBuf>,
        /// Index file to write.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// JSON diagonal metric; unit weights when omitted.
        #[arg(long, value_name = "FILE")]
        metric: Option<PathBuf>,
    },
    /// Localize every intersection of a query raster.
    Localize {
        /// Query raster (PGM with its georeference sidecar).
        #[arg(long, value_name = "FILE")]
        query: PathBuf,
        /// Index written by `build-index`.
        #[arg(long, value_name = "FILE")]
        index: PathBuf,
        /// Directory for `results.json` and `results.csv`.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Run the two-city benchmark sweep.
    Evaluate {
        /// Directory holding `benchmark.json`; the configured benchmark is
        /// used when the file is absent.
        #[arg(long, value_name = "DIR")]
        benchmark: PathBuf,
        /// Output directory; defaults to the benchmark directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Enhance a query road map with the registered reference.
    Enhance {
        /// Query raster (PGM with its georeference sidecar).
        #[arg(long, value_name = "FILE")]
        query: PathBuf,
        /// Index written by `build-index`.
        #[arg(long, value_name = "FILE")]
        index: PathBuf,
        /// Enhanced raster to write, in the query frame.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Render an evaluation report as SVG.
    Plot {
        /// `report.json` written by `evaluate`.
        #[arg(long, value_name = "FILE")]
        report: PathBuf,
        /// SVG file to write.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Core(#[from] roadloc_core::Error),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Config(_) => 1,
            Self::Io(_) | Self::Core(_) => 2,
            Self::Internal(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.code() {
            1 => "usage",
            2 => "data",
            _ => "internal",
        }
    }
}

/// Writes progress and errors to stderr, as text or as JSON lines.
#[derive(Debug, Clone, Copy)]
pub struct Diagnostics {
    pub json: bool,
}

impl Diagnostics {
    pub fn wrote(&self, path: &Path) {
        if self.json {
            eprintln!(
                "{}",
                json!({"level": "info", "event": "wrote", "path": path.display().to_string()})
            );
        } else {
            eprintln!("roadloc: wrote {}", path.display());
        }
    }

    pub fn info<T: Serialize>(&self, event: &str, detail: &T) {
        if self.json {
            eprintln!(
                "{}",
                json!({"level": "info", "event": event, "detail": detail})
            );
        } else {
            eprintln!(
                "roadloc: {event}: {}",
                serde_json::to_string(detail).unwrap_or_default()
            );
        }
    }

    pub fn error(&self, code: u8, kind: &str, message: &str) {
        if self.json {
            eprintln!(
                "{}",
                json!({"level": "error", "code": code, "kind": kind, "message": message})
            );
        } else {
            eprintln!("roadloc: error: {message}");
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Runs a parsed command line and returns the exit code. Panics are caught
/// and reported as internal errors.
pub fn main(cli: Cli) -> u8 {
    let diag = Diagnostics { json: cli.json };
    std::panic::set_hook(Box::new(|_| {}));
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(&cli, diag)));
    let _ = std::panic::take_hook();
    let err = match outcome {
        Ok(Ok(())) => return 0,
        Ok(Err(e)) => e,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            CliError::Internal(msg)
        }
    };
    diag.error(err.code(), err.kind(), &error_chain(&err));
    err.code()
}

fn error_chain(e: &dyn std::error::Error) -> String {
    let mut msg = e.to_string();
    let mut src = e.source();
    while let Some(s) = src {
        let text = s.to_string();
        if !msg.contains(&text) {
            msg.push_str(": ");
            msg.push_str(&text);
        }
        src = s.source();
    }
    msg
}

pub fn run(cli: &Cli, diag: Diagnostics) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    pool.install(|| dispatch(&cli.command, &cfg, cli.seed, diag))
}

fn dispatch(
    cmd: &Command,
    cfg: &RunConfig,
    seed: Option<u64>,
    diag: Diagnostics,
) -> Result<(), CliError> {
    match cmd {
        Command::Synth { out } => synth(cfg, out, diag),
        Command::BuildIndex {
            vectors,
            out,
            metric,
        } => build_index(cfg, vectors, out, metric.as_deref(), diag),
        Command::Localize { query, index, out } => localize_cmd(cfg, query, index, out, diag),
        Command::Evaluate { benchmark, out } => {
            evaluate(cfg, benchmark, out.as_deref(), seed, diag)
        }
        Command::Enhance { query, index, out } => enhance(cfg, query, index, out, diag),
        Command::Plot { report, out } => plot_cmd(report, out, diag),
    }
}

fn synth(cfg: &RunConfig, out: &Path, diag: Diagnostics) -> Result<(), CliError> {
    let city = roadloc_core::ingest::generate_city(&cfg.synth)?;
    let raster = city.rasterize()?;
    let vectors = out.join("vectors.geojson");
    io::write_vectors(&vectors, &city.vectors)?;
    diag.wrote(&vectors);
    let roads = out.join("roads.pgm");
    io::write_raster(&roads, &raster)?;
    diag.wrote(&roads);
    diag.wrote(&io::sidecar_path(&roads));
    let truth = out.join("intersections.csv");
    io::write_intersections(&truth, &city.ground_truth)?;
    diag.wrote(&truth);
    let spec = out.join("benchmark.json");
    io::write_json(&spec, &cfg.benchmark)?;
    diag.wrote(&spec);
    Ok(())
}

fn build_index(
    cfg: &RunConfig,
    vectors: &[PathBuf],
    out: &Path,
    metric: Option<&Path>,
    diag: Diagnostics,
) -> Result<(), CliError> {
    let mut tiles = Vec::with_capacity(vectors.len());
    for p in vectors {
        let v = io::read_vectors(p)?;
        tiles.push(cfg.raster.rasterize(&v).map_err(|source| IoError::Model {
            path: p.clone(),
            source,
        })?);
    }
    let metric = match metric {
        Some(p) => {
            let m: DiagonalMetric = io::read_json(p)?;
            m.validate().map_err(|source| IoError::Model {
                path: p.to_path_buf(),
                source,
            })?;
            if m.weights.len() != cfg.descriptor.dim() {
                return Err(IoError::Format {
                    path: p.to_path_buf(),
                    reason: format!(
                        "metric has {} weights, descriptor dimension is {}",
                        m.weights.len(),
                        cfg.descriptor.dim()
                    ),
                }
                .into());
            }
            m
        }
        None => DiagonalMetric::unit(cfg.descriptor.dim(), 1.0),
    };
    let index = IntersectionIndex::build(
        tiles,
        &cfg.localize.detection,
        cfg.descriptor.clone(),
        metric,
    )?;
    io::write_index(out, &index)?;
    diag.info(
        "indexed",
        &json!({"intersections": index.len(), "tiles": index.tiles.len()}),
    );
    diag.wrote(out);
    Ok(())
}

fn localize_cmd(
    cfg: &RunConfig,
    query: &Path,
    index: &Path,
    out: &Path,
    diag: Diagnostics,
) -> Result<(), CliError> {
    let raster = io::read_raster(query)?;
    let index = io::read_index(index)?;
    let results = localize::geolocalize(&raster, &index, &cfg.localize)?;
    let records: Vec<LocalizationRecord> = results.iter().map(LocalizationRecord::from).collect();
    let localized = results.iter().filter(|r| r.localized()).count();
    diag.info(
        "localized",
        &json!({"queries": results.len(), "localized": localized}),
    );
    let json_path = out.join("results.json");
    io::write_json(&json_path, &records)?;
    diag.wrote(&json_path);
    let csv_path = out.join("results.csv");
    io::write_localizations_csv(&csv_path, &records)?;
    diag.wrote(&csv_path);
    Ok(())
}

fn evaluate(
    cfg: &RunConfig,
    dir: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
    diag: Diagnostics,
) -> Result<(), CliError> {
    let spec_path = dir.join("benchmark.json");
    let mut spec: BenchmarkSpec = if spec_path.exists() {
        io::read_json(&spec_path)?
    } else {
        cfg.benchmark.clone()
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate().map_err(|source| IoError::Model {
        path: spec_path.clone(),
        source,
    })?;
    let report = bench::evaluate(
        &spec,
        &cfg.localize,
        &cfg.descriptor,
        &cfg.enhance,
        &cfg.evaluate,
    )?;
    let out = out.unwrap_or(dir);
    for path in write_report(out, &report)? {
        diag.wrote(&path);
    }
    diag.info(
        "primary",
        &json!({
            "radius_m": report.primary.radius_m,
            "strict_rate": report.primary.strict_rate,
            "accurate_lenient": report.primary.accurate_lenient,
        }),
    );
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IoError> {
    let fmt = |e: csv::Error| IoError::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| IoError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let mut w = csv::Writer::from_path(path).map_err(fmt)?;
    for r in rows {
        w.serialize(r).map_err(fmt)?;
    }
    w.flush().map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `report.json` plus the curve, ranking, histogram and per-query
/// tables as CSV. Returns the written paths.
pub fn write_report(out: &Path, report: &EvalReport) -> Result<Vec<PathBuf>, IoError> {
    let paths: Vec<PathBuf> = [
        "report.json",
        "curves.csv",
        "ranking.csv",
        "histogram.csv",
        "outcomes.csv",
    ]
    .iter()
    .map(|f| out.join(f))
    .collect();
    io::write_json(&paths[0], report)?;
    write_csv(&paths[1], &report.curves)?;
    write_csv(&paths[2], &report.ranking)?;
    write_csv(&paths[3], &report.primary.histogram)?;
    write_csv(&paths[4], &report.outcomes)?;
    Ok(paths)
}

fn enhance(
    cfg: &RunConfig,
    query: &Path,
    index: &Path,
    out: &Path,
    diag: Diagnostics,
) -> Result<(), CliError> {
    let raster = io::read_raster(query)?;
    let index = io::read_index(index)?;
    let outcome = register::enhance_query(&raster, &index, &cfg.localize, &cfg.enhance)?;
    if let Some(reg) = &outcome.registration {
        diag.info(
            "registered",
            &json!({"tile": reg.tile, "inliers": reg.inliers, "matrix": reg.transform.row_major()}),
        );
    }
    io::write_raster(out, &outcome.enhanced)?;
    diag.wrote(out);
    Ok(())
}

fn plot_cmd(path: &Path, out: &Path, diag: Diagnostics) -> Result<(), CliError> {
    let report: EvalReport = io::read_json(path)?;
    if report.version != bench::REPORT_VERSION {
        return Err(IoError::Format {
            path: path.to_path_buf(),
            reason: format!(
                "report version {} is not supported (expected {})",
                report.version,
                bench::REPORT_VERSION
            ),
        }
        .into());
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| IoError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(out, plot::render_svg(&report)).map_err(|source| IoError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    diag.wrote(out);
    Ok(())
}
