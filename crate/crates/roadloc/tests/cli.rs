use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use roadloc::bench::{BenchmarkSpec, EvalReport};
use roadloc::config::RunConfig;
use roadloc::io::{self, LocalizationRecord};
use roadloc_core::ingest::{perturb, PerturbationSpec};
use roadloc_core::pipeline::geolocalize;
use tempfile::TempDir;

const SMALL: &str = "threads = 1\n[synth]\nextent_m = 400.0\n";

fn roadloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roadloc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = roadloc(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
    config: PathBuf,
}

impl Fixture {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, config).unwrap();
        Self { dir, config: path }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        let mut all = vec!["--config", s(&self.config)];
        all.extend_from_slice(args);
        roadloc(&all)
    }

    fn ok(&self, args: &[&str]) -> Output {
        let mut all = vec!["--config", s(&self.config)];
        all.extend_from_slice(args);
        ok(&all)
    }

    /// Synthesizes a city into `name` and indexes it into `name/index.bin`.
    fn city(&self, name: &str) -> PathBuf {
        let d = self.path(name);
        self.ok(&["synth", "--out", s(&d)]);
        self.ok(&[
            "build-index",
            "--vectors",
            s(&d.join("vectors.geojson")),
            "--out",
            s(&d.join("index.bin")),
        ]);
        d
    }
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn help_and_version_exit_zero() {
    assert!(roadloc(&["--help"]).status.success());
    assert!(roadloc(&["--version"]).status.success());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(roadloc(&["bogus"]).status.code(), Some(1));
    assert_eq!(
        roadloc(&["localize", "--query", "q.pgm"]).status.code(),
        Some(1)
    );
}

#[test]
fn synth_writes_every_output() {
    let f = Fixture::new(SMALL);
    let d = f.path("city");
    f.ok(&["synth", "--out", s(&d)]);
    for name in [
        "vectors.geojson",
        "roads.pgm",
        "roads.json",
        "intersections.csv",
        "benchmark.json",
    ] {
        assert!(d.join(name).is_file(), "missing {name}");
    }
    let r = io::read_raster(&d.join("roads.pgm")).unwrap();
    assert!(r.road_count() > 0);
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let f = Fixture::new(SMALL);
    let (a, b, c) = (f.path("a"), f.path("b"), f.path("c"));
    f.ok(&["--seed", "5", "synth", "--out", s(&a)]);
    f.ok(&["--seed", "5", "synth", "--out", s(&b)]);
    f.ok(&["--seed", "6", "synth", "--out", s(&c)]);
    for name in [
        "vectors.geojson",
        "roads.pgm",
        "roads.json",
        "intersections.csv",
    ] {
        assert_eq!(read(&a.join(name)), read(&b.join(name)), "{name}");
    }
    assert_ne!(
        read(&a.join("vectors.geojson")),
        read(&c.join("vectors.geojson"))
    );
}

#[test]
fn invalid_config_names_the_field() {
    let f = Fixture::new("[synth]\nirregularity = 3.0\n");
    let out = f.run(&["synth", "--out", s(&f.path("x"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("irregularity"), "{err}");
    assert!(!f.path("x").exists());

    let f = Fixture::new("[synth]\nextent = 3.0\n");
    let out = f.run(&["synth", "--out", s(&f.path("x"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("extent"));
}

#[test]
fn build_index_is_deterministic() {
    let f = Fixture::new(SMALL);
    let d = f.city("city");
    let again = f.path("again.bin");
    f.ok(&[
        "build-index",
        "--vectors",
        s(&d.join("vectors.geojson")),
        "--out",
        s(&again),
    ]);
    assert_eq!(read(&d.join("index.bin")), read(&again));
    let idx = io::read_index(&again).unwrap();
    assert!(!idx.is_empty());
    assert_eq!(idx.tiles.len(), 1);
}

#[test]
fn build_index_rejects_bad_inputs() {
    let f = Fixture::new(SMALL);
    let out = f.run(&[
        "build-index",
        "--vectors",
        s(&f.path("none.geojson")),
        "--out",
        s(&f.path("i.bin")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(
        f.path("bad.geojson"),
        "{\"type\": \"FeatureCollection\", \"features\": [",
    )
    .unwrap();
    let out = f.run(&[
        "build-index",
        "--vectors",
        s(&f.path("bad.geojson")),
        "--out",
        s(&f.path("i.bin")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!f.path("i.bin").exists());
}

#[test]
fn build_index_accepts_a_metric_file() {
    let f = Fixture::new(SMALL);
    let d = f.city("city");
    let cfg = RunConfig::load(&f.config).unwrap();
    let metric = roadloc_core::descriptors::DiagonalMetric {
        weights: vec![2.0; cfg.descriptor.dim()],
        margin: 0.5,
    };
    io::write_json(&f.path("metric.json"), &metric).unwrap();
    let out = f.path("m.bin");
    f.ok(&[
        "build-index",
        "--vectors",
        s(&d.join("vectors.geojson")),
        "--metric",
        s(&f.path("metric.json")),
        "--out",
        s(&out),
    ]);
    assert_eq!(io::read_index(&out).unwrap().metric, metric);

    let short = roadloc_core::descriptors::DiagonalMetric {
        weights: vec![1.0; 3],
        margin: 1.0,
    };
    io::write_json(&f.path("short.json"), &short).unwrap();
    let res = f.run(&[
        "build-index",
        "--vectors",
        s(&d.join("vectors.geojson")),
        "--metric",
        s(&f.path("short.json")),
        "--out",
        s(&out),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn localize_identity_query_has_zero_error() {
    let f = Fixture::new(SMALL);
    let d = f.city("city");
    let idx = io::read_index(&d.join("index.bin")).unwrap();
    let query = f.path("tile.pgm");
    io::write_raster(&query, &idx.tiles[0]).unwrap();
    let out = f.path("loc");
    f.ok(&[
        "localize",
        "--query",
        s(&query),
        "--index",
        s(&d.join("index.bin")),
        "--out",
        s(&out),
    ]);
    let records: Vec<LocalizationRecord> = io::read_json(&out.join("results.json")).unwrap();
    assert!(!records.is_empty());
    assert!(out.join("results.csv").is_file());
    let tile = &idx.tiles[0];
    for r in &records {
        let truth = tile.pixel_to_world(roadloc_core::Point2::new(r.query_x_px, r.query_y_px));
        let (e, n) = (r.east_m.expect("localized"), r.north_m.expect("localized"));
        let err = ((e - truth.east).powi(2) + (n - truth.north).powi(2)).sqrt();
        assert!(err < 1e-6, "query {} error {err}", r.query_id);
    }
}

#[test]
fn localize_matches_the_library_byte_for_byte() {
    let f = Fixture::new(SMALL);
    let d = f.city("city");
    let idx = io::read_index(&d.join("index.bin")).unwrap();
    let (query, _) = perturb(&idx.tiles[0], &PerturbationSpec::default(), 11).unwrap();
    let qpath = f.path("query.pgm");
    io::write_raster(&qpath, &query).unwrap();
    let out = f.path("loc");
    f.ok(&[
        "localize",
        "--query",
        s(&qpath),
        "--index",
        s(&d.join("index.bin")),
        "--out",
        s(&out),
    ]);

    let cfg = RunConfig::load(&f.config).unwrap();
    let reread = io::read_raster(&qpath).unwrap();
    let lib = geolocalize(&reread, &idx, &cfg.localize).unwrap();
    let records: Vec<LocalizationRecord> = lib.iter().map(LocalizationRecord::from).collect();
    let expected = f.path("expected.json");
    io::write_json(&expected, &records).unwrap();
    assert_eq!(read(&out.join("results.json")), read(&expected));
}

#[test]
fn localize_reports_missing_index() {
    let f = Fixture::new(SMALL);
    let d = f.path("city");
    f.ok(&["synth", "--out", s(&d)]);
    let out = f.run(&[
        "localize",
        "--query",
        s(&d.join("roads.pgm")),
        "--index",
        s(&f.path("missing.bin")),
        "--out",
        s(&f.path("loc")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.bin"));
}

#[test]
fn localize_is_deterministic_across_thread_counts() {
    let f = Fixture::new(SMALL);
    let d = f.city("city");
    let many = Fixture::new("threads = 3\n[synth]\nextent_m = 400.0\n");
    let idx = io::read_index(&d.join("index.bin")).unwrap();
    let (query, _) = perturb(&idx.tiles[0], &PerturbationSpec::default(), 3).unwrap();
    let qpath = f.path("query.pgm");
    io::write_raster(&qpath, &query).unwrap();
    let (a, b) = (f.path("a"), f.path("b"));
    f.ok(&[
        "localize",
        "--query",
        s(&qpath),
        "--index",
        s(&d.join("index.bin")),
        "--out",
        s(&a),
    ]);
    many.ok(&[
        "localize",
        "--query",
        s(&qpath),
        "--index",
        s(&d.join("index.bin")),
        "--out",
        s(&b),
    ]);
    assert_eq!(read(&a.join("results.json")), read(&b.join("results.json")));
    assert_eq!(read(&a.join("results.csv")), read(&b.join("results.csv")));
}

const TINY_BENCH: &str = r#"threads = 1
[evaluate]
radii_m = [100.0, 200.0]
primary_radius_m = 200.0
[evaluate.training.finetune]
epochs = 200
[evaluate.enhancement]
localize_radius_m = 250.0
"#;

fn tiny_spec() -> BenchmarkSpec {
    let mut spec = BenchmarkSpec {
        seed: 3,
        separation_m: 2000.0,
        ..Default::default()
    };
    spec.city.extent_m = 700.0;
    spec
}

#[test]
fn evaluate_writes_a_deterministic_report() {
    let f = Fixture::new(TINY_BENCH);
    let bench = f.path("bench");
    io::write_json(&bench.join("benchmark.json"), &tiny_spec()).unwrap();
    let (a, b) = (f.path("a"), f.path("b"));
    f.ok(&["evaluate", "--benchmark", s(&bench), "--out", s(&a)]);
    f.ok(&["evaluate", "--benchmark", s(&bench), "--out", s(&b)]);
    for name in [
        "report.json",
        "curves.csv",
        "ranking.csv",
        "histogram.csv",
        "outcomes.csv",
    ] {
        assert_eq!(read(&a.join(name)), read(&b.join(name)), "{name}");
    }
    let report: EvalReport = io::read_json(&a.join("report.json")).unwrap();
    assert_eq!(report.seed, 3);
    assert_eq!(report.curves.len(), 8);
    let binned: usize = report.primary.histogram.iter().map(|b| b.count).sum();
    assert_eq!(binned + report.primary.unlocalized, report.query_count);
    assert!(report.enhancement.is_some());

    let svg = f.path("plot.svg");
    f.ok(&[
        "plot",
        "--report",
        s(&a.join("report.json")),
        "--out",
        s(&svg),
    ]);
    let again = f.path("again.svg");
    f.ok(&[
        "plot",
        "--report",
        s(&a.join("report.json")),
        "--out",
        s(&again),
    ]);
    let text = String::from_utf8(read(&svg)).unwrap();
    assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
    assert_eq!(read(&svg), read(&again));
}

#[test]
fn evaluate_rejects_a_bad_benchmark() {
    let f = Fixture::new(TINY_BENCH);
    let bench = f.path("bench");
    std::fs::create_dir_all(&bench).unwrap();
    std::fs::write(bench.join("benchmark.json"), "{\"seed\": \"x\"}").unwrap();
    let out = f.run(&["evaluate", "--benchmark", s(&bench)]);
    assert_eq!(out.status.code(), Some(2));

    let overlapping = BenchmarkSpec {
        separation_m: 10.0,
        ..tiny_spec()
    };
    io::write_json(&bench.join("benchmark.json"), &overlapping).unwrap();
    let out = f.run(&["evaluate", "--benchmark", s(&bench)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("separation_m"));
}

#[test]
fn enhance_round_trip_and_errors() {
    let f = Fixture::new(SMALL);
    let d = f.city("city");
    let idx = io::read_index(&d.join("index.bin")).unwrap();
    let spec = PerturbationSpec {
        pixel_dropout: 0.1,
        jitter_px: 1.0,
        ..PerturbationSpec::none()
    };
    let (query, _) = perturb(&idx.tiles[0], &spec, 9).unwrap();
    let qpath = f.path("query.pgm");
    io::write_raster(&qpath, &query).unwrap();
    let (a, b) = (f.path("a.pgm"), f.path("b.pgm"));
    f.ok(&[
        "enhance",
        "--query",
        s(&qpath),
        "--index",
        s(&d.join("index.bin")),
        "--out",
        s(&a),
    ]);
    f.ok(&[
        "enhance",
        "--query",
        s(&qpath),
        "--index",
        s(&d.join("index.bin")),
        "--out",
        s(&b),
    ]);
    assert_eq!(read(&a), read(&b));
    let enhanced = io::read_raster(&a).unwrap();
    let before = roadloc_core::pipeline::road_f_measure(&query, &idx.tiles[0]).unwrap();
    let after = roadloc_core::pipeline::road_f_measure(&enhanced, &idx.tiles[0]).unwrap();
    assert!(after > before, "{before} -> {after}");

    let blank = roadloc_core::RoadRaster::zeros(50, 50, *query.geo()).unwrap();
    io::write_raster(&f.path("blank.pgm"), &blank).unwrap();
    let out = f.run(&[
        "enhance",
        "--query",
        s(&f.path("blank.pgm")),
        "--index",
        s(&d.join("index.bin")),
        "--out",
        s(&f.path("c.pgm")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn plot_rejects_missing_and_malformed_reports() {
    let f = Fixture::new(SMALL);
    let out = f.run(&[
        "plot",
        "--report",
        s(&f.path("none.json")),
        "--out",
        s(&f.path("p.svg")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(f.path("bad.json"), "{}").unwrap();
    let out = f.run(&[
        "plot",
        "--report",
        s(&f.path("bad.json")),
        "--out",
        s(&f.path("p.svg")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!f.path("p.svg").exists());
}

#[test]
fn json_diagnostics_are_one_object_per_line() {
    let f = Fixture::new(SMALL);
    let out = f.ok(&["--json", "synth", "--out", s(&f.path("city"))]);
    let text = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 5);
    assert!(lines
        .iter()
        .all(|l| l["level"] == "info" && l["event"] == "wrote"));

    let out = f.run(&[
        "--json", "localize", "--query", "q.pgm", "--index", "i.bin", "--out", "o",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["code"], 2);
    assert_eq!(err["kind"], "data");
}
