//! On-disk formats.
//!
//! * Rasters: binary PGM (`P5`, maxval 255, value = round(255 * v)) with a
//!   sidecar JSON georeference next to it (`roads.pgm` → `roads.json`).
//! * Road vectors: a GeoJSON-like `FeatureCollection` of `LineString`
//!   features, coordinates `[east_m, north_m]`, each with a positive
//!   `width_m` property.
//! * Intersections and detections: CSV `id,x_px,y_px,east_m,north_m,score`.
//! * Index: versioned little-endian binary, see [`write_index`].
//! * Candidates, localization results and alignment results: JSON.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use roadloc_core::alignment::AlignmentResult;
use roadloc_core::descriptors::{Descriptor, DescriptorConfig, DiagonalMetric};
use roadloc_core::geom::{Point2, WorldPoint};
use roadloc_core::index::IntersectionIndex;
use roadloc_core::map_model::{GeoTransform, Intersection, RoadRaster, RoadSegment, RoadVectorSet};
use roadloc_core::pipeline::LocalizationResult;
use roadloc_core::region_match::CandidateList;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: line {line}, column {column}: {reason}")]
    Syntax {
        path: PathBuf,
        line: usize,
        column: usize,
        reason: String,
    },
    #[error("{path}: feature {feature}: {reason}")]
    Feature {
        path: PathBuf,
        feature: usize,
        reason: String,
    },
    #[error("{path}: index format version {found} is not supported (expected {expected})")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: {source}")]
    Model {
        path: PathBuf,
        #[source]
        source: roadloc_core::Error,
    },
}

pub type Result<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn model_err(path: &Path) -> impl FnOnce(roadloc_core::Error) -> IoError + '_ {
    move |source| IoError::Model {
        path: path.to_path_buf(),
        source,
    }
}

fn json_err(path: &Path, e: serde_json::Error) -> IoError {
    IoError::Syntax {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        reason: e.to_string(),
    }
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::File::create(path).map_err(io_err(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| format_err(path, e.to_string()))?;
    f.write_all(b"\n").map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| json_err(path, e))
}

/// Sidecar georeference record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Georef {
    pub origin_east: f64,
    pub origin_north: f64,
    pub meters_per_pixel: f64,
    pub rotation_deg: f64,
}

impl From<GeoTransform> for Georef {
    fn from(g: GeoTransform) -> Self {
        Self {
            origin_east: g.origin_east,
            origin_north: g.origin_north,
            meters_per_pixel: g.meters_per_pixel,
            rotation_deg: g.rotation_deg,
        }
    }
}

pub fn sidecar_path(pgm: &Path) -> PathBuf {
    pgm.with_extension("json")
}

/// PGM bytes for a raster.
pub fn encode_pgm(r: &RoadRaster) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", r.width(), r.height()).into_bytes();
    out.extend(r.values().iter().map(|&v| (v * 255.0).round() as u8));
    out
}

/// Parses a binary PGM with maxval ≤ 255 into values in `[0, 1]`.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(format_err(path, "not a binary PGM (expected magic P5)"));
    }
    let mut num = |what: &str| -> Result<usize> {
        token()?
            .parse()
            .map_err(|_| format_err(path, format!("bad PGM {what}")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if !(1..=255).contains(&maxval) {
        return Err(format_err(path, format!("unsupported PGM maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the pixels.
    let data = bytes.get(pos + 1..).unwrap_or_default();
    if data.len() != w * h {
        return Err(format_err(
            path,
            format!("expected {} pixel bytes, found {}", w * h, data.len()),
        ));
    }
    let scale = maxval as f32;
    Ok((
        w,
        h,
        data.iter().map(|&b| (b as f32 / scale).min(1.0)).collect(),
    ))
}

/// Writes `path` (PGM) and its georeference sidecar.
pub fn write_raster(path: &Path, r: &RoadRaster) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(&encode_pgm(r)).map_err(io_err(path))?;
    write_json(&sidecar_path(path), &Georef::from(*r.geo()))
}

pub fn read_raster(path: &Path) -> Result<RoadRaster> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (w, h, values) = decode_pgm(&bytes, path)?;
    let side = sidecar_path(path);
    let g: Georef = read_json(&side)?;
    let geo = GeoTransform::new(
        g.origin_east,
        g.origin_north,
        g.meters_per_pixel,
        g.rotation_deg,
    )
    .map_err(model_err(&side))?;
    RoadRaster::from_values(w, h, values, geo).map_err(model_err(path))
}

#[derive(Serialize)]
struct FeatureCollectionOut<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    features: Vec<FeatureOut<'a>>,
}

#[derive(Serialize)]
struct FeatureOut<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    geometry: GeometryOut,
    properties: PropertiesOut<'a>,
}

#[derive(Serialize)]
struct GeometryOut {
    #[serde(rename = "type")]
    kind: &'static str,
    coordinates: Vec<[f64; 2]>,
}

#[derive(Serialize)]
struct PropertiesOut<'a> {
    width_m: &'a f64,
}

pub fn encode_vectors(v: &RoadVectorSet) -> String {
    let fc = FeatureCollectionOut {
        kind: "FeatureCollection",
        features: v
            .segments
            .iter()
            .map(|s| FeatureOut {
                kind: "Feature",
                geometry: GeometryOut {
                    kind: "LineString",
                    coordinates: s.points.iter().map(|p| [p.east, p.north]).collect(),
                },
                properties: PropertiesOut {
                    width_m: &s.width_m,
                },
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&fc).expect("vector sets always serialize");
    s.push('\n');
    s
}

pub fn write_vectors(path: &Path, v: &RoadVectorSet) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(encode_vectors(v).as_bytes())
        .map_err(io_err(path))
}

/// Parses the road-vector schema. Syntax errors carry line and column;
/// schema errors name the offending feature index.
pub fn parse_vectors(text: &str, path: &Path) -> Result<RoadVectorSet> {
    let doc: Value = serde_json::from_str(text).map_err(|e| json_err(path, e))?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(format_err(
            path,
            "top-level object must be a FeatureCollection",
        ));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| format_err(path, "missing \"features\" array"))?;
    let mut segments = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let bad = |reason: &str| IoError::Feature {
            path: path.to_path_buf(),
            feature: i,
            reason: reason.to_string(),
        };
        let geom = f.get("geometry").ok_or_else(|| bad("missing geometry"))?;
        match geom.get("type").and_then(Value::as_str) {
            Some("LineString") => {}
            Some(other) => return Err(bad(&format!("geometry type {other} is not LineString"))),
            None => return Err(bad("geometry without a type")),
        }
        let coords = geom
            .get("coordinates")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing coordinates"))?;
        let mut points = Vec::with_capacity(coords.len());
        for c in coords {
            match c.as_array().map(|a| a.as_slice()) {
                Some([e, n, ..]) => match (e.as_f64(), n.as_f64()) {
                    (Some(e), Some(n)) if e.is_finite() && n.is_finite() => {
                        points.push(WorldPoint::new(e, n))
                    }
                    _ => return Err(bad("coordinates must be finite numbers")),
                },
                _ => return Err(bad("each coordinate must be [east, north]")),
            }
        }
        let width = f
            .get("properties")
            .and_then(|p| p.get("width_m"))
            .ok_or_else(|| bad("missing width_m property"))?
            .as_f64()
            .ok_or_else(|| bad("width_m must be a number"))?;
        if !(width > 0.0 && width.is_finite()) {
            return Err(bad(&format!("width_m must be > 0, got {width}")));
        }
        let seg = RoadSegment::new(points, width).map_err(|e| bad(&e.to_string()))?;
        segments.push(seg);
    }
    Ok(RoadVectorSet { segments })
}

pub fn read_vectors(path: &Path) -> Result<RoadVectorSet> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_vectors(&text, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IntersectionRow {
    id: u64,
    x_px: f64,
    y_px: f64,
    east_m: f64,
    north_m: f64,
    score: f64,
}

pub fn write_intersections(path: &Path, items: &[Intersection]) -> Result<()> {
    let f = create(path)?;
    let mut w = csv::Writer::from_writer(f);
    for i in items {
        w.serialize(IntersectionRow {
            id: i.id,
            x_px: i.pixel_pos.x,
            y_px: i.pixel_pos.y,
            east_m: i.world_pos.east,
            north_m: i.world_pos.north,
            score: i.score,
        })
        .map_err(|e| format_err(path, e.to_string()))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_intersections(path: &Path) -> Result<Vec<Intersection>> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(f);
    r.deserialize::<IntersectionRow>()
        .map(|row| {
            let row = row.map_err(|e| format_err(path, e.to_string()))?;
            Ok(Intersection {
                id: row.id,
                pixel_pos: Point2::new(row.x_px, row.y_px),
                world_pos: WorldPoint::new(row.east_m, row.north_m),
                score: row.score,
                descriptor: None,
            })
        })
        .collect()
}

const INDEX_MAGIC: &[u8; 8] = b"RLOCIDX\0";
pub const INDEX_VERSION: u32 = 1;

/// Index layout, all little-endian:
///
/// ```text
/// magic "RLOCIDX\0" | version u32 | D u32 | margin f64 | weights D×f64
/// | radius_m f64 | inner_radius_m f64 | rings u32 | sectors u32
/// | count u64 | count × record | tiles u32 | tiles × tile
/// record: id u64 | east f64 | north f64 | x_px f64 | y_px f64 | score f64
///         | has_descriptor u8 | D×f64 (zeros when absent)
/// tile:   width u32 | height u32 | origin_east f64 | origin_north f64
///         | meters_per_pixel f64 | rotation_deg f64 | width×height u8 (value×255)
/// ```
pub fn encode_index(idx: &IntersectionIndex) -> Vec<u8> {
    let d = idx.metric.weights.len();
    let mut out = Vec::with_capacity(64 + idx.len() * (49 + 8 * d));
    out.extend_from_slice(INDEX_MAGIC);
    out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&idx.metric.margin.to_le_bytes());
    for w in &idx.metric.weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    let dc = &idx.descriptor;
    out.extend_from_slice(&dc.radius_m.to_le_bytes());
    out.extend_from_slice(&dc.inner_radius_m.to_le_bytes());
    out.extend_from_slice(&(dc.rings as u32).to_le_bytes());
    out.extend_from_slice(&(dc.sectors as u32).to_le_bytes());
    out.extend_from_slice(&(idx.len() as u64).to_le_bytes());
    for e in &idx.entries {
        out.extend_from_slice(&e.id.to_le_bytes());
        for v in [
            e.world_pos.east,
            e.world_pos.north,
            e.pixel_pos.x,
            e.pixel_pos.y,
            e.score,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &e.descriptor {
            Some(desc) => {
                out.push(1);
                for v in &desc.values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            None => {
                out.push(0);
                out.extend(std::iter::repeat_n(0u8, 8 * d));
            }
        }
    }
    out.extend_from_slice(&(idx.tiles.len() as u32).to_le_bytes());
    for t in &idx.tiles {
        out.extend_from_slice(&(t.width() as u32).to_le_bytes());
        out.extend_from_slice(&(t.height() as u32).to_le_bytes());
        let g = t.geo();
        for v in [
            g.origin_east,
            g.origin_north,
            g.meters_per_pixel,
            g.rotation_deg,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend(t.values().iter().map(|&v| (v * 255.0).round() as u8));
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let s = self.bytes.get(self.pos..end).ok_or_else(|| {
            format_err(self.path, format!("index truncated at byte {}", self.pos))
        })?;
        self.pos = end;
        Ok(s.try_into().expect("slice has length N"))
    }
    fn u32(&mut self) -> Result<u32> {
        self.take::<4>().map(u32::from_le_bytes)
    }
    fn u64(&mut self) -> Result<u64> {
        self.take::<8>().map(u64::from_le_bytes)
    }
    fn f64(&mut self) -> Result<f64> {
        self.take::<8>().map(f64::from_le_bytes)
    }
}

pub fn decode_index(bytes: &[u8], path: &Path) -> Result<IntersectionIndex> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        path,
    };
    if &c.take::<8>()? != INDEX_MAGIC {
        return Err(format_err(path, "not an index file (bad magic bytes)"));
    }
    let version = c.u32()?;
    if version != INDEX_VERSION {
        return Err(IoError::Version {
            path: path.to_path_buf(),
            found: version,
            expected: INDEX_VERSION,
        });
    }
    let d = c.u32()? as usize;
    let margin = c.f64()?;
    let weights = (0..d).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
    let descriptor = DescriptorConfig {
        radius_m: c.f64()?,
        inner_radius_m: c.f64()?,
        rings: c.u32()? as usize,
        sectors: c.u32()? as usize,
    };
    if descriptor.dim() != d {
        return Err(format_err(path, "descriptor layout does not match D"));
    }
    let count = c.u64()? as usize;
    let record = 49 + 8 * d;
    if bytes.len() - c.pos < count.saturating_mul(record) {
        return Err(format_err(
            path,
            format!(
                "expected {count} records of {record} bytes, found {} bytes",
                bytes.len() - c.pos
            ),
        ));
    }
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let id = c.u64()?;
        let (east, north, x, y, score) = (c.f64()?, c.f64()?, c.f64()?, c.f64()?, c.f64()?);
        let has = c.take::<1>()?[0];
        let values = (0..d).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        entries.push(Intersection {
            id,
            pixel_pos: Point2::new(x, y),
            world_pos: WorldPoint::new(east, north),
            score,
            descriptor: match has {
                0 => None,
                1 => Some(Descriptor::new(values)),
                _ => return Err(format_err(path, "corrupt descriptor flag")),
            },
        });
    }
    let n_tiles = c.u32()? as usize;
    let mut tiles = Vec::with_capacity(n_tiles.min(1024));
    for _ in 0..n_tiles {
        let (w, h) = (c.u32()? as usize, c.u32()? as usize);
        let geo =
            GeoTransform::new(c.f64()?, c.f64()?, c.f64()?, c.f64()?).map_err(model_err(path))?;
        let end = c.pos + w.saturating_mul(h);
        let data = bytes
            .get(c.pos..end)
            .ok_or_else(|| format_err(path, format!("index truncated at byte {}", c.pos)))?;
        c.pos = end;
        let values = data.iter().map(|&b| b as f32 / 255.0).collect();
        tiles.push(RoadRaster::from_values(w, h, values, geo).map_err(model_err(path))?);
    }
    if c.pos != bytes.len() {
        return Err(format_err(
            path,
            format!("{} trailing bytes", bytes.len() - c.pos),
        ));
    }
    let mut idx =
        IntersectionIndex::from_entries(entries, DiagonalMetric { weights, margin }, descriptor)
            .map_err(model_err(path))?;
    idx.tiles = tiles;
    Ok(idx)
}

pub fn write_index(path: &Path, idx: &IntersectionIndex) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(&encode_index(idx)).map_err(io_err(path))
}

pub fn read_index(path: &Path) -> Result<IntersectionIndex> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(io_err(path))?
        .read_to_end(&mut bytes)
        .map_err(io_err(path))?;
    decode_index(&bytes, path)
}

/// JSON form of an alignment result; the matrix is row-major
/// `[a, b, tx, c, d, ty]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub matrix: [f64; 6],
    pub inlier_count: usize,
    pub chamfer: Option<f64>,
    pub accepted: bool,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl From<&AlignmentResult> for AlignmentRecord {
    fn from(r: &AlignmentResult) -> Self {
        Self {
            matrix: r.transform.row_major(),
            inlier_count: r.inlier_count,
            chamfer: finite(r.chamfer),
            accepted: r.accepted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub reference_id: u64,
    pub s_t: f64,
    pub s_l: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateListRecord {
    pub query_id: u64,
    pub entries: Vec<CandidateRecord>,
}

impl From<&CandidateList> for CandidateListRecord {
    fn from(l: &CandidateList) -> Self {
        Self {
            query_id: l.query_id,
            entries: l
                .entries
                .iter()
                .map(|e| CandidateRecord {
                    reference_id: e.reference_id,
                    s_t: e.distance.s_t,
                    s_l: e.distance.s_l,
                    d: e.distance.d,
                })
                .collect(),
        }
    }
}

/// JSON form of a localization result. Infinite or undefined Chamfer values
/// are written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRecord {
    pub query_id: u64,
    pub query_x_px: f64,
    pub query_y_px: f64,
    pub reference_id: Option<u64>,
    pub matrix: Option<[f64; 6]>,
    pub chamfer: Option<f64>,
    pub inlier_count: usize,
    pub east_m: Option<f64>,
    pub north_m: Option<f64>,
    pub candidates: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error_m: Option<f64>,
}

impl From<&LocalizationResult> for LocalizationRecord {
    fn from(r: &LocalizationResult) -> Self {
        Self {
            query_id: r.query_id,
            query_x_px: r.query_pixel.x,
            query_y_px: r.query_pixel.y,
            reference_id: r.reference_id,
            matrix: r.transform.map(|t| t.row_major()),
            chamfer: finite(r.chamfer),
            inlier_count: r.inlier_count,
            east_m: r.world_estimate.map(|w| w.east),
            north_m: r.world_estimate.map(|w| w.north),
            candidates: r.candidates.clone(),
            error_m: None,
        }
    }
}

/// Localization results as CSV, one row per query.
pub fn write_localizations_csv(path: &Path, rows: &[LocalizationRecord]) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        query_id: u64,
        query_x_px: f64,
        query_y_px: f64,
        reference_id: Option<u64>,
        east_m: Option<f64>,
        north_m: Option<f64>,
        chamfer: Option<f64>,
        inlier_count: usize,
    }
    let f = create(path)?;
    let mut w = csv::Writer::from_writer(f);
    for r in rows {
        w.serialize(Row {
            query_id: r.query_id,
            query_x_px: r.query_x_px,
            query_y_px: r.query_y_px,
            reference_id: r.reference_id,
            east_m: r.east_m,
            north_m: r.north_m,
            chamfer: r.chamfer,
            inlier_count: r.inlier_count,
        })
        .map_err(|e| format_err(path, e.to_string()))?;
    }
    w.flush().map_err(io_err(path))
}

/// Lists `*.pgm` files in a directory, sorted by name.
pub fn list_pgm(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(io_err(dir))? {
        let p = e.map_err(io_err(dir))?.path();
        if p.extension().is_some_and(|x| x == "pgm") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}
