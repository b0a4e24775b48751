//! The single run configuration file.
//!
//! Every section is optional and falls back to its documented default;
//! unknown keys are rejected. [`RunConfig::validate`] runs before any work.

use std::path::Path;

use roadloc_core::descriptors::DescriptorConfig;
use roadloc_core::geom::WorldPoint;
use roadloc_core::ingest::{rasterize, SyntheticCitySpec};
use roadloc_core::map_model::{GeoTransform, RoadRaster, RoadVectorSet};
use roadloc_core::pipeline::{EnhanceConfig, LocalizeConfig};
use serde::{Deserialize, Serialize};

use crate::bench::{BenchmarkSpec, EvalConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("[{section}] {source}")]
    Invalid {
        section: &'static str,
        #[source]
        source: roadloc_core::Error,
    },
}

/// Frame used when rasterizing road vectors for an index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RasterConfig {
    pub meters_per_pixel: f64,
    /// Empty border added around the vectors' bounding box.
    pub margin_m: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            meters_per_pixel: 1.0,
            margin_m: 40.0,
        }
    }
}

impl RasterConfig {
    pub fn validate(&self) -> roadloc_core::Result<()> {
        if !(self.meters_per_pixel.is_finite() && self.meters_per_pixel > 0.0) {
            return Err(invalid("meters_per_pixel", "must be finite and > 0"));
        }
        if !(self.margin_m.is_finite() && self.margin_m >= 0.0) {
            return Err(invalid("margin_m", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// North-up raster covering the vectors' bounding box plus the margin.
    pub fn rasterize(&self, v: &RoadVectorSet) -> roadloc_core::Result<RoadRaster> {
        let (lo, hi) = v
            .bounds()
            .ok_or(roadloc_core::Error::EmptyInput("road vectors"))?;
        let widest = v.segments.iter().map(|s| s.width_m).fold(0.0, f64::max);
        let pad = self.margin_m + widest / 2.0;
        let geo = GeoTransform::north_up(
            WorldPoint::new(lo.east - pad, hi.north + pad),
            self.meters_per_pixel,
        );
        let cells = |span: f64| (span + 2.0 * pad) / self.meters_per_pixel;
        let width = cells(hi.east - lo.east).ceil() as usize + 1;
        let height = cells(hi.north - lo.north).ceil() as usize + 1;
        rasterize(v, geo, width, height)
    }
}

fn invalid(name: &'static str, reason: &str) -> roadloc_core::Error {
    roadloc_core::Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub raster: RasterConfig,
    /// City generated by `synth`.
    pub synth: SyntheticCitySpec,
    pub descriptor: DescriptorConfig,
    pub localize: LocalizeConfig,
    pub enhance: EnhanceConfig,
    pub evaluate: EvalConfig,
    /// Benchmark used by `evaluate` when the benchmark directory has no
    /// `benchmark.json`.
    pub benchmark: BenchmarkSpec,
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            source: Box::new(e),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let at = |section| move |source| ConfigError::Invalid { section, source };
        self.raster.validate().map_err(at("raster"))?;
        self.synth.validate().map_err(at("synth"))?;
        self.descriptor.validate().map_err(at("descriptor"))?;
        self.localize.validate().map_err(at("localize"))?;
        self.enhance.validate().map_err(at("enhance"))?;
        self.evaluate.validate().map_err(at("evaluate"))?;
        self.benchmark.validate().map_err(at("benchmark"))?;
        Ok(())
    }

    /// Applies a `--seed` override to every seeded section.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.benchmark.seed = seed;
        self.localize.align.ransac.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::parse(text, Path::new("test.toml"))
    }

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn default_round_trips_through_toml() {
        let text = toml::to_string(&RunConfig::default()).unwrap();
        assert_eq!(parse(&text).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse("[localize]\ncrop_radius = 3.0\n").unwrap_err();
        assert!(err.to_string().contains("crop_radius"), "{err}");
        assert!(parse("bogus = 1\n").is_err());
    }

    #[test]
    fn invalid_values_name_section_and_field() {
        let err = parse("[localize.align.ransac]\ninlier_threshold_px = -1.0\n").unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("[localize]") && msg.contains("inlier_threshold_px"),
            "{msg}"
        );
        let err = parse("[raster]\nmeters_per_pixel = 0.0\n").unwrap_err();
        assert!(err.to_string().contains("meters_per_pixel"));
    }

    #[test]
    fn nested_sections_override_single_fields() {
        let cfg =
            parse("threads = 2\n[evaluate]\nradii_m = [100.0, 300.0]\n[localize.match]\nk = 3\n")
                .unwrap();
        assert_eq!(cfg.threads, 2);
        assert_eq!(cfg.evaluate.radii_m, vec![100.0, 300.0]);
        assert_eq!(cfg.localize.matching.k, 3);
        assert_eq!(
            cfg.localize.crop_radius_m,
            LocalizeConfig::default().crop_radius_m
        );
    }

    #[test]
    fn seed_override_reaches_every_seeded_section() {
        let cfg = RunConfig::default().with_seed(99);
        assert_eq!(
            (
                cfg.synth.seed,
                cfg.benchmark.seed,
                cfg.localize.align.ransac.seed
            ),
            (99, 99, 99)
        );
    }

    #[test]
    fn raster_frame_covers_vectors_with_margin() {
        let city = roadloc_core::ingest::generate_city(&SyntheticCitySpec {
            extent_m: 300.0,
            ..Default::default()
        })
        .unwrap();
        let rc = RasterConfig {
            meters_per_pixel: 1.0,
            margin_m: 10.0,
        };
        let r = rc.rasterize(&city.vectors).unwrap();
        let (lo, hi) = city.vectors.bounds().unwrap();
        for w in [
            lo,
            hi,
            WorldPoint::new(lo.east, hi.north),
            WorldPoint::new(hi.east, lo.north),
        ] {
            let p = r.world_to_pixel(w);
            assert!(p.x >= 10.0 && p.y >= 10.0, "{p:?}");
            assert!(
                p.x <= r.width() as f64 - 11.0 && p.y <= r.height() as f64 - 11.0,
                "{p:?}"
            );
        }
        assert!(r.values().iter().any(|&v| v > 0.5));
    }
}
