//! Parallel drivers for the core pipeline. Queries are resolved concurrently
//! and collected in detection order, so results equal the sequential ones.

use rayon::prelude::*;
use roadloc_core::index::{describe_raster, IntersectionIndex};
use roadloc_core::map_model::{Intersection, RoadRaster};
use roadloc_core::pipeline::{resolve, LocalizationResult, LocalizeConfig};
use roadloc_core::region_match::RegionMatcher;
use roadloc_core::{Error, Result};

/// Parallel counterpart of [`roadloc_core::pipeline::localize`].
pub fn localize(
    query: &RoadRaster,
    detections: &[Intersection],
    index: &IntersectionIndex,
    cfg: &LocalizeConfig,
) -> Result<Vec<LocalizationResult>> {
    cfg.validate()?;
    let lists = RegionMatcher::new(detections, index).candidates_all(&cfg.matching)?;
    Ok(detections
        .par_iter()
        .zip(lists)
        .map(|(q, list)| match list {
            Ok(list) => resolve(query, q, &list, index, cfg),
            Err(_) => LocalizationResult::unlocalized(q, Vec::new()),
        })
        .collect())
}

/// Parallel counterpart of [`roadloc_core::pipeline::geolocalize`].
pub fn geolocalize(
    query: &RoadRaster,
    index: &IntersectionIndex,
    cfg: &LocalizeConfig,
) -> Result<Vec<LocalizationResult>> {
    cfg.validate()?;
    if query.road_count() == 0 {
        return Err(Error::NoRoadPixels);
    }
    let detections = describe_raster(query, &cfg.detection, &index.descriptor, 0)?;
    if detections.is_empty() {
        return Ok(Vec::new());
    }
    localize(query, &detections, index, cfg)
}
