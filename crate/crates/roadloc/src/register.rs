//! Whole-raster registration of a localized query onto a reference tile.

use roadloc_core::alignment::{ransac_affine, warp, RansacConfig};
use roadloc_core::geom::{AffineTransform2D, Point2};
use roadloc_core::index::IntersectionIndex;
use roadloc_core::map_model::RoadRaster;
use roadloc_core::pipeline::{enhance_roads, EnhanceConfig, LocalizationResult, LocalizeConfig};
use roadloc_core::{Error, Result};

use crate::localize::geolocalize;

/// Query pixel → tile pixel transform for one reference tile.
#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub tile: usize,
    pub transform: AffineTransform2D,
    pub inliers: usize,
}

/// Fits one affine from every localized query intersection to its world
/// estimate, expressed in the pixels of the tile holding most estimates.
/// Outlying localizations are removed by RANSAC.
pub fn register_query(
    results: &[LocalizationResult],
    index: &IntersectionIndex,
    ransac: &RansacConfig,
) -> Option<Registration> {
    let mut votes = vec![0usize; index.tiles.len()];
    for w in results.iter().filter_map(|r| r.world_estimate) {
        if let Some(t) = index
            .tiles
            .iter()
            .position(|t| t.contains_pixel(t.world_to_pixel(w)))
        {
            votes[t] += 1;
        }
    }
    let tile = (0..votes.len()).max_by_key(|&t| (votes[t], std::cmp::Reverse(t)))?;
    let geo = *index.tiles[tile].geo();
    let (src, dst): (Vec<Point2>, Vec<Point2>) = results
        .iter()
        .filter_map(|r| {
            r.world_estimate
                .map(|w| (r.query_pixel, geo.world_to_pixel(w)))
        })
        .unzip();
    let fit = ransac_affine(&src, &dst, ransac, (0.5, 2.0))?;
    Some(Registration {
        tile,
        transform: fit.transform,
        inliers: fit.inliers.len(),
    })
}

/// The registered tile resampled into the query's pixel grid.
pub fn aligned_reference(
    query: &RoadRaster,
    index: &IntersectionIndex,
    reg: &Registration,
) -> Option<RoadRaster> {
    let to_query = reg.transform.inverse()?;
    let tile = index.tiles.get(reg.tile)?;
    warp(tile, &to_query, query.width(), query.height())
        .ok()
        .map(|r| r.with_geo(*query.geo()))
}

pub struct EnhanceOutcome {
    pub enhanced: RoadRaster,
    pub registration: Option<Registration>,
    pub results: Vec<LocalizationResult>,
}

/// Geolocalizes `query`, registers the reference into its frame from the
/// localization results alone and enhances it.
pub fn enhance_query(
    query: &RoadRaster,
    index: &IntersectionIndex,
    cfg: &LocalizeConfig,
    enhance: &EnhanceConfig,
) -> Result<EnhanceOutcome> {
    let results = geolocalize(query, index, cfg)?;
    enhance_with(query, index, results, &cfg.align.ransac, enhance)
}

/// Enhancement from already computed localization results.
pub fn enhance_with(
    query: &RoadRaster,
    index: &IntersectionIndex,
    results: Vec<LocalizationResult>,
    ransac: &RansacConfig,
    enhance: &EnhanceConfig,
) -> Result<EnhanceOutcome> {
    let registration = register_query(&results, index, ransac);
    let reg = registration.as_ref().ok_or(Error::EmptyInput(
        "enough localized intersections to register the query",
    ))?;
    let aligned =
        aligned_reference(query, index, reg).ok_or(Error::EmptyInput("invertible registration"))?;
    Ok(EnhanceOutcome {
        enhanced: enhance_roads(query, &aligned, enhance)?,
        registration,
        results,
    })
}
