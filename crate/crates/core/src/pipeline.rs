//! End-to-end geolocalization and road-map enhancement.
//!
//! [`localize`] turns query intersections into world positions: candidates
//! come from region matching, each candidate's reference crop is registered
//! onto the query crop, and the accepted registration with the smallest
//! Chamfer distance wins. [`enhance_roads`] cleans a noisy road map using a
//! reference map already registered into its frame.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::alignment::{self, AlignConfig, AlignmentResult, PreparedRaster};
use crate::error::{Error, Result};
use crate::geom::{AffineTransform2D, Point2, WorldPoint};
use crate::index::{describe_raster, IntersectionIndex};
use crate::intersections::{thin, DetectionConfig};
use crate::map_model::{crop_region, GeoTransform, Intersection, RoadRaster};
use crate::math;
use crate::morphology;
use crate::region_match::{CandidateList, MatchConfig, RegionMatcher};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizeConfig {
    pub detection: DetectionConfig,
    #[serde(rename = "match")]
    pub matching: MatchConfig,
    pub align: AlignConfig,
    /// When false the rank-1 region match is returned without registration.
    pub use_alignment: bool,
    /// Half-side of the query and reference crops that are registered.
    pub crop_radius_m: f64,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            detection: DetectionConfig::default(),
            matching: MatchConfig::default(),
            align: AlignConfig::default(),
            use_alignment: true,
            crop_radius_m: 150.0,
        }
    }
}

impl LocalizeConfig {
    pub fn validate(&self) -> Result<()> {
        self.detection.validate()?;
        self.matching.validate()?;
        self.align.validate()?;
        if !(self.crop_radius_m > 0.0) {
            return Err(crate::error::invalid("crop_radius_m", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub query_id: u64,
    pub query_pixel: Point2,
    /// Chosen reference intersection; `None` when every candidate was rejected.
    pub reference_id: Option<u64>,
    /// Query-crop pixels to reference-crop pixels.
    pub transform: Option<AffineTransform2D>,
    pub chamfer: f64,
    pub inlier_count: usize,
    pub world_estimate: Option<WorldPoint>,
    /// Ranked candidate reference ids from region matching.
    pub candidates: Vec<u64>,
}

impl LocalizationResult {
    pub fn localized(&self) -> bool {
        self.world_estimate.is_some()
    }

    pub fn unlocalized(q: &Intersection, candidates: Vec<u64>) -> Self {
        Self {
            query_id: q.id,
            query_pixel: q.pixel_pos,
            reference_id: None,
            transform: None,
            chamfer: f64::INFINITY,
            inlier_count: 0,
            world_estimate: None,
            candidates,
        }
    }
}

/// A registration between a query crop and one candidate's reference crop.
#[derive(Debug, Clone)]
pub struct CandidateAlignment {
    pub reference_id: u64,
    pub result: AlignmentResult,
    /// Georeference of the reference crop the transform maps into.
    pub reference_geo: GeoTransform,
}

/// Crop and prepare the query side once; it is reused across candidates.
pub struct QueryCrop {
    pub crop: RoadRaster,
    pub prepared: PreparedRaster,
}

pub fn prepare_query(
    query: &RoadRaster,
    q: &Intersection,
    cfg: &LocalizeConfig,
) -> Result<QueryCrop> {
    let crop = crop_region(query, q.world_pos, cfg.crop_radius_m)?;
    let prepared =
        alignment::prepare(&crop, &cfg.align)?.with_valid(source_footprint(query, &crop));
    Ok(QueryCrop { crop, prepared })
}

/// Pixel rectangle of `crop` covered by `source`, clipped to the crop.
fn source_footprint(source: &RoadRaster, crop: &RoadRaster) -> [f64; 4] {
    let a = crop.world_to_pixel(source.pixel_to_world(Point2::new(0.0, 0.0)));
    let b = crop.world_to_pixel(source.pixel_to_world(Point2::new(
        source.width() as f64 - 1.0,
        source.height() as f64 - 1.0,
    )));
    [
        math::round(a.x.min(b.x)).max(0.0),
        math::round(a.y.min(b.y)).max(0.0),
        math::round(a.x.max(b.x)).min(crop.width() as f64 - 1.0),
        math::round(a.y.max(b.y)).min(crop.height() as f64 - 1.0),
    ]
}

/// Reference crop around an indexed intersection, taken from the tile that
/// contains it, with the rectangle of the crop that lies inside that tile.
fn reference_crop_with_footprint(
    index: &IntersectionIndex,
    reference_id: u64,
    radius_m: f64,
) -> Result<(RoadRaster, [f64; 4])> {
    let e = index
        .get(reference_id)
        .ok_or(Error::EmptyInput("reference id"))?;
    let tile = index.tile_at(e.world_pos).ok_or(Error::EmptyRegion)?;
    let crop = crop_region(tile, e.world_pos, radius_m)?;
    let fp = source_footprint(tile, &crop);
    Ok((crop, fp))
}

/// Reference crop around an indexed intersection, taken from the tile that
/// contains it.
pub fn reference_crop(
    index: &IntersectionIndex,
    reference_id: u64,
    radius_m: f64,
) -> Result<RoadRaster> {
    reference_crop_with_footprint(index, reference_id, radius_m).map(|(c, _)| c)
}

/// A prepared reference crop, reusable across queries.
pub struct ReferenceCrop {
    pub reference_id: u64,
    pub geo: GeoTransform,
    pub prepared: PreparedRaster,
}

pub fn prepare_reference(
    index: &IntersectionIndex,
    reference_id: u64,
    cfg: &LocalizeConfig,
) -> Result<ReferenceCrop> {
    let (crop, fp) = reference_crop_with_footprint(index, reference_id, cfg.crop_radius_m)?;
    Ok(ReferenceCrop {
        reference_id,
        geo: *crop.geo(),
        prepared: alignment::prepare(&crop, &cfg.align)?.with_valid(fp),
    })
}

pub fn align_to_reference(
    qc: &QueryCrop,
    r: &ReferenceCrop,
    cfg: &LocalizeConfig,
) -> CandidateAlignment {
    CandidateAlignment {
        reference_id: r.reference_id,
        result: alignment::align_prepared(&qc.prepared, &r.prepared, &cfg.align),
        reference_geo: r.geo,
    }
}

pub fn align_candidate(
    qc: &QueryCrop,
    index: &IntersectionIndex,
    reference_id: u64,
    cfg: &LocalizeConfig,
) -> Result<CandidateAlignment> {
    Ok(align_to_reference(
        qc,
        &prepare_reference(index, reference_id, cfg)?,
        cfg,
    ))
}

/// World position of a query point under a candidate registration.
pub fn world_estimate(qc: &QueryCrop, ca: &CandidateAlignment, q: &Intersection) -> WorldPoint {
    let p = qc.crop.world_to_pixel(q.world_pos);
    ca.reference_geo
        .pixel_to_world(ca.result.transform.apply(p))
}

/// Position of the accepted registration with the smallest Chamfer distance;
/// ties keep the earlier, better-ranked candidate.
pub fn best_accepted<'a, I>(results: I) -> Option<usize>
where
    I: IntoIterator<Item = &'a AlignmentResult>,
{
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in results.into_iter().enumerate() {
        if r.accepted && best.is_none_or(|(_, c)| r.chamfer < c) {
            best = Some((i, r.chamfer));
        }
    }
    best.map(|(i, _)| i)
}

/// Accepted registration with the smallest Chamfer distance.
pub fn choose(alignments: &[CandidateAlignment]) -> Option<&CandidateAlignment> {
    best_accepted(alignments.iter().map(|a| &a.result)).map(|i| &alignments[i])
}

/// Re-ranks one query's candidate list by alignment, or takes rank 1 when
/// alignment is disabled.
pub fn resolve(
    query: &RoadRaster,
    q: &Intersection,
    list: &CandidateList,
    index: &IntersectionIndex,
    cfg: &LocalizeConfig,
) -> LocalizationResult {
    let ids: Vec<u64> = list.entries.iter().map(|e| e.reference_id).collect();
    if !cfg.use_alignment {
        let Some(&top) = ids.first() else {
            return LocalizationResult::unlocalized(q, ids);
        };
        let e = index.get(top).expect("candidate ids come from the index");
        return LocalizationResult {
            query_id: q.id,
            query_pixel: q.pixel_pos,
            reference_id: Some(top),
            transform: None,
            chamfer: f64::NAN,
            inlier_count: 0,
            world_estimate: Some(e.world_pos),
            candidates: ids,
        };
    }
    let Ok(qc) = prepare_query(query, q, cfg) else {
        return LocalizationResult::unlocalized(q, ids);
    };
    let aligned: Vec<CandidateAlignment> = ids
        .iter()
        .filter_map(|&id| align_candidate(&qc, index, id, cfg).ok())
        .collect();
    match choose(&aligned) {
        Some(best) => LocalizationResult {
            query_id: q.id,
            query_pixel: q.pixel_pos,
            reference_id: Some(best.reference_id),
            transform: Some(best.result.transform),
            chamfer: best.result.chamfer,
            inlier_count: best.result.inlier_count,
            world_estimate: Some(world_estimate(&qc, best, q)),
            candidates: ids,
        },
        None => LocalizationResult::unlocalized(q, ids),
    }
}

/// Localizes already-described query intersections.
pub fn localize(
    query: &RoadRaster,
    detections: &[Intersection],
    index: &IntersectionIndex,
    cfg: &LocalizeConfig,
) -> Result<Vec<LocalizationResult>> {
    cfg.validate()?;
    let lists = RegionMatcher::new(detections, index).candidates_all(&cfg.matching)?;
    Ok(detections
        .iter()
        .zip(lists)
        .map(|(q, list)| match list {
            Ok(list) => resolve(query, q, &list, index, cfg),
            Err(_) => LocalizationResult::unlocalized(q, Vec::new()),
        })
        .collect())
}

/// Detects, describes and localizes every intersection of a query raster.
/// A query without detections yields an empty result list.
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnhanceConfig {
    /// Soft dilation falloff: weight `max(0, 1 − d / radius)`.
    pub dilation_radius_px: f64,
    pub gaussian_sigma_px: f64,
    /// Minimum smoothed value on a ridge.
    pub ridge_threshold: f64,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            dilation_radius_px: 10.0,
            gaussian_sigma_px: 2.0,
            ridge_threshold: 0.3,
        }
    }
}

impl EnhanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dilation_radius_px > 0.0 && self.dilation_radius_px.is_finite()) {
            return Err(crate::error::invalid(
                "dilation_radius_px",
                "must be finite and > 0",
            ));
        }
        if !(self.gaussian_sigma_px > 0.0 && self.gaussian_sigma_px.is_finite()) {
            return Err(crate::error::invalid(
                "gaussian_sigma_px",
                "must be finite and > 0",
            ));
        }
        if !(0.0..1.0).contains(&self.ridge_threshold) {
            return Err(crate::error::invalid(
                "ridge_threshold",
                "must lie in [0, 1)",
            ));
        }
        Ok(())
    }
}

/// Median road width in pixels, read off the distance to background at
/// skeleton pixels of the pinhole-closed mask. A skeleton pixel at distance
/// `d` lies on a road `2d − 1` or `2d` pixels wide; the parity is taken from
/// the mean width, road area over skeleton length. Thinning shortens every
/// skeleton branch end by about the local half-width, which is added back.
pub fn median_road_width(r: &RoadRaster) -> Option<f64> {
    let (w, h) = (r.width(), r.height());
    let closed = morphology::close_square(&r.mask(), w, h, 1);
    let skel = thin(&closed, w, h);
    let background: Vec<bool> = closed.iter().map(|&m| !m).collect();
    let d = morphology::edt(&background, w, h);
    let mut ds = Vec::new();
    let mut length = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !skel[i] || !d[i].is_finite() {
                continue;
            }
            ds.push(d[i]);
            length += 1.0;
            let mut neighbours = 0;
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    neighbours += ((nx, ny) != (x, y) && skel[ny * w + nx]) as usize;
                }
            }
            if neighbours == 1 {
                length += d[i];
            }
        }
    }
    let med = math::median(&ds)?;
    let area = closed.iter().filter(|&&m| m).count() as f64;
    let mean_width = area / length;
    let (odd, even) = (2.0 * med - 1.0, 2.0 * med);
    Some(if (mean_width - odd).abs() < (mean_width - even).abs() {
        odd
    } else {
        even
    })
}

/// Largest gradient along a ridge direction for the pixel to count as a ridge.
const MAX_ALONG_GRADIENT: f64 = 0.1;

/// Sub-pixel ridge points of a smoothed map: pixels where the profile across
/// the dominant negative curvature direction peaks within the pixel.
pub fn ridge_points(values: &[f32], w: usize, h: usize, threshold: f64) -> Vec<Point2> {
    let at = |x: usize, y: usize| values[y * w + x] as f64;
    let mut out = Vec::new();
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let v = at(x, y);
            if v < threshold {
                continue;
            }
            let gx = 0.5 * (at(x + 1, y) - at(x - 1, y));
            let gy = 0.5 * (at(x, y + 1) - at(x, y - 1));
            let hxx = at(x + 1, y) - 2.0 * v + at(x - 1, y);
            let hyy = at(x, y + 1) - 2.0 * v + at(x, y - 1);
            let hxy =
                0.25 * (at(x + 1, y + 1) - at(x - 1, y + 1) - at(x + 1, y - 1) + at(x - 1, y - 1));
            // Most negative eigenvalue of the Hessian and its unit eigenvector.
            let tr = 0.5 * (hxx + hyy);
            let disc = math::sqrt(0.25 * (hxx - hyy) * (hxx - hyy) + hxy * hxy);
            let lambda = tr - disc;
            if lambda >= 0.0 {
                continue;
            }
            let (mut nx, mut ny) = if hxy.abs() > 1e-12 {
                (hxy, lambda - hxx)
            } else if hxx <= hyy {
                (1.0, 0.0)
            } else {
                (0.0, 1.0)
            };
            let norm = math::hypot(nx, ny);
            nx /= norm;
            ny /= norm;
            // Along the ridge the profile is flat; plateau rims are not.
            if (gy * nx - gx * ny).abs() > MAX_ALONG_GRADIENT {
                continue;
            }
            let t = -(gx * nx + gy * ny) / lambda;
            let (ox, oy) = (t * nx, t * ny);
            if ox.abs() <= 0.5 && oy.abs() <= 0.5 {
                out.push(Point2::new(x as f64 + ox, y as f64 + oy));
            }
        }
    }
    out
}

/// Paints discs of radius `half_width` around every point.
fn paint(points: &[Point2], half_width: f64, w: usize, h: usize) -> Vec<bool> {
    let mut mask = vec![false; w * h];
    let r2 = half_width * half_width;
    for p in points {
        let x0 = math::ceil(p.x - half_width).max(0.0) as usize;
        let y0 = math::ceil(p.y - half_width).max(0.0) as usize;
        let x1 = math::floor(p.x + half_width).min(w as f64 - 1.0);
        let y1 = math::floor(p.y + half_width).min(h as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let (dx, dy) = (x as f64 - p.x, y as f64 - p.y);
                if dx * dx + dy * dy <= r2 {
                    mask[y * w + x] = true;
                }
            }
        }
    }
    mask
}

/// Enhances a noisy estimated road map with a reference map registered into
/// the same frame:
///
/// 1. the estimate is soft-dilated and multiplied with the reference;
/// 2. the product is smoothed and reduced to sub-pixel ridge points;
/// 3. the ridges are re-dilated to the estimate's median road width.
pub fn enhance_roads(
    estimated: &RoadRaster,
    aligned_reference: &RoadRaster,
    cfg: &EnhanceConfig,
) -> Result<RoadRaster> {
    cfg.validate()?;
    let (w, h) = (estimated.width(), estimated.height());
    if aligned_reference.width() != w || aligned_reference.height() != h {
        return Err(Error::DimensionMismatch(
            w,
            h,
            aligned_reference.width(),
            aligned_reference.height(),
        ));
    }
    let geo = *estimated.geo();
    let Some(width) = median_road_width(estimated) else {
        return RoadRaster::zeros(w, h, geo);
    };
    let dist = morphology::edt(&estimated.mask(), w, h);
    let product: Vec<f32> = dist
        .iter()
        .zip(aligned_reference.values())
        .map(|(&d, &r)| ((1.0 - d / cfg.dilation_radius_px).max(0.0) as f32) * r)
        .collect();
    let smooth = morphology::gaussian_blur(&product, w, h, cfg.gaussian_sigma_px);
    let ridges = ridge_points(&smooth, w, h, cfg.ridge_threshold);
    let mask = paint(&ridges, width / 2.0, w, h);
    RoadRaster::from_mask(w, h, &mask, geo)
}

/// Pixel counts `(true positives, predicted, actual)` of road masks.
pub fn pixel_counts(pred: &RoadRaster, truth: &RoadRaster) -> Result<(usize, usize, usize)> {
    if pred.width() != truth.width() || pred.height() != truth.height() {
        return Err(Error::DimensionMismatch(
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height(),
        ));
    }
    let (mut tp, mut np, mut nt) = (0, 0, 0);
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            let (p, t) = (pred.is_road(x, y), truth.is_road(x, y));
            tp += (p && t) as usize;
            np += p as usize;
            nt += t as usize;
        }
    }
    Ok((tp, np, nt))
}

/// Pixelwise road F-measure; 1.0 when both maps are empty.
pub fn road_f_measure(pred: &RoadRaster, truth: &RoadRaster) -> Result<f64> {
    let (tp, np, nt) = pixel_counts(pred, truth)?;
    Ok(crate::intersections::f_measure(tp, np, nt))
}

/// Pixelwise intersection over union; 1.0 when both maps are empty.
pub fn road_iou(pred: &RoadRaster, truth: &RoadRaster) -> Result<f64> {
    let (tp, np, nt) = pixel_counts(pred, truth)?;
    let union = np + nt - tp;
    Ok(if union == 0 {
        1.0
    } else {
        tp as f64 / union as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::{DescriptorConfig, DiagonalMetric};
    use crate::ingest::{generate_city, perturb, PerturbationSpec, SyntheticCitySpec};
    use crate::map_model::GeoTransform;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn chamfer_ranking_never_selects_a_rejected_alignment(
            rs in prop::collection::vec((any::<bool>(), 0.0f64..50.0, 0usize..100), 0..12)
        ) {
            let results: Vec<AlignmentResult> = rs
                .iter()
                .map(|&(accepted, chamfer, inlier_count)| AlignmentResult {
                    transform: AffineTransform2D::identity(),
                    inlier_count,
                    chamfer,
                    overlap: 1.0,
                    accepted,
                })
                .collect();
            match best_accepted(&results) {
                Some(i) => {
                    prop_assert!(results[i].accepted);
                    prop_assert!(results.iter().filter(|r| r.accepted).all(|r| r.chamfer >= results[i].chamfer));
                }
                None => prop_assert!(results.iter().all(|r| !r.accepted)),
            }
        }
    }

    fn city_raster(seed: u64, extent: f64, origin_east: f64) -> RoadRaster {
        generate_city(&SyntheticCitySpec {
            seed,
            extent_m: extent,
            origin_east,
            ..Default::default()
        })
        .unwrap()
        .rasterize()
        .unwrap()
    }

    #[test]
    fn identity_query_localizes_interior_intersections() {
        let a = city_raster(1, 900.0, 0.0);
        let b = city_raster(2, 900.0, 3000.0);
        let desc = DescriptorConfig::default();
        let index = IntersectionIndex::build(
            vec![a.clone(), b],
            &DetectionConfig::default(),
            desc.clone(),
            DiagonalMetric::unit(desc.dim(), 1.0),
        )
        .unwrap();
        let half = 320.0;
        let query = crop_region(&a, WorldPoint::new(450.0, 450.0), half).unwrap();
        let cfg = LocalizeConfig {
            matching: MatchConfig {
                radius_m: 100.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let results = geolocalize(&query, &index, &cfg).unwrap();
        let (mut interior, mut close) = (0, 0);
        for r in &results {
            let truth = query.pixel_to_world(r.query_pixel);
            let ok = r.world_estimate.is_some_and(|e| e.dist(truth) < 2.0);
            // Every descriptor in the query region is complete.
            let margin = cfg.matching.radius_m + desc.radius_m;
            let p = r.query_pixel;
            let inside = p.x >= margin
                && p.y >= margin
                && p.x <= query.width() as f64 - 1.0 - margin
                && p.y <= query.height() as f64 - 1.0 - margin;
            if inside {
                interior += 1;
                close += ok as usize;
            }
        }
        // Detections within a pixel or two of the region radius may still
        // fall on different sides of it in the two maps.
        assert!(interior > 0);
        assert!(close * 3 >= interior * 2, "{close} of {interior}");
    }

    #[test]
    fn no_road_query_is_an_error() {
        let a = city_raster(1, 400.0, 0.0);
        let desc = DescriptorConfig::default();
        let index = IntersectionIndex::build(
            vec![a],
            &DetectionConfig::default(),
            desc.clone(),
            DiagonalMetric::unit(desc.dim(), 1.0),
        )
        .unwrap();
        let empty = RoadRaster::zeros(50, 50, GeoTransform::default()).unwrap();
        assert_eq!(
            geolocalize(&empty, &index, &LocalizeConfig::default()),
            Err(Error::NoRoadPixels)
        );
    }

    #[test]
    fn enhancing_with_itself_reproduces_the_map() {
        let r = city_raster(5, 500.0, 0.0);
        let out = enhance_roads(&r, &r, &EnhanceConfig::default()).unwrap();
        let iou = road_iou(&out, &r).unwrap();
        assert!(iou >= 0.97, "IoU {iou}");
    }

    #[test]
    fn empty_reference_annihilates() {
        let r = city_raster(5, 300.0, 0.0);
        let zero = RoadRaster::zeros(r.width(), r.height(), *r.geo()).unwrap();
        assert_eq!(
            enhance_roads(&r, &zero, &EnhanceConfig::default())
                .unwrap()
                .road_count(),
            0
        );
    }

    #[test]
    fn enhancement_recovers_dropout_and_jitter() {
        let r = city_raster(6, 500.0, 0.0);
        let spec = PerturbationSpec {
            pixel_dropout: 0.1,
            jitter_px: 1.0,
            ..PerturbationSpec::none()
        };
        let (noisy, _) = perturb(&r, &spec, 3).unwrap();
        let before = road_f_measure(&noisy, &r).unwrap();
        let after = road_f_measure(
            &enhance_roads(&noisy, &r, &EnhanceConfig::default()).unwrap(),
            &r,
        )
        .unwrap();
        assert!(after >= before + 0.15, "{before} -> {after}");
    }

    #[test]
    fn median_width_of_straight_roads() {
        for (width, rows) in [(6.0, 20..26), (7.0, 20..27)] {
            let mask: Vec<bool> = (0..80 * 50).map(|i| rows.contains(&(i / 80))).collect();
            let r = RoadRaster::from_mask(80, 50, &mask, GeoTransform::default()).unwrap();
            let got = median_road_width(&r).unwrap();
            assert!((got - width).abs() <= 0.5, "{width}: {got}");
        }
    }

    #[test]
    fn f_measure_and_iou() {
        let g = GeoTransform::default();
        let a = RoadRaster::from_mask(2, 2, &[true, true, false, false], g).unwrap();
        let b = RoadRaster::from_mask(2, 2, &[true, false, true, false], g).unwrap();
        assert_eq!(road_f_measure(&a, &b).unwrap(), 0.5);
        assert!((road_iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(road_f_measure(&a, &a).unwrap(), 1.0);
    }
}
