//! Affine registration of road rasters and Chamfer scoring.
//!
//! [`align`] samples road points on both rasters, describes each sample by a
//! north-anchored shape context, proposes correspondences by nearest
//! neighbours under χ² (or Euclidean, see [`ContextDistance`]), fits an affine
//! transform with RANSAC, refines it on nearest road pixels and scores the registered
//! pair by a symmetrized Chamfer distance. Transforms map query pixels into
//! reference pixels.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geom::{triangle_area2, AffineTransform2D, Point2};
use crate::map_model::RoadRaster;
use crate::math;
use crate::morphology;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacConfig {
    pub iterations: usize,
    pub inlier_threshold_px: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            inlier_threshold_px: 3.0,
            min_inliers: 10,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid("iterations", "must be >= 1"));
        }
        if !(self.inlier_threshold_px > 0.0) {
            return Err(invalid("inlier_threshold_px", "must be > 0"));
        }
        Ok(())
    }
}

/// Histogram distance used to pair shape contexts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextDistance {
    #[default]
    Chi2,
    Euclidean,
}

impl ContextDistance {
    #[inline]
    pub fn eval(self, a: &ShapeContext, b: &ShapeContext) -> f64 {
        match self {
            Self::Chi2 => chi2(a, b),
            Self::Euclidean => a
                .bins
                .iter()
                .zip(&b.bins)
                .map(|(x, y)| (x - y) * (x - y))
                .sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    pub n_points: usize,
    pub radial_bins: usize,
    pub angular_bins: usize,
    /// Inner and outer shape-context radii as fractions of the raster half-side.
    pub r_min_frac: f64,
    pub r_max_frac: f64,
    pub per_point_k: usize,
    pub context_distance: ContextDistance,
    pub det_min: f64,
    pub det_max: f64,
    /// Maximum rounds of closest-point refinement after RANSAC; stops early
    /// once no raster corner moves by more than 0.01 px.
    pub refine_iterations: usize,
    /// Minimum fraction of each side's road pixels that must land inside the
    /// other side's footprint for a registration to be accepted.
    pub min_overlap: f64,
    pub ransac: RansacConfig,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            n_points: 300,
            radial_bins: 5,
            angular_bins: 12,
            r_min_frac: 0.0625,
            r_max_frac: 1.0,
            per_point_k: 3,
            context_distance: ContextDistance::Chi2,
            det_min: 0.5,
            det_max: 2.0,
            refine_iterations: 30,
            min_overlap: 0.25,
            ransac: RansacConfig::default(),
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        self.ransac.validate()?;
        if self.n_points < 3 {
            return Err(invalid("n_points", "must be >= 3"));
        }
        if self.radial_bins == 0 || self.angular_bins == 0 {
            return Err(invalid("radial_bins", "bin counts must be >= 1"));
        }
        if !(self.r_min_frac > 0.0 && self.r_max_frac > self.r_min_frac) {
            return Err(invalid("r_min_frac", "need 0 < r_min_frac < r_max_frac"));
        }
        if self.per_point_k == 0 {
            return Err(invalid("per_point_k", "must be >= 1"));
        }
        if !(self.det_min > 0.0 && self.det_max >= self.det_min) {
            return Err(invalid("det_min", "need 0 < det_min <= det_max"));
        }
        if !(0.0..=1.0).contains(&self.min_overlap) {
            return Err(invalid("min_overlap", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub transform: AffineTransform2D,
    pub inlier_count: usize,
    /// Symmetrized Chamfer distance in pixels; infinite when rejected.
    pub chamfer: f64,
    /// Smaller of the two directed footprint overlap fractions.
    pub overlap: f64,
    pub accepted: bool,
}

impl AlignmentResult {
    fn rejected(transform: AffineTransform2D, inlier_count: usize) -> Self {
        Self {
            transform,
            inlier_count,
            chamfer: f64::INFINITY,
            overlap: 0.0,
            accepted: false,
        }
    }
}

/// Log-polar histogram of neighbour positions, normalised to sum 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeContext {
    pub bins: Vec<f64>,
}

fn road_pixels(r: &RoadRaster) -> Vec<Point2> {
    let mut out = Vec::new();
    for y in 0..r.height() {
        for x in 0..r.width() {
            if r.is_road(x, y) {
                out.push(Point2::new(x as f64, y as f64));
            }
        }
    }
    out
}

/// Farthest-point sampling of road pixels from a random start. Rasters with
/// at most `n` road pixels return all of them in raster order.
pub fn sample_road_points(r: &RoadRaster, n: usize, seed: u64) -> Result<Vec<Point2>> {
    let pts = road_pixels(r);
    farthest_points(&pts, n, seed)
}

fn farthest_points(pts: &[Point2], n: usize, seed: u64) -> Result<Vec<Point2>> {
    if pts.is_empty() {
        return Err(Error::NoRoadPixels);
    }
    if pts.len() <= n {
        return Ok(pts.to_vec());
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next = rng.random_range(0..pts.len());
    let mut d2 = vec![f64::INFINITY; pts.len()];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let c = pts[next];
        out.push(c);
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, p) in pts.iter().enumerate() {
            let d = p.dist2(c);
            if d < d2[i] {
                d2[i] = d;
            }
            if d2[i] > best.0 {
                best = (d2[i], i);
            }
        }
        next = best.1;
    }
    Ok(out)
}

/// Angle of `(dx, dy)` clockwise from north (pixel `-y`), in `[0, 360)`.
fn azimuth_deg(dx: f64, dy: f64) -> f64 {
    let a = math::atan2(dx, -dy).to_degrees();
    if a < 0.0 {
        a + 360.0
    } else {
        a
    }
}

/// Shape context of `at` over `points`. Radial bins are log-spaced on
/// `[r_min, r_max]`; closer points fall in the first bin, farther points are
/// ignored. Angular bins split `[0°, 360°)` clockwise from north.
pub fn shape_context(
    points: &[Point2],
    at: Point2,
    r_min: f64,
    r_max: f64,
    radial_bins: usize,
    angular_bins: usize,
) -> ShapeContext {
    let mut bins = vec![0.0; radial_bins * angular_bins];
    let log_span = math::ln(r_max / r_min);
    let width = 360.0 / angular_bins as f64;
    let mut total = 0.0;
    for p in points {
        let (dx, dy) = (p.x - at.x, p.y - at.y);
        let r = math::hypot(dx, dy);
        if r == 0.0 || r > r_max {
            continue;
        }
        let ring = if r < r_min {
            0
        } else {
            ((math::ln(r / r_min) / log_span * radial_bins as f64) as usize).min(radial_bins - 1)
        };
        let sector = ((azimuth_deg(dx, dy) / width) as usize).min(angular_bins - 1);
        bins[ring * angular_bins + sector] += 1.0;
        total += 1.0;
    }
    if total > 0.0 {
        bins.iter_mut().for_each(|b| *b /= total);
    }
    ShapeContext { bins }
}

/// `½ Σ (h − g)² / (h + g)` over bins where `h + g > 0`.
pub fn chi2(a: &ShapeContext, b: &ShapeContext) -> f64 {
    // Empty bins give 0 / MIN_POSITIVE = 0; four lanes keep the loop branch-free.
    let mut acc = [0.0f64; 4];
    let (ha, hb) = (a.bins.chunks_exact(4), b.bins.chunks_exact(4));
    let (ra, rb) = (ha.remainder(), hb.remainder());
    for (x, y) in ha.zip(hb) {
        for l in 0..4 {
            let d = x[l] - y[l];
            acc[l] += d * d / (x[l] + y[l]).max(f64::MIN_POSITIVE);
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (h, g) in ra.iter().zip(rb) {
        let d = h - g;
        s += d * d / (h + g).max(f64::MIN_POSITIVE);
    }
    0.5 * s
}

/// For each source context, its `per_point_k` nearest destination contexts
/// under χ², as `(src index, dst index)` pairs.
pub fn propose_correspondences(
    src: &[ShapeContext],
    dst: &[ShapeContext],
    per_point_k: usize,
) -> Vec<(usize, usize)> {
    propose_correspondences_by(src, dst, per_point_k, ContextDistance::Chi2)
}

/// [`propose_correspondences`] under any context distance.
pub fn propose_correspondences_by(
    src: &[ShapeContext],
    dst: &[ShapeContext],
    per_point_k: usize,
    distance: ContextDistance,
) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(src.len() * per_point_k);
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(dst.len());
    for (i, s) in src.iter().enumerate() {
        scored.clear();
        scored.extend(
            dst.iter()
                .enumerate()
                .map(|(j, d)| (distance.eval(s, d), j)),
        );
        let k = per_point_k.min(scored.len());
        if k == 0 {
            continue;
        }
        scored.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let head = &mut scored[..k];
        head.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.extend(head.iter().map(|&(_, j)| (i, j)));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub transform: AffineTransform2D,
    /// Indices into the correspondence list.
    pub inliers: Vec<usize>,
}

fn inliers_of(
    t: &AffineTransform2D,
    src: &[Point2],
    dst: &[Point2],
    thr2: f64,
) -> (Vec<usize>, f64) {
    let mut idx = Vec::new();
    let mut err = 0.0;
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let e = t.apply(*s).dist2(*d);
        if e <= thr2 {
            idx.push(i);
            err += e;
        }
    }
    (idx, err)
}

/// RANSAC over exact three-point affine hypotheses with a determinant prior,
/// followed by least-squares refits on the inlier set until it stops growing.
/// Returns `None` when no hypothesis reaches `min_inliers`.
pub fn ransac_affine(
    src: &[Point2],
    dst: &[Point2],
    cfg: &RansacConfig,
    det_range: (f64, f64),
) -> Option<RansacResult> {
    let n = src.len();
    if n < 3 || dst.len() != n {
        return None;
    }
    let thr2 = cfg.inlier_threshold_px * cfg.inlier_threshold_px;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Vec<usize>, f64, AffineTransform2D)> = None;
    for _ in 0..cfg.iterations {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let k = rng.random_range(0..n);
        if i == j || j == k || i == k {
            continue;
        }
        if triangle_area2(src[i], src[j], src[k]).abs() < 1.0
            || triangle_area2(dst[i], dst[j], dst[k]).abs() < 1.0
        {
            continue;
        }
        let Some(t) =
            AffineTransform2D::from_three([src[i], src[j], src[k]], [dst[i], dst[j], dst[k]])
        else {
            continue;
        };
        let det = t.det();
        if det < det_range.0 || det > det_range.1 {
            continue;
        }
        let (idx, err) = inliers_of(&t, src, dst, thr2);
        let better = match &best {
            None => true,
            Some((b, e, _)) => idx.len() > b.len() || (idx.len() == b.len() && err < *e),
        };
        if better {
            best = Some((idx, err, t));
        }
    }
    let (mut idx, _, mut t) = best?;
    if idx.len() < cfg.min_inliers.max(3) {
        return None;
    }
    for _ in 0..10 {
        let s: Vec<Point2> = idx.iter().map(|&i| src[i]).collect();
        let d: Vec<Point2> = idx.iter().map(|&i| dst[i]).collect();
        let Some(fit) = AffineTransform2D::fit_least_squares(&s, &d) else {
            break;
        };
        t = fit;
        let (next, _) = inliers_of(&t, src, dst, thr2);
        let done = next == idx || next.len() < 3;
        idx = next;
        if done {
            break;
        }
    }
    if idx.len() < cfg.min_inliers.max(3) {
        return None;
    }
    Some(RansacResult {
        transform: t,
        inliers: idx,
    })
}

/// Euclidean distance (pixels) to the nearest road pixel; `+∞` everywhere
/// when the raster has no road.
pub fn distance_transform(r: &RoadRaster) -> Vec<f64> {
    morphology::edt(&r.mask(), r.width(), r.height())
}

/// Symmetrized Chamfer distance between two rasters of equal size, in pixels.
pub fn chamfer(a: &RoadRaster, b: &RoadRaster) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    let (ma, mb) = (a.mask(), b.mask());
    if !ma.iter().any(|&m| m) || !mb.iter().any(|&m| m) {
        return Err(Error::NoRoadPixels);
    }
    let ea = morphology::edt(&ma, a.width(), a.height());
    let eb = morphology::edt(&mb, b.width(), b.height());
    let directed = |m: &[bool], e: &[f64]| {
        let (s, n) = m
            .iter()
            .zip(e)
            .filter(|(m, _)| **m)
            .fold((0.0, 0usize), |(s, n), (_, d)| (s + d, n + 1));
        s / n as f64
    };
    Ok(0.5 * (directed(&ma, &eb) + directed(&mb, &ea)))
}

/// Nearest-neighbour resampling of `src` into a `width × height` grid through
/// `t` (destination pixel → source pixel is `t⁻¹`), re-binarized at 0.5.
pub fn warp(
    src: &RoadRaster,
    t: &AffineTransform2D,
    width: usize,
    height: usize,
) -> Result<RoadRaster> {
    let inv = t
        .inverse()
        .ok_or_else(|| invalid("transform", "not invertible"))?;
    let mut mask = vec![false; width * height];
    for y in 0..height {
        for x in 0..width {
            let p = inv.apply(Point2::new(x as f64, y as f64));
            mask[y * width + x] = src.sample_nearest(p) >= 0.5;
        }
    }
    RoadRaster::from_mask(width, height, &mask, *src.geo())
}

/// Per-raster data reused across every pairing of that raster.
#[derive(Debug, Clone)]
pub struct PreparedRaster {
    pub width: usize,
    pub height: usize,
    pub road: Vec<Point2>,
    pub samples: Vec<Point2>,
    pub contexts: Vec<ShapeContext>,
    pub edt: Vec<f64>,
    /// Pixel rectangle `[x0, y0, x1, y1]` (inclusive) holding observed data;
    /// registered points outside it are ignored by the Chamfer score.
    pub valid: [f64; 4],
}

impl PreparedRaster {
    /// Restricts the observed footprint, e.g. to the part of a crop that lay
    /// inside its source raster.
    pub fn with_valid(mut self, valid: [f64; 4]) -> Self {
        self.valid = valid;
        self
    }
}

pub fn prepare(r: &RoadRaster, cfg: &AlignConfig) -> Result<PreparedRaster> {
    cfg.validate()?;
    let road = road_pixels(r);
    let samples = farthest_points(&road, cfg.n_points, cfg.ransac.seed)?;
    let half = r.width().max(r.height()) as f64 / 2.0;
    let (r_min, r_max) = (cfg.r_min_frac * half, cfg.r_max_frac * half);
    let contexts = samples
        .iter()
        .map(|&p| shape_context(&samples, p, r_min, r_max, cfg.radial_bins, cfg.angular_bins))
        .collect();
    Ok(PreparedRaster {
        width: r.width(),
        height: r.height(),
        road,
        samples,
        contexts,
        edt: distance_transform(r),
        valid: [0.0, 0.0, r.width() as f64 - 1.0, r.height() as f64 - 1.0],
    })
}

#[inline]
fn edt_at(p: &PreparedRaster, q: Point2) -> Option<f64> {
    let x = math::round(q.x);
    let y = math::round(q.y);
    if x < 0.0 || y < 0.0 || x >= p.width as f64 || y >= p.height as f64 {
        return None;
    }
    Some(p.edt[y as usize * p.width + x as usize])
}

/// Mean distance of registered road pixels inside the target footprint, and
/// the fraction of road pixels that landed there.
fn directed_masked(
    from: &PreparedRaster,
    to: &PreparedRaster,
    t: &AffineTransform2D,
) -> Option<(f64, f64)> {
    let (mut s, mut n) = (0.0, 0usize);
    let [x0, y0, x1, y1] = to.valid;
    for &p in &from.road {
        let m = t.apply(p);
        if m.x < x0 - 0.5 || m.y < y0 - 0.5 || m.x > x1 + 0.5 || m.y > y1 + 0.5 {
            continue;
        }
        if let Some(d) = edt_at(to, m) {
            s += d;
            n += 1;
        }
    }
    (n > 0).then(|| (s / n as f64, n as f64 / from.road.len() as f64))
}

/// Chamfer distance between a query and a reference under `t` (query →
/// reference), restricted to the overlap of the two footprints.
pub fn registered_chamfer(q: &PreparedRaster, l: &PreparedRaster, t: &AffineTransform2D) -> f64 {
    registered_score(q, l, t).0
}

/// Registered Chamfer distance together with the footprint overlap fraction.
pub fn registered_score(
    q: &PreparedRaster,
    l: &PreparedRaster,
    t: &AffineTransform2D,
) -> (f64, f64) {
    let Some(inv) = t.inverse() else {
        return (f64::INFINITY, 0.0);
    };
    match (directed_masked(q, l, t), directed_masked(l, q, &inv)) {
        (Some((a, fa)), Some((b, fb))) => (0.5 * (a + b), fa.min(fb)),
        _ => (f64::INFINITY, 0.0),
    }
}

/// Closest-point refinement: query road pixels whose registered position lies
/// within `max_dist` of a reference road pixel are pulled onto it by walking
/// the reference distance field downhill, and the affine is refit.
fn refine(
    q: &PreparedRaster,
    l: &PreparedRaster,
    t: AffineTransform2D,
    max_dist: f64,
) -> AffineTransform2D {
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let step = (q.road.len() / 4000).max(1);
    for &p in q.road.iter().step_by(step) {
        let mut c = t.apply(p);
        let Some(d0) = edt_at(l, c) else { continue };
        if d0 > max_dist || !d0.is_finite() {
            continue;
        }
        let mut cx = math::round(c.x) as isize;
        let mut cy = math::round(c.y) as isize;
        let mut d = d0;
        while d > 0.0 {
            let mut moved = false;
            for (dx, dy) in [
                (-1, 0),
                (1, 0),
                (0, -1),
                (0, 1),
                (-1, -1),
                (1, 1),
                (-1, 1),
                (1, -1),
            ] {
                let (nx, ny) = (cx + dx, cy + dy);
                if nx < 0 || ny < 0 || nx >= l.width as isize || ny >= l.height as isize {
                    continue;
                }
                let nd = l.edt[ny as usize * l.width + nx as usize];
                if nd < d {
                    d = nd;
                    cx = nx;
                    cy = ny;
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
        if d == 0.0 {
            c = Point2::new(cx as f64, cy as f64);
            src.push(p);
            dst.push(c);
        }
    }
    AffineTransform2D::fit_least_squares(&src, &dst).unwrap_or(t)
}

/// Registers a prepared query onto a prepared reference.
pub fn align_prepared(
    q: &PreparedRaster,
    l: &PreparedRaster,
    cfg: &AlignConfig,
) -> AlignmentResult {
    let pairs = propose_correspondences_by(
        &q.contexts,
        &l.contexts,
        cfg.per_point_k,
        cfg.context_distance,
    );
    let src: Vec<Point2> = pairs.iter().map(|&(i, _)| q.samples[i]).collect();
    let dst: Vec<Point2> = pairs.iter().map(|&(_, j)| l.samples[j]).collect();
    let Some(fit) = ransac_affine(&src, &dst, &cfg.ransac, (cfg.det_min, cfg.det_max)) else {
        return AlignmentResult::rejected(AffineTransform2D::identity(), 0);
    };
    let mut t = fit.transform;
    let corners = [
        Point2::new(0.0, 0.0),
        Point2::new(q.width as f64, 0.0),
        Point2::new(0.0, q.height as f64),
        Point2::new(q.width as f64, q.height as f64),
    ];
    for _ in 0..cfg.refine_iterations {
        let next = refine(q, l, t, cfg.ransac.inlier_threshold_px);
        let moved = corners
            .iter()
            .map(|&c| next.apply(c).dist(t.apply(c)))
            .fold(0.0, f64::max);
        t = next;
        if moved < 0.01 {
            break;
        }
    }
    let det = t.det();
    let inliers = fit.inliers.len();
    if inliers < cfg.ransac.min_inliers || !(cfg.det_min..=cfg.det_max).contains(&det) {
        return AlignmentResult::rejected(t, inliers);
    }
    let (c, overlap) = registered_score(q, l, &t);
    AlignmentResult {
        transform: t,
        inlier_count: inliers,
        chamfer: c,
        overlap,
        accepted: c.is_finite() && overlap >= cfg.min_overlap,
    }
}

/// Full registration of `query` onto `reference`.
pub fn align(
    query: &RoadRaster,
    reference: &RoadRaster,
    cfg: &AlignConfig,
) -> Result<AlignmentResult> {
    let q = prepare(query, cfg)?;
    let l = prepare(reference, cfg)?;
    Ok(align_prepared(&q, &l, cfg))
}
