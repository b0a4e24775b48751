//! Intersection detection on binary road rasters.
//!
//! Detection runs in four stages:
//!
//! 1. [`prepare`]: close pinholes, thin the road mask with Zhang–Suen and mark
//!    branch pixels (skeleton pixels with crossing number ≥ 3).
//! 2. [`score_skeleton`]: a scanning-window classifier evaluated only on grid
//!    nodes `grid_stride_px` apart. Each window counts skeleton branches
//!    crossing its square border and measures the distance from the window
//!    centre to the nearest branch pixel. The dense map is filled by bilinear
//!    interpolation between grid nodes.
//! 3. [`nms_detect`]: non-maxima suppression within `nms_radius_px` and a
//!    log-domain parabola fit through the neighbouring grid samples.
//! 4. [`branch_centroid`]: each peak is moved to the centroid of nearby branch
//!    pixels, within `refine_radius_px`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geom::Point2;
use crate::map_model::{GeoTransform, Intersection, RoadRaster};
use crate::math;
use crate::morphology;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    pub grid_stride_px: usize,
    pub nms_radius_px: f64,
    pub score_threshold: f64,
    /// Half-side of the square classification window; branches are counted
    /// where the skeleton crosses its border.
    pub branch_window_px: usize,
    /// Falloff of the score with the distance to the nearest branch pixel.
    pub proximity_sigma_px: f64,
    /// Square closing applied before thinning (0 disables it).
    pub closing_radius_px: usize,
    /// Detections move to the centroid of the branch pixels within this
    /// radius (0 disables it).
    pub refine_radius_px: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            grid_stride_px: 10,
            nms_radius_px: 15.0,
            score_threshold: 0.5,
            branch_window_px: 15,
            proximity_sigma_px: 7.0,
            closing_radius_px: 1,
            refine_radius_px: 6.0,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_stride_px < 1 {
            return Err(invalid("grid_stride_px", "must be >= 1"));
        }
        if !(self.nms_radius_px > 0.0) {
            return Err(invalid("nms_radius_px", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(invalid("score_threshold", "must lie in [0, 1]"));
        }
        if self.branch_window_px < 2 {
            return Err(invalid("branch_window_px", "must be >= 2"));
        }
        if !(self.proximity_sigma_px > 0.0) {
            return Err(invalid("proximity_sigma_px", "must be > 0"));
        }
        if !(self.refine_radius_px >= 0.0 && self.refine_radius_px.is_finite()) {
            return Err(invalid("refine_radius_px", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Dense intersection score in `[0, 1]`, aligned with its source raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
    pub geo: GeoTransform,
    /// Grid stride the map was sampled at; used by sub-pixel refinement.
    pub stride: usize,
}

impl ScoreMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// Skeleton and branch pixels of a road raster.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonFeatures {
    pub width: usize,
    pub height: usize,
    pub skeleton: Vec<bool>,
    pub branch: Vec<bool>,
    pub geo: GeoTransform,
}

const OFFSETS: [(isize, isize); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

#[inline]
fn neighbours(mask: &[bool], w: usize, h: usize, x: usize, y: usize) -> [bool; 8] {
    let mut n = [false; 8];
    for (k, (dx, dy)) in OFFSETS.iter().enumerate() {
        let nx = x as isize + dx;
        let ny = y as isize + dy;
        if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
            n[k] = mask[ny as usize * w + nx as usize];
        }
    }
    n
}

/// Number of 0→1 transitions around the circular 8-neighbourhood, i.e. the
/// number of distinct skeleton branches touching the pixel.
#[inline]
pub fn crossing_number(n: &[bool; 8]) -> usize {
    (0..8).filter(|&k| !n[k] && n[(k + 1) % 8]).count()
}

/// Zhang–Suen thinning of a boolean mask.
pub fn thin(mask: &[bool], width: usize, height: usize) -> Vec<bool> {
    let mut img = mask.to_vec();
    let mut active: Vec<usize> = (0..img.len()).filter(|&i| img[i]).collect();
    let mut delete = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            delete.clear();
            for &i in &active {
                if !img[i] {
                    continue;
                }
                let (x, y) = (i % width, i / width);
                let n = neighbours(&img, width, height, x, y);
                let b = n.iter().filter(|&&v| v).count();
                if !(2..=6).contains(&b) || crossing_number(&n) != 1 {
                    continue;
                }
                let [p2, _, p4, _, p6, _, p8, _] = n;
                let keep = if pass == 0 {
                    (p2 && p4 && p6) || (p4 && p6 && p8)
                } else {
                    (p2 && p4 && p8) || (p2 && p6 && p8)
                };
                if !keep {
                    delete.push(i);
                }
            }
            if !delete.is_empty() {
                changed = true;
                for &i in &delete {
                    img[i] = false;
                }
            }
        }
        if !changed {
            break;
        }
        active.retain(|&i| img[i]);
    }
    img
}

/// One-pixel-wide skeleton of the road mask (Zhang–Suen thinning).
pub fn skeletonize(r: &RoadRaster) -> RoadRaster {
    let sk = thin(&r.mask(), r.width(), r.height());
    RoadRaster::from_mask(r.width(), r.height(), &sk, *r.geo()).expect("same geometry")
}

/// Closing, thinning and branch-pixel marking.
pub fn prepare(r: &RoadRaster, cfg: &DetectionConfig) -> SkeletonFeatures {
    let (w, h) = (r.width(), r.height());
    let closed = morphology::close_square(&r.mask(), w, h, cfg.closing_radius_px);
    let skeleton = thin(&closed, w, h);
    let mut branch = vec![false; w * h];
    for (i, b) in branch.iter_mut().enumerate() {
        if skeleton[i] {
            let n = neighbours(&skeleton, w, h, i % w, i / w);
            *b = crossing_number(&n) >= 3;
        }
    }
    SkeletonFeatures {
        width: w,
        height: h,
        skeleton,
        branch,
        geo: *r.geo(),
    }
}

/// Number of skeleton runs on the border of the square window of half-side
/// `radius` centred at `(cx, cy)`.
pub fn ring_branches(
    skeleton: &[bool],
    w: usize,
    h: usize,
    cx: usize,
    cy: usize,
    radius: usize,
) -> usize {
    let r = radius as isize;
    let (cx, cy) = (cx as isize, cy as isize);
    let at = |x: isize, y: isize| -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < w
            && (y as usize) < h
            && skeleton[y as usize * w + x as usize]
    };
    let mut first = false;
    let mut prev = false;
    let mut runs = 0usize;
    let mut all = true;
    let mut idx = 0usize;
    let mut visit = |v: bool| {
        if idx == 0 {
            first = v;
        } else if v && !prev {
            runs += 1;
        }
        all &= v;
        prev = v;
        idx += 1;
    };
    for x in cx - r..=cx + r {
        visit(at(x, cy - r));
    }
    for y in cy - r + 1..=cy + r {
        visit(at(cx + r, y));
    }
    for x in (cx - r..cx + r).rev() {
        visit(at(x, cy + r));
    }
    for y in (cy - r + 1..cy + r).rev() {
        visit(at(cx - r, y));
    }
    if first && !prev {
        runs += 1;
    }
    if all {
        1
    } else {
        runs
    }
}

/// The window classifier evaluated at one location.
pub fn classify_window(f: &SkeletonFeatures, cfg: &DetectionConfig, cx: usize, cy: usize) -> f32 {
    let branches = ring_branches(&f.skeleton, f.width, f.height, cx, cy, cfg.branch_window_px);
    if branches < 3 {
        return 0.0;
    }
    let r = cfg.branch_window_px;
    let y0 = cy.saturating_sub(r);
    let y1 = (cy + r).min(f.height - 1);
    let x0 = cx.saturating_sub(r);
    let x1 = (cx + r).min(f.width - 1);
    let mut best = usize::MAX;
    for y in y0..=y1 {
        let row = &f.branch[y * f.width + x0..=y * f.width + x1];
        let dy = y.abs_diff(cy);
        for (k, &b) in row.iter().enumerate() {
            if b {
                let dx = (x0 + k).abs_diff(cx);
                best = best.min(dx * dx + dy * dy);
            }
        }
    }
    if best == usize::MAX {
        return 0.0;
    }
    let s = cfg.proximity_sigma_px;
    math::exp(-(best as f64) / (2.0 * s * s)) as f32
}

/// Scores grid nodes and fills the dense map by bilinear interpolation.
pub fn score_skeleton(f: &SkeletonFeatures, cfg: &DetectionConfig) -> ScoreMap {
    let (w, h) = (f.width, f.height);
    let s = cfg.grid_stride_px.max(1);
    let gw = (w - 1) / s + 1;
    let gh = (h - 1) / s + 1;
    let mut grid = vec![0.0f32; gw * gh];
    for gy in 0..gh {
        for gx in 0..gw {
            grid[gy * gw + gx] = classify_window(f, cfg, gx * s, gy * s);
        }
    }
    let mut values = vec![0.0f32; w * h];
    if s == 1 {
        values.copy_from_slice(&grid);
    } else {
        let inv = 1.0 / s as f32;
        for gy in 0..gh {
            let gy1 = (gy + 1).min(gh - 1);
            for gx in 0..gw {
                let gx1 = (gx + 1).min(gw - 1);
                let v00 = grid[gy * gw + gx];
                let v10 = grid[gy * gw + gx1];
                let v01 = grid[gy1 * gw + gx];
                let v11 = grid[gy1 * gw + gx1];
                if v00 == 0.0 && v10 == 0.0 && v01 == 0.0 && v11 == 0.0 {
                    continue;
                }
                let ylim = if gy + 1 < gh { s } else { h - gy * s };
                let xlim = if gx + 1 < gw { s } else { w - gx * s };
                for dy in 0..ylim {
                    let ty = dy as f32 * inv;
                    let a = v00 + (v01 - v00) * ty;
                    let b = v10 + (v11 - v10) * ty;
                    let row = (gy * s + dy) * w + gx * s;
                    for dx in 0..xlim {
                        let tx = dx as f32 * inv;
                        values[row + dx] = a + (b - a) * tx;
                    }
                }
            }
        }
    }
    ScoreMap {
        width: w,
        height: h,
        values,
        geo: f.geo,
        stride: s,
    }
}

/// Dense intersection score map of a binary road raster.
pub fn score_intersections(r: &RoadRaster, cfg: &DetectionConfig) -> ScoreMap {
    score_skeleton(&prepare(r, cfg), cfg)
}

/// Vertex offset of a parabola through `ln` of three equally spaced samples.
fn log_parabola_offset(left: f32, centre: f32, right: f32, spacing: f64) -> f64 {
    const FLOOR: f32 = 1e-6;
    if left <= FLOOR || right <= FLOOR || centre <= FLOOR {
        return 0.0;
    }
    let (l, c, r) = (
        math::ln(left as f64),
        math::ln(centre as f64),
        math::ln(right as f64),
    );
    let denom = l - 2.0 * c + r;
    if denom >= -1e-12 {
        return 0.0;
    }
    let off = 0.5 * (l - r) / denom * spacing;
    off.clamp(-spacing / 2.0, spacing / 2.0)
}

/// Local maxima above threshold that dominate every pixel within
/// `nms_radius_px` (ties resolved by raster order), refined to sub-pixel
/// precision.
///
/// A bilinear cell attains its maximum at a corner, and the first pixel of a
/// tied plateau in raster order is a corner too, so only grid nodes are
/// tested as candidates.
pub fn nms_detect(s: &ScoreMap, cfg: &DetectionConfig) -> Vec<Intersection> {
    nms_scan(s, cfg, s.stride.max(1))
}

fn nms_scan(s: &ScoreMap, cfg: &DetectionConfig, step: usize) -> Vec<Intersection> {
    let (w, h) = (s.width, s.height);
    let thr = cfg.score_threshold as f32;
    let rad = cfg.nms_radius_px;
    let ri = math::floor(rad) as isize;
    let r2 = rad * rad;
    let mut out = Vec::new();
    for y in (0..h).step_by(step) {
        for x in (0..w).step_by(step) {
            let i = y * w + x;
            let v = s.values[i];
            if v < thr || v <= 0.0 {
                continue;
            }
            let mut dominant = true;
            'scan: for dy in -ri..=ri {
                let yy = y as isize + dy;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for dx in -ri..=ri {
                    let xx = x as isize + dx;
                    if xx < 0 || xx >= w as isize || (dx == 0 && dy == 0) {
                        continue;
                    }
                    if (dx * dx + dy * dy) as f64 > r2 {
                        continue;
                    }
                    let j = yy as usize * w + xx as usize;
                    let u = s.values[j];
                    if u > v || (u == v && j < i) {
                        dominant = false;
                        break 'scan;
                    }
                }
            }
            if !dominant {
                continue;
            }
            let st = s.stride.max(1);
            let ox = if x >= st && x + st < w {
                log_parabola_offset(s.values[i - st], v, s.values[i + st], st as f64)
            } else {
                0.0
            };
            let oy = if y >= st && y + st < h {
                log_parabola_offset(s.values[i - st * w], v, s.values[i + st * w], st as f64)
            } else {
                0.0
            };
            let p = Point2::new(x as f64 + ox, y as f64 + oy);
            out.push(Intersection::located(out.len() as u64, p, &s.geo, v as f64));
        }
    }
    out
}

/// Centroid of the branch pixels within `radius` of `p`, iterated until it
/// moves by less than 0.05 px; `p` itself when no branch pixel is in reach.
pub fn branch_centroid(f: &SkeletonFeatures, p: Point2, radius: f64) -> Point2 {
    let r2 = radius * radius;
    let mut c = p;
    for _ in 0..10 {
        let y0 = math::floor(c.y - radius).max(0.0) as usize;
        let y1 = (math::ceil(c.y + radius).max(0.0) as usize).min(f.height - 1);
        let x0 = math::floor(c.x - radius).max(0.0) as usize;
        let x1 = (math::ceil(c.x + radius).max(0.0) as usize).min(f.width - 1);
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 - c.x, y as f64 - c.y);
                if f.branch[y * f.width + x] && dx * dx + dy * dy <= r2 {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1;
                }
            }
        }
        if n == 0 {
            break;
        }
        let next = Point2::new(sx / n as f64, sy / n as f64);
        let moved = next.dist(c);
        c = next;
        if moved < 0.05 {
            break;
        }
    }
    c
}

/// Full detection: prepare, score, suppress, then move each detection to
/// its branch-pixel centroid.
pub fn detect(r: &RoadRaster, cfg: &DetectionConfig) -> Vec<Intersection> {
    let f = prepare(r, cfg);
    let mut found = nms_detect(&score_skeleton(&f, cfg), cfg);
    if cfg.refine_radius_px > 0.0 {
        for d in found.iter_mut() {
            let p = branch_centroid(&f, d.pixel_pos, cfg.refine_radius_px);
            *d = Intersection::located(d.id, p, &f.geo, d.score);
        }
    }
    found
}

/// Greedy one-to-one matching of detections to ground truth within
/// `tolerance` (same units as the points). Returns `(matched, detected, truth)`.
pub fn match_counts(
    detected: &[Point2],
    truth: &[Point2],
    tolerance: f64,
) -> (usize, usize, usize) {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, d) in detected.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let dist = d.dist(*t);
            if dist <= tolerance {
                pairs.push((dist, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_d = vec![false; detected.len()];
    let mut used_t = vec![false; truth.len()];
    let mut matched = 0;
    for (_, i, j) in pairs {
        if !used_d[i] && !used_t[j] {
            used_d[i] = true;
            used_t[j] = true;
            matched += 1;
        }
    }
    (matched, detected.len(), truth.len())
}

/// F-measure from match counts; 1.0 when both sets are empty.
pub fn f_measure(matched: usize, detected: usize, truth: usize) -> f64 {
    if detected == 0 && truth == 0 {
        return 1.0;
    }
    if matched == 0 {
        return 0.0;
    }
    let p = matched as f64 / detected as f64;
    let r = matched as f64 / truth as f64;
    2.0 * p * r / (p + r)
}
