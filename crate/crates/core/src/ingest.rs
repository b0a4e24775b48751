//! Rasterization, synthetic cities and the query perturbation model.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)`, so every
//! output is reproducible across platforms for a given seed.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geom::{AffineTransform2D, Point2, WorldPoint};
use crate::map_model::{GeoTransform, Intersection, RoadRaster, RoadSegment, RoadVectorSet};
use crate::math;
use crate::morphology;

/// Squared distance from `p` to the segment `a`–`b`.
pub(crate) fn point_segment_dist2(p: Point2, a: Point2, b: Point2) -> f64 {
    let (vx, vy) = (b.x - a.x, b.y - a.y);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        (((p.x - a.x) * vx + (p.y - a.y) * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.x + t * vx, a.y + t * vy);
    (p.x - cx) * (p.x - cx) + (p.y - cy) * (p.y - cy)
}

/// Tolerance added to the capsule radius so pixel centres lying exactly on
/// the road edge count as road regardless of rounding.
pub const CAPSULE_EPS: f64 = 1e-9;

/// Binary rasterization: a pixel is road iff its centre lies within
/// `width_m / 2` of some road segment.
pub fn rasterize(
    v: &RoadVectorSet,
    geo: GeoTransform,
    width: usize,
    height: usize,
) -> Result<RoadRaster> {
    let mut raster = RoadRaster::zeros(width, height, geo)?;
    for seg in &v.segments {
        let half = seg.width_m / 2.0 / geo.meters_per_pixel;
        let r2 = half * half + CAPSULE_EPS;
        for pair in seg.points.windows(2) {
            let a = geo.world_to_pixel(pair[0]);
            let b = geo.world_to_pixel(pair[1]);
            let x0 = math::ceil(a.x.min(b.x) - half).max(0.0);
            let x1 = math::floor(a.x.max(b.x) + half).min(width as f64 - 1.0);
            let y0 = math::ceil(a.y.min(b.y) - half).max(0.0);
            let y1 = math::floor(a.y.max(b.y) + half).min(height as f64 - 1.0);
            if x0 > x1 || y0 > y1 {
                continue;
            }
            for y in y0 as usize..=y1 as usize {
                for x in x0 as usize..=x1 as usize {
                    if point_segment_dist2(Point2::new(x as f64, y as f64), a, b) <= r2 {
                        raster.set(x, y, 1.0);
                    }
                }
            }
        }
    }
    Ok(raster)
}

/// Parameters of a perturbed-grid street network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticCitySpec {
    pub seed: u64,
    pub extent_m: f64,
    pub grid_spacing_mean: f64,
    pub grid_spacing_std: f64,
    /// Fraction of the lattice that is made irregular: removed edges, added
    /// diagonals and node jitter all scale with it.
    pub irregularity: f64,
    pub road_width_m: f64,
    pub origin_east: f64,
    pub origin_north: f64,
    /// Empty border around the street network in the generated raster.
    pub margin_m: f64,
}

impl Default for SyntheticCitySpec {
    fn default() -> Self {
        Self {
            seed: 1,
            extent_m: 2000.0,
            grid_spacing_mean: 100.0,
            grid_spacing_std: 15.0,
            irregularity: 0.3,
            road_width_m: 6.0,
            origin_east: 0.0,
            origin_north: 0.0,
            margin_m: 40.0,
        }
    }
}

impl SyntheticCitySpec {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, "must be finite and > 0"))
            }
        };
        pos("extent_m", self.extent_m)?;
        pos("grid_spacing_mean", self.grid_spacing_mean)?;
        pos("road_width_m", self.road_width_m)?;
        if !(self.grid_spacing_std >= 0.0 && self.grid_spacing_std.is_finite()) {
            return Err(invalid("grid_spacing_std", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.irregularity) {
            return Err(invalid("irregularity", "must lie in [0, 1]"));
        }
        if !(self.margin_m >= 0.0 && self.margin_m.is_finite()) {
            return Err(invalid("margin_m", "must be finite and >= 0"));
        }
        if !self.origin_east.is_finite() || !self.origin_north.is_finite() {
            return Err(invalid("origin", "must be finite"));
        }
        if self.extent_m < self.grid_spacing_mean {
            return Err(Error::DegenerateSpec(format!(
                "extent_m ({}) is smaller than grid_spacing_mean ({})",
                self.extent_m, self.grid_spacing_mean
            )));
        }
        Ok(())
    }
}

/// A generated city: road vectors, ground-truth intersections and the
/// raster frame (1 m/px, north-up) that covers it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCity {
    pub vectors: RoadVectorSet,
    pub ground_truth: Vec<Intersection>,
    pub geo: GeoTransform,
    pub width: usize,
    pub height: usize,
}

impl SyntheticCity {
    pub fn rasterize(&self) -> Result<RoadRaster> {
        rasterize(&self.vectors, self.geo, self.width, self.height)
    }
}

fn grid_lines(rng: &mut ChaCha8Rng, spec: &SyntheticCitySpec) -> Vec<f64> {
    let mean = spec.grid_spacing_mean;
    let normal = Normal::new(mean, spec.grid_spacing_std).expect("validated std");
    let mut lines = vec![0.0];
    loop {
        let step = if spec.grid_spacing_std > 0.0 {
            normal.sample(rng).clamp(0.6 * mean, 1.4 * mean)
        } else {
            mean
        };
        let next = lines[lines.len() - 1] + step;
        if next > spec.extent_m + 1e-9 {
            break;
        }
        lines.push(next);
    }
    lines
}

/// Generates a perturbed-grid city. Intersections are the lattice nodes
/// where at least three roads meet.
pub fn generate_city(spec: &SyntheticCitySpec) -> Result<SyntheticCity> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let xs = grid_lines(&mut rng, spec);
    let ys = grid_lines(&mut rng, spec);
    let (nx, ny) = (xs.len(), ys.len());
    if nx < 2 || ny < 2 {
        return Err(Error::DegenerateSpec(format!(
            "grid has only {nx}x{ny} lines"
        )));
    }

    let irr = spec.irregularity;
    let mean = spec.grid_spacing_mean;
    let jitter_std = 0.12 * irr * mean;
    let node = |i: usize, j: usize| j * nx + i;

    let mut nodes = Vec::with_capacity(nx * ny);
    for &y in &ys {
        for &x in &xs {
            let (jx, jy) = if jitter_std > 0.0 {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                (
                    (a * jitter_std).clamp(-0.25 * mean, 0.25 * mean),
                    (b * jitter_std).clamp(-0.25 * mean, 0.25 * mean),
                )
            } else {
                (0.0, 0.0)
            };
            nodes.push(WorldPoint::new(
                spec.origin_east + spec.margin_m + x + jx,
                spec.origin_north + spec.margin_m + y + jy,
            ));
        }
    }

    let p_remove = 0.4 * irr;
    let p_diagonal = 0.4 * irr;
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if i + 1 < nx && !rng.random_bool(p_remove) {
                edges.push((node(i, j), node(i + 1, j)));
            }
            if j + 1 < ny && !rng.random_bool(p_remove) {
                edges.push((node(i, j), node(i, j + 1)));
            }
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            if rng.random_bool(p_diagonal) {
                if rng.random_bool(0.5) {
                    edges.push((node(i, j), node(i + 1, j + 1)));
                } else {
                    edges.push((node(i + 1, j), node(i, j + 1)));
                }
            }
        }
    }

    let mut degree = vec![0usize; nodes.len()];
    for &(a, b) in &edges {
        degree[a] += 1;
        degree[b] += 1;
    }

    let segments = edges
        .iter()
        .map(|&(a, b)| RoadSegment {
            points: vec![nodes[a], nodes[b]],
            width_m: spec.road_width_m,
        })
        .collect();

    // Node jitter is clamped to a quarter spacing; pad the frame by that much.
    let pad = if jitter_std > 0.0 { 0.25 * mean } else { 0.0 };
    let span_e = xs[nx - 1] + 2.0 * (spec.margin_m + pad);
    let span_n = ys[ny - 1] + 2.0 * (spec.margin_m + pad);
    let geo = GeoTransform::north_up(
        WorldPoint::new(spec.origin_east - pad, spec.origin_north - pad + span_n),
        1.0,
    );
    let width = math::ceil(span_e) as usize + 1;
    let height = math::ceil(span_n) as usize + 1;

    let ground_truth = nodes
        .iter()
        .enumerate()
        .filter(|&(k, _)| degree[k] >= 3)
        .map(|(k, &w)| Intersection {
            id: k as u64,
            pixel_pos: geo.world_to_pixel(w),
            world_pos: w,
            score: 1.0,
            descriptor: None,
        })
        .collect();

    Ok(SyntheticCity {
        vectors: RoadVectorSet { segments },
        ground_truth,
        geo,
        width,
        height,
    })
}

/// Detector-noise stand-in applied to query rasters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationSpec {
    /// Probability of clearing each road pixel.
    pub pixel_dropout: f64,
    /// Expected number of erased discs (Poisson mean).
    pub blob_count: f64,
    pub blob_radius_px: f64,
    /// Standard deviation of the road boundary displacement, in pixels.
    pub jitter_px: f64,
    /// Standard deviation of the Gaussian rotation noise, in degrees.
    pub rotation_noise_deg: f64,
    pub translation_noise_px: f64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            pixel_dropout: 0.05,
            blob_count: 3.0,
            blob_radius_px: 10.0,
            jitter_px: 1.0,
            rotation_noise_deg: 5.0,
            translation_noise_px: 10.0,
        }
    }
}

impl PerturbationSpec {
    /// No perturbation at all.
    pub fn none() -> Self {
        Self {
            pixel_dropout: 0.0,
            blob_count: 0.0,
            blob_radius_px: 0.0,
            jitter_px: 0.0,
            rotation_noise_deg: 0.0,
            translation_noise_px: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("pixel_dropout", self.pixel_dropout),
            ("blob_count", self.blob_count),
            ("blob_radius_px", self.blob_radius_px),
            ("jitter_px", self.jitter_px),
            ("rotation_noise_deg", self.rotation_noise_deg),
            ("translation_noise_px", self.translation_noise_px),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, "must be finite and >= 0"));
            }
        }
        if self.pixel_dropout > 1.0 {
            return Err(invalid("pixel_dropout", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Correlation length of the boundary jitter field, in pixels.
const JITTER_CORRELATION_PX: f64 = 1.5;

/// Applies rotation/translation noise (nearest-neighbour resampling about
/// the raster centre, re-binarized at 0.5), then boundary jitter, pixel
/// dropout and blob dropout. Returns the perturbed raster and the exact
/// transform mapping original pixels to perturbed pixels.
pub fn perturb(
    r: &RoadRaster,
    spec: &PerturbationSpec,
    seed: u64,
) -> Result<(RoadRaster, AffineTransform2D)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (r.width(), r.height());

    let angle = if spec.rotation_noise_deg > 0.0 {
        spec.rotation_noise_deg * Distribution::<f64>::sample(&StandardNormal, &mut rng)
    } else {
        0.0
    };
    let (tx, ty) = if spec.translation_noise_px > 0.0 {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        (a * spec.translation_noise_px, b * spec.translation_noise_px)
    } else {
        (0.0, 0.0)
    };
    let centre = Point2::new((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let transform = AffineTransform2D::translation(tx, ty)
        .compose(&AffineTransform2D::rotation_about(centre, angle));

    let mut mask: Vec<bool> = if transform == AffineTransform2D::identity() {
        r.mask()
    } else {
        let inv = transform.inverse().expect("rigid transform is invertible");
        let mut m = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let src = inv.apply(Point2::new(x as f64, y as f64));
                m[y * w + x] = r.sample_nearest(src) >= 0.5;
            }
        }
        m
    };

    if spec.jitter_px > 0.0 {
        mask = jitter_boundary(&mask, w, h, spec.jitter_px, &mut rng);
    }

    if spec.pixel_dropout > 0.0 {
        for m in mask.iter_mut() {
            if *m && rng.random_bool(spec.pixel_dropout) {
                *m = false;
            }
        }
    }

    if spec.blob_count > 0.0 && spec.blob_radius_px > 0.0 {
        let count = Poisson::new(spec.blob_count)
            .map(|p| p.sample(&mut rng) as usize)
            .unwrap_or(0);
        let rad = spec.blob_radius_px;
        for _ in 0..count {
            let cx = rng.random::<f64>() * w as f64;
            let cy = rng.random::<f64>() * h as f64;
            let y0 = math::floor(cy - rad).max(0.0) as usize;
            let y1 = (math::ceil(cy + rad).max(0.0) as usize).min(h - 1);
            let x0 = math::floor(cx - rad).max(0.0) as usize;
            let x1 = (math::ceil(cx + rad).max(0.0) as usize).min(w - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                    if dx * dx + dy * dy <= rad * rad {
                        mask[y * w + x] = false;
                    }
                }
            }
        }
    }

    Ok((RoadRaster::from_mask(w, h, &mask, *r.geo())?, transform))
}

/// Moves the road boundary by a smooth random displacement field with the
/// given standard deviation (pixels).
fn jitter_boundary(
    mask: &[bool],
    w: usize,
    h: usize,
    std_px: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<bool> {
    let inverse: Vec<bool> = mask.iter().map(|&m| !m).collect();
    let to_background = morphology::edt(&inverse, w, h);
    let to_road = morphology::edt(mask, w, h);
    let noise: Vec<f32> = (0..w * h)
        .map(|_| StandardNormal.sample(rng))
        .map(|v: f64| v as f32)
        .collect();
    let smooth = morphology::gaussian_blur(&noise, w, h, JITTER_CORRELATION_PX);
    let k = morphology::gaussian_kernel(JITTER_CORRELATION_PX);
    let field_std: f64 = k.iter().map(|x| x * x).sum();
    let scale = std_px / field_std;
    (0..w * h)
        .map(|i| {
            let signed = if mask[i] {
                to_background[i] - 0.5
            } else {
                -(to_road[i] - 0.5)
            };
            signed + scale * smooth[i] as f64 > 0.0
        })
        .collect()
}
