//! Intersection descriptors, the contrastive loss and diagonal metric learning.
//!
//! A descriptor is a log-polar histogram of road-pixel density around an
//! intersection. Rings are geometrically spaced between `inner_radius_m` and
//! `radius_m`; sectors are measured clockwise from north in the world frame,
//! with sector 0 centred on north. Each bin holds road area divided by bin
//! area, and the vector is L2-normalized.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geom::Point2;
use crate::map_model::RoadRaster;
use crate::math;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Descriptor {
    pub values: Vec<f64>,
}

impl Descriptor {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// All-zero descriptors mark empty neighbourhoods.
    pub fn is_empty(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescriptorConfig {
    pub radius_m: f64,
    pub inner_radius_m: f64,
    pub rings: usize,
    pub sectors: usize,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            radius_m: 100.0,
            inner_radius_m: 8.0,
            rings: 5,
            sectors: 12,
        }
    }
}

impl DescriptorConfig {
    pub fn dim(&self) -> usize {
        self.rings * self.sectors
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inner_radius_m > 0.0) {
            return Err(invalid("inner_radius_m", "must be > 0"));
        }
        if !(self.radius_m > self.inner_radius_m) {
            return Err(invalid("radius_m", "must exceed inner_radius_m"));
        }
        if self.rings == 0 || self.sectors == 0 {
            return Err(invalid("rings", "rings and sectors must be >= 1"));
        }
        Ok(())
    }

    /// Ring boundaries in meters (`rings + 1` values).
    pub fn ring_edges(&self) -> Vec<f64> {
        let ratio = self.radius_m / self.inner_radius_m;
        (0..=self.rings)
            .map(|i| self.inner_radius_m * math::powf(ratio, i as f64 / self.rings as f64))
            .collect()
    }
}

/// Bin of a world offset, or `None` outside the annulus.
pub fn bin_of(de: f64, dn: f64, cfg: &DescriptorConfig) -> Option<(usize, usize)> {
    let r = math::hypot(de, dn);
    if r < cfg.inner_radius_m || r > cfg.radius_m {
        return None;
    }
    let t = math::ln(r / cfg.inner_radius_m) / math::ln(cfg.radius_m / cfg.inner_radius_m);
    let ring = ((t * cfg.rings as f64) as usize).min(cfg.rings - 1);
    let width = 360.0 / cfg.sectors as f64;
    let az = math::atan2(de, dn).to_degrees();
    let mut s = math::floor((az + width / 2.0) / width) as isize;
    s = s.rem_euclid(cfg.sectors as isize);
    Some((ring, s as usize))
}

/// Log-polar road-density descriptor around `center` (pixel coordinates).
/// An empty neighbourhood gives the all-zero descriptor.
pub fn extract_descriptor(
    r: &RoadRaster,
    center: Point2,
    cfg: &DescriptorConfig,
) -> Result<Descriptor> {
    cfg.validate()?;
    if !r.contains_pixel(center) {
        return Err(invalid("center", "must lie inside the raster"));
    }
    let geo = r.geo();
    let mpp = geo.meters_per_pixel;
    let reach = cfg.radius_m / mpp;
    let x0 = math::floor(center.x - reach).max(0.0) as usize;
    let y0 = math::floor(center.y - reach).max(0.0) as usize;
    let x1 = (math::ceil(center.x + reach) as usize).min(r.width() - 1);
    let y1 = (math::ceil(center.y + reach) as usize).min(r.height() - 1);
    let th = geo.rotation_deg.to_radians();
    let (s, c) = (math::sin(th), math::cos(th));

    let mut counts = vec![0.0f64; cfg.dim()];
    for y in y0..=y1 {
        for x in x0..=x1 {
            if !r.is_road(x, y) {
                continue;
            }
            let de0 = (x as f64 - center.x) * mpp;
            let dn0 = -(y as f64 - center.y) * mpp;
            let de = de0 * c + dn0 * s;
            let dn = -de0 * s + dn0 * c;
            if let Some((ring, sector)) = bin_of(de, dn, cfg) {
                counts[ring * cfg.sectors + sector] += mpp * mpp;
            }
        }
    }
    let edges = cfg.ring_edges();
    for ring in 0..cfg.rings {
        let area = core::f64::consts::PI
            * (edges[ring + 1] * edges[ring + 1] - edges[ring] * edges[ring])
            / cfg.sectors as f64;
        for v in &mut counts[ring * cfg.sectors..(ring + 1) * cfg.sectors] {
            *v /= area;
        }
    }
    let norm = math::sqrt(counts.iter().map(|v| v * v).sum());
    if norm > 0.0 {
        counts.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(Descriptor::new(counts))
}

/// Weighted squared Euclidean distance with a contrastive margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalMetric {
    pub weights: Vec<f64>,
    pub margin: f64,
}

impl DiagonalMetric {
    pub fn unit(dim: usize, margin: f64) -> Self {
        Self {
            weights: vec![1.0; dim],
            margin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(invalid("margin", "must be > 0"));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(invalid("weights", "must be finite and >= 0"));
        }
        Ok(())
    }

    #[inline]
    pub fn distance(&self, a: &Descriptor, b: &Descriptor) -> f64 {
        debug_assert_eq!(a.dim(), self.weights.len());
        debug_assert_eq!(b.dim(), self.weights.len());
        self.weights
            .iter()
            .zip(a.values.iter().zip(&b.values))
            .map(|(w, (x, y))| w * (x - y) * (x - y))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub a: Descriptor,
    pub b: Descriptor,
    /// 1 when both descriptors come from the same intersection, else 0.
    pub y: u8,
}

impl LabeledPair {
    pub fn new(a: Descriptor, b: Descriptor, y: u8) -> Result<Self> {
        if y > 1 {
            return Err(invalid("y", "label must be 0 or 1"));
        }
        if a.dim() != b.dim() {
            return Err(invalid("b", "descriptor dimensions differ"));
        }
        Ok(Self { a, b, y })
    }
}

/// `½·y·d + ½·(1−y)·max(m − d, 0)`.
pub fn contrastive_loss(p: &LabeledPair, m: &DiagonalMetric) -> f64 {
    let d = m.distance(&p.a, &p.b);
    if p.y == 1 {
        0.5 * d
    } else {
        0.5 * (m.margin - d).max(0.0)
    }
}

/// Gradient of [`contrastive_loss`] with respect to the metric weights.
pub fn loss_gradient(p: &LabeledPair, m: &DiagonalMetric) -> Vec<f64> {
    let sign = if p.y == 1 {
        0.5
    } else if m.distance(&p.a, &p.b) < m.margin {
        -0.5
    } else {
        return vec![0.0; m.weights.len()];
    };
    p.a.values
        .iter()
        .zip(&p.b.values)
        .map(|(x, y)| sign * (x - y) * (x - y))
        .collect()
}

pub fn mean_loss(pairs: &[LabeledPair], m: &DiagonalMetric) -> f64 {
    pairs.iter().map(|p| contrastive_loss(p, m)).sum::<f64>() / pairs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub margin: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            learning_rate: 20.0,
            epochs: 300,
            margin: 1.0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(invalid("margin", "must be > 0"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(invalid("learning_rate", "must be > 0"));
        }
        Ok(())
    }
}

/// Batch gradient descent on the mean contrastive loss, starting from unit
/// weights and projecting onto `w >= 0` after every step. Returns the iterate
/// with the lowest mean loss, so the result never scores worse than the start.
pub fn finetune_metric(pairs: &[LabeledPair], cfg: &FinetuneConfig) -> Result<DiagonalMetric> {
    let first = pairs.first().ok_or(Error::EmptyInput("pairs"))?;
    cfg.validate()?;
    let has_pos = pairs.iter().any(|p| p.y == 1);
    let has_neg = pairs.iter().any(|p| p.y == 0);
    if !(has_pos && has_neg) {
        return Err(Error::DegenerateObjective);
    }
    let dim = first.a.dim();
    if pairs.iter().any(|p| p.a.dim() != dim || p.b.dim() != dim) {
        return Err(invalid("pairs", "descriptor dimensions differ"));
    }
    let mut metric = DiagonalMetric::unit(dim, cfg.margin);
    let mut best = metric.clone();
    let mut best_loss = mean_loss(pairs, &metric);
    let n = pairs.len() as f64;
    for _ in 0..cfg.epochs {
        let mut grad = vec![0.0; dim];
        for p in pairs {
            for (g, v) in grad.iter_mut().zip(loss_gradient(p, &metric)) {
                *g += v / n;
            }
        }
        if grad.iter().all(|&g| g == 0.0) {
            break;
        }
        for (w, g) in metric.weights.iter_mut().zip(&grad) {
            *w = (*w - cfg.learning_rate * g).max(0.0);
        }
        let loss = mean_loss(pairs, &metric);
        if loss < best_loss {
            best_loss = loss;
            best = metric.clone();
        }
    }
    Ok(best)
}

/// Exhaustive k-NN over `(id, descriptor)` entries, ascending by
/// `(distance, id)`. Returns the whole index when `k` exceeds its size.
pub fn knn_query<'a, I>(
    entries: I,
    q: &Descriptor,
    metric: &DiagonalMetric,
    k: usize,
) -> Vec<(u64, f64)>
where
    I: IntoIterator<Item = (u64, &'a Descriptor)>,
{
    let mut all: Vec<(u64, f64)> = entries
        .into_iter()
        .map(|(id, d)| (id, metric.distance(q, d)))
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}
