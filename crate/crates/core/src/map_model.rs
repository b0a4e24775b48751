//! Georeferenced rasters, road vectors, intersections and regions.
//!
//! Pixel convention: `x` is the column, `y` the row, integer coordinates sit
//! on pixel centres and row 0 is the northernmost row when `rotation_deg == 0`.
//! The geotransform anchors pixel `(0, 0)` at `(origin_east, origin_north)`
//! and rotates about that anchor.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::descriptors::Descriptor;
use crate::error::{invalid, Error, Result};
use crate::geom::{Point2, WorldPoint};
use crate::math;

/// Pixel ↔ world mapping: scale, clockwise rotation, translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_east: f64,
    pub origin_north: f64,
    pub meters_per_pixel: f64,
    /// Degrees clockwise from north-up, in `[-180, 180)`.
    pub rotation_deg: f64,
}

impl Default for GeoTransform {
    fn default() -> Self {
        Self {
            origin_east: 0.0,
            origin_north: 0.0,
            meters_per_pixel: 1.0,
            rotation_deg: 0.0,
        }
    }
}

impl GeoTransform {
    pub fn new(
        origin_east: f64,
        origin_north: f64,
        meters_per_pixel: f64,
        rotation_deg: f64,
    ) -> Result<Self> {
        let g = Self {
            origin_east,
            origin_north,
            meters_per_pixel,
            rotation_deg,
        };
        g.validate()?;
        Ok(g)
    }

    /// North-up, 1 m/px, anchored at `origin`.
    pub fn north_up(origin: WorldPoint, meters_per_pixel: f64) -> Self {
        Self {
            origin_east: origin.east,
            origin_north: origin.north,
            meters_per_pixel,
            rotation_deg: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.meters_per_pixel > 0.0 && self.meters_per_pixel.is_finite()) {
            return Err(invalid("meters_per_pixel", "must be finite and > 0"));
        }
        if !(-180.0..180.0).contains(&self.rotation_deg) {
            return Err(invalid("rotation_deg", "must lie in [-180, 180)"));
        }
        if !self.origin_east.is_finite() || !self.origin_north.is_finite() {
            return Err(invalid("origin", "must be finite"));
        }
        Ok(())
    }

    fn sin_cos(&self) -> (f64, f64) {
        let th = self.rotation_deg.to_radians();
        (math::sin(th), math::cos(th))
    }

    pub fn pixel_to_world(&self, p: Point2) -> WorldPoint {
        let (s, c) = self.sin_cos();
        let de = p.x * self.meters_per_pixel;
        let dn = -p.y * self.meters_per_pixel;
        WorldPoint {
            east: self.origin_east + de * c + dn * s,
            north: self.origin_north - de * s + dn * c,
        }
    }

    pub fn world_to_pixel(&self, w: WorldPoint) -> Point2 {
        let (s, c) = self.sin_cos();
        let e = w.east - self.origin_east;
        let n = w.north - self.origin_north;
        let de = e * c - n * s;
        let dn = e * s + n * c;
        Point2 {
            x: de / self.meters_per_pixel,
            y: -dn / self.meters_per_pixel,
        }
    }

    /// The same frame re-anchored at pixel `(dx, dy)` of this one.
    pub fn shifted(&self, dx: f64, dy: f64) -> Self {
        let o = self.pixel_to_world(Point2::new(dx, dy));
        Self {
            origin_east: o.east,
            origin_north: o.north,
            ..*self
        }
    }
}

/// Occupancy grid of road pixels with values in `[0, 1]` (1 = road).
#[derive(Debug, Clone, PartialEq)]
pub struct RoadRaster {
    width: usize,
    height: usize,
    values: Vec<f32>,
    geo: GeoTransform,
}

impl RoadRaster {
    pub fn zeros(width: usize, height: usize, geo: GeoTransform) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("size", "width and height must be >= 1"));
        }
        geo.validate()?;
        Ok(Self {
            width,
            height,
            values: vec![0.0; width * height],
            geo,
        })
    }

    pub fn from_values(
        width: usize,
        height: usize,
        values: Vec<f32>,
        geo: GeoTransform,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("size", "width and height must be >= 1"));
        }
        if values.len() != width * height {
            return Err(invalid("values", "length must equal width * height"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("values", "all values must lie in [0, 1]"));
        }
        geo.validate()?;
        Ok(Self {
            width,
            height,
            values,
            geo,
        })
    }

    pub fn from_mask(
        width: usize,
        height: usize,
        mask: &[bool],
        geo: GeoTransform,
    ) -> Result<Self> {
        let values = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        Self::from_values(width, height, values, geo)
    }

    /// Builds a raster from values already known to be in range (internal use).
    pub(crate) fn from_parts(
        width: usize,
        height: usize,
        values: Vec<f32>,
        geo: GeoTransform,
    ) -> Self {
        debug_assert_eq!(values.len(), width * height);
        Self {
            width,
            height,
            values,
            geo,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn geo(&self) -> &GeoTransform {
        &self.geo
    }

    pub fn with_geo(mut self, geo: GeoTransform) -> Self {
        self.geo = geo;
        self
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Sets a pixel, clamping into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.values[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    #[inline]
    pub fn is_road(&self, x: usize, y: usize) -> bool {
        self.get(x, y) >= 0.5
    }

    /// Road mask thresholded at 0.5, row-major.
    pub fn mask(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v >= 0.5).collect()
    }

    pub fn road_count(&self) -> usize {
        self.values.iter().filter(|&&v| v >= 0.5).count()
    }

    pub fn pixel_to_world(&self, p: Point2) -> WorldPoint {
        self.geo.pixel_to_world(p)
    }

    pub fn world_to_pixel(&self, w: WorldPoint) -> Point2 {
        self.geo.world_to_pixel(w)
    }

    pub fn contains_pixel(&self, p: Point2) -> bool {
        p.x >= -0.5
            && p.y >= -0.5
            && p.x < self.width as f64 - 0.5
            && p.y < self.height as f64 - 0.5
    }

    /// Value of the pixel nearest to `p`, zero outside.
    pub fn sample_nearest(&self, p: Point2) -> f32 {
        let x = math::round(p.x);
        let y = math::round(p.y);
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return 0.0;
        }
        self.get(x as usize, y as usize)
    }

    /// Values rounded to {0, 1} at 0.5.
    pub fn binarized(&self) -> Self {
        let values = self
            .values
            .iter()
            .map(|&v| if v >= 0.5 { 1.0 } else { 0.0 })
            .collect();
        Self::from_parts(self.width, self.height, values, self.geo)
    }
}

/// One road: a polyline in world meters with a carriageway width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSegment {
    pub points: Vec<WorldPoint>,
    pub width_m: f64,
}

impl RoadSegment {
    pub fn new(points: Vec<WorldPoint>, width_m: f64) -> Result<Self> {
        if points.len() < 2 {
            return Err(invalid("points", "a road polyline needs at least 2 points"));
        }
        if !(width_m > 0.0 && width_m.is_finite()) {
            return Err(invalid("width_m", "must be finite and > 0"));
        }
        Ok(Self { points, width_m })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoadVectorSet {
    pub segments: Vec<RoadSegment>,
}

impl RoadVectorSet {
    /// Axis-aligned bounding box `(min, max)` over all points.
    pub fn bounds(&self) -> Option<(WorldPoint, WorldPoint)> {
        let mut it = self.segments.iter().flat_map(|s| s.points.iter());
        let first = *it.next()?;
        let (mut lo, mut hi) = (first, first);
        for p in it {
            lo.east = lo.east.min(p.east);
            lo.north = lo.north.min(p.north);
            hi.east = hi.east.max(p.east);
            hi.north = hi.north.max(p.north);
        }
        Some((lo, hi))
    }
}

/// A road crossing with its position in pixels and in world meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub id: u64,
    pub pixel_pos: Point2,
    pub world_pos: WorldPoint,
    pub score: f64,
    pub descriptor: Option<Descriptor>,
}

impl Intersection {
    /// An intersection located in `geo`'s frame, without a descriptor.
    pub fn located(id: u64, pixel_pos: Point2, geo: &GeoTransform, score: f64) -> Self {
        Self {
            id,
            pixel_pos,
            world_pos: geo.pixel_to_world(pixel_pos),
            score,
            descriptor: None,
        }
    }

    /// True when a non-empty descriptor is attached.
    pub fn has_usable_descriptor(&self) -> bool {
        self.descriptor.as_ref().is_some_and(|d| !d.is_empty())
    }
}

/// All intersections within `radius_m` of a centre intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub center: Intersection,
    pub radius_m: f64,
    pub members: Vec<Intersection>,
}

/// Square crop of side `ceil(2 * radius_m / meters_per_pixel)` around a
/// world point, on the source pixel lattice (no resampling). Pixels outside
/// the source are zero.
pub fn crop_region(r: &RoadRaster, center: WorldPoint, radius_m: f64) -> Result<RoadRaster> {
    if !(radius_m > 0.0 && radius_m.is_finite()) {
        return Err(invalid("radius_m", "must be finite and > 0"));
    }
    let mpp = r.geo.meters_per_pixel;
    let c = r.world_to_pixel(center);
    let radius_px = radius_m / mpp;
    let outside_x = (0.0 - c.x).max(c.x - (r.width as f64 - 1.0)).max(0.0);
    let outside_y = (0.0 - c.y).max(c.y - (r.height as f64 - 1.0)).max(0.0);
    if math::hypot(outside_x, outside_y) > radius_px {
        return Err(Error::EmptyRegion);
    }
    let side = math::ceil(2.0 * radius_px - 1e-9).max(1.0) as usize;
    let half = (side as f64 - 1.0) / 2.0;
    let ox = math::round(c.x - half) as i64;
    let oy = math::round(c.y - half) as i64;

    let mut values = vec![0.0f32; side * side];
    for cy in 0..side {
        let sy = oy + cy as i64;
        if sy < 0 || sy >= r.height as i64 {
            continue;
        }
        let row = &r.values[sy as usize * r.width..(sy as usize + 1) * r.width];
        for cx in 0..side {
            let sx = ox + cx as i64;
            if sx >= 0 && sx < r.width as i64 {
                values[cy * side + cx] = row[sx as usize];
            }
        }
    }
    let geo = r.geo.shifted(ox as f64, oy as f64);
    Ok(RoadRaster::from_parts(side, side, values, geo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn approx(a: WorldPoint, b: WorldPoint, tol: f64) -> bool {
        (a.east - b.east).abs() <= tol && (a.north - b.north).abs() <= tol
    }

    #[test]
    fn identity_geo_maps_origin_to_origin() {
        let g = GeoTransform::default();
        assert_eq!(
            g.pixel_to_world(Point2::new(0.0, 0.0)),
            WorldPoint::new(0.0, 0.0)
        );
    }

    #[test]
    fn translation_only_geo() {
        // Rows grow southwards, so +5 rows is 5 m south.
        let g = GeoTransform::new(100.0, 200.0, 1.0, 0.0).unwrap();
        let w = g.pixel_to_world(Point2::new(10.0, 5.0));
        assert!(approx(w, WorldPoint::new(110.0, 195.0), 1e-12));
    }

    #[test]
    fn rotated_scaled_geo_round_trips() {
        let g = GeoTransform::new(0.0, 0.0, 2.0, 90.0).unwrap();
        let w = g.pixel_to_world(Point2::new(1.0, 0.0));
        // One pixel east, rotated a quarter turn clockwise: 2 m to the south.
        assert!(approx(w, WorldPoint::new(0.0, -2.0), 1e-12));
        let p = g.world_to_pixel(w);
        assert!((p.x - 1.0).abs() < 1e-12 && p.y.abs() < 1e-12);
    }

    #[test]
    fn invalid_geo_rejected() {
        assert!(GeoTransform::new(0.0, 0.0, 0.0, 0.0).is_err());
        assert!(GeoTransform::new(0.0, 0.0, 1.0, 180.0).is_err());
        assert!(GeoTransform::new(0.0, 0.0, 1.0, -180.0).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn pixel_world_round_trip(
            oe in -1e5f64..1e5, on in -1e5f64..1e5, mpp in 0.05f64..20.0, rot in -180f64..180.0,
            x in -5000f64..5000.0, y in -5000f64..5000.0,
        ) {
            let g = GeoTransform::new(oe, on, mpp, rot).unwrap();
            let p = Point2::new(x, y);
            let q = g.world_to_pixel(g.pixel_to_world(p));
            prop_assert!((q.x - x).abs() < 1e-9 && (q.y - y).abs() < 1e-9);
        }
    }

    fn ramp(w: usize, h: usize, geo: GeoTransform) -> RoadRaster {
        let values = (0..w * h)
            .map(|i| ((i * 7919) % 101) as f32 / 100.0)
            .collect();
        RoadRaster::from_values(w, h, values, geo).unwrap()
    }

    #[test]
    fn crop_full_extent_matches_original() {
        let r = ramp(
            21,
            21,
            GeoTransform::north_up(WorldPoint::new(500.0, 800.0), 1.0),
        );
        let centre = r.pixel_to_world(Point2::new(10.0, 10.0));
        let c = crop_region(&r, centre, 10.5).unwrap();
        assert_eq!(c.width(), 21);
        assert_eq!(c.values(), r.values());
        assert_eq!(c.geo(), r.geo());
    }

    #[test]
    fn crop_fully_outside_is_an_error() {
        let r = ramp(20, 20, GeoTransform::default());
        let far = r.pixel_to_world(Point2::new(100.0, 100.0));
        assert_eq!(crop_region(&r, far, 10.0), Err(Error::EmptyRegion));
    }

    #[test]
    fn crop_half_overlapping_zero_fills() {
        let geo = GeoTransform::new(10.0, 30.0, 1.0, 12.0).unwrap();
        let r = ramp(30, 25, geo);
        let centre_px = Point2::new(27.3, 3.6);
        let c = crop_region(&r, r.pixel_to_world(centre_px), 8.0).unwrap();
        assert_eq!(c.width(), 16);
        // Oracle: each crop pixel maps back through world coordinates to a
        // source pixel; compare against direct indexing.
        for cy in 0..c.height() {
            for cx in 0..c.width() {
                let w = c.pixel_to_world(Point2::new(cx as f64, cy as f64));
                let s = r.world_to_pixel(w);
                let (sx, sy) = (libm::round(s.x), libm::round(s.y));
                assert!((s.x - sx).abs() < 1e-6 && (s.y - sy).abs() < 1e-6);
                let expect = if sx >= 0.0 && sy >= 0.0 && sx < 30.0 && sy < 25.0 {
                    r.get(sx as usize, sy as usize)
                } else {
                    0.0
                };
                assert_eq!(c.get(cx, cy), expect, "pixel {cx},{cy}");
            }
        }
        // The crop centre stays within half a pixel of the requested centre.
        let mid = (c.width() as f64 - 1.0) / 2.0;
        let w = c.pixel_to_world(Point2::new(mid, mid));
        assert!(w.dist(r.pixel_to_world(centre_px)) <= 0.5 * 2f64.sqrt() + 1e-9);
    }

    proptest! {
        #[test]
        fn crop_preserves_georeference(cx in 0.0f64..39.0, cy in 0.0f64..39.0, rad in 1.0f64..30.0, rot in -180f64..180.0) {
            let geo = GeoTransform::new(-50.0, 70.0, 1.5, rot).unwrap();
            let r = RoadRaster::zeros(40, 40, geo).unwrap();
            let centre = r.pixel_to_world(Point2::new(cx, cy));
            let c = crop_region(&r, centre, rad).unwrap();
            let mid = (c.width() as f64 - 1.0) / 2.0;
            let got = c.world_to_pixel(centre);
            prop_assert!((got.x - mid).abs() <= 0.5 + 1e-9 && (got.y - mid).abs() <= 0.5 + 1e-9);
        }
    }

    #[test]
    fn raster_rejects_out_of_range_values() {
        assert!(RoadRaster::from_values(2, 1, vec![0.0, 1.5], GeoTransform::default()).is_err());
        assert!(RoadRaster::zeros(0, 3, GeoTransform::default()).is_err());
    }
}
