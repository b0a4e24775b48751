//! Reference intersection database.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::descriptors::{extract_descriptor, DescriptorConfig, DiagonalMetric};
use crate::error::{invalid, Result};
use crate::geom::WorldPoint;
use crate::intersections::{detect, DetectionConfig};
use crate::map_model::{Intersection, RoadRaster};

/// Reference intersections with descriptors, the metric used to compare them
/// and, optionally, the reference rasters they were detected in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionIndex {
    pub entries: Vec<Intersection>,
    pub metric: DiagonalMetric,
    pub descriptor: DescriptorConfig,
    /// Reference rasters used for alignment crops; not part of the index file.
    #[serde(skip)]
    pub tiles: Vec<RoadRaster>,
}

/// Detects intersections in `r` and attaches descriptors. Ids start at
/// `first_id` and follow detection order.
pub fn describe_raster(
    r: &RoadRaster,
    det: &DetectionConfig,
    desc: &DescriptorConfig,
    first_id: u64,
) -> Result<Vec<Intersection>> {
    let mut found = detect(r, det);
    for (k, i) in found.iter_mut().enumerate() {
        i.id = first_id + k as u64;
        i.descriptor = Some(extract_descriptor(r, i.pixel_pos, desc)?);
    }
    Ok(found)
}

impl IntersectionIndex {
    pub fn from_entries(
        entries: Vec<Intersection>,
        metric: DiagonalMetric,
        descriptor: DescriptorConfig,
    ) -> Result<Self> {
        metric.validate()?;
        descriptor.validate()?;
        for e in &entries {
            if let Some(d) = &e.descriptor {
                if d.dim() != metric.weights.len() {
                    return Err(invalid(
                        "entries",
                        "descriptor dimension differs from metric",
                    ));
                }
            }
        }
        Ok(Self {
            entries,
            metric,
            descriptor,
            tiles: Vec::new(),
        })
    }

    /// Detects and describes intersections in every tile; ids are assigned
    /// consecutively across tiles.
    pub fn build(
        tiles: Vec<RoadRaster>,
        det: &DetectionConfig,
        descriptor: DescriptorConfig,
        metric: DiagonalMetric,
    ) -> Result<Self> {
        det.validate()?;
        let mut entries = Vec::new();
        for t in &tiles {
            let found = describe_raster(t, det, &descriptor, entries.len() as u64)?;
            entries.extend(found);
        }
        let mut idx = Self::from_entries(entries, metric, descriptor)?;
        idx.tiles = tiles;
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Intersection> {
        // Ids are usually dense and ordered; fall back to a scan otherwise.
        match self.entries.get(id as usize) {
            Some(e) if e.id == id => Some(e),
            _ => self.entries.iter().find(|e| e.id == id),
        }
    }

    /// First tile whose extent contains the world point.
    pub fn tile_at(&self, w: WorldPoint) -> Option<&RoadRaster> {
        self.tiles
            .iter()
            .find(|t| t.contains_pixel(t.world_to_pixel(w)))
    }

    pub fn with_metric(&self, metric: DiagonalMetric) -> Result<Self> {
        metric.validate()?;
        if metric.weights.len() != self.metric.weights.len() {
            return Err(invalid("metric", "dimension differs from index"));
        }
        let mut out = self.clone();
        out.metric = metric;
        Ok(out)
    }
}
