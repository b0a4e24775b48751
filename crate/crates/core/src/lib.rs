//! Geolocalization of road maps against a reference road database.
//!
//! The crate is `no_std` (it needs `alloc`) and contains the algorithmic
//! pipeline only:
//!
//! - [`map_model`]: georeferenced rasters, road vectors and intersections.
//! - [`ingest`]: rasterization, synthetic cities and the query perturbation model.
//! - [`intersections`]: skeleton-based intersection scoring on a strided grid,
//!   interpolation and non-maxima suppression.
//! - [`descriptors`]: log-polar intersection descriptors, the contrastive loss,
//!   diagonal metric learning and exact k-NN.
//! - [`region_match`]: region-to-region matching by symmetrized 1-NN sums.
//! - [`alignment`]: shape contexts, RANSAC affine fitting, EDT and Chamfer scoring.
//! - [`pipeline`]: candidate re-ranking by alignment and road-map enhancement.
//!
//! File formats, the evaluation harness and the command line live in the
//! `roadloc` crate.

#![no_std]
// `!(x > 0.0)` rejects NaN as well; index loops mirror the matrix notation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod alignment;
pub mod descriptors;
mod error;
pub mod geom;
pub mod index;
pub mod ingest;
pub mod intersections;
pub mod map_model;
pub mod math;
pub mod morphology;
pub mod pipeline;
pub mod region_match;

pub use error::{Error, Result};
pub use geom::{AffineTransform2D, Point2, WorldPoint};
pub use map_model::{GeoTransform, Intersection, Region, RoadRaster, RoadSegment, RoadVectorSet};
