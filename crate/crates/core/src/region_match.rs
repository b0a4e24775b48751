//! Region-to-region matching.
//!
//! A query intersection is compared with a reference intersection through the
//! intersections around them: every member of one region is paired with its
//! nearest descriptor in the other region, in both directions, and the two
//! sums are averaged.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::descriptors::{Descriptor, DiagonalMetric};
use crate::error::{invalid, Error, Result};
use crate::index::IntersectionIndex;
use crate::map_model::{Intersection, Region};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionDistance {
    pub s_t: f64,
    pub s_l: f64,
    pub d: f64,
}

impl RegionDistance {
    fn new(s_t: f64, s_l: f64) -> Self {
        Self {
            s_t,
            s_l,
            d: (s_t + s_l) / 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub reference_id: u64,
    pub distance: RegionDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateList {
    pub query_id: u64,
    pub entries: Vec<CandidateEntry>,
    /// References skipped because their region had no usable descriptor.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchConfig {
    pub radius_m: f64,
    pub k: usize,
    /// Divide each directed sum by its region's usable member count.
    pub normalize: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            radius_m: 300.0,
            k: 5,
            normalize: false,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_m > 0.0) {
            return Err(invalid("radius_m", "must be > 0"));
        }
        if self.k == 0 {
            return Err(invalid("k", "must be >= 1"));
        }
        Ok(())
    }
}

/// Members of `all` within `radius_m` of `center` (world meters). The centre
/// is always included, even when it is absent from `all`.
pub fn gather_region(all: &[Intersection], center: &Intersection, radius_m: f64) -> Region {
    let mut members: Vec<Intersection> = all
        .iter()
        .filter(|i| i.world_pos.dist(center.world_pos) <= radius_m)
        .cloned()
        .collect();
    if !members.iter().any(|m| m.id == center.id) {
        members.insert(0, center.clone());
    }
    Region {
        center: center.clone(),
        radius_m,
        members,
    }
}

fn usable(r: &Region) -> Vec<&Descriptor> {
    r.members
        .iter()
        .filter(|m| m.has_usable_descriptor())
        .filter_map(|m| m.descriptor.as_ref())
        .collect()
}

fn directed_sum(from: &[&Descriptor], to: &[&Descriptor], metric: &DiagonalMetric) -> f64 {
    from.iter()
        .map(|a| {
            to.iter()
                .map(|b| metric.distance(a, b))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// Symmetrized sum of nearest-neighbour descriptor distances between two
/// regions. Only members with a non-empty descriptor take part.
pub fn region_distance(
    rt: &Region,
    rl: &Region,
    metric: &DiagonalMetric,
    normalize: bool,
) -> Result<RegionDistance> {
    let t = usable(rt);
    let l = usable(rl);
    if t.is_empty() || l.is_empty() {
        return Err(Error::NoUsableDescriptors);
    }
    let mut s_t = directed_sum(&t, &l, metric);
    let mut s_l = directed_sum(&l, &t, metric);
    if normalize {
        s_t /= t.len() as f64;
        s_l /= l.len() as f64;
    }
    Ok(RegionDistance::new(s_t, s_l))
}

fn sort_and_truncate(entries: &mut Vec<CandidateEntry>, k: usize) {
    entries.sort_by(|a, b| {
        a.distance
            .d
            .total_cmp(&b.distance.d)
            .then(a.reference_id.cmp(&b.reference_id))
    });
    entries.truncate(k);
}

/// The `k` reference intersections closest to `query` under the region
/// distance. `query_all` holds every intersection of the query map and is
/// used to gather the query region.
pub fn candidates(
    query: &Intersection,
    query_all: &[Intersection],
    index: &IntersectionIndex,
    cfg: &MatchConfig,
) -> Result<CandidateList> {
    cfg.validate()?;
    if index.is_empty() {
        return Err(Error::EmptyInput("index"));
    }
    let rt = gather_region(query_all, query, cfg.radius_m);
    if usable(&rt).is_empty() {
        return Err(Error::NoUsableDescriptors);
    }
    let mut entries = Vec::with_capacity(index.len());
    let mut skipped = 0;
    for reference in &index.entries {
        let rl = gather_region(&index.entries, reference, cfg.radius_m);
        match region_distance(&rt, &rl, &index.metric, cfg.normalize) {
            Ok(distance) => entries.push(CandidateEntry {
                reference_id: reference.id,
                distance,
            }),
            Err(_) => skipped += 1,
        }
    }
    sort_and_truncate(&mut entries, cfg.k);
    Ok(CandidateList {
        query_id: query.id,
        entries,
        skipped,
    })
}

/// Batch form of [`candidates`] for many queries against one index: the
/// query-by-reference descriptor distance matrix and region memberships are
/// computed once, and references whose forward sum alone already exceeds the
/// current k-th best are pruned.
pub struct RegionMatcher {
    queries: Vec<Intersection>,
    /// Indices into `queries` with usable descriptors, and the matching
    /// row of `dist`.
    q_row: Vec<Option<usize>>,
    l_col: Vec<Option<usize>>,
    reference_ids: Vec<u64>,
    ref_pos: Vec<crate::geom::WorldPoint>,
    n_cols: usize,
    dist: Vec<f64>,
}

impl RegionMatcher {
    pub fn new(queries: &[Intersection], index: &IntersectionIndex) -> Self {
        let mut q_row = vec![None; queries.len()];
        let mut q_desc = Vec::new();
        for (i, q) in queries.iter().enumerate() {
            if q.has_usable_descriptor() {
                q_row[i] = Some(q_desc.len());
                q_desc.push(q.descriptor.as_ref().expect("usable"));
            }
        }
        let mut l_col = vec![None; index.len()];
        let mut l_desc = Vec::new();
        for (j, l) in index.entries.iter().enumerate() {
            if l.has_usable_descriptor() {
                l_col[j] = Some(l_desc.len());
                l_desc.push(l.descriptor.as_ref().expect("usable"));
            }
        }
        let n_cols = l_desc.len();
        let mut dist = vec![0.0; q_desc.len() * n_cols];
        for (r, a) in q_desc.iter().enumerate() {
            for (c, b) in l_desc.iter().enumerate() {
                dist[r * n_cols + c] = index.metric.distance(a, b);
            }
        }
        Self {
            queries: queries.to_vec(),
            q_row,
            l_col,
            reference_ids: index.entries.iter().map(|e| e.id).collect(),
            ref_pos: index.entries.iter().map(|e| e.world_pos).collect(),
            n_cols,
            dist,
        }
    }

    fn members(
        pos: &[crate::geom::WorldPoint],
        center: usize,
        radius: f64,
        cols: &[Option<usize>],
    ) -> Vec<usize> {
        pos.iter()
            .enumerate()
            .filter(|(_, p)| p.dist(pos[center]) <= radius)
            .filter_map(|(i, _)| cols[i])
            .collect()
    }

    /// Candidate lists for every query, in query order. Queries whose region
    /// has no usable descriptor get `Err(NoUsableDescriptors)`.
    pub fn candidates_all(&self, cfg: &MatchConfig) -> Result<Vec<Result<CandidateList>>> {
        cfg.validate()?;
        if self.reference_ids.is_empty() {
            return Err(Error::EmptyInput("index"));
        }
        let q_pos: Vec<_> = self.queries.iter().map(|q| q.world_pos).collect();
        let ref_members: Vec<Vec<usize>> = (0..self.ref_pos.len())
            .map(|j| Self::members(&self.ref_pos, j, cfg.radius_m, &self.l_col))
            .collect();
        let mut out = Vec::with_capacity(self.queries.len());
        for qi in 0..self.queries.len() {
            let rows = Self::members(&q_pos, qi, cfg.radius_m, &self.q_row);
            if rows.is_empty() {
                out.push(Err(Error::NoUsableDescriptors));
                continue;
            }
            out.push(Ok(self.rank(qi, &rows, &ref_members, cfg)));
        }
        Ok(out)
    }

    fn rank(
        &self,
        qi: usize,
        rows: &[usize],
        ref_members: &[Vec<usize>],
        cfg: &MatchConfig,
    ) -> CandidateList {
        let nt = rows.len() as f64;
        let mut best: Vec<CandidateEntry> = Vec::with_capacity(cfg.k + 1);
        let mut skipped = 0;
        for (j, cols) in ref_members.iter().enumerate() {
            if cols.is_empty() {
                skipped += 1;
                continue;
            }
            let nl = cols.len() as f64;
            let bound = if best.len() == cfg.k {
                best[cfg.k - 1].distance.d
            } else {
                f64::INFINITY
            };
            let mut s_t = 0.0;
            let mut pruned = false;
            for &r in rows {
                let row = &self.dist[r * self.n_cols..(r + 1) * self.n_cols];
                s_t += cols.iter().map(|&c| row[c]).fold(f64::INFINITY, f64::min);
                let partial = if cfg.normalize { s_t / nt } else { s_t };
                if partial / 2.0 > bound {
                    pruned = true;
                    break;
                }
            }
            if pruned {
                continue;
            }
            let mut s_l = 0.0;
            for &c in cols {
                s_l += rows
                    .iter()
                    .map(|&r| self.dist[r * self.n_cols + c])
                    .fold(f64::INFINITY, f64::min);
            }
            if cfg.normalize {
                s_t /= nt;
                s_l /= nl;
            }
            best.push(CandidateEntry {
                reference_id: self.reference_ids[j],
                distance: RegionDistance::new(s_t, s_l),
            });
            sort_and_truncate(&mut best, cfg.k);
        }
        CandidateList {
            query_id: self.queries[qi].id,
            entries: best,
            skipped,
        }
    }
}
