//! Two-city synthetic benchmark and the evaluation sweep over it.
//!
//! City A and city B are generated side by side and both are indexed. The
//! test queries are the intersections detected in a perturbed copy of city B;
//! a perturbed copy of city A supplies the metric fine-tuning pairs, so no
//! test query ever contributes to training.

use std::collections::{BTreeMap, BTreeSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use roadloc_core::alignment::AlignmentResult;
use roadloc_core::descriptors::{finetune_metric, DiagonalMetric, FinetuneConfig, LabeledPair};
use roadloc_core::geom::{AffineTransform2D, Point2, WorldPoint};
use roadloc_core::index::{describe_raster, IntersectionIndex};
use roadloc_core::ingest::{
    generate_city, perturb, PerturbationSpec, SyntheticCity, SyntheticCitySpec,
};
use roadloc_core::map_model::{Intersection, RoadRaster};
use roadloc_core::math;
use roadloc_core::pipeline::{
    align_to_reference, best_accepted, prepare_query, prepare_reference, resolve, road_f_measure,
    road_iou, world_estimate, EnhanceConfig, LocalizationResult, LocalizeConfig, QueryCrop,
};
use roadloc_core::region_match::{CandidateList, MatchConfig, RegionMatcher};
use roadloc_core::{Error, Result};

use crate::register::enhance_with;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSpec {
    /// Master seed; the city, perturbation and training seeds derive from it.
    pub seed: u64,
    /// Template for both cities; its seed and origin are overridden.
    pub city: SyntheticCitySpec,
    /// East offset of city B's origin from city A's, in meters.
    pub separation_m: f64,
    pub perturbation: PerturbationSpec,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            city: SyntheticCitySpec::default(),
            separation_m: 5000.0,
            perturbation: PerturbationSpec::default(),
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        self.city.validate()?;
        self.perturbation.validate()?;
        if !(self.separation_m.is_finite()
            && self.separation_m > self.city.extent_m + 2.0 * self.city.margin_m)
        {
            return Err(Error::InvalidParameter {
                name: "separation_m",
                reason: "cities must not overlap".into(),
            });
        }
        Ok(())
    }

    /// Seeds for city A, city B, the test query and the training query.
    pub fn derived_seeds(&self) -> [u64; 4] {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        [
            rng.next_u64(),
            rng.next_u64(),
            rng.next_u64(),
            rng.next_u64(),
        ]
    }

    pub fn city_spec(&self, which: usize) -> SyntheticCitySpec {
        let mut c = self.city.clone();
        c.seed = self.derived_seeds()[which];
        c.origin_east = self.city.origin_east + which as f64 * self.separation_m;
        c
    }
}

/// A perturbed raster with the exact transform from clean to perturbed pixels.
#[derive(Debug, Clone)]
pub struct PerturbedQuery {
    pub raster: RoadRaster,
    pub transform: AffineTransform2D,
    inverse: AffineTransform2D,
}

impl PerturbedQuery {
    fn new(clean: &RoadRaster, spec: &PerturbationSpec, seed: u64) -> Result<Self> {
        let (raster, transform) = perturb(clean, spec, seed)?;
        let inverse = transform
            .inverse()
            .ok_or(Error::EmptyInput("invertible perturbation"))?;
        Ok(Self {
            raster,
            transform,
            inverse,
        })
    }

    /// True world position of a perturbed-raster pixel.
    pub fn truth(&self, p: Point2) -> WorldPoint {
        self.raster.pixel_to_world(self.inverse.apply(p))
    }
}

pub struct Benchmark {
    pub spec: BenchmarkSpec,
    pub cities: [SyntheticCity; 2],
    pub references: [RoadRaster; 2],
    /// Perturbed city B.
    pub query: PerturbedQuery,
    /// Perturbed city A, used only for fine-tuning.
    pub train: PerturbedQuery,
}

impl Benchmark {
    pub fn generate(spec: &BenchmarkSpec) -> Result<Self> {
        spec.validate()?;
        let seeds = spec.derived_seeds();
        let a = generate_city(&spec.city_spec(0))?;
        let b = generate_city(&spec.city_spec(1))?;
        let ra = a.rasterize()?;
        let rb = b.rasterize()?;
        let query = PerturbedQuery::new(&rb, &spec.perturbation, seeds[2])?;
        let train = PerturbedQuery::new(&ra, &spec.perturbation, seeds[3])?;
        Ok(Self {
            spec: spec.clone(),
            cities: [a, b],
            references: [ra, rb],
            query,
            train,
        })
    }

    pub fn build_index(
        &self,
        cfg: &LocalizeConfig,
        descriptor: &roadloc_core::descriptors::DescriptorConfig,
    ) -> Result<IntersectionIndex> {
        IntersectionIndex::build(
            self.references.to_vec(),
            &cfg.detection,
            descriptor.clone(),
            DiagonalMetric::unit(descriptor.dim(), 1.0),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// A reference within this distance of the truth is the positive.
    pub positive_radius_m: f64,
    /// References within this distance of the truth are never negatives.
    pub negative_exclusion_m: f64,
    pub negatives_per_positive: usize,
    pub finetune: FinetuneConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            positive_radius_m: 5.0,
            negative_exclusion_m: 20.0,
            negatives_per_positive: 3,
            finetune: FinetuneConfig {
                learning_rate: 50.0,
                epochs: 3000,
                margin: 0.1,
            },
        }
    }
}

/// Labeled pairs from the training query: the nearest reference to each
/// detection's true position is its positive, the references closest in
/// descriptor space (under the index metric) that lie elsewhere are its hard
/// negatives.
pub fn training_pairs(
    train: &PerturbedQuery,
    index: &IntersectionIndex,
    cfg: &LocalizeConfig,
    tcfg: &TrainingConfig,
) -> Result<Vec<LabeledPair>> {
    let detections = describe_raster(&train.raster, &cfg.detection, &index.descriptor, 0)?;
    let usable: Vec<&Intersection> = index
        .entries
        .iter()
        .filter(|e| e.has_usable_descriptor())
        .collect();
    let mut pairs = Vec::new();
    for q in detections.iter().filter(|q| q.has_usable_descriptor()) {
        let qd = q.descriptor.as_ref().expect("usable");
        let truth = train.truth(q.pixel_pos);
        let Some(pos) = usable
            .iter()
            .map(|e| (e.world_pos.dist(truth), e))
            .filter(|(d, _)| *d <= tcfg.positive_radius_m)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)))
            .map(|(_, e)| *e)
        else {
            continue;
        };
        pairs.push(LabeledPair::new(
            qd.clone(),
            pos.descriptor.clone().expect("usable"),
            1,
        )?);
        let mut negs: Vec<(f64, u64, &Intersection)> = usable
            .iter()
            .filter(|e| e.world_pos.dist(truth) > tcfg.negative_exclusion_m)
            .map(|e| {
                (
                    index
                        .metric
                        .distance(qd, e.descriptor.as_ref().expect("usable")),
                    e.id,
                    *e,
                )
            })
            .collect();
        negs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, _, e) in negs.into_iter().take(tcfg.negatives_per_positive) {
            pairs.push(LabeledPair::new(
                qd.clone(),
                e.descriptor.clone().expect("usable"),
                0,
            )?);
        }
    }
    Ok(pairs)
}

pub fn tuned_metric(
    train: &PerturbedQuery,
    index: &IntersectionIndex,
    cfg: &LocalizeConfig,
    tcfg: &TrainingConfig,
) -> Result<DiagonalMetric> {
    finetune_metric(&training_pairs(train, index, cfg, tcfg)?, &tcfg.finetune)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnhancementEvalConfig {
    pub enabled: bool,
    /// Perturbation of the enhancement query: dropout and jitter only, so the
    /// clean city B raster is pixel-aligned with it.
    pub pixel_dropout: f64,
    pub jitter_px: f64,
    /// Detections within this distance of the centre of city B are localized
    /// to fit the registration.
    pub localize_radius_m: f64,
}

impl Default for EnhancementEvalConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            pixel_dropout: 0.1,
            jitter_px: 1.0,
            localize_radius_m: 600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub radii_m: Vec<f64>,
    pub k: usize,
    /// Divide region sums by member count.
    pub normalize: bool,
    /// Evaluate the unit metric.
    pub unit: bool,
    /// Evaluate the fine-tuned metric.
    pub finetune: bool,
    /// Radius and metric of the variant summarized in detail.
    pub primary_radius_m: f64,
    pub primary_finetuned: bool,
    /// An identification is correct when its estimate lies this close to the truth.
    pub recognition_tolerance_m: f64,
    /// Accuracy threshold, in query pixels.
    pub accuracy_px: f64,
    pub histogram_bin_m: f64,
    pub histogram_max_m: f64,
    pub training: TrainingConfig,
    pub enhancement: EnhancementEvalConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            radii_m: vec![100.0, 200.0, 300.0, 500.0],
            k: 5,
            normalize: true,
            unit: true,
            finetune: true,
            primary_radius_m: 300.0,
            primary_finetuned: true,
            recognition_tolerance_m: 10.0,
            accuracy_px: 2.5,
            histogram_bin_m: 0.5,
            histogram_max_m: 10.0,
            training: TrainingConfig::default(),
            enhancement: EnhancementEvalConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: &str| {
            Err(Error::InvalidParameter {
                name,
                reason: reason.into(),
            })
        };
        if self.radii_m.is_empty() || self.radii_m.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return bad("radii_m", "must be a nonempty list of positive radii");
        }
        if !self.radii_m.contains(&self.primary_radius_m) {
            return bad("primary_radius_m", "must be one of radii_m");
        }
        if self.primary_finetuned && !self.finetune {
            return bad("primary_finetuned", "requires finetune = true");
        }
        if !self.primary_finetuned && !self.unit {
            return bad("primary_finetuned", "false requires unit = true");
        }
        if self.k == 0 {
            return bad("k", "must be >= 1");
        }
        for (name, v) in [
            ("recognition_tolerance_m", self.recognition_tolerance_m),
            ("accuracy_px", self.accuracy_px),
            ("histogram_bin_m", self.histogram_bin_m),
            ("histogram_max_m", self.histogram_max_m),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(name, "must be finite and > 0");
            }
        }
        let t = &self.training;
        if !(t.positive_radius_m > 0.0 && t.negative_exclusion_m >= t.positive_radius_m) {
            return bad(
                "training",
                "need 0 < positive_radius_m <= negative_exclusion_m",
            );
        }
        t.finetune.validate()?;
        let e = &self.enhancement;
        if !(e.localize_radius_m.is_finite() && e.localize_radius_m > 0.0) {
            return bad("enhancement.localize_radius_m", "must be finite and > 0");
        }
        PerturbationSpec {
            pixel_dropout: e.pixel_dropout,
            jitter_px: e.jitter_px,
            ..PerturbationSpec::none()
        }
        .validate()
    }

    fn match_config(&self, radius_m: f64) -> MatchConfig {
        MatchConfig {
            radius_m,
            k: self.k,
            normalize: self.normalize,
        }
    }
}

/// One query's outcome under one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: u64,
    pub x_px: f64,
    pub y_px: f64,
    pub true_east: f64,
    pub true_north: f64,
    pub reference_id: Option<u64>,
    pub east: Option<f64>,
    pub north: Option<f64>,
    pub error_m: Option<f64>,
    pub chamfer: Option<f64>,
    pub inlier_count: usize,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub radius_m: f64,
    pub finetuned: bool,
    pub aligned: bool,
    pub queries: usize,
    pub localized: usize,
    pub correct: usize,
    /// Errors within the accuracy threshold.
    pub accurate: usize,
    /// Correct identifications over all queries.
    pub strict_rate: f64,
    /// Correct identifications over localized queries.
    pub lenient_rate: f64,
    pub accurate_strict: f64,
    pub accurate_lenient: f64,
    /// Median error of correct identifications, in query pixels.
    pub median_error_px: Option<f64>,
}

/// Recognition rate when the accepted alignment with most inliers is chosen
/// instead of the one with least Chamfer distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingPoint {
    pub radius_m: f64,
    pub finetuned: bool,
    pub chamfer_rate: f64,
    pub inlier_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo_m: f64,
    /// `None` for the overflow bin.
    pub hi_m: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimarySummary {
    pub radius_m: f64,
    pub finetuned: bool,
    /// Errors of localized queries; together with `unlocalized` the counts
    /// sum to the query count.
    pub histogram: Vec<HistogramBin>,
    pub unlocalized: usize,
    pub accuracy_px: f64,
    pub accurate_strict: f64,
    pub accurate_lenient: f64,
    pub strict_rate: f64,
    pub lenient_rate: f64,
    pub median_error_px: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancementSummary {
    pub f_before: f64,
    pub f_after: f64,
    pub iou_before: f64,
    pub iou_after: f64,
    pub registered_tile: Option<usize>,
    pub registration_inliers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub seed: u64,
    pub query_count: usize,
    pub index_size: usize,
    pub training_pairs: usize,
    pub curves: Vec<CurvePoint>,
    pub ranking: Vec<RankingPoint>,
    pub primary: PrimarySummary,
    pub enhancement: Option<EnhancementSummary>,
    /// Per-query outcomes of the primary variant.
    pub outcomes: Vec<QueryOutcome>,
}

/// A query's alignment against one reference.
#[derive(Debug, Clone)]
struct PairOutcome {
    reference_id: u64,
    result: AlignmentResult,
    estimate: WorldPoint,
}

/// A (radius, metric) combination's candidate lists, one per query.
struct Variant {
    radius_m: f64,
    finetuned: bool,
    lists: Vec<Option<CandidateList>>,
}

/// Sweeps the configured variants over a benchmark and its index.
pub struct Evaluator<'a> {
    bench: &'a Benchmark,
    index: &'a IntersectionIndex,
    localize: &'a LocalizeConfig,
    cfg: &'a EvalConfig,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        bench: &'a Benchmark,
        index: &'a IntersectionIndex,
        localize: &'a LocalizeConfig,
        cfg: &'a EvalConfig,
    ) -> Result<Self> {
        localize.validate()?;
        cfg.validate()?;
        Ok(Self {
            bench,
            index,
            localize,
            cfg,
        })
    }

    pub fn run(&self, enhance: &EnhanceConfig) -> Result<EvalReport> {
        let det = &self.localize.detection;
        let queries = describe_raster(&self.bench.query.raster, det, &self.index.descriptor, 0)?;
        let truths: Vec<WorldPoint> = queries
            .iter()
            .map(|q| self.bench.query.truth(q.pixel_pos))
            .collect();

        let mut metrics = Vec::new();
        if self.cfg.unit {
            metrics.push((false, self.index.metric.clone()));
        }
        let mut n_pairs = 0;
        if self.cfg.finetune {
            let pairs = training_pairs(
                &self.bench.train,
                self.index,
                self.localize,
                &self.cfg.training,
            )?;
            n_pairs = pairs.len();
            metrics.push((true, finetune_metric(&pairs, &self.cfg.training.finetune)?));
        }

        let mut variants = Vec::new();
        for (finetuned, metric) in &metrics {
            let idx = IntersectionView::new(self.index, metric.clone())?;
            let matcher = RegionMatcher::new(&queries, idx.get());
            for &radius_m in &self.cfg.radii_m {
                let lists = matcher
                    .candidates_all(&self.cfg.match_config(radius_m))?
                    .into_iter()
                    .map(|l| l.ok())
                    .collect();
                variants.push(Variant {
                    radius_m,
                    finetuned: *finetuned,
                    lists,
                });
            }
        }

        let aligned = self.align_all(&queries, &variants);

        let mut curves = Vec::new();
        let mut ranking = Vec::new();
        let mut primary = None;
        for v in &variants {
            let unaligned = self.assemble_unaligned(&queries, &truths, v);
            curves.push(self.curve(v, false, &unaligned));
            let by_chamfer =
                self.assemble_aligned(&queries, &truths, v, &aligned, Ranking::Chamfer);
            let by_inliers =
                self.assemble_aligned(&queries, &truths, v, &aligned, Ranking::Inliers);
            let c = self.curve(v, true, &by_chamfer);
            ranking.push(RankingPoint {
                radius_m: v.radius_m,
                finetuned: v.finetuned,
                chamfer_rate: c.strict_rate,
                inlier_rate: self.curve(v, true, &by_inliers).strict_rate,
            });
            if v.radius_m == self.cfg.primary_radius_m && v.finetuned == self.cfg.primary_finetuned
            {
                primary = Some((self.primary_summary(&c, &by_chamfer), by_chamfer));
            }
            curves.push(c);
        }
        let (primary, outcomes) = primary.expect("primary variant is validated to exist");

        let enhancement = if self.cfg.enhancement.enabled {
            Some(self.enhancement(enhance)?)
        } else {
            None
        };

        Ok(EvalReport {
            version: REPORT_VERSION,
            seed: self.bench.spec.seed,
            query_count: queries.len(),
            index_size: self.index.len(),
            training_pairs: n_pairs,
            curves,
            ranking,
            primary,
            enhancement,
            outcomes,
        })
    }

    /// Aligns each query against the union of its candidates across all
    /// variants. Query crops are prepared once and kept; each reference crop
    /// is prepared once and released after its queries are aligned.
    fn align_all(&self, queries: &[Intersection], variants: &[Variant]) -> Vec<Vec<PairOutcome>> {
        let raster = &self.bench.query.raster;
        let mut by_ref: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for i in 0..queries.len() {
            let ids: BTreeSet<u64> = variants
                .iter()
                .filter_map(|v| v.lists[i].as_ref())
                .flat_map(|l| l.entries.iter().map(|e| e.reference_id))
                .collect();
            for id in ids {
                by_ref.entry(id).or_default().push(i);
            }
        }
        let crops: Vec<Option<QueryCrop>> = queries
            .par_iter()
            .map(|q| prepare_query(raster, q, self.localize).ok())
            .collect();
        let by_ref: Vec<(u64, Vec<usize>)> = by_ref.into_iter().collect();
        let found: Vec<Vec<(usize, PairOutcome)>> = by_ref
            .par_iter()
            .map(|(id, qs)| {
                let Ok(rc) = prepare_reference(self.index, *id, self.localize) else {
                    return Vec::new();
                };
                qs.iter()
                    .filter_map(|&i| {
                        let qc = crops[i].as_ref()?;
                        let ca = align_to_reference(qc, &rc, self.localize);
                        Some((
                            i,
                            PairOutcome {
                                reference_id: *id,
                                estimate: world_estimate(qc, &ca, &queries[i]),
                                result: ca.result,
                            },
                        ))
                    })
                    .collect()
            })
            .collect();
        let mut out: Vec<Vec<PairOutcome>> = vec![Vec::new(); queries.len()];
        for (i, p) in found.into_iter().flatten() {
            out[i].push(p);
        }
        out
    }

    fn outcome(
        &self,
        q: &Intersection,
        truth: WorldPoint,
        chosen: Option<(u64, WorldPoint, Option<&AlignmentResult>)>,
    ) -> QueryOutcome {
        let mut o = QueryOutcome {
            query_id: q.id,
            x_px: q.pixel_pos.x,
            y_px: q.pixel_pos.y,
            true_east: truth.east,
            true_north: truth.north,
            reference_id: None,
            east: None,
            north: None,
            error_m: None,
            chamfer: None,
            inlier_count: 0,
            correct: false,
        };
        if let Some((id, est, res)) = chosen {
            let err = est.dist(truth);
            o.reference_id = Some(id);
            o.east = Some(est.east);
            o.north = Some(est.north);
            o.error_m = Some(err);
            o.chamfer = res.map(|r| r.chamfer);
            o.inlier_count = res.map_or(0, |r| r.inlier_count);
            o.correct = err <= self.cfg.recognition_tolerance_m;
        }
        o
    }

    fn assemble_unaligned(
        &self,
        queries: &[Intersection],
        truths: &[WorldPoint],
        v: &Variant,
    ) -> Vec<QueryOutcome> {
        queries
            .iter()
            .zip(truths)
            .zip(&v.lists)
            .map(|((q, &t), list)| {
                let top = list
                    .as_ref()
                    .and_then(|l| l.entries.first())
                    .map(|e| e.reference_id);
                let chosen = top
                    .and_then(|id| self.index.get(id))
                    .map(|e| (e.id, e.world_pos, None));
                self.outcome(q, t, chosen)
            })
            .collect()
    }

    fn assemble_aligned(
        &self,
        queries: &[Intersection],
        truths: &[WorldPoint],
        v: &Variant,
        aligned: &[Vec<PairOutcome>],
        ranking: Ranking,
    ) -> Vec<QueryOutcome> {
        (0..queries.len())
            .map(|i| {
                let pairs: Vec<&PairOutcome> = v.lists[i]
                    .iter()
                    .flat_map(|l| &l.entries)
                    .filter_map(|e| aligned[i].iter().find(|p| p.reference_id == e.reference_id))
                    .collect();
                let pick = match ranking {
                    Ranking::Chamfer => best_accepted(pairs.iter().map(|p| &p.result)),
                    Ranking::Inliers => most_inliers(pairs.iter().map(|p| &p.result)),
                };
                let chosen = pick.map(|j| {
                    (
                        pairs[j].reference_id,
                        pairs[j].estimate,
                        Some(&pairs[j].result),
                    )
                });
                self.outcome(&queries[i], truths[i], chosen)
            })
            .collect()
    }

    fn curve(&self, v: &Variant, aligned: bool, outcomes: &[QueryOutcome]) -> CurvePoint {
        let mpp = self.bench.query.raster.geo().meters_per_pixel;
        let n = outcomes.len();
        let localized = outcomes.iter().filter(|o| o.error_m.is_some()).count();
        let correct = outcomes.iter().filter(|o| o.correct).count();
        let accurate = outcomes
            .iter()
            .filter(|o| o.error_m.is_some_and(|e| e <= self.cfg.accuracy_px * mpp))
            .count();
        let errors: Vec<f64> = outcomes
            .iter()
            .filter(|o| o.correct)
            .filter_map(|o| o.error_m.map(|e| e / mpp))
            .collect();
        CurvePoint {
            radius_m: v.radius_m,
            finetuned: v.finetuned,
            aligned,
            queries: n,
            localized,
            correct,
            accurate,
            strict_rate: ratio(correct, n),
            lenient_rate: ratio(correct, localized),
            accurate_strict: ratio(accurate, n),
            accurate_lenient: ratio(accurate, localized),
            median_error_px: math::median(&errors),
        }
    }

    fn primary_summary(&self, c: &CurvePoint, outcomes: &[QueryOutcome]) -> PrimarySummary {
        let bins = (self.cfg.histogram_max_m / self.cfg.histogram_bin_m).ceil() as usize;
        let mut histogram: Vec<HistogramBin> = (0..bins)
            .map(|b| HistogramBin {
                lo_m: b as f64 * self.cfg.histogram_bin_m,
                hi_m: Some((b + 1) as f64 * self.cfg.histogram_bin_m),
                count: 0,
            })
            .collect();
        histogram.push(HistogramBin {
            lo_m: bins as f64 * self.cfg.histogram_bin_m,
            hi_m: None,
            count: 0,
        });
        for e in outcomes.iter().filter_map(|o| o.error_m) {
            let b = ((e / self.cfg.histogram_bin_m) as usize).min(bins);
            histogram[b].count += 1;
        }
        PrimarySummary {
            radius_m: c.radius_m,
            finetuned: c.finetuned,
            histogram,
            unlocalized: c.queries - c.localized,
            accuracy_px: self.cfg.accuracy_px,
            accurate_strict: c.accurate_strict,
            accurate_lenient: c.accurate_lenient,
            strict_rate: c.strict_rate,
            lenient_rate: c.lenient_rate,
            median_error_px: c.median_error_px,
        }
    }

    /// Enhances a dropout-and-jitter copy of city B and scores it against
    /// the clean raster. The registration is fitted to the localization
    /// results of the detections near the centre; no ground truth is used.
    pub fn enhancement(&self, enhance: &EnhanceConfig) -> Result<EnhancementSummary> {
        let e = &self.cfg.enhancement;
        let clean = &self.bench.references[1];
        let spec = PerturbationSpec {
            pixel_dropout: e.pixel_dropout,
            jitter_px: e.jitter_px,
            ..PerturbationSpec::none()
        };
        let seed = self.bench.spec.derived_seeds()[2] ^ 0x5eed;
        let (query, _) = perturb(clean, &spec, seed)?;
        let mut cfg = self.localize.clone();
        cfg.matching = self.cfg.match_config(self.cfg.primary_radius_m);
        let detections = describe_raster(&query, &cfg.detection, &self.index.descriptor, 0)?;
        let centre = query.pixel_to_world(Point2::new(
            (query.width() as f64 - 1.0) / 2.0,
            (query.height() as f64 - 1.0) / 2.0,
        ));
        let lists = RegionMatcher::new(&detections, self.index).candidates_all(&cfg.matching)?;
        let results: Vec<LocalizationResult> = detections
            .iter()
            .zip(lists)
            .filter(|(q, _)| q.world_pos.dist(centre) <= e.localize_radius_m)
            .filter_map(|(q, l)| Some((q, l.ok()?)))
            .collect::<Vec<_>>()
            .par_iter()
            .map(|(q, l)| resolve(&query, q, l, self.index, &cfg))
            .collect();
        let out = enhance_with(&query, self.index, results, &cfg.align.ransac, enhance)?;
        Ok(EnhancementSummary {
            f_before: road_f_measure(&query, clean)?,
            f_after: road_f_measure(&out.enhanced, clean)?,
            iou_before: road_iou(&query, clean)?,
            iou_after: road_iou(&out.enhanced, clean)?,
            registered_tile: out.registration.as_ref().map(|r| r.tile),
            registration_inliers: out.registration.as_ref().map_or(0, |r| r.inliers),
        })
    }
}

#[derive(Clone, Copy)]
enum Ranking {
    Chamfer,
    Inliers,
}

/// Accepted alignment with the most inliers; ties keep the earlier candidate.
fn most_inliers<'a, I: IntoIterator<Item = &'a AlignmentResult>>(results: I) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None;
    for (i, r) in results.into_iter().enumerate() {
        if r.accepted && best.is_none_or(|(_, n)| r.inlier_count > n) {
            best = Some((i, r.inlier_count));
        }
    }
    best.map(|(i, _)| i)
}

/// Borrows the index when the metric is unchanged, otherwise owns a copy.
enum IntersectionView<'a> {
    Borrowed(&'a IntersectionIndex),
    Owned(IntersectionIndex),
}

impl<'a> IntersectionView<'a> {
    fn new(index: &'a IntersectionIndex, metric: DiagonalMetric) -> Result<Self> {
        if metric == index.metric {
            return Ok(Self::Borrowed(index));
        }
        let mut entries_only = IntersectionIndex::from_entries(
            index.entries.clone(),
            metric,
            index.descriptor.clone(),
        )?;
        entries_only.tiles = Vec::new();
        Ok(Self::Owned(entries_only))
    }

    fn get(&self) -> &IntersectionIndex {
        match self {
            Self::Borrowed(i) => i,
            Self::Owned(i) => i,
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Generates the benchmark, builds its index and runs the sweep.
pub fn evaluate(
    spec: &BenchmarkSpec,
    localize: &LocalizeConfig,
    descriptor: &roadloc_core::descriptors::DescriptorConfig,
    enhance: &EnhanceConfig,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let bench = Benchmark::generate(spec)?;
    let index = bench.build_index(localize, descriptor)?;
    Evaluator::new(&bench, &index, localize, cfg)?.run(enhance)
}
