//! Parameter fields and the statistical relational map.
//!
//! Moment matching turns relation samples at one location into distribution
//! parameters; a [`ParamField`] extends one such parameter over space,
//! either as a raster grid with bilinear interpolation or as a Gaussian
//! process. A [`StarMap`] bundles the sampled map collection, every sample
//! set drawn from it, and the fitted fields, keyed by
//! (relation, tag, parameter index).
//!
//! All fields of one map are fit against one shared [`MapCollection`], so
//! "distance mean" and "distance variance" (and anything else derived later)
//! describe the same underlying draws.

mod gp;
mod raster;

pub use gp::{gp_refine, tune_hyperparams, GpHyperparams, GpModel};
pub use raster::RasterGrid;

pub(crate) use raster::grid_points;

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, GeoOrigin, Point, Tag, DEFAULT_LINE_WIDTH};
use crate::relations::{
    moment_match, prob_threshold, sample_relation, DistributionParams, RelationError,
    RelationKind, RelationSamples, ThresholdOp,
};
use crate::stream;
use crate::uam::{MapCollection, UamError, UncertaintyAnnotatedMap};

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("point {point} is outside the field extent {extent:?}")]
    OutOfExtent { point: Point, extent: BBox },
    #[error("raster needs at least 2×2 nodes, got {rows}×{cols}")]
    ResolutionTooSmall { rows: usize, cols: usize },
    #[error("raster of {rows}×{cols} nodes needs {expected} values, got {got}")]
    ValueCount {
        rows: usize,
        cols: usize,
        expected: usize,
        got: usize,
    },
    #[error("raster extent must have positive area, got {0:?}")]
    DegenerateExtent(BBox),
    #[error("raster value at ({row}, {col}) is not finite")]
    NonFiniteValue { row: usize, col: usize },
    #[error("tag `{0}` is absent from the source map")]
    TagAbsent(Tag),
    #[error("no field for relation `{relation}`, tag `{tag}`, parameter {param_index}")]
    MissingField {
        relation: RelationKind,
        tag: Tag,
        param_index: usize,
    },
    #[error("relation `{relation}` has no parameter {param_index}")]
    BadParamIndex {
        relation: RelationKind,
        param_index: usize,
    },
    #[error("kernel matrix is not positive definite even after jitter escalation")]
    KernelNotPositiveDefinite,
    #[error("gaussian process needs at least one training pair")]
    NoTrainingData,
    #[error("hyperparameter {what} must be positive and finite, got {value}")]
    InvalidHyperparam { what: &'static str, value: f64 },
    #[error("refinement needs a non-empty candidate set")]
    NoCandidates,
    #[error("gaussian relations need at least 2 samples per location, the collection has {0}")]
    CollectionTooSmall(usize),
    #[error("line width must be finite and non-negative, got {0}")]
    InvalidLineWidth(f64),
    #[error("gaussian process construction needs at least 1 seed point")]
    NoSeedPoints,
    #[error("fields disagree on (relation, tag, parameter): {field} vs {reference}")]
    FieldMismatch { field: String, reference: String },
    #[error("the reference field must use the raster backend")]
    NonRasterReference,
    #[error("reference raster ({ref_rows}×{ref_cols}) is coarser than the field ({rows}×{cols})")]
    CoarseReference {
        ref_rows: usize,
        ref_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("field and reference extents do not overlap")]
    DisjointExtents,
    #[error(
        "this map was loaded from an archive and carries no map collection; \
         rebuild it from an annotated map to add fields"
    )]
    NoCollection,
    #[error("archive version {got} is not supported, expected {expected}")]
    UnsupportedVersion { got: u32, expected: u32 },
    #[error("archive: {0}")]
    Archive(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error(transparent)]
    Uam(#[from] UamError),
}

/// Key of one parameter field within a [`StarMap`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FieldKey {
    pub relation: RelationKind,
    pub tag: Tag,
    pub param_index: usize,
}

impl std::fmt::Display for FieldKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}[{}]", self.relation, self.tag, self.param_index)
    }
}

/// One distribution parameter of one relation, extended over space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamField {
    pub relation: RelationKind,
    pub tag: Tag,
    pub param_index: usize,
    pub backend: FieldBackend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FieldBackend {
    Raster(RasterGrid),
    Gp(GpModel),
}

impl ParamField {
    pub fn key(&self) -> FieldKey {
        FieldKey {
            relation: self.relation,
            tag: self.tag.clone(),
            param_index: self.param_index,
        }
    }

    /// Evaluates the field, clamping to the parameter's valid range:
    /// probabilities to [0, 1] and variances to non-negative. Raster
    /// backends error outside their extent; a GP predicts anywhere.
    pub fn evaluate(&self, p: Point) -> Result<f64, FieldError> {
        let raw = match &self.backend {
            FieldBackend::Raster(grid) => grid.interpolate(p)?,
            FieldBackend::Gp(model) => model.predict_mean(p),
        };
        Ok(clamp_param(self.relation, self.param_index, raw))
    }

    pub fn extent(&self) -> Option<BBox> {
        match &self.backend {
            FieldBackend::Raster(grid) => Some(grid.extent()),
            FieldBackend::Gp(_) => None,
        }
    }

    /// Renders the field onto a raster grid (identity for raster backends
    /// of the same shape). Used by exports.
    pub fn to_raster(&self, extent: BBox, rows: usize, cols: usize) -> Result<RasterGrid, FieldError> {
        match &self.backend {
            FieldBackend::Raster(grid)
                if grid.extent() == extent && grid.rows() == rows && grid.cols() == cols =>
            {
                Ok(grid.clone())
            }
            _ => RasterGrid::from_fn(extent, rows, cols, |p| self.evaluate(p)),
        }
    }
}

fn clamp_param(relation: RelationKind, param_index: usize, value: f64) -> f64 {
    match (relation, param_index) {
        (RelationKind::Over, 0) => value.clamp(0.0, 1.0),
        (RelationKind::Distance, 1) => value.max(0.0),
        _ => value,
    }
}

/// Options for Gaussian-process field construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpBuildOptions {
    /// Number of uniformly random initial training locations.
    pub seed_points: usize,
    /// Refinement rounds after the initial fit.
    pub rounds: usize,
    /// Locations sampled per refinement round.
    pub batch: usize,
    /// Resolution (rows, cols) of the candidate grid refinement picks from.
    pub candidate_resolution: (usize, usize),
    /// Seed for the initial point placement (its own stream partition, so
    /// reusing the collection seed is safe).
    pub seed: u64,
    /// Run the 5×5 marginal-likelihood grid search per parameter.
    pub tune: bool,
    /// Explicit hyperparameters; skips the data-driven defaults and tuning.
    pub hyperparams: Option<GpHyperparams>,
}

impl Default for GpBuildOptions {
    fn default() -> Self {
        GpBuildOptions {
            seed_points: 256,
            rounds: 5,
            batch: 16,
            candidate_resolution: (64, 64),
            seed: 0,
            tune: true,
            hyperparams: None,
        }
    }
}

const ARCHIVE_VERSION: u32 = 1;

/// A statistical relational map: sampled relation values and fitted
/// parameter fields over one shared map collection.
#[derive(Debug, Clone)]
pub struct StarMap {
    origin: GeoOrigin,
    extent: BBox,
    line_width: f64,
    seed: u64,
    n_samples: usize,
    collection: Option<MapCollection>,
    sample_sets: Vec<RelationSamples>,
    fields: BTreeMap<FieldKey, ParamField>,
}

#[derive(Serialize, Deserialize)]
struct Archive {
    version: u32,
    origin: GeoOrigin,
    extent: BBox,
    line_width: f64,
    seed: u64,
    n_samples: usize,
    sample_sets: Vec<RelationSamples>,
    fields: Vec<ParamField>,
}

impl StarMap {
    /// Samples `n_samples` map realizations from `source` and prepares an
    /// empty map over `extent`. Fields are added with [`Self::build_raster`]
    /// and [`Self::build_gp`].
    pub fn new(
        source: Arc<UncertaintyAnnotatedMap>,
        extent: BBox,
        n_samples: usize,
        seed: u64,
    ) -> Result<Self, FieldError> {
        if !(extent.width() > 0.0 && extent.height() > 0.0) {
            return Err(FieldError::DegenerateExtent(extent));
        }
        let origin = source.map().origin();
        let collection = MapCollection::sample(source, n_samples, seed)?;
        Ok(StarMap {
            origin,
            extent,
            line_width: DEFAULT_LINE_WIDTH,
            seed,
            n_samples,
            collection: Some(collection),
            sample_sets: Vec::new(),
            fields: BTreeMap::new(),
        })
    }

    /// Sets the polyline width used by `over`. Must be called before fields
    /// are built, since sample sets bake the width in.
    pub fn with_line_width(mut self, line_width: f64) -> Result<Self, FieldError> {
        if !line_width.is_finite() || line_width < 0.0 {
            return Err(FieldError::InvalidLineWidth(line_width));
        }
        self.line_width = line_width;
        Ok(self)
    }

    pub fn origin(&self) -> GeoOrigin {
        self.origin
    }

    pub fn extent(&self) -> BBox {
        self.extent
    }

    pub fn line_width(&self) -> f64 {
        self.line_width
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// The shared collection, absent on maps loaded from an archive.
    pub fn collection(&self) -> Option<&MapCollection> {
        self.collection.as_ref()
    }

    pub fn sample_sets(&self) -> &[RelationSamples] {
        &self.sample_sets
    }

    pub fn fields(&self) -> impl Iterator<Item = &ParamField> {
        self.fields.values()
    }

    pub fn field(
        &self,
        relation: RelationKind,
        tag: &Tag,
        param_index: usize,
    ) -> Option<&ParamField> {
        self.fields.get(&FieldKey {
            relation,
            tag: tag.clone(),
            param_index,
        })
    }

    /// Total number of relation sample evaluations behind the current
    /// fields (locations × collection size). The budget the raster/GP
    /// trade-off is measured in.
    pub fn relation_sample_count(&self) -> usize {
        self.sample_sets.iter().map(|s| s.len()).sum()
    }

    fn check_buildable(
        &self,
        relation: RelationKind,
        tag: &Tag,
    ) -> Result<&MapCollection, FieldError> {
        let collection = self.collection.as_ref().ok_or(FieldError::NoCollection)?;
        if collection
            .source()
            .map()
            .features_with_tag(tag)
            .next()
            .is_none()
        {
            return Err(FieldError::TagAbsent(tag.clone()));
        }
        if relation.param_count() > 1 && collection.len() < 2 {
            return Err(FieldError::CollectionTooSmall(collection.len()));
        }
        Ok(collection)
    }

    /// Samples the relation at every node of a `rows`×`cols` grid over the
    /// extent and fits one raster field per distribution parameter.
    ///
    /// Rebuilding an existing (relation, tag) replaces its fields and
    /// sample sets.
    pub fn build_raster(
        &mut self,
        relation: RelationKind,
        tag: &Tag,
        rows: usize,
        cols: usize,
    ) -> Result<(), FieldError> {
        if rows < 2 || cols < 2 {
            return Err(FieldError::ResolutionTooSmall { rows, cols });
        }
        let line_width = self.line_width;
        let extent = self.extent;
        let (new_sets, grids) = {
            let collection = self.check_buildable(relation, tag)?;
            let nodes = raster::grid_points(extent, rows, cols);
            let per_node: Vec<(RelationSamples, DistributionParams)> = nodes
                .par_iter()
                .map(|p| {
                    let samples = sample_relation(relation, *p, tag, collection, line_width)?;
                    let params = moment_match(&samples)?;
                    Ok((samples, params))
                })
                .collect::<Result<_, FieldError>>()?;

            let mut new_sets = Vec::with_capacity(per_node.len());
            let mut columns: Vec<Vec<f64>> =
                vec![Vec::with_capacity(per_node.len()); relation.param_count()];
            for (samples, params) in per_node {
                for (index, column) in columns.iter_mut().enumerate() {
                    column.push(params.param(index).expect("param_count params"));
                }
                new_sets.push(samples);
            }
            let grids = columns
                .into_iter()
                .map(|values| RasterGrid::new(extent, rows, cols, values))
                .collect::<Result<Vec<_>, _>>()?;
            (new_sets, grids)
        };

        self.replace_fields(
            relation,
            tag,
            new_sets,
            grids.into_iter().map(FieldBackend::Raster).collect(),
        );
        Ok(())
    }

    /// Fits one GP field per distribution parameter: `seed_points` random
    /// locations, then `rounds` rounds of confidence-guided refinement in
    /// batches of `batch`, guided by the first parameter's model. Sibling
    /// parameters train on the same locations, keeping their sample
    /// provenance identical.
    pub fn build_gp(
        &mut self,
        relation: RelationKind,
        tag: &Tag,
        options: &GpBuildOptions,
    ) -> Result<(), FieldError> {
        if options.seed_points == 0 {
            return Err(FieldError::NoSeedPoints);
        }
        let line_width = self.line_width;
        let extent = self.extent;
        let (new_sets, backends) = {
            let collection = self.check_buildable(relation, tag)?;

            let mut rng = stream::substream_for(options.seed, stream::PURPOSE_GP_INIT, 0);
            let initial = stratified_points(&mut rng, extent, options.seed_points);

            let sampled: Vec<(RelationSamples, DistributionParams)> = initial
                .par_iter()
                .map(|p| {
                    let samples = sample_relation(relation, *p, tag, collection, line_width)?;
                    let params = moment_match(&samples)?;
                    Ok((samples, params))
                })
                .collect::<Result<_, FieldError>>()?;

            let mut new_sets: Vec<RelationSamples> = Vec::with_capacity(sampled.len());
            let mut pairs: Vec<Vec<(Point, f64)>> = vec![Vec::new(); relation.param_count()];
            for ((samples, params), point) in sampled.into_iter().zip(&initial) {
                for (index, column) in pairs.iter_mut().enumerate() {
                    column.push((*point, params.param(index).expect("param_count params")));
                }
                new_sets.push(samples);
            }

            // Cell pitch of the stratification, which is also the mean spacing.
            let spacing = (extent.width() * extent.height() / options.seed_points as f64).sqrt();
            let mut models = Vec::with_capacity(pairs.len());
            for column in &pairs {
                let targets: Vec<f64> = column.iter().map(|(_, t)| *t).collect();
                let hyper = match options.hyperparams {
                    Some(h) => h,
                    None => {
                        let base = GpHyperparams::defaults(&targets, spacing)?;
                        if options.tune {
                            tune_hyperparams(column, base)?
                        } else {
                            base
                        }
                    }
                };
                models.push(GpModel::fit(column, hyper)?);
            }

            if options.rounds > 0 && options.batch > 0 {
                let (rows, cols) = options.candidate_resolution;
                if rows < 2 || cols < 2 {
                    return Err(FieldError::ResolutionTooSmall { rows, cols });
                }
                let candidates = raster::grid_points(extent, rows, cols);
                let (guide, rest) = models.split_at_mut(1);
                let mut followers: Vec<&mut GpModel> = rest.iter_mut().collect();
                let mut refinement_sets: Vec<RelationSamples> = Vec::new();
                gp::refine_guided(
                    &mut guide[0],
                    &mut followers,
                    &candidates,
                    options.batch,
                    options.rounds,
                    |point| {
                        let samples =
                            sample_relation(relation, point, tag, collection, line_width)?;
                        let params = moment_match(&samples)?;
                        let values = (0..relation.param_count())
                            .map(|i| params.param(i).expect("param_count params"))
                            .collect();
                        refinement_sets.push(samples);
                        Ok(values)
                    },
                )?;
                new_sets.append(&mut refinement_sets);
            }

            (new_sets, models.into_iter().map(FieldBackend::Gp).collect())
        };

        self.replace_fields(relation, tag, new_sets, backends);
        Ok(())
    }

    fn replace_fields(
        &mut self,
        relation: RelationKind,
        tag: &Tag,
        new_sets: Vec<RelationSamples>,
        backends: Vec<FieldBackend>,
    ) {
        self.sample_sets
            .retain(|s| !(s.relation == relation && &s.tag == tag));
        self.sample_sets.extend(new_sets);
        for (param_index, backend) in backends.into_iter().enumerate() {
            let field = ParamField {
                relation,
                tag: tag.clone(),
                param_index,
                backend,
            };
            self.fields.insert(field.key(), field);
        }
    }

    /// Evaluates one parameter field at a point.
    pub fn evaluate_field(
        &self,
        relation: RelationKind,
        tag: &Tag,
        param_index: usize,
        p: Point,
    ) -> Result<f64, FieldError> {
        let field = self
            .field(relation, tag, param_index)
            .ok_or_else(|| FieldError::MissingField {
                relation,
                tag: tag.clone(),
                param_index,
            })?;
        field.evaluate(p)
    }

    /// The full matched distribution of a relation at a point, read from
    /// the fitted fields.
    pub fn params_at(
        &self,
        relation: RelationKind,
        tag: &Tag,
        p: Point,
    ) -> Result<DistributionParams, FieldError> {
        match relation {
            RelationKind::Over => Ok(DistributionParams::Bernoulli {
                p: self.evaluate_field(relation, tag, 0, p)?,
            }),
            RelationKind::Distance => Ok(DistributionParams::Gaussian {
                mean: self.evaluate_field(relation, tag, 0, p)?,
                variance: self.evaluate_field(relation, tag, 1, p)?,
            }),
        }
    }

    /// Raster of `P(relation(·, tag) op threshold)` over the extent,
    /// computed from the fitted fields through the same CDF path as
    /// [`prob_threshold`].
    pub fn threshold_raster(
        &self,
        relation: RelationKind,
        tag: &Tag,
        op: ThresholdOp,
        threshold: f64,
        rows: usize,
        cols: usize,
    ) -> Result<RasterGrid, FieldError> {
        RasterGrid::from_fn(self.extent, rows, cols, |p| {
            let params = self.params_at(relation, tag, p)?;
            Ok::<_, FieldError>(prob_threshold(&params, op, threshold)?)
        })
    }

    /// Serializes sample sets, fields and provenance (not the sampled maps)
    /// as a versioned archive.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FieldError> {
        let archive = Archive {
            version: ARCHIVE_VERSION,
            origin: self.origin,
            extent: self.extent,
            line_width: self.line_width,
            seed: self.seed,
            n_samples: self.n_samples,
            sample_sets: self.sample_sets.clone(),
            fields: self.fields.values().cloned().collect(),
        };
        let file = std::fs::File::create(path)?;
        let mut writer = BufWriter::new(file);
        serde_json::to_writer(&mut writer, &archive)
            .map_err(|e| FieldError::Archive(e.to_string()))?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        Ok(())
    }

    /// Loads an archive. The result evaluates fields and grounds programs
    /// but cannot build new fields (the map collection is not archived).
    pub fn load(path: impl AsRef<Path>) -> Result<Self, FieldError> {
        #[derive(Deserialize)]
        struct VersionProbe {
            version: u32,
        }
        let file = std::fs::File::open(&path)?;
        let text = std::io::read_to_string(BufReader::new(file))?;
        let probe: VersionProbe =
            serde_json::from_str(&text).map_err(|e| FieldError::Archive(e.to_string()))?;
        if probe.version != ARCHIVE_VERSION {
            return Err(FieldError::UnsupportedVersion {
                got: probe.version,
                expected: ARCHIVE_VERSION,
            });
        }
        let archive: Archive =
            serde_json::from_str(&text).map_err(|e| FieldError::Archive(e.to_string()))?;
        Ok(StarMap {
            origin: archive.origin,
            extent: archive.extent,
            line_width: archive.line_width,
            seed: archive.seed,
            n_samples: archive.n_samples,
            collection: None,
            sample_sets: archive.sample_sets,
            fields: archive
                .fields
                .into_iter()
                .map(|f| (f.key(), f))
                .collect(),
        })
    }
}

/// One jittered point per cell of a near-square grid over the extent.
/// Stratifying the random design keeps it space-filling for every seed;
/// a plain uniform draw leaves coverage gaps that refinement then has to
/// spend its budget on.
fn stratified_points(rng: &mut impl rand::Rng, extent: BBox, count: usize) -> Vec<Point> {
    let aspect = extent.width() / extent.height();
    let cols = ((count as f64 * aspect).sqrt().round() as usize).clamp(1, count);
    let rows = count.div_ceil(cols);
    let cell_w = extent.width() / cols as f64;
    let cell_h = extent.height() / rows as f64;
    (0..count)
        .map(|i| {
            let (row, col) = (i / cols, i % cols);
            Point::new(
                extent.min_x + (col as f64 + rng.random_range(0.0..=1.0)) * cell_w,
                extent.min_y + (row as f64 + rng.random_range(0.0..=1.0)) * cell_h,
            )
        })
        .collect()
}

/// Mean absolute error of a field against a finer raster reference of the
/// same (relation, tag, parameter), averaged over the reference nodes that
/// lie inside the field's domain.
pub fn raster_mae(field: &ParamField, reference: &ParamField) -> Result<f64, FieldError> {
    if field.key() != reference.key() {
        return Err(FieldError::FieldMismatch {
            field: field.key().to_string(),
            reference: reference.key().to_string(),
        });
    }
    let FieldBackend::Raster(ref_grid) = &reference.backend else {
        return Err(FieldError::NonRasterReference);
    };
    if let FieldBackend::Raster(grid) = &field.backend {
        if ref_grid.rows() < grid.rows() || ref_grid.cols() < grid.cols() {
            return Err(FieldError::CoarseReference {
                ref_rows: ref_grid.rows(),
                ref_cols: ref_grid.cols(),
                rows: grid.rows(),
                cols: grid.cols(),
            });
        }
    }

    // Parallel evaluation, then a sequential reduction: float sums must not
    // depend on the thread count.
    let nodes: Vec<(Point, f64)> = ref_grid
        .nodes()
        .map(|(row, col, p)| (p, ref_grid.value(row, col)))
        .collect();
    let diffs: Vec<Option<f64>> = nodes
        .par_iter()
        .map(|(p, v)| match field.evaluate(*p) {
            Ok(estimate) => Some((estimate - v).abs()),
            Err(_) => None,
        })
        .collect();
    let mut sum = 0.0;
    let mut count = 0usize;
    for d in diffs.into_iter().flatten() {
        sum += d;
        count += 1;
    }
    if count == 0 {
        return Err(FieldError::DisjointExtents);
    }
    Ok(sum / count as f64)
}
