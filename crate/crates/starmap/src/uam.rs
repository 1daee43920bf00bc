//! Uncertainty-annotated maps and map sampling.
//!
//! An [`UncertaintyAnnotatedMap`] pairs a [`Map`] with per-feature noise
//! models: a linear transformation (rotation, uniform scale, shear, all
//! Gaussian around the identity) applied about the feature centroid, plus a
//! Gaussian translation. Drawing from those models yields complete map
//! realizations; a [`MapCollection`] is a reproducible set of such draws
//! that every downstream statistic is computed against.
//!
//! Sampling is deterministic: map `i` of a collection is drawn from
//! substream `i` of the master seed (see [`crate::stream`]), so collections
//! are bit-exact across runs and thread counts.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Feature, GeometryError, Map, Point, Tag};
use crate::stream::{self, RandomStream};

#[derive(Debug, Error)]
pub enum UamError {
    #[error("covariance matrix {0:?} is not symmetric positive semi-definite")]
    NotPositiveSemiDefinite([[f64; 2]; 2]),
    #[error("{what} must be finite and non-negative, got {value}")]
    InvalidStddev { what: &'static str, value: f64 },
    #[error("translation mean must be finite, got [{0}, {1}]")]
    NonFiniteMean(f64, f64),
    #[error("a collection needs at least one sample")]
    EmptyCollection,
    #[error("annotation override names unknown feature id `{0}`")]
    UnknownFeatureId(String),
    #[error("annotation config: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Gaussian noise on the linear part of a feature perturbation.
///
/// The rotation angle is `N(0, rotation_stddev²)` radians, the uniform
/// scale factor `N(1, scale_stddev²)`, and the shear coefficient
/// `N(0, shear_stddev²)`. All-zero parameters pin the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTransformationParams")]
pub struct TransformationParams {
    rotation_stddev: f64,
    scale_stddev: f64,
    shear_stddev: f64,
}

#[derive(Deserialize)]
struct RawTransformationParams {
    rotation_stddev: f64,
    scale_stddev: f64,
    shear_stddev: f64,
}

impl TryFrom<RawTransformationParams> for TransformationParams {
    type Error = UamError;

    fn try_from(raw: RawTransformationParams) -> Result<Self, UamError> {
        TransformationParams::new(raw.rotation_stddev, raw.scale_stddev, raw.shear_stddev)
    }
}

impl TransformationParams {
    pub fn new(
        rotation_stddev: f64,
        scale_stddev: f64,
        shear_stddev: f64,
    ) -> Result<Self, UamError> {
        for (what, value) in [
            ("rotation stddev", rotation_stddev),
            ("scale stddev", scale_stddev),
            ("shear stddev", shear_stddev),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(UamError::InvalidStddev { what, value });
            }
        }
        Ok(TransformationParams {
            rotation_stddev,
            scale_stddev,
            shear_stddev,
        })
    }

    /// The identity transformation with no noise.
    pub fn degenerate() -> Self {
        TransformationParams {
            rotation_stddev: 0.0,
            scale_stddev: 0.0,
            shear_stddev: 0.0,
        }
    }

    pub fn rotation_stddev(&self) -> f64 {
        self.rotation_stddev
    }

    pub fn scale_stddev(&self) -> f64 {
        self.scale_stddev
    }

    pub fn shear_stddev(&self) -> f64 {
        self.shear_stddev
    }
}

impl Default for TransformationParams {
    fn default() -> Self {
        TransformationParams::degenerate()
    }
}

/// Gaussian translation noise: offset `t ~ N(mean, covariance)` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTranslationParams")]
pub struct TranslationParams {
    mean: [f64; 2],
    covariance: [[f64; 2]; 2],
}

#[derive(Deserialize)]
struct RawTranslationParams {
    mean: [f64; 2],
    covariance: [[f64; 2]; 2],
}

impl TryFrom<RawTranslationParams> for TranslationParams {
    type Error = UamError;

    fn try_from(raw: RawTranslationParams) -> Result<Self, UamError> {
        TranslationParams::new(raw.mean, raw.covariance)
    }
}

impl TranslationParams {
    pub fn new(mean: [f64; 2], covariance: [[f64; 2]; 2]) -> Result<Self, UamError> {
        if !(mean[0].is_finite() && mean[1].is_finite()) {
            return Err(UamError::NonFiniteMean(mean[0], mean[1]));
        }
        let [[a, b], [c, d]] = covariance;
        let finite = a.is_finite() && b.is_finite() && c.is_finite() && d.is_finite();
        let scale = a.abs().max(d.abs()).max(1.0);
        let symmetric = (b - c).abs() <= 1e-12 * scale;
        // 2x2 PSD: non-negative diagonal and determinant.
        let psd = a >= 0.0 && d >= 0.0 && a * d - b * c >= -1e-12 * scale * scale;
        if !finite || !symmetric || !psd {
            return Err(UamError::NotPositiveSemiDefinite(covariance));
        }
        Ok(TranslationParams { mean, covariance })
    }

    /// Zero-mean translation with independent per-axis standard deviations.
    pub fn isotropic(stddev: f64) -> Result<Self, UamError> {
        if !stddev.is_finite() || stddev < 0.0 {
            return Err(UamError::InvalidStddev {
                what: "translation stddev",
                value: stddev,
            });
        }
        TranslationParams::new([0.0, 0.0], [[stddev * stddev, 0.0], [0.0, stddev * stddev]])
    }

    pub fn degenerate() -> Self {
        TranslationParams {
            mean: [0.0, 0.0],
            covariance: [[0.0, 0.0], [0.0, 0.0]],
        }
    }

    pub fn mean(&self) -> [f64; 2] {
        self.mean
    }

    pub fn covariance(&self) -> [[f64; 2]; 2] {
        self.covariance
    }

    /// Lower-triangular factor `L` with `L Lᵀ = covariance`; tolerates
    /// singular (including all-zero) covariances.
    fn chol_factor(&self) -> Matrix2<f64> {
        let [[a, b], [_, d]] = self.covariance;
        if a > 0.0 {
            let l11 = a.sqrt();
            let l21 = b / l11;
            let l22 = (d - l21 * l21).max(0.0).sqrt();
            Matrix2::new(l11, 0.0, l21, l22)
        } else {
            // PSD with a == 0 forces b == 0.
            Matrix2::new(0.0, 0.0, 0.0, d.max(0.0).sqrt())
        }
    }
}

impl Default for TranslationParams {
    fn default() -> Self {
        TranslationParams::degenerate()
    }
}

/// The complete noise model attached to a feature.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Annotation {
    pub transform: TransformationParams,
    pub translate: TranslationParams,
}

impl Annotation {
    pub fn new(transform: TransformationParams, translate: TranslationParams) -> Self {
        Annotation {
            transform,
            translate,
        }
    }

    /// No noise at all: sampling reproduces the source geometry exactly.
    pub fn degenerate() -> Self {
        Annotation::default()
    }

    /// Pure translation noise with equal per-axis standard deviation.
    pub fn isotropic_translation(stddev: f64) -> Result<Self, UamError> {
        Ok(Annotation {
            transform: TransformationParams::degenerate(),
            translate: TranslationParams::isotropic(stddev)?,
        })
    }
}

/// Whether one perturbation draw applies to a whole feature or each vertex
/// draws independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMode {
    /// One draw per feature: vertices move rigidly together.
    #[default]
    PerFeature,
    /// Independent draws per vertex: shapes wobble.
    PerVertex,
}

/// One concrete draw from an annotation: vertex `v` maps to
/// `c + matrix · (v - c) + offset` where `c` is the feature centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub matrix: Matrix2<f64>,
    pub offset: Vector2<f64>,
}

impl Perturbation {
    /// Draws rotation, scale, shear and translation, in that fixed order.
    ///
    /// The linear part composes as rotation · scale · shear. Zero-variance
    /// parameters produce the exact identity, not an epsilon away from it.
    pub fn draw(
        transform: &TransformationParams,
        translate: &TranslationParams,
        rng: &mut RandomStream,
    ) -> Perturbation {
        let z_rot: f64 = rng.sample(StandardNormal);
        let z_scale: f64 = rng.sample(StandardNormal);
        let z_shear: f64 = rng.sample(StandardNormal);
        let z_t0: f64 = rng.sample(StandardNormal);
        let z_t1: f64 = rng.sample(StandardNormal);

        let theta = transform.rotation_stddev * z_rot;
        let scale = 1.0 + transform.scale_stddev * z_scale;
        let shear = transform.shear_stddev * z_shear;

        let (sin, cos) = theta.sin_cos();
        let rotate = Matrix2::new(cos, -sin, sin, cos);
        let scale_m = Matrix2::new(scale, 0.0, 0.0, scale);
        let shear_m = Matrix2::new(1.0, shear, 0.0, 1.0);
        let matrix = rotate * scale_m * shear_m;

        let l = translate.chol_factor();
        let offset = Vector2::new(translate.mean[0], translate.mean[1])
            + l * Vector2::new(z_t0, z_t1);

        Perturbation { matrix, offset }
    }

    pub fn identity() -> Perturbation {
        Perturbation {
            matrix: Matrix2::identity(),
            offset: Vector2::zeros(),
        }
    }

    fn is_identity(&self) -> bool {
        self.matrix == Matrix2::identity() && self.offset == Vector2::zeros()
    }

    fn apply_point(&self, v: Point, centroid: Point) -> Point {
        let d = Vector2::new(v.x - centroid.x, v.y - centroid.y);
        let m = self.matrix * d;
        Point::new(centroid.x + m.x + self.offset.x, centroid.y + m.y + self.offset.y)
    }

    /// Applies the perturbation about the feature centroid, keeping id,
    /// kind and tags. Identity draws return the input bit-for-bit, so
    /// degenerate annotations reproduce the source map exactly.
    pub fn apply(&self, feature: &Feature) -> Result<Feature, UamError> {
        if self.is_identity() {
            return Ok(feature.clone());
        }
        let c = feature.centroid();
        let vertices = feature
            .vertices()
            .iter()
            .map(|v| self.apply_point(*v, c))
            .collect();
        Ok(feature.with_vertices(vertices)?)
    }
}

/// A map plus a total assignment of noise annotations to its features.
///
/// Resolution order per feature: an id override if present, else the first
/// matching tag rule in insertion order, else the default annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyAnnotatedMap {
    map: Map,
    default_annotation: Annotation,
    tag_rules: Vec<(Tag, Annotation)>,
    feature_overrides: BTreeMap<String, Annotation>,
    correlation: CorrelationMode,
}

impl UncertaintyAnnotatedMap {
    pub fn new(map: Map, default_annotation: Annotation) -> Self {
        UncertaintyAnnotatedMap {
            map,
            default_annotation,
            tag_rules: Vec::new(),
            feature_overrides: BTreeMap::new(),
            correlation: CorrelationMode::PerFeature,
        }
    }

    /// Uniform zero-mean translation noise on every feature.
    pub fn uniform(map: Map, stddev: f64) -> Result<Self, UamError> {
        let annotation = Annotation::isotropic_translation(stddev)?;
        Ok(UncertaintyAnnotatedMap::new(map, annotation))
    }

    pub fn with_tag_rule(mut self, tag: Tag, annotation: Annotation) -> Self {
        self.tag_rules.push((tag, annotation));
        self
    }

    pub fn with_feature_override(
        mut self,
        id: &str,
        annotation: Annotation,
    ) -> Result<Self, UamError> {
        if self.map.feature(id).is_none() {
            return Err(UamError::UnknownFeatureId(id.to_owned()));
        }
        self.feature_overrides.insert(id.to_owned(), annotation);
        Ok(self)
    }

    pub fn with_correlation(mut self, mode: CorrelationMode) -> Self {
        self.correlation = mode;
        self
    }

    pub fn map(&self) -> &Map {
        &self.map
    }

    pub fn correlation(&self) -> CorrelationMode {
        self.correlation
    }

    pub fn annotation_for(&self, feature: &Feature) -> &Annotation {
        if let Some(a) = self.feature_overrides.get(feature.id()) {
            return a;
        }
        for (tag, a) in &self.tag_rules {
            if feature.has_tag(tag) {
                return a;
            }
        }
        &self.default_annotation
    }

    /// Draws one complete map realization.
    ///
    /// Features are perturbed in map order; per-vertex mode draws in vertex
    /// order within each feature. The output preserves ids, kinds, tags and
    /// vertex counts, only coordinates change.
    pub fn sample_map(&self, rng: &mut RandomStream) -> Result<Map, UamError> {
        let mut features = Vec::with_capacity(self.map.features().len());
        for feature in self.map.features() {
            let annotation = self.annotation_for(feature);
            let perturbed = match self.correlation {
                CorrelationMode::PerFeature => {
                    let p = Perturbation::draw(&annotation.transform, &annotation.translate, rng);
                    p.apply(feature)?
                }
                CorrelationMode::PerVertex => {
                    let c = feature.centroid();
                    let mut identical = true;
                    let vertices: Vec<Point> = feature
                        .vertices()
                        .iter()
                        .map(|v| {
                            let p = Perturbation::draw(
                                &annotation.transform,
                                &annotation.translate,
                                rng,
                            );
                            if p.is_identity() {
                                *v
                            } else {
                                identical = false;
                                p.apply_point(*v, c)
                            }
                        })
                        .collect();
                    if identical {
                        feature.clone()
                    } else {
                        feature.with_vertices(vertices)?
                    }
                }
            };
            features.push(perturbed);
        }
        Ok(Map::new(features, self.map.origin(), self.map.bbox())?)
    }

    pub fn from_config(map: Map, config: &AnnotationConfig) -> Result<Self, UamError> {
        let mut uam = UncertaintyAnnotatedMap::new(map, config.default.to_annotation()?)
            .with_correlation(config.correlation);
        for rule in &config.tags {
            uam = uam.with_tag_rule(Tag::new(rule.tag.clone()), rule.annotation.to_annotation()?);
        }
        for over in &config.features {
            uam = uam.with_feature_override(&over.id, over.annotation.to_annotation()?)?;
        }
        Ok(uam)
    }

    /// The annotation part of this map as a serializable config.
    pub fn to_config(&self) -> AnnotationConfig {
        AnnotationConfig {
            correlation: self.correlation,
            default: AnnotationSpec::from_annotation(&self.default_annotation),
            tags: self
                .tag_rules
                .iter()
                .map(|(tag, a)| TagAnnotationSpec {
                    tag: tag.as_str().to_owned(),
                    annotation: AnnotationSpec::from_annotation(a),
                })
                .collect(),
            features: self
                .feature_overrides
                .iter()
                .map(|(id, a)| FeatureAnnotationSpec {
                    id: id.clone(),
                    annotation: AnnotationSpec::from_annotation(a),
                })
                .collect(),
        }
    }
}

/// Serializable annotation config (TOML or JSON, chosen by file extension).
///
/// Schema:
///
/// ```toml
/// correlation = "per_feature"            # or "per_vertex"
///
/// [default]
/// translation_mean = [0.0, 0.0]
/// translation_covariance = [[100.0, 0.0], [0.0, 100.0]]   # m²
/// rotation_stddev = 0.0                  # radians
/// scale_stddev = 0.0
/// shear_stddev = 0.0
///
/// [[tag]]                                # first matching rule wins
/// tag = "road"
/// translation_covariance = [[25.0, 0.0], [0.0, 25.0]]
///
/// [[feature]]                            # beats any tag rule
/// id = "way/100"
/// rotation_stddev = 0.05
/// ```
///
/// Entries are complete annotations; omitted keys default to zero noise
/// (there is no field-level inheritance between entries).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnnotationConfig {
    #[serde(default)]
    pub correlation: CorrelationMode,
    #[serde(default)]
    pub default: AnnotationSpec,
    #[serde(default, rename = "tag")]
    pub tags: Vec<TagAnnotationSpec>,
    #[serde(default, rename = "feature")]
    pub features: Vec<FeatureAnnotationSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSpec {
    #[serde(default)]
    pub translation_mean: [f64; 2],
    #[serde(default)]
    pub translation_covariance: [[f64; 2]; 2],
    #[serde(default)]
    pub rotation_stddev: f64,
    #[serde(default)]
    pub scale_stddev: f64,
    #[serde(default)]
    pub shear_stddev: f64,
}

impl Default for AnnotationSpec {
    fn default() -> Self {
        AnnotationSpec {
            translation_mean: [0.0, 0.0],
            translation_covariance: [[0.0, 0.0], [0.0, 0.0]],
            rotation_stddev: 0.0,
            scale_stddev: 0.0,
            shear_stddev: 0.0,
        }
    }
}

impl AnnotationSpec {
    fn to_annotation(&self) -> Result<Annotation, UamError> {
        Ok(Annotation {
            transform: TransformationParams::new(
                self.rotation_stddev,
                self.scale_stddev,
                self.shear_stddev,
            )?,
            translate: TranslationParams::new(self.translation_mean, self.translation_covariance)?,
        })
    }

    fn from_annotation(a: &Annotation) -> Self {
        AnnotationSpec {
            translation_mean: a.translate.mean(),
            translation_covariance: a.translate.covariance(),
            rotation_stddev: a.transform.rotation_stddev(),
            scale_stddev: a.transform.scale_stddev(),
            shear_stddev: a.transform.shear_stddev(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagAnnotationSpec {
    pub tag: String,
    #[serde(flatten)]
    pub annotation: AnnotationSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAnnotationSpec {
    pub id: String,
    #[serde(flatten)]
    pub annotation: AnnotationSpec,
}

impl AnnotationConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, UamError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| UamError::Parse(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| UamError::Parse(e.to_string()))
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), UamError> {
        let path = path.as_ref();
        let text = if path.extension().is_some_and(|e| e == "json") {
            serde_json::to_string_pretty(self).map_err(|e| UamError::Parse(e.to_string()))?
        } else {
            toml::to_string(self).map_err(|e| UamError::Parse(e.to_string()))?
        };
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// A reproducible set of map realizations drawn from one annotated map.
///
/// All statistics of a relation are estimated against one shared
/// collection, so fields derived from it are mutually consistent.
#[derive(Debug, Clone)]
pub struct MapCollection {
    maps: Vec<Map>,
    seed: u64,
    source: Arc<UncertaintyAnnotatedMap>,
}

impl MapCollection {
    /// Draws `n` maps, one substream per map, in parallel.
    pub fn sample(
        source: Arc<UncertaintyAnnotatedMap>,
        n: usize,
        seed: u64,
    ) -> Result<MapCollection, UamError> {
        if n == 0 {
            return Err(UamError::EmptyCollection);
        }
        let maps = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream::substream(seed, i as u64);
                source.sample_map(&mut rng)
            })
            .collect::<Result<Vec<Map>, UamError>>()?;
        Ok(MapCollection { maps, seed, source })
    }

    pub fn maps(&self) -> &[Map] {
        &self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn source(&self) -> &Arc<UncertaintyAnnotatedMap> {
        &self.source
    }
}
