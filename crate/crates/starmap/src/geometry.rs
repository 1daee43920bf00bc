//! Vector map model and 2-D geometry kernels.
//!
//! A [`Map`] is an ordered collection of tagged [`Feature`]s (nodes,
//! polylines, polygons) in a local Cartesian frame measured in meters and
//! anchored to a WGS84 [`GeoOrigin`]. The kernels in this module answer the
//! two questions every spatial relation reduces to: how far is a point from
//! the closest geometry carrying a tag, and does a point lie over a tagged
//! geometry.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default width in meters of the band around a polyline that counts as
/// "over" it. Chosen as a typical single carriageway width.
pub const DEFAULT_LINE_WIDTH: f64 = 4.0;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("feature `{id}`: {kind} needs at least {min} vertices, got {got}")]
    TooFewVertices {
        id: String,
        kind: FeatureKind,
        min: usize,
        got: usize,
    },
    #[error("feature `{id}`: vertex {index} has a non-finite coordinate")]
    NonFiniteVertex { id: String, index: usize },
    #[error("feature `{id}`: node features take exactly 1 vertex, got {got}")]
    NodeVertexCount { id: String, got: usize },
    #[error("feature id `{0}` is empty")]
    EmptyFeatureId(String),
    #[error("duplicate feature id `{0}`")]
    DuplicateFeatureId(String),
    #[error("polygon ring needs at least 3 vertices, got {0}")]
    RingTooSmall(usize),
    #[error("no feature with tag `{0}`")]
    NoFeatureWithTag(Tag),
    #[error("latitude {0} is outside [-90, 90]")]
    InvalidLatitude(f64),
    #[error("longitude {0} is outside [-180, 180]")]
    InvalidLongitude(f64),
    #[error("bounding box has min > max: {0:?}")]
    InvalidBBox(BBox),
}

/// A point in the local map frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// A semantic label such as `road`, `building` or `park`.
///
/// Tags are free-form non-empty strings; ordering is lexicographic so that
/// tag sets serialize deterministically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tag(String);

impl Tag {
    pub fn new(name: impl Into<String>) -> Self {
        Tag(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Tag {
    fn from(s: &str) -> Self {
        Tag(s.to_owned())
    }
}

impl From<String> for Tag {
    fn from(s: String) -> Self {
        Tag(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// A single point of interest.
    Node,
    /// An open chain of segments; consecutive duplicate vertices are allowed
    /// and degenerate segments behave as points.
    Polyline,
    /// A simple closed ring, implicitly closed: the first vertex is not
    /// repeated at the end.
    Polygon,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FeatureKind::Node => "node",
            FeatureKind::Polyline => "polyline",
            FeatureKind::Polygon => "polygon",
        };
        f.write_str(s)
    }
}

/// A tagged geometric primitive of a [`Map`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFeature")]
pub struct Feature {
    id: String,
    kind: FeatureKind,
    vertices: Vec<Point>,
    tags: BTreeSet<Tag>,
}

#[derive(Deserialize)]
struct RawFeature {
    id: String,
    kind: FeatureKind,
    vertices: Vec<Point>,
    tags: BTreeSet<Tag>,
}

impl TryFrom<RawFeature> for Feature {
    type Error = GeometryError;

    fn try_from(raw: RawFeature) -> Result<Self, GeometryError> {
        Feature::new(raw.id, raw.kind, raw.vertices, raw.tags)
    }
}

impl Feature {
    /// Builds a feature, enforcing per-kind vertex counts and finiteness.
    ///
    /// A polygon ring that arrives explicitly closed (last vertex equal to
    /// the first) is silently trimmed to the implicit representation.
    pub fn new(
        id: impl Into<String>,
        kind: FeatureKind,
        mut vertices: Vec<Point>,
        tags: impl IntoIterator<Item = Tag>,
    ) -> Result<Self, GeometryError> {
        let id = id.into();
        if id.is_empty() {
            return Err(GeometryError::EmptyFeatureId(id));
        }
        if kind == FeatureKind::Polygon && vertices.len() > 1 && vertices.first() == vertices.last()
        {
            vertices.pop();
        }
        match kind {
            FeatureKind::Node => {
                if vertices.len() != 1 {
                    return Err(GeometryError::NodeVertexCount {
                        id,
                        got: vertices.len(),
                    });
                }
            }
            FeatureKind::Polyline => {
                if vertices.len() < 2 {
                    return Err(GeometryError::TooFewVertices {
                        id,
                        kind,
                        min: 2,
                        got: vertices.len(),
                    });
                }
            }
            FeatureKind::Polygon => {
                if vertices.len() < 3 {
                    return Err(GeometryError::TooFewVertices {
                        id,
                        kind,
                        min: 3,
                        got: vertices.len(),
                    });
                }
            }
        }
        if let Some(index) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::NonFiniteVertex { id, index });
        }
        Ok(Feature {
            id,
            kind,
            vertices,
            tags: tags.into_iter().collect(),
        })
    }

    pub fn node(
        id: impl Into<String>,
        at: Point,
        tags: impl IntoIterator<Item = Tag>,
    ) -> Result<Self, GeometryError> {
        Feature::new(id, FeatureKind::Node, vec![at], tags)
    }

    pub fn polyline(
        id: impl Into<String>,
        vertices: Vec<Point>,
        tags: impl IntoIterator<Item = Tag>,
    ) -> Result<Self, GeometryError> {
        Feature::new(id, FeatureKind::Polyline, vertices, tags)
    }

    pub fn polygon(
        id: impl Into<String>,
        ring: Vec<Point>,
        tags: impl IntoIterator<Item = Tag>,
    ) -> Result<Self, GeometryError> {
        Feature::new(id, FeatureKind::Polygon, ring, tags)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn tags(&self) -> &BTreeSet<Tag> {
        &self.tags
    }

    pub fn has_tag(&self, tag: &Tag) -> bool {
        self.tags.contains(tag)
    }

    /// Mean of the vertices; perturbations are applied about this point.
    pub fn centroid(&self) -> Point {
        let n = self.vertices.len() as f64;
        let (sx, sy) = self
            .vertices
            .iter()
            .fold((0.0, 0.0), |(sx, sy), v| (sx + v.x, sy + v.y));
        Point::new(sx / n, sy / n)
    }

    /// Replaces the vertex list, keeping id, kind and tags.
    ///
    /// Used by map perturbation; the count is unchanged so the per-kind
    /// invariants continue to hold, but coordinates are re-validated.
    pub(crate) fn with_vertices(&self, vertices: Vec<Point>) -> Result<Self, GeometryError> {
        debug_assert_eq!(vertices.len(), self.vertices.len());
        if let Some(index) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::NonFiniteVertex {
                id: self.id.clone(),
                index,
            });
        }
        Ok(Feature {
            id: self.id.clone(),
            kind: self.kind,
            vertices,
            tags: self.tags.clone(),
        })
    }

    /// Shortest Euclidean distance from `p` to this feature's geometry.
    ///
    /// Nodes measure to the point, polylines to the closest segment, and
    /// polygons measure 0 inside (boundary included) or the distance to the
    /// closest boundary edge outside.
    pub fn distance(&self, p: Point) -> f64 {
        match self.kind {
            FeatureKind::Node => p.distance(self.vertices[0]),
            FeatureKind::Polyline => self
                .vertices
                .windows(2)
                .map(|w| point_segment_distance(p, w[0], w[1]))
                .fold(f64::INFINITY, f64::min),
            FeatureKind::Polygon => {
                if ring_contains(p, &self.vertices) {
                    0.0
                } else {
                    ring_boundary_distance(p, &self.vertices)
                }
            }
        }
    }

    /// Whether `p` lies over this feature.
    ///
    /// Polygons contain their boundary; polylines count as covered within
    /// `line_width / 2`; nodes never cover anything.
    pub fn over(&self, p: Point, line_width: f64) -> bool {
        match self.kind {
            FeatureKind::Node => false,
            FeatureKind::Polyline => self.distance(p) <= line_width / 2.0,
            FeatureKind::Polygon => ring_contains(p, &self.vertices),
        }
    }
}

/// Axis-aligned bounding box. Advisory: maps are not clipped against it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self, GeometryError> {
        let bbox = BBox {
            min_x,
            min_y,
            max_x,
            max_y,
        };
        if !(min_x <= max_x && min_y <= max_y)
            || !(min_x.is_finite() && min_y.is_finite() && max_x.is_finite() && max_y.is_finite())
        {
            return Err(GeometryError::InvalidBBox(bbox));
        }
        Ok(bbox)
    }

    /// Inclusive on all edges.
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn center(&self) -> Point {
        Point::new(
            (self.min_x + self.max_x) / 2.0,
            (self.min_y + self.max_y) / 2.0,
        )
    }

    /// Smallest box containing every vertex of every feature.
    pub fn around(features: &[Feature]) -> Option<BBox> {
        let mut it = features.iter().flat_map(|f| f.vertices().iter());
        let first = *it.next()?;
        let mut bbox = BBox {
            min_x: first.x,
            min_y: first.y,
            max_x: first.x,
            max_y: first.y,
        };
        for v in it {
            bbox.min_x = bbox.min_x.min(v.x);
            bbox.min_y = bbox.min_y.min(v.y);
            bbox.max_x = bbox.max_x.max(v.x);
            bbox.max_y = bbox.max_y.max(v.y);
        }
        Some(bbox)
    }

    pub fn expanded(&self, margin: f64) -> BBox {
        BBox {
            min_x: self.min_x - margin,
            min_y: self.min_y - margin,
            max_x: self.max_x + margin,
            max_y: self.max_y + margin,
        }
    }
}

/// WGS84 anchor of the local frame: the origin of the map's meter
/// coordinates in latitude/longitude degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoOrigin {
    pub latitude: f64,
    pub longitude: f64,
}

impl GeoOrigin {
    pub fn new(latitude: f64, longitude: f64) -> Result<Self, GeometryError> {
        if !(latitude.is_finite() && (-90.0..=90.0).contains(&latitude)) {
            return Err(GeometryError::InvalidLatitude(latitude));
        }
        if !(longitude.is_finite() && (-180.0..=180.0).contains(&longitude)) {
            return Err(GeometryError::InvalidLongitude(longitude));
        }
        Ok(GeoOrigin {
            latitude,
            longitude,
        })
    }
}

/// A deterministic, ordered set of features with unique ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMap")]
pub struct Map {
    features: Vec<Feature>,
    origin: GeoOrigin,
    bbox: BBox,
}

#[derive(Deserialize)]
struct RawMap {
    features: Vec<Feature>,
    origin: GeoOrigin,
    bbox: BBox,
}

impl TryFrom<RawMap> for Map {
    type Error = GeometryError;

    fn try_from(raw: RawMap) -> Result<Self, GeometryError> {
        Map::new(raw.features, raw.origin, raw.bbox)
    }
}

impl Map {
    pub fn new(
        features: Vec<Feature>,
        origin: GeoOrigin,
        bbox: BBox,
    ) -> Result<Self, GeometryError> {
        BBox::new(bbox.min_x, bbox.min_y, bbox.max_x, bbox.max_y)?;
        let mut seen = HashSet::new();
        for f in &features {
            if !seen.insert(f.id()) {
                return Err(GeometryError::DuplicateFeatureId(f.id().to_owned()));
            }
        }
        Ok(Map {
            features,
            origin,
            bbox,
        })
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn origin(&self) -> GeoOrigin {
        self.origin
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn feature(&self, id: &str) -> Option<&Feature> {
        self.features.iter().find(|f| f.id() == id)
    }

    pub fn features_with_tag<'a>(&'a self, tag: &'a Tag) -> impl Iterator<Item = &'a Feature> {
        self.features.iter().filter(move |f| f.has_tag(tag))
    }

    /// All distinct tags present on the map, sorted.
    pub fn tags(&self) -> BTreeSet<Tag> {
        self.features
            .iter()
            .flat_map(|f| f.tags().iter().cloned())
            .collect()
    }

    /// Shortest distance from `p` to any feature carrying `tag`.
    ///
    /// Errors when no feature carries the tag: a silent infinity would make
    /// downstream distributions meaningless.
    pub fn distance(&self, p: Point, tag: &Tag) -> Result<f64, GeometryError> {
        let mut best: Option<f64> = None;
        for f in self.features_with_tag(tag) {
            let d = f.distance(p);
            best = Some(best.map_or(d, |b| b.min(d)));
        }
        best.ok_or_else(|| GeometryError::NoFeatureWithTag(tag.clone()))
    }

    /// Whether `p` is over any feature carrying `tag`.
    ///
    /// Total: an absent tag simply yields `false`.
    pub fn over(&self, p: Point, tag: &Tag, line_width: f64) -> bool {
        self.features_with_tag(tag).any(|f| f.over(p, line_width))
    }
}

/// Distance from `p` to the closed segment `ab`.
///
/// A degenerate segment (`a == b`) behaves as the point `a`; crowd-sourced
/// data does contain consecutive duplicate vertices.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.distance(Point::new(a.x + t * dx, a.y + t * dy))
}

/// Even-odd containment test against an implicitly closed ring.
///
/// Points exactly on the boundary count as inside, so "over" fields are
/// upper semi-continuous and thresholding at the boundary is stable.
pub fn point_in_polygon(p: Point, ring: &[Point]) -> Result<bool, GeometryError> {
    if ring.len() < 3 {
        return Err(GeometryError::RingTooSmall(ring.len()));
    }
    Ok(ring_contains(p, ring))
}

/// Core even-odd test; assumes `ring.len() >= 3`.
fn ring_contains(p: Point, ring: &[Point]) -> bool {
    debug_assert!(ring.len() >= 3);
    // Boundary points first: the crossing parity below is unspecified for
    // them, and the contract says the boundary is inside.
    let mut inside = false;
    let n = ring.len();
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        if point_segment_distance(p, a, b) == 0.0 {
            return true;
        }
        // Half-open vertical range [min_y, max_y) keeps shared vertices from
        // being counted twice.
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if x_cross > p.x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Distance from `p` to the closest edge of a ring.
fn ring_boundary_distance(p: Point, ring: &[Point]) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| point_segment_distance(p, ring[i], ring[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}
