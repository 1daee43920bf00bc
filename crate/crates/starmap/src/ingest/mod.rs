//! Loading tagged vector data into the local map frame.
//!
//! The pipeline is: parse a source file ([`load_source`]) into raw
//! nodes/ways with their key=value tags, project WGS84 coordinates into
//! meters around a [`GeoOrigin`] ([`project`]), and map source tags onto
//! relation tags with a [`TagMapping`] ([`build_map`]). Supported sources
//! are OpenStreetMap XML and Overpass API JSON.
//!
//! The local frame is an equirectangular projection: sub-centimeter
//! accurate at city scale, dependency-free, and trivially invertible.
//! It is limited to 100 km around the origin.

mod osm_xml;
mod overpass;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, Feature, GeoOrigin, GeometryError, Map, Point, Tag};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Radius around the origin inside which the equirectangular frame is
/// treated as valid.
pub const PROJECTION_VALIDITY_M: f64 = 100_000.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed OSM XML at byte {offset}: {message}")]
    Xml { offset: u64, message: String },
    #[error("malformed Overpass JSON at line {line}, column {col}: {message}{hint}")]
    Json {
        line: usize,
        col: usize,
        message: String,
        hint: &'static str,
    },
    #[error("unknown source format `{0}`, expected osm_xml or overpass_json")]
    UnknownFormat(String),
    #[error("coordinate ({lat}, {lon}) is outside WGS84 bounds")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error(
        "({lat}, {lon}) is {distance_m:.0} m from the origin, beyond the {PROJECTION_VALIDITY_M:.0} m validity radius of the local frame"
    )]
    BeyondValidity { lat: f64, lon: f64, distance_m: f64 },
    #[error("no feature matched the tag mapping; check the mapping rules against the source tags")]
    NoFeaturesMatched,
    #[error("map file version {got} is not supported, expected {expected}")]
    UnsupportedVersion { got: u32, expected: u32 },
    #[error("map file: {0}")]
    MapFile(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    OsmXml,
    OverpassJson,
}

impl FromStr for SourceFormat {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<SourceFormat, IngestError> {
        match s {
            "osm_xml" => Ok(SourceFormat::OsmXml),
            "overpass_json" => Ok(SourceFormat::OverpassJson),
            other => Err(IngestError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for SourceFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceFormat::OsmXml => "osm_xml",
            SourceFormat::OverpassJson => "overpass_json",
        })
    }
}

/// A point element with its raw tags.
#[derive(Debug, Clone, PartialEq)]
pub struct RawNode {
    pub id: i64,
    pub lat: f64,
    pub lon: f64,
    pub tags: Vec<(String, String)>,
}

/// An ordered node-reference list with its raw tags.
#[derive(Debug, Clone, PartialEq)]
pub struct RawWay {
    pub id: i64,
    pub node_refs: Vec<i64>,
    pub tags: Vec<(String, String)>,
}

impl RawWay {
    /// Closed ways are polygon candidates.
    pub fn is_closed(&self) -> bool {
        self.node_refs.len() >= 2 && self.node_refs.first() == self.node_refs.last()
    }
}

/// Parsed source data before projection and tag mapping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawFeatureSet {
    pub nodes: Vec<RawNode>,
    pub ways: Vec<RawWay>,
}

/// Reads and parses a source file. For format mix-ups the error carries a
/// hint naming the format the content looks like.
pub fn load_source(path: impl AsRef<Path>, format: SourceFormat) -> Result<RawFeatureSet, IngestError> {
    let bytes = std::fs::read(path)?;
    match format {
        SourceFormat::OsmXml => osm_xml::parse(&bytes),
        SourceFormat::OverpassJson => overpass::parse(&bytes),
    }
}

/// Projects WGS84 degrees into the local meter frame:
/// `x = R·cos(origin.lat)·Δlon`, `y = R·Δlat` (angles in radians,
/// `R = 6,371,000 m`).
pub fn project(origin: GeoOrigin, lat: f64, lon: f64) -> Result<Point, IngestError> {
    if !(lat.is_finite() && lon.is_finite() && (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon)) {
        return Err(IngestError::InvalidCoordinate { lat, lon });
    }
    let x = EARTH_RADIUS_M * origin.latitude.to_radians().cos() * (lon - origin.longitude).to_radians();
    let y = EARTH_RADIUS_M * (lat - origin.latitude).to_radians();
    let distance_m = x.hypot(y);
    if distance_m > PROJECTION_VALIDITY_M {
        return Err(IngestError::BeyondValidity {
            lat,
            lon,
            distance_m,
        });
    }
    Ok(Point::new(x, y))
}

/// Inverse of [`project`]. Exact up to floating-point rounding.
pub fn unproject(origin: GeoOrigin, p: Point) -> (f64, f64) {
    let lat = origin.latitude + (p.y / EARTH_RADIUS_M).to_degrees();
    let lon = origin.longitude
        + (p.x / (EARTH_RADIUS_M * origin.latitude.to_radians().cos())).to_degrees();
    (lat, lon)
}

/// Geometry a mapped way should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindHint {
    Polyline,
    Polygon,
}

/// One `key=value` (or `key=*`) pattern mapping onto a relation tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagRule {
    pub key: String,
    /// `None` matches any value of the key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    pub tag: Tag,
    pub kind: KindHint,
}

impl TagRule {
    fn matches(&self, tags: &[(String, String)]) -> bool {
        tags.iter().any(|(k, v)| {
            k == &self.key && self.value.as_ref().is_none_or(|want| want == v)
        })
    }
}

/// Ordered tag-mapping rules; the first matching rule wins and unmatched
/// elements are dropped (and counted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagMapping {
    pub rules: Vec<TagRule>,
}

impl TagMapping {
    /// The mapping used throughout the examples: primary roads, parks,
    /// and buildings.
    pub fn default_mapping() -> TagMapping {
        fn rule(key: &str, value: Option<&str>, tag: &str, kind: KindHint) -> TagRule {
            TagRule {
                key: key.to_string(),
                value: value.map(str::to_string),
                tag: Tag::from(tag),
                kind,
            }
        }
        TagMapping {
            rules: vec![
                rule("highway", Some("primary"), "primary", KindHint::Polyline),
                rule("building", None, "building", KindHint::Polygon),
                rule("leisure", Some("park"), "park", KindHint::Polygon),
            ],
        }
    }

    pub fn first_match(&self, tags: &[(String, String)]) -> Option<&TagRule> {
        self.rules.iter().find(|rule| rule.matches(tags))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TagMapping, IngestError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| IngestError::MapFile(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IngestError> {
        let text = toml::to_string_pretty(self).map_err(|e| IngestError::MapFile(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// What [`build_map`] kept and dropped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Kept features per relation tag.
    pub tag_counts: BTreeMap<Tag, usize>,
    /// Tagged elements no mapping rule matched.
    pub dropped_unmatched: usize,
    /// Features with every vertex outside the bounding box.
    pub dropped_outside: usize,
    /// Ways referencing nodes absent from the source, or with fewer than
    /// two resolvable vertices.
    pub dropped_incomplete: usize,
    /// Ways mapped to polygons that were not closed rings and became
    /// polylines instead.
    pub demoted_polygons: usize,
}

impl IngestReport {
    pub fn kept(&self) -> usize {
        self.tag_counts.values().sum()
    }
}

impl fmt::Display for IngestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kept {} features", self.kept())?;
        for (tag, count) in &self.tag_counts {
            writeln!(f, "  {tag}: {count}")?;
        }
        write!(
            f,
            "dropped: {} unmatched, {} outside bbox, {} incomplete; demoted {} polygons",
            self.dropped_unmatched, self.dropped_outside, self.dropped_incomplete, self.demoted_polygons
        )
    }
}

/// Projects, tag-maps and filters raw features into a [`Map`].
///
/// Tagged nodes come first, then ways, each in source order. Features are
/// kept whole when any vertex falls inside `bbox` (no clipping: clipping
/// would change distance semantics at the boundary). Without a `bbox` the
/// map's box is the hull of the kept features.
pub fn build_map(
    raw: &RawFeatureSet,
    mapping: &TagMapping,
    origin: GeoOrigin,
    bbox: Option<BBox>,
) -> Result<(Map, IngestReport), IngestError> {
    let mut report = IngestReport::default();
    let mut features: Vec<Feature> = Vec::new();

    let mut keep = |feature: Feature, tag: &Tag, report: &mut IngestReport| {
        if let Some(bbox) = bbox {
            if !feature.vertices().iter().any(|v| bbox.contains(*v)) {
                report.dropped_outside += 1;
                return;
            }
        }
        *report.tag_counts.entry(tag.clone()).or_insert(0) += 1;
        features.push(feature);
    };

    for node in &raw.nodes {
        if node.tags.is_empty() {
            continue; // bare way geometry, not a feature
        }
        let Some(rule) = mapping.first_match(&node.tags) else {
            report.dropped_unmatched += 1;
            continue;
        };
        let at = project(origin, node.lat, node.lon)?;
        let feature = Feature::node(format!("n{}", node.id), at, [rule.tag.clone()])?;
        keep(feature, &rule.tag, &mut report);
    }

    let position_of: HashMap<i64, (f64, f64)> = raw
        .nodes
        .iter()
        .map(|n| (n.id, (n.lat, n.lon)))
        .collect();
    for way in &raw.ways {
        if way.tags.is_empty() {
            continue;
        }
        let Some(rule) = mapping.first_match(&way.tags) else {
            report.dropped_unmatched += 1;
            continue;
        };
        let mut vertices = Vec::with_capacity(way.node_refs.len());
        let mut complete = true;
        for node_ref in &way.node_refs {
            match position_of.get(node_ref) {
                Some(&(lat, lon)) => vertices.push(project(origin, lat, lon)?),
                None => {
                    complete = false;
                    break;
                }
            }
        }
        if !complete || vertices.len() < 2 {
            report.dropped_incomplete += 1;
            continue;
        }
        let id = format!("w{}", way.id);
        let feature = match rule.kind {
            KindHint::Polygon if way.is_closed() && distinct_count(&vertices) >= 3 => {
                Feature::polygon(id, vertices, [rule.tag.clone()])?
            }
            KindHint::Polygon => {
                report.demoted_polygons += 1;
                Feature::polyline(id, vertices, [rule.tag.clone()])?
            }
            KindHint::Polyline => Feature::polyline(id, vertices, [rule.tag.clone()])?,
        };
        keep(feature, &rule.tag, &mut report);
    }

    if features.is_empty() {
        return Err(IngestError::NoFeaturesMatched);
    }
    let bbox = match bbox {
        Some(bbox) => bbox,
        None => BBox::around(&features).expect("features is non-empty"),
    };
    let map = Map::new(features, origin, bbox)?;
    Ok((map, report))
}

fn distinct_count(vertices: &[Point]) -> usize {
    let mut distinct: Vec<Point> = Vec::with_capacity(vertices.len());
    for v in vertices {
        if !distinct.contains(v) {
            distinct.push(*v);
        }
    }
    distinct.len()
}

const MAP_FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MapArchive {
    version: u32,
    map: Map,
}

/// Writes a map as versioned JSON. Serialization is deterministic, so
/// identical maps produce identical bytes.
pub fn save_map(map: &Map, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let archive = MapArchive {
        version: MAP_FILE_VERSION,
        map: map.clone(),
    };
    let file = std::fs::File::create(path)?;
    let mut writer = std::io::BufWriter::new(file);
    serde_json::to_writer(&mut writer, &archive).map_err(|e| IngestError::MapFile(e.to_string()))?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

pub fn load_map(path: impl AsRef<Path>) -> Result<Map, IngestError> {
    #[derive(Deserialize)]
    struct VersionProbe {
        version: u32,
    }
    let text = std::fs::read_to_string(path)?;
    let probe: VersionProbe =
        serde_json::from_str(&text).map_err(|e| IngestError::MapFile(e.to_string()))?;
    if probe.version != MAP_FILE_VERSION {
        return Err(IngestError::UnsupportedVersion {
            got: probe.version,
            expected: MAP_FILE_VERSION,
        });
    }
    let archive: MapArchive =
        serde_json::from_str(&text).map_err(|e| IngestError::MapFile(e.to_string()))?;
    Ok(archive.map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn origin() -> GeoOrigin {
        GeoOrigin::new(49.0, 8.0).unwrap()
    }

    #[test]
    fn projection_matches_the_formula() {
        let p = project(origin(), 49.0, 8.0).unwrap();
        assert_eq!((p.x, p.y), (0.0, 0.0));

        // Frozen from an independent high-precision evaluation of the
        // projection formula.
        let p = project(origin(), 49.0, 8.00136).unwrap();
        assert_relative_eq!(p.x, 99.2125924202159, epsilon = 1e-8);
        assert_eq!(p.y, 0.0);

        let p = project(GeoOrigin::new(0.0, 0.0).unwrap(), 0.001, 0.0).unwrap();
        assert_relative_eq!(p.y, 111.194926644559, epsilon = 1e-8);
        assert_eq!(p.x, 0.0);
    }

    #[test]
    fn projection_rejects_far_and_invalid_points() {
        assert!(matches!(
            project(origin(), 50.0, 8.0), // ~111 km north
            Err(IngestError::BeyondValidity { .. })
        ));
        assert!(matches!(
            project(origin(), 91.0, 8.0),
            Err(IngestError::InvalidCoordinate { .. })
        ));
    }

    #[test]
    fn round_trip_is_sub_millimeter_within_a_kilometer() {
        let origin = GeoOrigin::new(60.0, 24.9).unwrap();
        for (dlat, dlon) in [(0.004, 0.009), (-0.003, 0.017), (0.006, -0.008)] {
            let (lat, lon) = (origin.latitude + dlat, origin.longitude + dlon);
            let p = project(origin, lat, lon).unwrap();
            assert!(p.x.hypot(p.y) < 1_100.0, "test point should be local");
            let (lat2, lon2) = unproject(origin, p);
            let back = project(origin, lat2, lon2).unwrap();
            assert!(back.distance(p) < 1e-3, "round trip moved {}", back.distance(p));
        }
    }

    #[test]
    fn pairwise_distances_distort_below_a_tenth_percent() {
        let origin = origin();
        // Haversine ground truth on the sphere of radius R.
        let haversine = |lat1: f64, lon1: f64, lat2: f64, lon2: f64| {
            let (p1, l1) = (lat1.to_radians(), lon1.to_radians());
            let (p2, l2) = (lat2.to_radians(), lon2.to_radians());
            let a = ((p2 - p1) / 2.0).sin().powi(2)
                + p1.cos() * p2.cos() * ((l2 - l1) / 2.0).sin().powi(2);
            2.0 * EARTH_RADIUS_M * a.sqrt().asin()
        };
        let pts = [
            (49.001, 8.002),
            (48.997, 8.011),
            (49.006, 7.991),
            (49.003, 8.006),
        ];
        for (i, &(lat1, lon1)) in pts.iter().enumerate() {
            for &(lat2, lon2) in &pts[i + 1..] {
                let a = project(origin, lat1, lon1).unwrap();
                let b = project(origin, lat2, lon2).unwrap();
                let planar = a.distance(b);
                let sphere = haversine(lat1, lon1, lat2, lon2);
                assert!(
                    (planar - sphere).abs() / sphere < 1e-3,
                    "distortion {planar} vs {sphere}"
                );
            }
        }
    }

    fn raw_scene() -> RawFeatureSet {
        let node = |id, lat, lon| RawNode {
            id,
            lat,
            lon,
            tags: vec![],
        };
        let tagged = |id, lat, lon, k: &str, v: &str| RawNode {
            id,
            lat,
            lon,
            tags: vec![(k.to_string(), v.to_string())],
        };
        let way = |id, refs: &[i64], k: &str, v: &str| RawWay {
            id,
            node_refs: refs.to_vec(),
            tags: vec![(k.to_string(), v.to_string())],
        };
        RawFeatureSet {
            nodes: vec![
                node(1, 49.0000, 8.0000),
                node(2, 49.0000, 8.0020),
                node(3, 49.0010, 8.0020),
                node(4, 49.0010, 8.0000),
                tagged(5, 49.0005, 8.0010, "amenity", "bench"),
            ],
            ways: vec![
                way(101, &[1, 2], "highway", "primary"),
                way(102, &[2, 3], "highway", "residential"), // unmatched
                way(103, &[1, 2, 3, 4, 1], "building", "yes"),
                way(104, &[1, 2, 3, 4, 1], "leisure", "park"),
                way(105, &[1, 2, 99], "highway", "primary"), // missing node
                way(106, &[1, 2, 3], "building", "hut"),     // open: demoted
            ],
        }
    }

    #[test]
    fn build_map_applies_rules_in_order_and_counts_drops() {
        let mut raw = raw_scene();
        // Two matching keys: the first rule in mapping order wins.
        raw.ways.push(RawWay {
            id: 107,
            node_refs: vec![2, 3],
            tags: vec![
                ("leisure".to_string(), "park".to_string()),
                ("highway".to_string(), "primary".to_string()),
            ],
        });
        let (map, report) =
            build_map(&raw, &TagMapping::default_mapping(), origin(), None).unwrap();

        assert_eq!(report.tag_counts[&Tag::from("primary")], 2); // 101, 107
        assert_eq!(report.tag_counts[&Tag::from("building")], 2);
        assert_eq!(report.tag_counts[&Tag::from("park")], 1);
        assert_eq!(report.dropped_unmatched, 2); // the bench and way 102
        assert_eq!(report.dropped_incomplete, 1); // way 105
        assert_eq!(report.demoted_polygons, 1); // way 106
        assert_eq!(report.kept(), 5);
        assert_eq!(map.features().len(), 5);

        // Closed building ring became a polygon, the open one a polyline.
        let by_id = |id: &str| map.features().iter().find(|f| f.id() == id).unwrap();
        assert_eq!(by_id("w103").kind(), crate::geometry::FeatureKind::Polygon);
        assert_eq!(by_id("w106").kind(), crate::geometry::FeatureKind::Polyline);
        assert!(by_id("w107").tags().contains(&Tag::from("primary")));
        // Ways follow source order after tagged nodes: none kept here.
        let ids: Vec<&str> = map.features().iter().map(|f| f.id()).collect();
        assert_eq!(ids, ["w101", "w103", "w104", "w106", "w107"]);
    }

    #[test]
    fn bbox_filter_keeps_whole_features_touching_the_box() {
        let mut raw = raw_scene();
        // Matched but entirely away from node 1.
        raw.ways.push(RawWay {
            id: 108,
            node_refs: vec![2, 3],
            tags: vec![("highway".to_string(), "primary".to_string())],
        });
        // Box around node 1 only. Way 108 ([2, 3]) never touches it; the
        // other kept ways all pass through node 1.
        let bbox = BBox::new(-10.0, -10.0, 10.0, 10.0).unwrap();
        let (map, report) = build_map(&raw, &TagMapping::default_mapping(), origin(), Some(bbox))
            .unwrap();
        assert_eq!(report.dropped_outside, 1);
        let ids: Vec<&str> = map.features().iter().map(|f| f.id()).collect();
        assert_eq!(ids, ["w101", "w103", "w104", "w106"]);
        assert_eq!(map.bbox(), bbox);
        // Features keep vertices outside the box.
        assert!(map
            .features()
            .iter()
            .any(|f| f.vertices().iter().any(|v| !bbox.contains(*v))));

        let tiny = BBox::new(500.0, 500.0, 501.0, 501.0).unwrap();
        assert!(matches!(
            build_map(&raw, &TagMapping::default_mapping(), origin(), Some(tiny)),
            Err(IngestError::NoFeaturesMatched)
        ));
    }

    #[test]
    fn unmatched_everything_is_an_error() {
        let mapping = TagMapping {
            rules: vec![TagRule {
                key: "waterway".to_string(),
                value: None,
                tag: Tag::from("river"),
                kind: KindHint::Polyline,
            }],
        };
        assert!(matches!(
            build_map(&raw_scene(), &mapping, origin(), None),
            Err(IngestError::NoFeaturesMatched)
        ));
    }

    fn fixture(name: &str) -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("fixtures")
            .join(name)
    }

    #[test]
    fn bundled_extracts_parse_identically_and_pin_counts() {
        let xml = load_source(fixture("lakeside.osm.xml"), SourceFormat::OsmXml).unwrap();
        let json = load_source(fixture("lakeside_overpass.json"), SourceFormat::OverpassJson)
            .unwrap();
        assert_eq!(xml, json);

        let (map, report) =
            build_map(&xml, &TagMapping::default_mapping(), origin(), None).unwrap();
        // Counted once from the vendored extract and pinned.
        assert_eq!(report.tag_counts[&Tag::from("primary")], 2);
        assert_eq!(report.tag_counts[&Tag::from("building")], 4);
        assert_eq!(report.tag_counts[&Tag::from("park")], 1);
        assert_eq!(report.kept(), 7);
        assert_eq!(report.dropped_unmatched, 2); // bench node, residential way
        assert_eq!(report.dropped_incomplete, 1); // way referencing node 999
        assert_eq!(report.demoted_polygons, 0);
        assert_eq!(report.dropped_outside, 0);
        assert_eq!(map.features().len(), 7);
    }

    #[test]
    fn shipped_tag_mapping_is_the_default() {
        let loaded = TagMapping::load(fixture("tags.toml")).unwrap();
        assert_eq!(loaded, TagMapping::default_mapping());
    }

    #[test]
    fn mapping_round_trips_through_toml() {
        let mapping = TagMapping::default_mapping();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tags.toml");
        mapping.save(&path).unwrap();
        let loaded = TagMapping::load(&path).unwrap();
        assert_eq!(mapping, loaded);
    }

    #[test]
    fn map_files_round_trip_and_reject_future_versions() {
        let (map, _) = build_map(
            &raw_scene(),
            &TagMapping::default_mapping(),
            origin(),
            None,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.json");
        save_map(&map, &path).unwrap();
        let loaded = load_map(&path).unwrap();
        assert_eq!(map, loaded);

        // Identical maps produce identical bytes.
        let again = dir.path().join("map2.json");
        save_map(&loaded, &again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());

        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("{\"version\":1,", "{\"version\":7,")).unwrap();
        assert!(matches!(
            load_map(&path),
            Err(IngestError::UnsupportedVersion { got: 7, .. })
        ));
    }
}
