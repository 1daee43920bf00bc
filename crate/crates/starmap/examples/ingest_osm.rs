//! Ingest the bundled OpenStreetMap extract into a tagged vector map.
//!
//! Raw OSM elements carry free-form key/value tags; a tag mapping decides
//! which elements to keep and which semantic tag each one gets. Kept
//! features are projected into a local meter frame around an origin.
//!
//!     cargo run -p starmap --example ingest_osm

use std::path::Path;

use starmap::geometry::GeoOrigin;
use starmap::ingest::{build_map, load_source, SourceFormat, TagMapping};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");

    let raw = load_source(fixtures.join("lakeside.osm.xml"), SourceFormat::OsmXml)?;
    println!(
        "raw extract: {} nodes, {} ways",
        raw.nodes.len(),
        raw.ways.len()
    );

    // The default mapping keeps roads, buildings, parks and water; custom
    // rule files work the same way (see fixtures/tags.toml and
    // TagMapping::load). First matching rule wins.
    let mapping = TagMapping::default_mapping();
    let origin = GeoOrigin::new(49.0, 8.0)?;
    let (map, report) = build_map(&raw, &mapping, origin, None)?;

    println!("{report}");
    for feature in map.features() {
        let tags: Vec<&str> = feature.tags().iter().map(|t| t.as_str()).collect();
        println!(
            "  {:12} {:?}, {} vertices, tags [{}]",
            feature.id(),
            feature.kind(),
            feature.vertices().len(),
            tags.join(", ")
        );
    }
    let bbox = map.bbox();
    println!(
        "local frame: {:.0} x {:.0} m around {}, {}",
        bbox.width(),
        bbox.height(),
        origin.latitude,
        origin.longitude
    );
    Ok(())
}
