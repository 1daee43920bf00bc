//! Fit relation distributions over space on a raster grid and export them.
//!
//! A StaR Map bundles one shared map collection with per-relation
//! parameter fields. The raster backend moment-matches every grid node
//! and interpolates bilinearly in between; exports write the fields as
//! CSV, GeoJSON cells (WGS84), and a rendered pixmap.
//!
//!     cargo run -p starmap --example raster_fields

use std::fs::File;
use std::io::BufWriter;
use std::sync::Arc;

use starmap::export::{render_ppm, write_raster_csv, write_raster_geojson};
use starmap::fields::StarMap;
use starmap::geometry::{BBox, Feature, GeoOrigin, Map, Point, Tag};
use starmap::relations::{DistributionParams, RelationKind, ThresholdOp};
use starmap::uam::UncertaintyAnnotatedMap;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let road_tag = Tag::from("road");
    let park_tag = Tag::from("park");
    let road = Feature::polyline(
        "road",
        vec![Point::new(-90.0, -40.0), Point::new(30.0, 0.0), Point::new(90.0, 70.0)],
        [road_tag.clone()],
    )?;
    let park = Feature::polygon(
        "park",
        vec![
            Point::new(-40.0, 10.0),
            Point::new(20.0, 0.0),
            Point::new(30.0, 60.0),
            Point::new(-30.0, 70.0),
        ],
        [park_tag.clone()],
    )?;
    let extent = BBox::new(-100.0, -100.0, 100.0, 100.0)?;
    let map = Map::new(vec![road, park], GeoOrigin::new(49.0, 8.0)?, extent)?;
    let uam = UncertaintyAnnotatedMap::uniform(map, 6.0)?;

    let mut sm = StarMap::new(Arc::new(uam), extent, 64, 11)?;
    sm.build_raster(RelationKind::Distance, &road_tag, 48, 48)?;
    sm.build_raster(RelationKind::Over, &park_tag, 48, 48)?;
    println!(
        "built {} fields from {} relation samples",
        sm.fields().count(),
        sm.relation_sample_count()
    );

    // Point lookups interpolate the fitted parameters, then answer in
    // closed form.
    let probe = Point::new(0.0, 40.0);
    let params = sm.params_at(RelationKind::Distance, &road_tag, probe)?;
    if let DistributionParams::Gaussian { mean, variance } = params {
        println!("distance(probe, road): mean {mean:.1} m, stddev {:.1} m", variance.sqrt());
    }
    let p_park = sm.evaluate_field(RelationKind::Over, &park_tag, 0, probe)?;
    println!("P(over(probe, park)) = {p_park:.3}");

    let out = std::env::temp_dir().join("starmap-raster-fields");
    std::fs::create_dir_all(&out)?;

    // Mean distance as CSV (x, y, value rows) and as GeoJSON cells.
    let mean_field = sm.field(RelationKind::Distance, &road_tag, 0).unwrap();
    let raster = mean_field.to_raster(extent, 48, 48)?;
    write_raster_csv(&raster, BufWriter::new(File::create(out.join("distance_mean.csv"))?))?;
    write_raster_geojson(
        &raster,
        sm.origin(),
        None,
        BufWriter::new(File::create(out.join("distance_mean.geojson"))?),
    )?;

    // P(distance < 20 m) everywhere, rendered blue (0) to red (1).
    let near = sm.threshold_raster(RelationKind::Distance, &road_tag, ThresholdOp::Less, 20.0, 48, 48)?;
    let legend = render_ppm(&near, BufWriter::new(File::create(out.join("near_road.ppm"))?))?;
    println!(
        "wrote distance_mean.csv, distance_mean.geojson, near_road.ppm to {}",
        out.display()
    );
    println!("pixmap legend: blue = {:.2}, red = {:.2}", legend.min, legend.max);

    // Archives round-trip the fields (not the collection) bit-exactly.
    let archive = out.join("fields.starmap.json");
    sm.save(&archive)?;
    let loaded = StarMap::load(&archive)?;
    let reloaded = loaded.evaluate_field(RelationKind::Over, &park_tag, 0, probe)?;
    println!("archive round-trip preserves P(over) bitwise: {}", reloaded == p_park);
    Ok(())
}
