//! Probabilistic logic queries over spatial relation distributions.
//!
//! Programs are small Prolog-style rule sets whose facts are
//! distributions: probabilistic facts (`0.3::over(x, park).`) and
//! distributional clauses (`distance(x, road) ~ normal(10, 2).`). A
//! program either carries its facts explicitly or leaves the spatial
//! atoms open, to be read from a StaR Map's fields at each queried
//! location.
//!
//!     cargo run -p starmap --example reasoning

use std::path::Path;
use std::sync::Arc;

use starmap::fields::StarMap;
use starmap::geometry::{BBox, Feature, GeoOrigin, Map, Point, Tag};
use starmap::logic::{query_field, Atom, GroundedProgram, InferenceMode, Program};
use starmap::relations::RelationKind;
use starmap::uam::UncertaintyAnnotatedMap;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");

    // Explicit facts: may we fly at x? Exact inference enumerates the
    // choice worlds; Monte-Carlo samples them. Both see the same
    // program, so they agree up to sampling error.
    let text = std::fs::read_to_string(fixtures.join("airspace.pl"))?;
    let program = Program::parse(&text)?;
    let atom: Atom = "airspace(x)".parse()?;
    let grounded = GroundedProgram::from_explicit(&program, Point::new(0.0, 0.0))?;
    let exact = grounded.query(&atom, InferenceMode::Exact, 0, 0)?;
    let sampled = grounded.query(&atom, InferenceMode::MonteCarlo, 200_000, 1)?;
    println!("P(airspace) exact:       {:.6}", exact.probability);
    println!(
        "P(airspace) monte-carlo:  {:.6} +- {:.6}",
        sampled.probability,
        sampled.mc_stderr.unwrap()
    );

    // Map-backed facts: the landing rules read over(x, park),
    // distance(x, building) and distance(x, primary) from fitted fields,
    // so the answer varies over space.
    let park = Feature::polygon(
        "park",
        vec![
            Point::new(-60.0, -20.0),
            Point::new(10.0, -30.0),
            Point::new(20.0, 40.0),
            Point::new(-50.0, 50.0),
        ],
        [Tag::from("park")],
    )?;
    let hall = Feature::polygon(
        "hall",
        vec![
            Point::new(30.0, -10.0),
            Point::new(60.0, -10.0),
            Point::new(60.0, 20.0),
            Point::new(30.0, 20.0),
        ],
        [Tag::from("building")],
    )?;
    let road = Feature::polyline(
        "road",
        vec![Point::new(-80.0, -60.0), Point::new(80.0, -40.0)],
        [Tag::from("primary")],
    )?;
    let extent = BBox::new(-80.0, -80.0, 80.0, 80.0)?;
    let map = Map::new(vec![park, hall, road], GeoOrigin::new(49.0, 8.0)?, extent)?;
    let uam = UncertaintyAnnotatedMap::uniform(map, 5.0)?;
    let mut sm = StarMap::new(Arc::new(uam), extent, 48, 4)?;
    sm.build_raster(RelationKind::Over, &Tag::from("park"), 24, 24)?;
    sm.build_raster(RelationKind::Distance, &Tag::from("building"), 24, 24)?;
    sm.build_raster(RelationKind::Distance, &Tag::from("primary"), 24, 24)?;

    let landing = Program::parse(&std::fs::read_to_string(fixtures.join("landing.pl"))?)?;
    let atom: Atom = "landing(x)".parse()?;

    // The building-clearance fact backs both landing rules, so the proof
    // structure shares it and exact inference would be unsound; `Auto`
    // detects that and falls back to Monte-Carlo.
    let probe = Point::new(-20.0, 10.0);
    let at_probe = starmap::logic::ground_program(&landing, &sm, probe)?
        .query(&atom, InferenceMode::Auto, 100_000, 1)?;
    println!(
        "\nP(landing) at {:?}: {:.3} ({:?} inference)",
        probe, at_probe.probability, at_probe.method
    );

    // One independent query per node; rows print north to south.
    let (raster, method) = query_field(&landing, &sm, &atom, 17, 17, InferenceMode::Auto, 10_000, 1)?;
    println!("P(landing) over the extent ({method:?} inference):");
    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    for row in (0..raster.rows()).rev() {
        let line: String = (0..raster.cols())
            .map(|col| {
                let p = raster.value(row, col);
                shades[((p * 10.0) as usize).min(9)]
            })
            .collect();
        println!("  |{line}|");
    }
    println!("  (space = 0, @ = 1; park in the west, hall in the east, road in the south)");
    Ok(())
}
