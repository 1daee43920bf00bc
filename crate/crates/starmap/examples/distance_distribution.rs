//! From map uncertainty to a distribution over a spatial relation.
//!
//! Evaluating a relation once per sampled map turns geometric noise into
//! a sample of relation values. Moment matching compresses that sample
//! into distribution parameters: Bernoulli for `over`, Gaussian for
//! `distance`. The matched Gaussian then answers threshold queries in
//! closed form.
//!
//!     cargo run -p starmap --example distance_distribution

use std::sync::Arc;

use starmap::geometry::{BBox, Feature, GeoOrigin, Map, Point, Tag};
use starmap::relations::{
    moment_match, prob_threshold, sample_relation, DistributionParams, RelationKind, SampleValues,
    ThresholdOp,
};
use starmap::uam::{MapCollection, UncertaintyAnnotatedMap};

fn histogram(values: &[f64]) {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bins = 12usize;
    let width = (max - min) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let bin = (((v - min) / width) as usize).min(bins - 1);
        counts[bin] += 1;
    }
    let peak = *counts.iter().max().unwrap();
    for (i, count) in counts.iter().enumerate() {
        let bar = "#".repeat(count * 50 / peak);
        println!("  {:6.1} m | {bar}", min + (i as f64 + 0.5) * width);
    }
}

fn main() {
    let tag = Tag::from("road");
    let road = Feature::polyline(
        "road",
        vec![Point::new(-200.0, 0.0), Point::new(200.0, 0.0)],
        [tag.clone()],
    )
    .unwrap();
    let extent = BBox::new(-100.0, -100.0, 100.0, 100.0).unwrap();
    let map = Map::new(vec![road], GeoOrigin::new(49.0, 8.0).unwrap(), extent).unwrap();
    let uam = UncertaintyAnnotatedMap::uniform(map, 8.0).unwrap();
    let collection = MapCollection::sample(Arc::new(uam), 4000, 3).unwrap();

    // 25 m from the road's nominal position, with 8 m of translation
    // noise. The true distance distribution is |25 - t|, t ~ N(0, 8^2),
    // a folded normal; the histogram shows its skew.
    let probe = Point::new(0.0, 25.0);
    let line_width = 2.0;
    let samples = sample_relation(RelationKind::Distance, probe, &tag, &collection, line_width)
        .unwrap();
    let SampleValues::Quantitative(values) = &samples.values else {
        unreachable!("distance is quantitative")
    };
    println!("distance(probe, road) over {} sampled maps:", values.len());
    histogram(values);

    let params = moment_match(&samples).unwrap();
    let DistributionParams::Gaussian { mean, variance } = params else {
        unreachable!("distance matches a Gaussian")
    };
    println!("matched Gaussian: mean {mean:.2} m, stddev {:.2} m", variance.sqrt());

    // The threshold probability comes from the matched Gaussian's CDF,
    // not from re-counting samples.
    for threshold in [10.0, 25.0, 40.0] {
        let p = prob_threshold(&params, ThresholdOp::Greater, threshold).unwrap();
        println!("P(distance > {threshold:4.0} m) = {p:.3}");
    }

    // `over` is categorical: each sampled map votes, the matched
    // Bernoulli keeps the vote share.
    let on_road = Point::new(0.0, 0.0);
    let over = sample_relation(RelationKind::Over, on_road, &tag, &collection, line_width).unwrap();
    let DistributionParams::Bernoulli { p } = moment_match(&over).unwrap() else {
        unreachable!("over matches a Bernoulli")
    };
    println!("P(over(origin, road)) = {p:.3} at line width {line_width} m");
}
