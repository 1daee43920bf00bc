//! Spatial relations and their distribution estimates.
//!
//! A relation maps a query point, a tag and one map realization to a value:
//! `over` is categorical (a boolean), `distance` is quantitative (meters).
//! Evaluating a relation across every map of a [`MapCollection`] yields a
//! [`RelationSamples`] set, which moment matching compresses into
//! [`DistributionParams`]: a Bernoulli for categorical relations, a
//! Gaussian (mean and unbiased variance) for quantitative ones.
//!
//! The Gaussian is a deliberate simplification. Distances to perturbed
//! geometry are folded-normal-like, not symmetric, but the first two
//! moments transfer into downstream reasoning cheaply and the approximation
//! error is small whenever the mean clears zero by a few standard
//! deviations.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::geometry::{GeometryError, Map, Point, Tag};
use crate::uam::MapCollection;

#[derive(Debug, Error)]
pub enum RelationError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("moment matching a gaussian needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("{relation} samples are {got}, {expected} expected")]
    SignatureMismatch {
        relation: RelationKind,
        got: &'static str,
        expected: &'static str,
    },
    #[error("thresholding needs gaussian params, got {0:?}")]
    NotGaussian(DistributionParams),
    #[error("threshold must be finite, got {0}")]
    NonFiniteThreshold(f64),
}

/// The spatial relations understood by the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    /// Is the point over tagged geometry? Categorical.
    Over,
    /// Meters to the closest tagged geometry. Quantitative.
    Distance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signature {
    Categorical,
    Quantitative,
}

impl RelationKind {
    pub fn signature(self) -> Signature {
        match self {
            RelationKind::Over => Signature::Categorical,
            RelationKind::Distance => Signature::Quantitative,
        }
    }

    /// Number of distribution parameters the relation matches to.
    pub fn param_count(self) -> usize {
        match self {
            RelationKind::Over => 1,
            RelationKind::Distance => 2,
        }
    }

    /// Stable name of parameter `index`, used in field keys and exports.
    pub fn param_name(self, index: usize) -> Option<&'static str> {
        match (self, index) {
            (RelationKind::Over, 0) => Some("p"),
            (RelationKind::Distance, 0) => Some("mean"),
            (RelationKind::Distance, 1) => Some("variance"),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RelationKind::Over => "over",
            RelationKind::Distance => "distance",
        }
    }
}

impl std::fmt::Display for RelationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for RelationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "over" => Ok(RelationKind::Over),
            "distance" => Ok(RelationKind::Distance),
            other => Err(format!("unknown relation `{other}`, expected `over` or `distance`")),
        }
    }
}

/// Value of one relation evaluation on one map realization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RelationValue {
    Bool(bool),
    Real(f64),
}

/// Evaluates a relation deterministically against a single map.
///
/// `over` is total (absent tags yield `false`); `distance` errors when no
/// feature carries the tag, because a silent infinity would poison every
/// statistic built on top.
pub fn eval_relation(
    kind: RelationKind,
    x: Point,
    tag: &Tag,
    map: &Map,
    line_width: f64,
) -> Result<RelationValue, RelationError> {
    match kind {
        RelationKind::Over => Ok(RelationValue::Bool(map.over(x, tag, line_width))),
        RelationKind::Distance => Ok(RelationValue::Real(map.distance(x, tag)?)),
    }
}

/// Per-map relation values, one entry per map of the collection, in
/// collection order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSamples {
    pub relation: RelationKind,
    pub tag: Tag,
    pub location: Point,
    pub values: SampleValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleValues {
    Categorical(Vec<bool>),
    Quantitative(Vec<f64>),
}

impl RelationSamples {
    pub fn len(&self) -> usize {
        match &self.values {
            SampleValues::Categorical(v) => v.len(),
            SampleValues::Quantitative(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Evaluates a relation on every map of the collection.
pub fn sample_relation(
    kind: RelationKind,
    x: Point,
    tag: &Tag,
    collection: &MapCollection,
    line_width: f64,
) -> Result<RelationSamples, RelationError> {
    let values = match kind.signature() {
        Signature::Categorical => {
            let mut v = Vec::with_capacity(collection.len());
            for map in collection.maps() {
                match eval_relation(kind, x, tag, map, line_width)? {
                    RelationValue::Bool(b) => v.push(b),
                    RelationValue::Real(_) => unreachable!("categorical relation"),
                }
            }
            SampleValues::Categorical(v)
        }
        Signature::Quantitative => {
            let mut v = Vec::with_capacity(collection.len());
            for map in collection.maps() {
                match eval_relation(kind, x, tag, map, line_width)? {
                    RelationValue::Real(r) => v.push(r),
                    RelationValue::Bool(_) => unreachable!("quantitative relation"),
                }
            }
            SampleValues::Quantitative(v)
        }
    };
    Ok(RelationSamples {
        relation: kind,
        tag: tag.clone(),
        location: x,
        values,
    })
}

/// Moment-matched distribution of a relation at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionParams {
    Bernoulli { p: f64 },
    Gaussian { mean: f64, variance: f64 },
}

impl DistributionParams {
    pub fn param_count(&self) -> usize {
        match self {
            DistributionParams::Bernoulli { .. } => 1,
            DistributionParams::Gaussian { .. } => 2,
        }
    }

    pub fn param(&self, index: usize) -> Option<f64> {
        match (self, index) {
            (DistributionParams::Bernoulli { p }, 0) => Some(*p),
            (DistributionParams::Gaussian { mean, .. }, 0) => Some(*mean),
            (DistributionParams::Gaussian { variance, .. }, 1) => Some(*variance),
            _ => None,
        }
    }
}

/// Success frequency of categorical samples as a Bernoulli parameter.
pub fn match_bernoulli(samples: &RelationSamples) -> Result<DistributionParams, RelationError> {
    match &samples.values {
        SampleValues::Categorical(v) => {
            if v.is_empty() {
                return Err(RelationError::TooFewSamples(0));
            }
            let p = v.iter().filter(|b| **b).count() as f64 / v.len() as f64;
            Ok(DistributionParams::Bernoulli { p })
        }
        SampleValues::Quantitative(_) => Err(RelationError::SignatureMismatch {
            relation: samples.relation,
            got: "quantitative",
            expected: "categorical",
        }),
    }
}

/// Sample mean and unbiased (n-1) variance of quantitative samples.
///
/// Identical samples short-circuit to a point mass with variance exactly
/// zero, so degenerate annotations yield exactly deterministic fields
/// instead of fields a rounding error away from them.
pub fn match_gaussian(samples: &RelationSamples) -> Result<DistributionParams, RelationError> {
    match &samples.values {
        SampleValues::Quantitative(v) => {
            if v.len() < 2 {
                return Err(RelationError::TooFewSamples(v.len()));
            }
            if v.iter().all(|x| x.to_bits() == v[0].to_bits()) {
                return Ok(DistributionParams::Gaussian {
                    mean: v[0],
                    variance: 0.0,
                });
            }
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let variance = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
            Ok(DistributionParams::Gaussian { mean, variance })
        }
        SampleValues::Categorical(_) => Err(RelationError::SignatureMismatch {
            relation: samples.relation,
            got: "categorical",
            expected: "quantitative",
        }),
    }
}

/// Moment matching dispatched on the relation's signature.
pub fn moment_match(samples: &RelationSamples) -> Result<DistributionParams, RelationError> {
    match samples.relation.signature() {
        Signature::Categorical => match_bernoulli(samples),
        Signature::Quantitative => match_gaussian(samples),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdOp {
    Greater,
    Less,
}

impl std::fmt::Display for ThresholdOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ThresholdOp::Greater => ">",
            ThresholdOp::Less => "<",
        })
    }
}

/// Standard normal CDF, accurate in both tails.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Probability that a Gaussian-matched relation clears a threshold.
///
/// Zero variance degenerates to a step: `greater` is 1 only strictly above
/// the mean, `less` is its complement (1 at the mean itself), so the two
/// always sum to one.
pub fn prob_threshold(
    params: &DistributionParams,
    op: ThresholdOp,
    threshold: f64,
) -> Result<f64, RelationError> {
    if !threshold.is_finite() {
        return Err(RelationError::NonFiniteThreshold(threshold));
    }
    let (mean, variance) = match params {
        DistributionParams::Gaussian { mean, variance } => (*mean, *variance),
        other => return Err(RelationError::NotGaussian(*other)),
    };
    if variance == 0.0 {
        return Ok(match op {
            ThresholdOp::Greater => {
                if mean > threshold {
                    1.0
                } else {
                    0.0
                }
            }
            ThresholdOp::Less => {
                if mean > threshold {
                    0.0
                } else {
                    1.0
                }
            }
        });
    }
    let z = (threshold - mean) / variance.sqrt();
    Ok(match op {
        ThresholdOp::Greater => 0.5 * erfc(z / std::f64::consts::SQRT_2),
        ThresholdOp::Less => 0.5 * erfc(-z / std::f64::consts::SQRT_2),
    })
}
