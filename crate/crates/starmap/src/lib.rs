//! Statistical relational maps.
//!
//! Vector maps carry semantic tags but no notion of how reliable their
//! geometry is. This crate annotates map features with spatial uncertainty,
//! propagates that uncertainty into probability distributions over spatial
//! relations (`distance`, `over`) by sampling whole map realizations, fits
//! the distribution parameters as scalar fields over space, and answers
//! probabilistic first-order logic queries against those fields.
//!
//! The pipeline, end to end:
//!
//! 1. [`ingest`] reads OpenStreetMap XML or Overpass JSON into a [`Map`]
//!    of tagged features in a local meter frame.
//! 2. [`uam`] attaches translation / transformation noise to features and
//!    draws whole-map samples into a [`MapCollection`].
//! 3. [`relations`] evaluates spatial relations per sampled map and
//!    moment-matches the results into distribution parameters.
//! 4. [`fields`] fits those parameters over space, either on a raster grid
//!    with bilinear interpolation or with Gaussian-process regression, and
//!    bundles everything into a [`StarMap`].
//! 5. [`logic`] grounds a small probabilistic logic program against a
//!    [`StarMap`] and computes query probabilities exactly or by
//!    Monte-Carlo sampling.
//!
//! The `starmap` binary exposes the same pipeline as subcommands
//! (`ingest`, `field`, `query`, `render`, `bench`); see [`cli`].

pub mod cli;
pub mod export;
pub mod fields;
pub mod geometry;
pub mod ingest;
pub mod logic;
pub mod relations;
pub mod stream;
pub mod uam;

pub use fields::{FieldBackend, GpBuildOptions, ParamField, RasterGrid, StarMap};
pub use logic::{Atom, GroundedProgram, InferenceMode, Program, QueryMethod, QueryResult};
pub use geometry::{BBox, Feature, FeatureKind, GeoOrigin, Map, Point, Tag};
pub use ingest::{IngestReport, SourceFormat, TagMapping};
pub use relations::{DistributionParams, RelationKind, RelationSamples};
pub use uam::{Annotation, MapCollection, UncertaintyAnnotatedMap};
