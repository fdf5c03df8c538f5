//! Sequence-based visual place recognition for panoramic annular imagery.
//!
//! The crate follows the three stages of a localization run:
//!
//! 1. [`geometry`] unwraps a ring-shaped annular frame into a rectangular panorama.
//! 2. [`descriptor`] turns each panorama into a global descriptor, either with the
//!    built-in patch-normalized thumbnail baseline or by loading externally computed
//!    deep descriptors through the [`interchange`] format.
//! 3. [`matching`] compares query and database descriptors with cosine distance and
//!    runs an online cone-shaped sequence search to decide which database frame, if
//!    any, each query was taken at.
//!
//! [`evaluation`] scores decisions against ground truth, [`synthetic`] generates
//! matchable toy datasets and [`pipeline`] ties everything together for the CLI.

pub mod descriptor;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod interchange;
pub mod matching;
pub mod pipeline;
pub mod raster;
pub mod synthetic;

pub use descriptor::{
    aggregate, cosine_distance, sad_descriptor, split_panorama, Aggregation, Descriptor,
    DescriptorSet, SadConfig, SplitSpec,
};
pub use error::{Error, Result};
pub use evaluation::{
    evaluate_f1, evaluate_geo, haversine_m, EvalConfig, F1Metrics, GeoMetrics, GeoPoint,
    GroundTruth, GtEntry, PrDenominator,
};
pub use geometry::{polar_map, unwrap, AnnularCalibration, AxisConvention, UnwrappedPanorama};
pub use matching::{
    build_distance_matrix, cone_membership, decide, nearest_neighbor, run_online, score,
    ConeParams, Direction, DistanceMatrix, MatchDecision, OnlineMatcher, Outcome, RejectReason,
    ScoreMatrix,
};
pub use raster::Raster;
