//! Navigation workbench on synthetic lattice cities.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! - [`citygraph`] builds the directed (location, heading) graph and places destinations.
//! - [`search`] holds A*, a breadth-first oracle and multi-source distance fields.
//! - [`labeling`] turns shortest paths into distance, direction and pair supervision.
//! - [`synthfeat`] generates per-node observation vectors with a tunable signal level.
//! - [`learner`] trains linear scorers with momentum SGD and geographically weighted losses.
//! - [`agent`] implements the navigation policies and the episode protocol.
//! - [`evalharness`] samples starts, aggregates metrics and renders report tables.
//! - [`experiment`] wires everything into a resumable, hash-checked pipeline.
//!
//! Numeric code is generic over [`Scalar`]; the `*F64` / `*F32` aliases below
//! pin the common instantiations.

pub mod agent;
pub mod artifact;
pub mod citygraph;
pub mod error;
pub mod evalharness;
pub mod experiment;
pub mod labeling;
pub mod learner;
pub mod rng;
pub mod scalar;
pub mod search;
pub mod synthfeat;

pub use citygraph::{Action, CityGraph, DestinationSet, GridSpec, Heading, Location, NodeId};
pub use error::{NavError, Result};
pub use scalar::Scalar;

pub type FeatureTableF64 = synthfeat::FeatureTable<f64>;
pub type FeatureTableF32 = synthfeat::FeatureTable<f32>;
pub type ScorerModelF64 = learner::ScorerModel<f64>;
pub type ScorerModelF32 = learner::ScorerModel<f32>;
pub type DistanceLabelTableF64 = labeling::DistanceLabelTable<f64>;
pub type DistanceLabelTableF32 = labeling::DistanceLabelTable<f32>;
pub type PolicyF64 = agent::Policy<f64>;
pub type PolicyF32 = agent::Policy<f32>;
pub type ConfidenceMapF64 = evalharness::ConfidenceMap<f64>;
