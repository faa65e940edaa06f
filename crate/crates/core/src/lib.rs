//! Joint object / semantic-part detection mechanics.
//!
//! The crate implements everything around the backbone of a two-stream
//! detector: the object/part relatedness predicate and graph, attention and
//! naive feature fusion, a trainable joint classification/regression head
//! with hand-derived gradients, VOC-style mAP evaluation with NMS sweeps,
//! PASCAL-Part-style annotation ingestion, and a synthetic benchmark that
//! stands in for backbone features at desk scale.

pub mod annotations;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod fusion;
pub mod learner;
pub mod rng;
pub mod runner;
pub mod synthetic;

pub use error::{Error, Result};
