//! Issue-report triage toolkit: corpus handling, text cleaning, sparse
//! features, linear and transformer classifiers, and evaluation metrics.

pub mod corpus;
pub mod error;
pub mod features;
pub mod linear;
pub mod metrics;
pub mod model;
pub mod normalize;
pub mod synthetic;
pub mod transformer;

pub use error::{Error, Result};
