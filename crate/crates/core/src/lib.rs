//! Botnet node detection on communication graphs with a deep grouped
//! reversible graph isomorphism network, plus edge-mask explanations.

pub mod error;
pub mod explainer;
pub mod gin;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod revblock;

pub use error::{Error, GraphFormatError, Result};
