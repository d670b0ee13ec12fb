//! voxeldose: CT organ dosimetry at desk scale.
//!
//! Two halves, one pipeline:
//!
//! * a Monte Carlo reference arm that transports photons from a realistic
//!   helical CT source (hardened spectrum, bowtie filtration, anode heel
//!   effect) through voxel phantoms and aggregates per-organ absorbed doses;
//! * a prediction arm that renders synthetic scout radiographs, composes a
//!   3-channel model input with the scan-range band, and trains a
//!   shared-trunk multi-head regressor that estimates the reference organ
//!   doses from scouts alone.
//!
//! Everything stochastic is keyed to explicit seeds and reproduces
//! bit-identically for any worker count.

// negated comparisons like `!(x > 0.0)` are NaN guards, not style slips
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::manual_is_multiple_of)]

pub mod dosimetry;
pub mod error;
pub mod grid;
pub mod io;
pub mod phantom;
pub mod pipeline;
pub mod predictor;
pub mod rng;
pub mod scout;
pub mod source;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
