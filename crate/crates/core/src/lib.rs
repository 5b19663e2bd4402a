//! Magnitude-estimation psychophysics for machine and human observers:
//! stimulus generation, session protocol, observer-model fitting, cue
//! combination and consistency scoring.

// `!(x > 0.0)` is used on purpose so NaN is rejected along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops over columns of row-major data read better than zipped iterators.
#![allow(clippy::needless_range_loop)]

pub mod client;
pub mod factor;
pub mod fusion;
pub mod harness;
pub mod metrics;
pub mod observer;
pub mod optim;
pub mod par;
pub mod seed;
pub mod session;
pub mod stimulus;
pub mod synthetic;
