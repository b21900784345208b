//! Head motion tracking for slice-wise fMRI motion correction.
//!
//! Every EPI slice is registered to a high-resolution anatomical volume
//! under a Gaussian particle filter, with the rigid pose of the head as
//! the state and stack mutual information as the measurement.

pub mod analysis;
pub mod error;
pub mod geometry;
pub mod imaging;
pub mod io;
pub mod phantom;
pub mod pipeline;
pub mod registration;
pub mod rng;
pub mod similarity;
pub mod simplex;
pub mod tracking;

pub use error::{Error, Result};
