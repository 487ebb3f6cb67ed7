pub mod error;
pub mod evalharness;
pub mod flowsim;
pub mod geomodel;
pub mod interface;
pub mod raster;
pub mod registry;
pub mod surrogate;

pub use error::{Error, Result};
