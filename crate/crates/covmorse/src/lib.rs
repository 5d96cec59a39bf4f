pub mod error;
pub mod gamma_dim;
pub mod geomodel;
pub mod harness;
pub mod lattice_op;
pub mod linalg;
pub mod morse_bounds;
pub mod par;
pub mod pointspec;
pub mod spectral_count;

pub use error::{Error, Result};
