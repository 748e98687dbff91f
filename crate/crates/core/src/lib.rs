pub mod align;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod nn;
pub mod signal;

pub use error::{Error, ErrorKind, Result};
