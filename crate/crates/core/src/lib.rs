pub mod bench;
pub mod detection;
pub mod error;
pub mod geometry;
pub mod ingest;
pub mod model;

pub use error::{Error, ErrorKind, Result};
