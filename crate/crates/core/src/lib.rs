pub mod acquisition;
pub mod advisor;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod session;
pub mod surrogate;
pub mod testbed;

pub use error::{Error, Result};
