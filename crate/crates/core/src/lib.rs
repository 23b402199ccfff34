pub mod basis;
pub mod data;
pub mod error;
pub mod fit;
pub mod harness;
pub mod lp;
pub mod model;
pub mod partition;
pub mod pipeline;
pub mod reduce;

pub use error::{Error, Result};
