pub mod autodiff;
pub mod error;

pub use error::{Error, Result};
pub mod corpus;
pub mod encoder;
pub mod hybrid;
pub mod metrics;
pub mod speaker;
pub mod model;
pub mod baseline;
pub mod train;
pub mod pipeline;
pub mod cli;
