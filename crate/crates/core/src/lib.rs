pub mod agents;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod generator;
pub mod index;
pub mod metrics;
pub mod partition;
pub mod pipeline;
pub mod rl;
pub mod text;

pub use error::{Error, Result};
