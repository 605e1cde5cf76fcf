pub mod agent;
pub mod corpus;
pub mod cost;
pub mod embed;
pub mod error;
pub mod eval;
pub mod fetch;
pub mod index;
pub mod ingest;
pub mod provider;
pub mod retrieve;
pub mod runtime;
pub mod tools;

pub use error::{Error, ProviderError, Result};
pub use muallm_netlist as netlist;
