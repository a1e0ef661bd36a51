//! Building citation-aware training data for retrieval-augmented answering:
//! citation verification and repair, preference pair construction, and
//! answer/citation metrics.

pub mod citemodel;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod genclient;
mod http;
pub mod metrics;
pub mod mock;
pub mod oracle;
pub mod pipelines;
pub mod retrieval;
pub mod rewrite;
pub mod seed;
pub mod toy;

pub use error::{Error, Result};
pub use http::HttpConfig;
