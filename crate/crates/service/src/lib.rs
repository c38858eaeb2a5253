//! Command line, session persistence and HTTP API for kohdesign campaigns.

pub mod cli;
pub mod error;
pub mod http;
pub mod session;
pub mod setup;
pub mod store;

pub use error::{ErrorBody, Result, ServiceError};
