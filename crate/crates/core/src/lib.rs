pub mod criteria;
pub mod design_loop;
pub mod error;
pub mod fast_update;
pub mod gmm;
pub mod koh;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod scenarios;
pub mod synthetic;

pub use error::{Error, Result};
