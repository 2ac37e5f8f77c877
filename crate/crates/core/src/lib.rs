pub mod backend;
pub mod data;
pub mod datatools;
pub mod eval;
pub mod optim;
pub mod prompt;
pub mod rng;
pub mod scoring;
pub mod synthetic;
pub mod tape;
pub mod templates;
pub mod training;
mod error;

pub use error::Error;
