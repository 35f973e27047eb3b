pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datapipe;
pub mod error;
pub mod inference;
mod jsonfile;
pub mod loss;
pub mod metrics;
pub mod phantom;
pub mod preprocess;
pub mod segresnet;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
