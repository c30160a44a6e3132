pub mod augment;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod mixing;
pub mod model;
pub mod pipeline;
pub mod seeding;
pub mod training;
pub mod volume;

pub use error::{Error, Result};
