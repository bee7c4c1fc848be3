pub mod error;
pub mod forest;
pub mod geometry;
pub mod driver;
pub mod harness;
pub mod io;
pub mod patch;
pub mod solver;

pub use error::{Error, Result};
